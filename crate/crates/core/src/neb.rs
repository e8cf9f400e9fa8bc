//! Normal–exponential–Bernoulli model of the TIC stream.
//!
//! Each scan is either background, `X ~ N(μ, σ²)`, or background plus an
//! exponentially distributed true signal, `X ~ N(Θ + μ, σ²)` with
//! `Θ ~ Exp(mean φ)`. A Bernoulli indicator with proportion `r` picks the
//! branch. Parameters are estimated by EM with the indicator as the latent
//! variable; scans are then kept or zeroed by their posterior odds of
//! carrying signal, and kept scans are replaced by `E(Θ | x)`, which removes
//! the baseline and shrinks the noise in one step.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{bfgs, BfgsOptions};
use crate::special::{inv_mills, ln_emg, ln_norm_pdf, median, quantile, truncated_mean_offset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NebParams {
    /// Baseline (background) mean.
    pub mu: f64,
    /// Noise variance.
    pub sigma2: f64,
    /// Mean of the exponential true signal.
    pub phi: f64,
    /// Proportion of scans carrying true signal.
    pub r: f64,
}

impl NebParams {
    pub fn new(mu: f64, sigma2: f64, phi: f64, r: f64) -> Result<Self> {
        let p = Self { mu, sigma2, phi, r };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::InvalidParams(format!("mu = {}", self.mu)));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidParams(format!("sigma2 = {}", self.sigma2)));
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::InvalidParams(format!("phi = {}", self.phi)));
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(Error::InvalidParams(format!("r = {} not in (0, 1)", self.r)));
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

/// Log of the marginal density of a signal-bearing scan: the Gaussian noise
/// convolved with the exponential signal (an exponentially modified
/// Gaussian with rate 1/φ).
pub fn ln_density_p1(x: f64, p: &NebParams) -> f64 {
    ln_emg(x, p.mu, p.sigma(), 1.0 / p.phi)
}

pub fn density_p1(x: f64, p: &NebParams) -> f64 {
    ln_density_p1(x, p).exp()
}

/// Log of the background-only density N(μ, σ²).
pub fn ln_density_p0(x: f64, p: &NebParams) -> f64 {
    let s = p.sigma();
    ln_norm_pdf((x - p.mu) / s) - s.ln()
}

pub fn density_p0(x: f64, p: &NebParams) -> f64 {
    ln_density_p0(x, p).exp()
}

/// ln w = ln(p₁/p₀) + ln(r/(1−r)).
pub fn ln_posterior_odds(x: f64, p: &NebParams) -> f64 {
    let l1 = ln_density_p1(x, p);
    let l0 = ln_density_p0(x, p);
    if l1 == f64::NEG_INFINITY && l0 == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    l1 - l0 + p.r.ln() - (-p.r).ln_1p()
}

/// Posterior odds of signal with the mixing proportion fixed at its
/// estimate. Overflow saturates to +∞.
pub fn posterior_odds(x: f64, p: &NebParams) -> f64 {
    ln_posterior_odds(x, p).exp()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// P(Y = 1 | x) = r p₁ / (r p₁ + (1−r) p₀); 0/0 resolves to 0.
pub fn responsibility(x: f64, p: &NebParams) -> f64 {
    sigmoid(ln_posterior_odds(x, p))
}

pub fn e_step(tic: &[f64], p: &NebParams) -> Vec<f64> {
    tic.par_iter().map(|&x| responsibility(x, p)).collect()
}

/// Mixing-proportion update with two pseudo-observations on each side.
pub fn update_r(responsibilities: &[f64]) -> f64 {
    let s: f64 = responsibilities.iter().sum();
    (2.0 + s) / (4.0 + responsibilities.len() as f64)
}

/// Expected complete-data log-likelihood with fractional indicators.
pub fn loglikelihood(tic: &[f64], p: &NebParams, responsibilities: &[f64]) -> Result<f64> {
    if tic.len() != responsibilities.len() {
        return Err(Error::LengthMismatch {
            expected: tic.len(),
            actual: responsibilities.len(),
        });
    }
    let (lr, l1r) = (p.r.ln(), (-p.r).ln_1p());
    let mut total = 0.0;
    for (&x, &y) in tic.iter().zip(responsibilities) {
        // 0·(−∞) contributes nothing
        let mut term = 0.0;
        if y > 0.0 {
            term += y * (ln_density_p1(x, p) + lr);
        }
        if y < 1.0 {
            term += (1.0 - y) * (ln_density_p0(x, p) + l1r);
        }
        if term.is_nan() {
            return Err(Error::NonFiniteLoglik);
        }
        total += term;
    }
    if total.is_nan() {
        return Err(Error::NonFiniteLoglik);
    }
    Ok(total)
}

/// Observed-data log-likelihood plus the ln r + ln(1−r) pseudo-count terms
/// implied by [`update_r`]. EM ascends this quantity monotonically.
pub fn penalized_loglik(tic: &[f64], p: &NebParams) -> f64 {
    let (lr, l1r) = (p.r.ln(), (-p.r).ln_1p());
    let mut total = 2.0 * (lr + l1r);
    for &x in tic {
        let a = ln_density_p1(x, p) + lr;
        let b = ln_density_p0(x, p) + l1r;
        let m = a.max(b);
        total += if m == f64::NEG_INFINITY {
            m
        } else {
            m + ((a - m).exp() + (b - m).exp()).ln()
        };
    }
    total
}

/// −Σ {y ln p₁ + (1−y) ln p₀} and its gradient in (μ, ln σ², ln φ).
fn neg_q(theta: &[f64], tic: &[f64], resp: &[f64], grad: &mut [f64]) -> f64 {
    let mu = theta[0];
    let sigma = (0.5 * theta[1]).exp();
    let phi = theta[2].exp();
    let rate = 1.0 / phi;
    let b = sigma / phi;
    let ln_sigma = sigma.ln();
    let mut f = 0.0;
    let (mut g_mu, mut g_s, mut g_f) = (0.0, 0.0, 0.0);
    for (&x, &y) in tic.iter().zip(resp) {
        let a = (x - mu) / sigma;
        if y > 0.0 {
            let z = a - b;
            let m = inv_mills(z);
            f += y * ln_emg(x, mu, sigma, rate);
            g_mu += y * (b - m) / sigma;
            g_s += y * 0.5 * (b * b - m * (a + b));
            g_f += y * (-1.0 + (a + m - b) * b);
        }
        if y < 1.0 {
            let w = 1.0 - y;
            f += w * (ln_norm_pdf(a) - ln_sigma);
            g_mu += w * a / sigma;
            g_s += w * 0.5 * (a * a - 1.0);
        }
    }
    grad[0] = -g_mu;
    grad[1] = -g_s;
    grad[2] = -g_f;
    -f
}

/// Q(μ, σ², φ) = Σ {y ln p₁ + (1−y) ln p₀}, the part of the complete-data
/// log-likelihood the M-step maximizes.
pub fn q_function(tic: &[f64], resp: &[f64], p: &NebParams) -> f64 {
    let mut g = [0.0; 3];
    -neg_q(&[p.mu, p.sigma2.ln(), p.phi.ln()], tic, resp, &mut g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Extra jittered M-step starts besides the warm start.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            restarts: 3,
            seed: 0,
        }
    }
}

/// Maximizes Q over (μ, σ², φ) with r̂ and the responsibilities held fixed.
///
/// The warm start is always one of the candidates, so the returned Q is never
/// below Q at `init`.
pub fn m_step<R: Rng>(
    tic: &[f64],
    resp: &[f64],
    r_hat: f64,
    init: &NebParams,
    restarts: usize,
    rng: &mut R,
) -> Result<NebParams> {
    let theta0 = [init.mu, init.sigma2.ln(), init.phi.ln()];
    let mut starts = vec![theta0];
    let sd = init.sigma();
    // with no signal weight φ does not enter Q, so it stays where it is
    let phi_jitter = if resp.iter().any(|&y| y > 0.0) { 0.2 } else { 0.0 };
    for _ in 0..restarts {
        let j: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        starts.push([theta0[0] + 0.1 * sd * j[0], theta0[1] + 0.2 * j[1], theta0[2] + phi_jitter * j[2]]);
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut g = [0.0; 3];
    let f0 = neg_q(&theta0, tic, resp, &mut g);
    for s in &starts {
        let res = bfgs(
            |th, gr| neg_q(th, tic, resp, gr),
            s,
            BfgsOptions {
                max_iter: 200,
                gtol: 1e-7 * (tic.len() as f64).max(1.0),
                ftol: 1e-15,
            },
        );
        if let Ok(m) = res {
            if m.value.is_finite() && best.as_ref().is_none_or(|b| m.value < b.0) {
                best = Some((m.value, m.x));
            }
        }
    }
    let Some((fbest, th)) = best else {
        return Err(Error::OptimizerDiverged("every M-step start failed".into()));
    };
    if fbest > f0 {
        // cannot happen with a successful warm start; keep the ascent guarantee anyway
        return Ok(NebParams { r: r_hat, ..*init });
    }
    NebParams::new(th[0], th[1].exp(), th[2].exp(), r_hat).map_err(|e| Error::OptimizerDiverged(e.to_string()))
}

/// Robust starting values: median baseline, MAD noise scale, upper-decile
/// excess for the signal mean, r = 0.1.
pub fn initial_params(tic: &[f64]) -> Result<NebParams> {
    let mu = median(tic);
    let dev: Vec<f64> = tic.iter().map(|x| (x - mu).abs()).collect();
    let mut sigma = 1.4826 * median(&dev);
    if sigma <= 0.0 {
        let n = tic.len() as f64;
        let mean = tic.iter().sum::<f64>() / n;
        sigma = (tic.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    }
    if !(sigma > 0.0) {
        return Err(Error::DegenerateInput("TIC vector is constant".into()));
    }
    let q90 = quantile(tic, 0.9);
    let upper: Vec<f64> = tic.iter().filter(|&&x| x > q90).map(|x| x - mu).collect();
    let phi = if upper.is_empty() {
        sigma
    } else {
        (upper.iter().sum::<f64>() / upper.len() as f64).max(sigma)
    };
    NebParams::new(mu, sigma * sigma, phi, 0.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NebFit {
    pub params: NebParams,
    /// Posterior probability that each scan carries signal.
    pub responsibilities: Vec<f64>,
    /// Posterior odds of signal per scan (may be +∞).
    pub odds: Vec<f64>,
    /// Baseline-corrected, denoised TIC per scan.
    pub deconvoluted: Vec<f64>,
    /// Expected complete-data log-likelihood at the final parameters.
    pub loglik: f64,
    /// Penalized observed-data log-likelihood, one entry per EM iteration
    /// (entry 0 at the starting values).
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl NebFit {
    /// Derives the per-scan quantities from fixed parameters.
    pub fn from_params(tic: &[f64], params: NebParams) -> Result<Self> {
        params.validate()?;
        let log_odds: Vec<f64> = tic.par_iter().map(|&x| ln_posterior_odds(x, &params)).collect();
        let responsibilities = log_odds.iter().map(|&t| sigmoid(t)).collect::<Vec<_>>();
        let odds = log_odds.iter().map(|t| t.exp()).collect();
        let deconvoluted = tic.par_iter().map(|&x| deconvolute(x, &params)).collect();
        let loglik = loglikelihood(tic, &params, &responsibilities)?;
        Ok(Self {
            params,
            responsibilities,
            odds,
            deconvoluted,
            loglik,
            trace: Vec::new(),
            iterations: 0,
            converged: true,
        })
    }

    /// Deconvoluted TIC for kept scans, zero elsewhere.
    pub fn processed(&self, cutoff: f64) -> Vec<f64> {
        classify(self, cutoff)
            .into_iter()
            .zip(&self.deconvoluted)
            .map(|(keep, &v)| if keep { v } else { 0.0 })
            .collect()
    }

    /// `scan_index,tic,odds,responsibility,deconvoluted`, 1-based scans.
    pub fn write_diagnostics<W: Write>(&self, tic: &[f64], w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["scan_index", "tic", "odds", "responsibility", "deconvoluted"])?;
        for (i, x) in tic.iter().enumerate() {
            wtr.write_record([
                (i + 1).to_string(),
                x.to_string(),
                self.odds[i].to_string(),
                self.responsibilities[i].to_string(),
                self.deconvoluted[i].to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<diagnostics>", e))?;
        Ok(())
    }
}

pub fn fit_em(tic: &[f64], config: &EmConfig) -> Result<NebFit> {
    if tic.len() < 10 {
        return Err(Error::DegenerateInput(format!("need at least 10 scans, got {}", tic.len())));
    }
    if tic.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateInput("non-finite TIC".into()));
    }
    if tic.iter().all(|&x| x == tic[0]) {
        return Err(Error::DegenerateInput("TIC vector is constant".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = initial_params(tic)?;
    let mut trace = vec![penalized_loglik(tic, &params)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let resp = e_step(tic, &params);
        let r_hat = update_r(&resp);
        let next = m_step(tic, &resp, r_hat, &params, config.restarts, &mut rng)?;
        let obj = penalized_loglik(tic, &next);
        if !obj.is_finite() {
            return Err(Error::NonFiniteLoglik);
        }
        let prev = *trace.last().expect("non-empty");
        params = next;
        trace.push(obj);
        if ((obj - prev) / (prev.abs() + 1.0)).abs() < config.tol {
            converged = true;
            break;
        }
    }
    let mut fit = NebFit::from_params(tic, params)?;
    fit.trace = trace;
    fit.iterations = iterations;
    fit.converged = converged;
    Ok(fit)
}

/// keep[i] = odds[i] ≥ cutoff; an infinite cutoff keeps nothing.
pub fn classify(fit: &NebFit, cutoff: f64) -> Vec<bool> {
    if cutoff == f64::INFINITY {
        return vec![false; fit.odds.len()];
    }
    fit.odds.iter().map(|&w| w >= cutoff).collect()
}

/// E(Θ | x) under the signal branch: the mean of N(x − μ − σ²/φ, σ²)
/// truncated to (0, ∞).
pub fn deconvolute(x: f64, p: &NebParams) -> f64 {
    let s = p.sigma();
    let z = (x - (p.mu + p.sigma2 / p.phi)) / s;
    s * truncated_mean_offset(z)
}

/// Serializable summary of an EM fit; per-scan vectors are rebuilt with
/// [`NebFit::from_params`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NebSummary {
    pub params: NebParams,
    pub loglik: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl From<&NebFit> for NebSummary {
    fn from(f: &NebFit) -> Self {
        Self {
            params: f.params,
            loglik: f.loglik,
            trace: f.trace.clone(),
            iterations: f.iterations,
            converged: f.converged,
        }
    }
}

/// Draws `n` scans from the model itself.
pub fn sample<R: Rng>(p: &NebParams, n: usize, rng: &mut R) -> Vec<f64> {
    let exp = rand_distr::Exp::new(1.0 / p.phi).expect("phi > 0");
    let s = p.sigma();
    (0..n)
        .map(|_| {
            let noise: f64 = rng.sample(StandardNormal);
            let signal = if rng.random::<f64>() < p.r { rng.sample(exp) } else { 0.0 };
            p.mu + signal + s * noise
        })
        .collect()
}
