//! Mixture-model peak picking within a peak region.
//!
//! A region's intensities are normalized to sum to one and modeled as
//! `z_l ~ N(Σ_s w_s f_s(t_l | ξ_s), τ²)`. With τ² profiled out the fit is a
//! nonlinear least-squares problem, solved by Levenberg–Marquardt with the
//! weights on the simplex through a softmax and scale parameters on a log
//! scale. Each component becomes one [`Peak`]; its area is the length of the
//! component's 95% HPD interval.
//!
//! Evaluation grid: continuous families see the 1-based column position
//! `t_l = l` inside the region; Poisson sees the 0-based offset `l − 1`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ChromatogramRun, Spectrum};
use crate::optim::{levenberg_marquardt_with, LmOptions};
use crate::segment::{fdt, PeakRegion};
use crate::shapes::{hpd_interval, ComponentParams, ShapeFamily};

/// Floor on τ² so a perfect fit keeps finite scores.
pub const TAU2_FLOOR: f64 = 1e-30;
/// Number of starts per fit (the first is un-jittered).
pub const MULTISTARTS: usize = 5;
pub const HPD_MASS: f64 = 0.95;

const SD_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Objective {
    Mse,
    Aic,
    Bic,
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(Objective::Mse),
            "aic" => Ok(Objective::Aic),
            "bic" => Ok(Objective::Bic),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Mse => "MSE",
            Objective::Aic => "AIC",
            Objective::Bic => "BIC",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub mse: f64,
    /// −2 · log-likelihood at the optimum.
    pub ll: f64,
    pub aic: f64,
    pub bic: f64,
}

impl Scores {
    pub fn get(&self, objective: Objective) -> f64 {
        match objective {
            Objective::Mse => self.mse,
            Objective::Aic => self.aic,
            Objective::Bic => self.bic,
        }
    }
}

/// Scores from the residual sum of squares `ss` over `n` points with
/// `n_params` estimated parameters. The BIC penalty is `n · n_params`.
pub fn score(ss: f64, n: usize, n_params: usize) -> Scores {
    let nf = n as f64;
    let tau2 = (ss / nf).max(TAU2_FLOOR);
    let ll = nf * (2.0 * std::f64::consts::PI * tau2).ln() + ss / tau2;
    Scores {
        mse: ss / nf,
        ll,
        aic: ll + 2.0 * n_params as f64,
        bic: ll + nf * n_params as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakModelFit {
    pub region_id: usize,
    pub family: ShapeFamily,
    pub s_hat: usize,
    pub weights: Vec<f64>,
    pub components: Vec<ComponentParams>,
    pub tau2: f64,
    /// Residual sum of squares on the normalized intensities.
    pub ss: f64,
    /// Number of fitted points.
    pub n: usize,
    pub scores: Scores,
}

impl PeakModelFit {
    pub fn n_params(&self) -> usize {
        self.family.n_params(self.s_hat)
    }

    /// Fitted mixture at grid coordinate `t`.
    pub fn curve(&self, t: f64) -> f64 {
        self.weights.iter().zip(&self.components).map(|(w, c)| w * c.pdf(t)).sum()
    }

    pub fn objective(&self, objective: Objective) -> f64 {
        self.scores.get(objective)
    }
}

/// Grid coordinate of the 0-based column offset inside a region.
pub fn grid_coord(family: ShapeFamily, offset: usize) -> f64 {
    match family {
        ShapeFamily::Pmm => offset as f64,
        _ => (offset + 1) as f64,
    }
}

/// Inverse of [`grid_coord`] on the real line.
pub fn offset_of(family: ShapeFamily, t: f64) -> f64 {
    match family {
        ShapeFamily::Pmm => t,
        _ => t - 1.0,
    }
}

pub fn grid(family: ShapeFamily, len: usize) -> Vec<f64> {
    (0..len).map(|l| grid_coord(family, l)).collect()
}

/// Divides by the region total; the result sums to one.
pub fn normalize(values: &[f64]) -> Vec<f64> {
    let total: f64 = values.iter().sum();
    values.iter().map(|v| v / total).collect()
}

/// Minimum region length for `s` components of `family`.
pub fn min_points(family: ShapeFamily, s: usize) -> usize {
    family.n_params(s)
}

fn decode_weights(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut weights: Vec<f64> = std::iter::once(0.0).chain(logits.iter().copied()).map(|l| (l - m).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    weights
}

fn decode_component(family: ShapeFamily, len: usize, c: &[f64]) -> Option<ComponentParams> {
    let xi = match family {
        ShapeFamily::Pmm => ComponentParams::Poisson { lambda: c[0].exp() },
        ShapeFamily::Gmm => ComponentParams::Gaussian { mean: c[0], sd: c[1].exp() },
        ShapeFamily::Tgmm => ComponentParams::TruncatedGaussian {
            mean: c[0],
            sd: c[1].exp(),
            lower: 1.0,
            upper: len as f64,
        },
        ShapeFamily::Gamm => ComponentParams::Gamma {
            shape: c[0].exp(),
            rate: c[1].exp(),
        },
        ShapeFamily::Egmm => ComponentParams::Emg {
            mean: c[0],
            sd: c[1].exp(),
            rate: c[2].exp(),
        },
    };
    let sd_ok = match xi {
        ComponentParams::Gaussian { sd, .. } | ComponentParams::TruncatedGaussian { sd, .. } | ComponentParams::Emg { sd, .. } => {
            sd >= SD_FLOOR
        }
        _ => true,
    };
    (sd_ok && xi.validate().is_ok()).then_some(xi)
}

/// Parameter vector layout: s − 1 weight logits, then the per-component
/// parameters of each component in turn.
fn decode(family: ShapeFamily, s: usize, len: usize, p: &[f64]) -> Option<(Vec<f64>, Vec<ComponentParams>)> {
    let k = family.params_per_component();
    let comps = p[s - 1..].chunks(k).map(|c| decode_component(family, len, c)).collect::<Option<Vec<_>>>()?;
    Some((decode_weights(&p[..s - 1]), comps))
}

fn density_vector(xi: &ComponentParams, t: &[f64]) -> Option<Vec<f64>> {
    let v = xi.pdf_on(t);
    v.iter().all(|x| x.is_finite()).then_some(v)
}

/// Jacobian of the mixture residuals. Weight columns are exact,
/// ∂m/∂logit_k = w_k (f_k − m); a shape-parameter column only needs the
/// perturbed component's density, by forward (else backward) difference.
fn mixture_jacobian(family: ShapeFamily, s: usize, t: &[f64], p: &[f64]) -> DMatrix<f64> {
    let len = t.len();
    let k = family.params_per_component();
    let mut jac = DMatrix::<f64>::zeros(len, p.len());
    let Some((w, comps)) = decode(family, s, len, p) else {
        return jac;
    };
    let Some(f) = comps.iter().map(|c| density_vector(c, t)).collect::<Option<Vec<_>>>() else {
        return jac;
    };
    let mix: Vec<f64> = (0..len).map(|l| (0..s).map(|i| w[i] * f[i][l]).sum()).collect();
    for kw in 1..s {
        for l in 0..len {
            jac[(l, kw - 1)] = w[kw] * (f[kw][l] - mix[l]);
        }
    }
    for i in 0..s {
        let base = s - 1 + i * k;
        for j in 0..k {
            let mut c = p[base..base + k].to_vec();
            let h = 1e-7 * c[j].abs().max(1.0);
            let orig = c[j];
            let mut column = None;
            for sign in [1.0, -1.0] {
                c[j] = orig + sign * h;
                if let Some(fp) = decode_component(family, len, &c).and_then(|xi| density_vector(&xi, t)) {
                    column = Some((sign, fp));
                    break;
                }
            }
            if let Some((sign, fp)) = column {
                for l in 0..len {
                    jac[(l, base + j)] = sign * w[i] * (fp[l] - f[i][l]) / h;
                }
            }
        }
    }
    jac
}

fn encode_component(family: ShapeFamily, loc: f64, scale: f64) -> Vec<f64> {
    match family {
        ShapeFamily::Pmm => vec![loc.max(0.3).ln()],
        ShapeFamily::Gmm | ShapeFamily::Tgmm => vec![loc, scale.ln()],
        ShapeFamily::Gamm => {
            // shape/rate with mode `loc` and sd `scale`
            let q = loc.max(0.1) / scale;
            let u = 0.5 * (q + (q * q + 4.0).sqrt());
            vec![(u * u).ln(), (u / scale).ln()]
        }
        ShapeFamily::Egmm => vec![loc - 0.3 * scale, (0.8 * scale).ln(), (2.0 / scale).ln()],
    }
}

/// Apex offsets to seed `s` components: the highest FDT maxima, then the
/// global maximum, then evenly spread positions.
fn seed_offsets(values: &[f64], s: usize) -> Vec<f64> {
    let mut apexes = fdt(values);
    apexes.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut out: Vec<f64> = apexes.iter().take(s).map(|&a| a as f64).collect();
    if out.len() < s {
        let argmax = (0..values.len()).max_by(|&a, &b| values[a].total_cmp(&values[b]).then(b.cmp(&a))).unwrap_or(0);
        if !apexes.contains(&argmax) {
            out.push(argmax as f64);
        }
    }
    let len = values.len() as f64;
    let mut j = 0;
    while out.len() < s {
        j += 1;
        out.push((len - 1.0) * j as f64 / (s + 1) as f64);
    }
    out.sort_by(f64::total_cmp);
    out
}

fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    // splitmix64 over the key
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

fn family_key(f: ShapeFamily) -> u64 {
    ShapeFamily::ALL.iter().position(|&g| g == f).unwrap_or(0) as u64
}

/// Fits `s` components of `family` to the normalized region.
///
/// The multistart jitter is drawn from a generator keyed by `seed`, the
/// region's position, the family and `s`, so the result does not depend on
/// evaluation order.
pub fn fit_mixture(region: &PeakRegion, family: ShapeFamily, s: usize, seed: u64) -> Result<PeakModelFit> {
    let len = region.len();
    let needed = min_points(family, s);
    if s == 0 || len < needed {
        return Err(Error::InfeasibleRegion { len, s, needed });
    }
    let z = normalize(&region.values);
    let t = grid(family, len);
    let scale = (len as f64 / (5.0 * s as f64)).max(0.5);
    let offsets = seed_offsets(&region.values, s);

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
        seed,
        &[region.row as u64, region.col_start as u64, region.col_end as u64, family_key(family), s as u64],
    ));

    let residuals = |p: &[f64]| -> Option<Vec<f64>> {
        let (w, comps) = decode(family, s, len, p)?;
        let mut r: Vec<f64> = z.iter().map(|&zl| -zl).collect();
        for (wi, c) in w.iter().zip(&comps) {
            for (rl, fl) in r.iter_mut().zip(c.pdf_on(&t)) {
                *rl += wi * fl;
            }
        }
        Some(r)
    };

    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in 0..MULTISTARTS {
        let mut p0 = vec![0.0; s - 1];
        for &off in &offsets {
            let (mut loc, mut sc) = (grid_coord(family, 0) + off, scale);
            if start > 0 {
                let j1: f64 = rng.sample(StandardNormal);
                let j2: f64 = rng.sample(StandardNormal);
                loc += 0.5 * j1 * scale.min(2.0);
                sc *= (0.3 * j2).exp();
            }
            p0.extend(encode_component(family, loc, sc));
        }
        if start > 0 {
            for l in p0.iter_mut().take(s - 1) {
                *l += 0.3 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let jacobian = |_: &mut dyn FnMut(&[f64]) -> Option<Vec<f64>>, p: &[f64], _: &[f64]| mixture_jacobian(family, s, &t, p);
        let Ok(m) = levenberg_marquardt_with(residuals, jacobian, &p0, LmOptions::default()) else {
            continue;
        };
        if best.as_ref().is_none_or(|b| m.value < b.0) {
            best = Some((m.value, m.x));
        }
    }
    let Some((ss, p)) = best else {
        return Err(Error::OptimizerDiverged(format!(
            "{family} with {s} component(s) failed from every start on region {}",
            region.id
        )));
    };
    let (weights, comps) = decode(family, s, len, &p).expect("accepted point decodes");
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| comps[a].mode().total_cmp(&comps[b].mode()));
    let weights: Vec<f64> = order.iter().map(|&i| weights[i]).collect();
    let components: Vec<ComponentParams> = order.iter().map(|&i| comps[i]).collect();

    // recompute SS from the stored parameters
    let mut fit = PeakModelFit {
        region_id: region.id,
        family,
        s_hat: s,
        weights,
        components,
        tau2: 0.0,
        ss,
        n: len,
        scores: score(ss, len, family.n_params(s)),
    };
    let ss: f64 = t.iter().zip(&z).map(|(&tl, &zl)| (fit.curve(tl) - zl).powi(2)).sum();
    fit.ss = ss;
    fit.tau2 = (ss / len as f64).max(TAU2_FLOOR);
    fit.scores = score(ss, len, family.n_params(s));
    Ok(fit)
}

/// Fits S = 1..=S_max components (skipping infeasible counts) and keeps the
/// fit with the smallest objective; ties go to fewer components.
pub fn select_components(region: &PeakRegion, family: ShapeFamily, objective: Objective, seed: u64) -> Result<PeakModelFit> {
    let s_max = region.s_max();
    let fits: Vec<Result<PeakModelFit>> = (1..=s_max)
        .into_par_iter()
        .filter(|&s| region.len() >= min_points(family, s))
        .map(|s| fit_mixture(region, family, s, seed))
        .collect();
    let mut best: Option<PeakModelFit> = None;
    let mut last_err = None;
    for f in fits {
        match f {
            Ok(f) => {
                if best.as_ref().is_none_or(|b| f.objective(objective) < b.objective(objective)) {
                    best = Some(f);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some(b), _) => Ok(b),
        (None, Some(Error::OptimizerDiverged(m))) => Err(Error::OptimizerDiverged(m)),
        _ => Err(Error::NoFeasibleFit),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub id: usize,
    /// 0-based first-dimension row.
    pub row: usize,
    /// 0-based column of the apex.
    pub apex_col: usize,
    pub rt1: f64,
    pub rt2: f64,
    /// Processed (deconvoluted) TIC at the apex.
    pub height: f64,
    /// 95% HPD length of the component, in second-dimension seconds.
    pub area: f64,
    /// Component weight times the region's summed intensity; not part of the
    /// HPD area definition.
    pub abundance: f64,
    pub region_id: usize,
    pub component: usize,
    pub family: ShapeFamily,
    pub weight: f64,
    pub spectrum: Spectrum,
}

/// One peak per fitted component: apex at the component mode (nearest
/// column, clamped into the region), area from its HPD interval.
pub fn extract_peaks(fit: &PeakModelFit, region: &PeakRegion, run: &ChromatogramRun) -> Result<Vec<Peak>> {
    let g = run.geometry;
    let mut peaks = Vec::with_capacity(fit.s_hat);
    for (idx, (w, xi)) in fit.weights.iter().zip(&fit.components).enumerate() {
        let offset = offset_of(fit.family, xi.mode()).round();
        let col = (region.col_start as f64 + offset).clamp(region.col_start as f64, region.col_end as f64) as usize;
        let (lo, hi) = hpd_interval(xi, HPD_MASS)?;
        let scan = g.scan_index(region.row, col);
        peaks.push(Peak {
            id: 0,
            row: region.row,
            apex_col: col,
            rt1: run.rt1[scan],
            rt2: run.rt2[scan],
            height: region.values[col - region.col_start],
            area: (hi - lo) * g.rt2_step,
            abundance: w * region.total(),
            region_id: region.id,
            component: idx,
            family: fit.family,
            weight: *w,
            spectrum: run.spectra[scan].clone(),
        });
    }
    Ok(peaks)
}
