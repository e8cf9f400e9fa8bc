//! The five peak-shape families and their 95% HPD intervals.
//!
//! Conventions:
//! - Poisson is a pmf over a non-negative integer offset `k`; `pdf(t)` is 0
//!   off the integer grid.
//! - The truncated Gaussian carries its bounds in the parameters; in peak
//!   fitting they are pinned to the first and last column of the region.
//! - Gamma uses (shape, rate); the EMG uses the Gaussian (mean, sd) plus the
//!   exponential decay rate (1 / relaxation time).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::special::{ln_emg, ln_norm_cdf, ln_norm_pdf, norm_cdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ShapeFamily {
    Pmm,
    #[serde(rename = "tGMM")]
    Tgmm,
    Gmm,
    #[serde(rename = "GaMM")]
    Gamm,
    Egmm,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 5] = [
        ShapeFamily::Pmm,
        ShapeFamily::Tgmm,
        ShapeFamily::Gmm,
        ShapeFamily::Gamm,
        ShapeFamily::Egmm,
    ];

    /// Free parameters per mixture component (truncation bounds are fixed).
    pub fn params_per_component(self) -> usize {
        match self {
            ShapeFamily::Pmm => 1,
            ShapeFamily::Tgmm | ShapeFamily::Gmm | ShapeFamily::Gamm => 2,
            ShapeFamily::Egmm => 3,
        }
    }

    /// Parameter count used by the information criteria: S·p + 1 (the +1 is τ²).
    pub fn n_params(self, s: usize) -> usize {
        s * self.params_per_component() + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::Pmm => "PMM",
            ShapeFamily::Tgmm => "tGMM",
            ShapeFamily::Gmm => "GMM",
            ShapeFamily::Gamm => "GaMM",
            ShapeFamily::Egmm => "EGMM",
        }
    }
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pmm" | "poisson" => Ok(ShapeFamily::Pmm),
            "tgmm" => Ok(ShapeFamily::Tgmm),
            "gmm" | "gaussian" => Ok(ShapeFamily::Gmm),
            "gamm" | "gamma" => Ok(ShapeFamily::Gamm),
            "egmm" | "emg" => Ok(ShapeFamily::Egmm),
            other => Err(Error::Config(format!("unknown shape family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComponentParams {
    Poisson { lambda: f64 },
    TruncatedGaussian { mean: f64, sd: f64, lower: f64, upper: f64 },
    Gaussian { mean: f64, sd: f64 },
    Gamma { shape: f64, rate: f64 },
    Emg { mean: f64, sd: f64, rate: f64 },
}

/// ln(Φ(b) − Φ(a)) for a < b without cancellation in either tail.
fn ln_cdf_diff(a: f64, b: f64) -> f64 {
    if a >= b {
        return f64::NEG_INFINITY;
    }
    if a > 0.0 {
        // upper tail: Φ(−a) − Φ(−b)
        let hi = ln_norm_cdf(-a);
        hi + (-(ln_norm_cdf(-b) - hi).exp()).ln_1p()
    } else {
        let hi = ln_norm_cdf(b);
        hi + (-(ln_norm_cdf(a) - hi).exp()).ln_1p()
    }
}

impl ComponentParams {
    pub fn family(&self) -> ShapeFamily {
        match self {
            ComponentParams::Poisson { .. } => ShapeFamily::Pmm,
            ComponentParams::TruncatedGaussian { .. } => ShapeFamily::Tgmm,
            ComponentParams::Gaussian { .. } => ShapeFamily::Gmm,
            ComponentParams::Gamma { .. } => ShapeFamily::Gamm,
            ComponentParams::Emg { .. } => ShapeFamily::Egmm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        let valid = match *self {
            ComponentParams::Poisson { lambda } => ok(lambda),
            ComponentParams::TruncatedGaussian { mean, sd, lower, upper } => {
                mean.is_finite() && ok(sd) && lower.is_finite() && upper.is_finite() && lower < upper
            }
            ComponentParams::Gaussian { mean, sd } => mean.is_finite() && ok(sd),
            ComponentParams::Gamma { shape, rate } => ok(shape) && ok(rate),
            ComponentParams::Emg { mean, sd, rate } => mean.is_finite() && ok(sd) && ok(rate),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("{self:?}")))
        }
    }

    /// Log density (log pmf for Poisson); −∞ outside the support.
    pub fn ln_pdf(&self, t: f64) -> f64 {
        match *self {
            ComponentParams::Poisson { lambda } => {
                if t < 0.0 || t.fract() != 0.0 {
                    f64::NEG_INFINITY
                } else {
                    t * lambda.ln() - lambda - ln_gamma(t + 1.0)
                }
            }
            ComponentParams::TruncatedGaussian { mean, sd, lower, upper } => {
                if t < lower || t > upper {
                    f64::NEG_INFINITY
                } else {
                    ln_norm_pdf((t - mean) / sd) - sd.ln() - ln_cdf_diff((lower - mean) / sd, (upper - mean) / sd)
                }
            }
            ComponentParams::Gaussian { mean, sd } => ln_norm_pdf((t - mean) / sd) - sd.ln(),
            ComponentParams::Gamma { shape, rate } => {
                if t < 0.0 {
                    f64::NEG_INFINITY
                } else if t == 0.0 {
                    match shape.partial_cmp(&1.0) {
                        Some(std::cmp::Ordering::Less) => f64::INFINITY,
                        Some(std::cmp::Ordering::Equal) => rate.ln(),
                        _ => f64::NEG_INFINITY,
                    }
                } else {
                    shape * rate.ln() + (shape - 1.0) * t.ln() - rate * t - ln_gamma(shape)
                }
            }
            ComponentParams::Emg { mean, sd, rate } => ln_emg(t, mean, sd, rate),
        }
    }

    pub fn pdf(&self, t: f64) -> f64 {
        self.ln_pdf(t).exp()
    }

    /// Density at every point of `ts`; the truncated Gaussian's normalizer
    /// is computed once instead of per point.
    pub fn pdf_on(&self, ts: &[f64]) -> Vec<f64> {
        match *self {
            ComponentParams::TruncatedGaussian { mean, sd, lower, upper } => {
                let ln_z = sd.ln() + ln_cdf_diff((lower - mean) / sd, (upper - mean) / sd);
                ts.iter()
                    .map(|&t| if t < lower || t > upper { 0.0 } else { (ln_norm_pdf((t - mean) / sd) - ln_z).exp() })
                    .collect()
            }
            _ => ts.iter().map(|&t| self.pdf(t)).collect(),
        }
    }

    /// Validating variant of [`ComponentParams::pdf`].
    pub fn try_pdf(&self, t: f64) -> Result<f64> {
        self.validate()?;
        Ok(self.pdf(t))
    }

    /// Support of the density (integer offsets for Poisson).
    pub fn support(&self) -> (f64, f64) {
        match *self {
            ComponentParams::Poisson { .. } | ComponentParams::Gamma { .. } => (0.0, f64::INFINITY),
            ComponentParams::TruncatedGaussian { lower, upper, .. } => (lower, upper),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Location of the density maximum.
    pub fn mode(&self) -> f64 {
        match *self {
            ComponentParams::Poisson { lambda } => {
                if lambda.fract() == 0.0 {
                    // λ−1 and λ tie; take the larger offset
                    lambda
                } else {
                    lambda.floor()
                }
            }
            ComponentParams::TruncatedGaussian { mean, lower, upper, .. } => mean.clamp(lower, upper),
            ComponentParams::Gaussian { mean, .. } => mean,
            ComponentParams::Gamma { shape, rate } => ((shape - 1.0) / rate).max(0.0),
            ComponentParams::Emg { mean, sd, rate } => {
                // log-concave; the mode lies in [mean, mean + 1/rate]
                let (mut a, mut b) = (mean - sd, mean + 1.0 / rate + sd);
                let g = 0.5 * (5f64.sqrt() - 1.0);
                let f = |t: f64| ln_emg(t, mean, sd, rate);
                let mut c = b - g * (b - a);
                let mut d = a + g * (b - a);
                let (mut fc, mut fd) = (f(c), f(d));
                for _ in 0..200 {
                    if (b - a).abs() <= 1e-12 * (1.0 + mean.abs()) {
                        break;
                    }
                    if fc > fd {
                        b = d;
                        d = c;
                        fd = fc;
                        c = b - g * (b - a);
                        fc = f(c);
                    } else {
                        a = c;
                        c = d;
                        fc = fd;
                        d = a + g * (b - a);
                        fd = f(d);
                    }
                }
                0.5 * (a + b)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ComponentParams::Poisson { lambda } => lambda,
            ComponentParams::TruncatedGaussian { mean, sd, lower, upper } => {
                let (a, b) = ((lower - mean) / sd, (upper - mean) / sd);
                let z = ln_cdf_diff(a, b);
                mean + sd * ((ln_norm_pdf(a) - z).exp() - (ln_norm_pdf(b) - z).exp())
            }
            ComponentParams::Gaussian { mean, .. } => mean,
            ComponentParams::Gamma { shape, rate } => shape / rate,
            ComponentParams::Emg { mean, rate, .. } => mean + 1.0 / rate,
        }
    }

    /// Rough width used to bracket level-set searches.
    pub fn scale(&self) -> f64 {
        match *self {
            ComponentParams::Poisson { lambda } => lambda.sqrt().max(1.0),
            ComponentParams::TruncatedGaussian { sd, lower, upper, .. } => sd.min(upper - lower),
            ComponentParams::Gaussian { sd, .. } => sd,
            ComponentParams::Gamma { shape, rate } => shape.sqrt() / rate,
            ComponentParams::Emg { sd, rate, .. } => (sd * sd + 1.0 / (rate * rate)).sqrt(),
        }
    }

    /// P(T ≤ t) for the continuous families (Poisson: P(K ≤ ⌊t⌋)).
    pub fn cdf(&self, t: f64) -> f64 {
        match *self {
            ComponentParams::Poisson { .. } => {
                if t < 0.0 {
                    0.0
                } else {
                    (0..=t.floor() as u64).map(|k| self.pdf(k as f64)).sum::<f64>().min(1.0)
                }
            }
            ComponentParams::TruncatedGaussian { mean, sd, lower, upper } => {
                if t <= lower {
                    0.0
                } else if t >= upper {
                    1.0
                } else {
                    let (a, b) = ((lower - mean) / sd, (upper - mean) / sd);
                    (ln_cdf_diff(a, (t - mean) / sd) - ln_cdf_diff(a, b)).exp()
                }
            }
            ComponentParams::Gaussian { mean, sd } => norm_cdf((t - mean) / sd),
            ComponentParams::Gamma { shape, rate } => {
                if t <= 0.0 {
                    0.0
                } else if t == f64::INFINITY {
                    1.0
                } else {
                    gamma_lr(shape, rate * t)
                }
            }
            ComponentParams::Emg { mean, sd, rate } => {
                // F(t) = Φ(u) − f(t)/rate
                (norm_cdf((t - mean) / sd) - (ln_emg(t, mean, sd, rate) - rate.ln()).exp()).clamp(0.0, 1.0)
            }
        }
    }

    /// Probability mass on [lo, hi].
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        match *self {
            ComponentParams::Gaussian { mean, sd } => ln_cdf_diff((lo - mean) / sd, (hi - mean) / sd).exp(),
            ComponentParams::TruncatedGaussian { mean, sd, lower, upper } => {
                let (lo, hi) = (lo.max(lower), hi.min(upper));
                if hi <= lo {
                    return 0.0;
                }
                (ln_cdf_diff((lo - mean) / sd, (hi - mean) / sd)
                    - ln_cdf_diff((lower - mean) / sd, (upper - mean) / sd))
                    .exp()
            }
            _ => (self.cdf(hi) - self.cdf(lo)).max(0.0),
        }
    }
}

/// Highest-density interval holding at least `mass` probability.
///
/// For Poisson the result is the shortest contiguous run of integers
/// `a..=b` with enough mass, reported as the bin extents `(a − ½, b + ½)`.
/// For the continuous families it is the level set `{f ≥ c}` of the
/// unimodal density, clipped to the support, with `c` found by bisection.
pub fn hpd_interval(xi: &ComponentParams, mass: f64) -> Result<(f64, f64)> {
    xi.validate()?;
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::InvalidParams(format!("HPD mass {mass} not in (0, 1)")));
    }
    match *xi {
        ComponentParams::Poisson { lambda } => {
            let (a, b) = poisson_hpd_window(lambda, mass);
            Ok((a as f64 - 0.5, b as f64 + 0.5))
        }
        _ => continuous_hpd(xi, mass),
    }
}

/// Shortest window `a..=b` of Poisson(λ) offsets with mass ≥ `mass`; ties go
/// to the heavier window.
pub fn poisson_hpd_window(lambda: f64, mass: f64) -> (u64, u64) {
    let kmax = (lambda + 40.0 * lambda.sqrt() + 40.0).ceil() as usize;
    let xi = ComponentParams::Poisson { lambda };
    let pmf: Vec<f64> = (0..=kmax).map(|k| xi.pdf(k as f64)).collect();
    // two pointers: for each right end, the largest left end still holding `mass`
    let mut best: Option<(usize, usize, f64)> = None;
    let mut acc = 0.0;
    let mut a = 0;
    for b in 0..pmf.len() {
        acc += pmf[b];
        while a < b && acc - pmf[a] >= mass {
            acc -= pmf[a];
            a += 1;
        }
        if acc >= mass {
            let better = match best {
                None => true,
                Some((ba, bb, bm)) => b - a < bb - ba || (b - a == bb - ba && acc > bm),
            };
            if better {
                best = Some((a, b, acc));
            }
        }
    }
    let (a, b, _) = best.unwrap_or((0, kmax, 1.0));
    (a as u64, b as u64)
}

/// Outermost point on one side of the mode where the density is still ≥ level.
fn level_crossing(xi: &ComponentParams, mode: f64, level: f64, dir: f64, bound: f64) -> Result<f64> {
    let ln_level = level.ln();
    if bound.is_finite() && xi.ln_pdf(bound) >= ln_level {
        return Ok(bound);
    }
    let mut step = xi.scale().max(1e-12);
    let mut inner = mode;
    let mut outer = mode + dir * step;
    let mut n = 0;
    loop {
        if bound.is_finite() && (outer - bound) * dir >= 0.0 {
            outer = bound;
            break;
        }
        if xi.ln_pdf(outer) < ln_level {
            break;
        }
        inner = outer;
        step *= 2.0;
        outer = mode + dir * step;
        n += 1;
        if n > 200 {
            return Err(Error::NumericalFailure("level set is unbounded".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (inner + outer);
        if mid == inner || mid == outer {
            break;
        }
        if xi.ln_pdf(mid) >= ln_level {
            inner = mid;
        } else {
            outer = mid;
        }
    }
    Ok(inner)
}

fn continuous_hpd(xi: &ComponentParams, target: f64) -> Result<(f64, f64)> {
    let (lo_s, hi_s) = xi.support();
    let mode = xi.mode();
    let ln_top = xi.ln_pdf(mode);

    // monotone density: the interval starts (or ends) at the support bound
    let at_left = lo_s.is_finite() && mode <= lo_s;
    let at_right = hi_s.is_finite() && mode >= hi_s;
    if at_left || at_right || !ln_top.is_finite() {
        let dir = if at_right { -1.0 } else { 1.0 };
        let anchor = if at_right { hi_s } else { lo_s };
        let span = |x: f64| if dir > 0.0 { xi.mass(anchor, x) } else { xi.mass(x, anchor) };
        let far = if dir > 0.0 { hi_s } else { lo_s };
        let mut inner = anchor;
        let mut outer;
        let mut step = xi.scale();
        loop {
            outer = anchor + dir * step;
            if far.is_finite() && (outer - far) * dir >= 0.0 {
                outer = far;
                break;
            }
            if span(outer) >= target {
                break;
            }
            inner = outer;
            step *= 2.0;
            if !step.is_finite() {
                return Err(Error::NumericalFailure("HPD bracket diverged".into()));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (inner + outer);
            if mid == inner || mid == outer {
                break;
            }
            if span(mid) >= target {
                outer = mid;
            } else {
                inner = mid;
            }
        }
        return Ok(if dir > 0.0 { (anchor, outer) } else { (outer, anchor) });
    }

    // interior mode: bisection on ln(level); mass of the level set decreases
    // as the level rises
    let interval = |ln_c: f64| -> Result<(f64, f64, f64)> {
        let c = ln_c.exp();
        let lo = level_crossing(xi, mode, c, -1.0, lo_s)?;
        let hi = level_crossing(xi, mode, c, 1.0, hi_s)?;
        Ok((lo, hi, xi.mass(lo, hi)))
    };
    let mut high = ln_top;
    let mut low = ln_top - 1.0;
    let mut best = interval(low)?;
    let mut n = 0;
    while best.2 < target {
        high = low;
        low -= 2.0 * (ln_top - low).max(1.0);
        best = interval(low)?;
        n += 1;
        if n > 60 {
            return Err(Error::NumericalFailure("HPD level bracket failed".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (low + high);
        if mid == low || mid == high {
            break;
        }
        let cand = interval(mid)?;
        if cand.2 >= target {
            low = mid;
            best = cand;
            if cand.2 - target < 1e-13 {
                break;
            }
        } else {
            high = mid;
        }
    }
    Ok((best.0, best.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;

    #[test]
    fn parameter_counts() {
        let counts: Vec<usize> = ShapeFamily::ALL.iter().map(|f| f.params_per_component()).collect();
        assert_eq!(counts, vec![1, 2, 2, 2, 3]);
        assert_eq!(ShapeFamily::Egmm.n_params(2), 7);
        assert_eq!(ShapeFamily::Pmm.n_params(3), 4);
    }

    #[test]
    fn family_names_round_trip() {
        for f in ShapeFamily::ALL {
            assert_eq!(f.name().parse::<ShapeFamily>().unwrap(), f);
            let json = serde_json::to_string(&f).unwrap();
            assert_eq!(json, format!("\"{}\"", f.name()));
            assert_eq!(serde_json::from_str::<ShapeFamily>(&json).unwrap(), f);
        }
        assert!("lorentz".parse::<ShapeFamily>().is_err());
    }

    #[test]
    fn gaussian_peak_value() {
        let g = ComponentParams::Gaussian { mean: 3.0, sd: 1.0 };
        assert!((g.pdf(3.0) - 0.398_942_280_4).abs() < 1e-9);
    }

    #[test]
    fn wide_truncation_matches_gaussian() {
        let (m, s) = (4.0, 1.5);
        let t = ComponentParams::TruncatedGaussian {
            mean: m,
            sd: s,
            lower: m - 10.0 * s,
            upper: m + 10.0 * s,
        };
        let g = ComponentParams::Gaussian { mean: m, sd: s };
        for i in -20..=20 {
            let x = m + 0.4 * i as f64;
            assert!((t.pdf(x) - g.pdf(x)).abs() < 1e-8);
        }
        assert_eq!(t.pdf(m + 11.0 * s), 0.0);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ComponentParams::Gaussian { mean: 0.0, sd: 0.0 }.try_pdf(0.0).is_err());
        assert!(ComponentParams::Gamma { shape: -1.0, rate: 1.0 }.validate().is_err());
        assert!(ComponentParams::TruncatedGaussian { mean: 0.0, sd: 1.0, lower: 2.0, upper: 1.0 }
            .validate()
            .is_err());
        assert!(hpd_interval(&ComponentParams::Gaussian { mean: 0.0, sd: 1.0 }, 1.0).is_err());
    }

    #[test]
    fn continuous_densities_integrate_to_one() {
        let cases = [
            ComponentParams::Gaussian { mean: 2.0, sd: 0.7 },
            ComponentParams::TruncatedGaussian { mean: 1.0, sd: 2.0, lower: 0.0, upper: 5.0 },
            ComponentParams::Gamma { shape: 3.0, rate: 1.0 },
            ComponentParams::Gamma { shape: 40.0, rate: 4.0 },
            ComponentParams::Emg { mean: 5.0, sd: 1.0, rate: 0.3 },
            ComponentParams::Emg { mean: 5.0, sd: 1.0, rate: 20.0 },
        ];
        for xi in cases {
            let (a, b) = xi.support();
            let a = if a.is_finite() { a } else { xi.mean() - 60.0 * xi.scale() };
            let b = if b.is_finite() { b } else { xi.mean() + 60.0 * xi.scale() };
            let n = 200_000;
            let h = (b - a) / n as f64;
            let mut s = 0.5 * (xi.pdf(a) + xi.pdf(b));
            for i in 1..n {
                s += xi.pdf(a + i as f64 * h);
            }
            assert!((s * h - 1.0).abs() < 1e-6, "{xi:?}: {}", s * h);
        }
    }

    #[test]
    fn closed_form_mass_matches_quadrature() {
        let cases = [
            (ComponentParams::Gamma { shape: 3.0, rate: 1.0 }, 0.5, 6.0),
            (ComponentParams::Emg { mean: 5.0, sd: 1.0, rate: 0.3 }, 3.0, 12.0),
            (ComponentParams::TruncatedGaussian { mean: 1.0, sd: 2.0, lower: 0.0, upper: 5.0 }, 0.5, 4.0),
        ];
        for (xi, lo, hi) in cases {
            let q = integrate(|t| xi.pdf(t), lo, hi, 1e-14, 1e-12, 10_000).unwrap();
            assert!((q - xi.mass(lo, hi)).abs() < 1e-11, "{xi:?}");
        }
    }

    #[test]
    fn emg_fast_decay_limit() {
        let e = ComponentParams::Emg { mean: 0.0, sd: 1.0, rate: 1e6 };
        let g = ComponentParams::Gaussian { mean: 0.0, sd: 1.0 };
        for i in -30..=30 {
            let t = 0.1 * i as f64;
            assert!((e.pdf(t) - g.pdf(t)).abs() < 1e-4);
        }
    }

    #[test]
    fn large_shape_gamma_and_poisson_approach_gaussian() {
        let (shape, rate) = (1e4, 100.0);
        let gam = ComponentParams::Gamma { shape, rate };
        let g = ComponentParams::Gaussian { mean: shape / rate, sd: shape.sqrt() / rate };
        for i in -20..=20 {
            let t = 100.0 + 0.1 * i as f64;
            assert!((gam.pdf(t) - g.pdf(t)).abs() < 0.02 * g.pdf(100.0));
        }
        let lambda = 1e4;
        let p = ComponentParams::Poisson { lambda };
        let g = ComponentParams::Gaussian { mean: lambda, sd: lambda.sqrt() };
        for k in [9900.0, 9950.0, 10000.0, 10050.0, 10100.0] {
            assert!((p.pdf(k) - g.pdf(k)).abs() < 0.02 * g.pdf(lambda));
        }
    }

    #[test]
    fn modes() {
        assert_eq!(ComponentParams::Poisson { lambda: 4.3 }.mode(), 4.0);
        assert_eq!(ComponentParams::Gamma { shape: 3.0, rate: 2.0 }.mode(), 1.0);
        assert_eq!(ComponentParams::Gamma { shape: 0.5, rate: 2.0 }.mode(), 0.0);
        let emg = ComponentParams::Emg { mean: 10.0, sd: 1.0, rate: 0.5 };
        let m = emg.mode();
        assert!(emg.pdf(m) >= emg.pdf(m + 1e-4) && emg.pdf(m) >= emg.pdf(m - 1e-4));
        assert!(m > 10.0 && m < 12.0);
    }

    #[test]
    fn gaussian_hpd_is_central() {
        let (lo, hi) = hpd_interval(&ComponentParams::Gaussian { mean: 7.0, sd: 2.0 }, 0.95).unwrap();
        assert!((hi - lo - 2.0 * 1.959_963_984_540_054 * 2.0).abs() < 1e-6);
        assert!((lo + hi - 14.0).abs() < 1e-6);
    }

    #[test]
    fn monotone_densities_anchor_at_support() {
        let g = ComponentParams::Gamma { shape: 0.6, rate: 1.0 };
        let (lo, hi) = hpd_interval(&g, 0.95).unwrap();
        assert_eq!(lo, 0.0);
        assert!((g.cdf(hi) - 0.95).abs() < 1e-9);

        let t = ComponentParams::TruncatedGaussian { mean: -3.0, sd: 2.0, lower: 0.0, upper: 10.0 };
        let (lo, hi) = hpd_interval(&t, 0.95).unwrap();
        assert_eq!(lo, 0.0);
        assert!((t.mass(lo, hi) - 0.95).abs() < 1e-9);
    }

    #[test]
    fn poisson_window_small_cases() {
        // λ tiny: {0} alone holds e^{-0.01} > 0.95
        assert_eq!(poisson_hpd_window(0.01, 0.95), (0, 0));
        let (lo, hi) = hpd_interval(&ComponentParams::Poisson { lambda: 0.01 }, 0.95).unwrap();
        assert_eq!((lo, hi), (-0.5, 0.5));
    }
}
