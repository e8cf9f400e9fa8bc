//! Standard-normal helpers that stay accurate deep in the tails.
//!
//! Everything the NEB density, the deconvolution formula and the EMG shape
//! need reduces to the standard normal c.d.f. Φ and the Mills ratio
//! R(t) = (1 − Φ(t)) / ϕ(t). Below `TAIL_SWITCH` the complementary error
//! function underflows or loses relative accuracy, so R is evaluated by its
//! continued fraction instead.

use std::f64::consts::{PI, SQRT_2};

use libm::erfc;

/// z below which Φ(z) is computed through the Mills-ratio continued fraction.
pub const TAIL_SWITCH: f64 = -8.0;

const CF_TERMS: usize = 300;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

#[inline]
pub fn ln_norm_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Φ(z).
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// ln Φ(z), finite for every finite z.
pub fn ln_norm_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z == f64::INFINITY {
        return 0.0;
    }
    if z == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if z >= 0.0 {
        (-0.5 * erfc(z / SQRT_2)).ln_1p()
    } else if z >= TAIL_SWITCH {
        (0.5 * erfc(-z / SQRT_2)).ln()
    } else {
        ln_norm_pdf(z) + mills_ratio(-z).ln()
    }
}

/// Mills ratio R(t) = (1 − Φ(t)) / ϕ(t).
pub fn mills_ratio(t: f64) -> f64 {
    if t >= -TAIL_SWITCH {
        // R(t) = 1 / (t + 1/(t + 2/(t + 3/(t + ...))))
        let mut f = t;
        for k in (1..=CF_TERMS).rev() {
            f = t + k as f64 / f;
        }
        1.0 / f
    } else {
        norm_cdf(-t) / norm_pdf(t)
    }
}

/// Inverse Mills ratio ϕ(z) / Φ(z).
pub fn inv_mills(z: f64) -> f64 {
    if z >= TAIL_SWITCH {
        // for z > ~38 Φ(z) == 1 and ϕ(z) underflows to 0, which is the limit
        norm_pdf(z) / norm_cdf(z)
    } else {
        1.0 / mills_ratio(-z)
    }
}

/// z + ϕ(z)/Φ(z): the mean of a standard normal truncated to (−z, ∞),
/// shifted by z. Always positive.
pub fn truncated_mean_offset(z: f64) -> f64 {
    if z >= TAIL_SWITCH {
        z + inv_mills(z)
    } else {
        // 1/R(t) − t = 1/(t + 2/(t + 3/(t + ...))) with t = −z, no cancellation
        let t = -z;
        let mut g = t;
        for k in (2..=CF_TERMS).rev() {
            g = t + k as f64 / g;
        }
        1.0 / g
    }
}

/// Log-density of the exponentially modified Gaussian: a N(mean, sd²)
/// variable plus an independent Exp(rate) delay.
///
/// f(t) = rate · exp(rate²sd²/2 − rate(t − mean)) · Φ((t − mean)/sd − rate·sd)
pub fn ln_emg(t: f64, mean: f64, sd: f64, rate: f64) -> f64 {
    let a = (t - mean) / sd;
    let b = rate * sd;
    let z = a - b;
    if z >= TAIL_SWITCH {
        rate.ln() + 0.5 * b * b - a * b + ln_norm_cdf(z)
    } else {
        // algebraically identical: rate · ϕ(a) · R(b − a)
        rate.ln() + ln_norm_pdf(a) + mills_ratio(b - a).ln()
    }
}

/// Median of a slice (NaN-free input assumed).
pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolated quantile of a slice, `q` in [0, 1].
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    v[lo] + (v[hi] - v[lo]) * frac
}
