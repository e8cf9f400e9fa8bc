//! Reference computations used as test oracles. Nothing here calls into the
//! library's numerical code.

#![allow(dead_code)]

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on [−1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 1..=n {
        let mut x = (PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Composite Gauss–Legendre integral of `f` over [a, b].
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, rule: &[(f64, f64)]) -> f64 {
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        let mut s = 0.0;
        for &(x, w) in rule {
            s += w * f(mid + 0.5 * h * x);
        }
        total += 0.5 * h * s;
    }
    total
}

/// The signal-branch convolution integrand in θ, on a log scale:
/// ln[ϕ((x − μ − θ)/σ)/σ · e^{−θ/φ}/φ].
fn ln_kernel(theta: f64, x: f64, mu: f64, sigma: f64, phi: f64) -> f64 {
    let u = (x - mu - theta) / sigma;
    -0.5 * u * u - 0.5 * (2.0 * PI).ln() - sigma.ln() - phi.ln() - theta / phi
}

fn kernel_window(x: f64, mu: f64, sigma: f64, phi: f64) -> (f64, f64, f64) {
    let c = x - mu - sigma * sigma / phi;
    let peak = c.max(0.0);
    let width = if c >= 0.0 { sigma } else { sigma.min(sigma * sigma / -c) };
    let lo = (peak - 40.0 * width).max(0.0);
    let hi = peak + 40.0 * width;
    (peak, lo, hi)
}

/// ln ∫₀^∞ N(x; μ + θ, σ²) Exp(θ; φ) dθ by quadrature, scaled by the
/// integrand's maximum so nothing underflows.
pub fn ln_convolution(x: f64, mu: f64, sigma: f64, phi: f64) -> f64 {
    let (peak, lo, hi) = kernel_window(x, mu, sigma, phi);
    let top = ln_kernel(peak, x, mu, sigma, phi);
    let rule = gauss_legendre(20);
    let s = integrate(|t| (ln_kernel(t, x, mu, sigma, phi) - top).exp(), lo, hi, 400, &rule);
    top + s.ln()
}

/// E(Θ | x) for the signal branch by quadrature.
pub fn posterior_mean(x: f64, mu: f64, sigma: f64, phi: f64) -> f64 {
    let (peak, lo, hi) = kernel_window(x, mu, sigma, phi);
    let top = ln_kernel(peak, x, mu, sigma, phi);
    let rule = gauss_legendre(20);
    let k = |t: f64| (ln_kernel(t, x, mu, sigma, phi) - top).exp();
    let num = integrate(|t| t * k(t), lo, hi, 400, &rule);
    let den = integrate(k, lo, hi, 400, &rule);
    num / den
}

/// Lanczos ln Γ(x), x > 0 (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma P(a, x): series below a + 1,
/// Lentz continued fraction above.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let lead = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let (mut term, mut sum, mut ap) = (1.0 / a, 1.0 / a, a);
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum.ln() + lead).exp()
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-17 {
                break;
            }
        }
        1.0 - (lead + h.ln()).exp()
    }
}

fn gamma_quantile(shape: f64, rate: f64, p: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    while gamma_p(shape, rate * hi) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gamma_p(shape, rate * mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Shortest Gamma(shape, rate) interval with the given mass, by enumerating
/// lower endpoints on a grid and refining around the best one twice.
pub fn gamma_hpd_brute(shape: f64, rate: f64, mass: f64) -> (f64, f64) {
    let lo_max = gamma_quantile(shape, rate, 1.0 - mass);
    let eval = |lo: f64| {
        let p = gamma_p(shape, rate * lo);
        let hi = gamma_quantile(shape, rate, (p + mass).min(1.0));
        (hi - lo, lo, hi)
    };
    let (mut a, mut b) = (0.0, lo_max);
    let mut best = eval(0.0);
    for _ in 0..3 {
        let n = 400;
        let step = (b - a) / n as f64;
        for i in 0..=n {
            let cand = eval(a + i as f64 * step);
            if cand.0 < best.0 {
                best = cand;
            }
        }
        a = (best.1 - step).max(0.0);
        b = (best.1 + step).min(lo_max);
    }
    (best.1, best.2)
}

/// Shortest integer window [a, b] of Poisson(λ) mass ≥ `mass`, enumerating
/// every window; ties go to the heavier window, then the leftmost.
pub fn poisson_hpd_brute(lambda: f64, mass: f64) -> (u64, u64) {
    let kmax = (lambda + 40.0 * lambda.sqrt() + 40.0).ceil() as usize;
    let mut ln_fact = 0.0;
    let pmf: Vec<f64> = (0..=kmax)
        .map(|k| {
            if k > 0 {
                ln_fact += (k as f64).ln();
            }
            (-lambda + k as f64 * lambda.ln() - ln_fact).exp()
        })
        .collect();
    let mut best: Option<(usize, usize, f64)> = None;
    for a in 0..=kmax {
        let mut acc = 0.0;
        for (b, p) in pmf.iter().enumerate().skip(a) {
            acc += p;
            if acc >= mass {
                let better = match best {
                    None => true,
                    Some((ba, bb, bm)) => b - a < bb - ba || (b - a == bb - ba && acc > bm),
                };
                if better {
                    best = Some((a, b, acc));
                }
                break;
            }
        }
    }
    let (a, b, _) = best.expect("some window holds the mass");
    (a as u64, b as u64)
}

/// Shortest interval of the standard normal with the given mass: ±z with
/// Φ(z) − Φ(−z) = mass, z found by bisection on an erf series.
pub fn normal_hpd_half_width(mass: f64) -> f64 {
    let erf = |x: f64| {
        // Taylor series, fine for |x| < 3
        let mut term = x;
        let mut sum = x;
        for n in 1..200 {
            term *= -x * x / n as f64;
            sum += term / (2 * n + 1) as f64;
        }
        2.0 / PI.sqrt() * sum
    };
    let (mut lo, mut hi) = (0.0, 3.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if erf(mid / 2f64.sqrt()) < mass {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
