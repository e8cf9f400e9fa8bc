//! Small dense local optimizers: BFGS for smooth objectives with analytic
//! gradients and Levenberg–Marquardt for nonlinear least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the sup-norm of the gradient falls below this.
    pub gtol: f64,
    /// Stop when the relative decrease of the objective falls below this.
    pub ftol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            gtol: 1e-9,
            ftol: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Quasi-Newton minimization with an Armijo backtracking line search.
///
/// `fg` returns the objective and writes the gradient into its second
/// argument. The returned value is never larger than the value at `x0`.
pub fn bfgs<F>(mut fg: F, x0: &[f64], opts: BfgsOptions) -> Result<Minimum>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut g = DVector::zeros(n);
    let mut f = fg(x.as_slice(), g.as_mut_slice());
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::OptimizerDiverged(
            "objective not finite at the starting point".into(),
        ));
    }
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut g_new = DVector::zeros(n);

    while iterations < opts.max_iter {
        if g.amax() < opts.gtol {
            break;
        }
        iterations += 1;
        let mut p = -(&h * &g);
        let mut slope = g.dot(&p);
        if slope >= 0.0 {
            h = DMatrix::identity(n, n);
            p = -g.clone();
            slope = g.dot(&p);
            fresh = true;
        }
        let mut alpha = 1.0;
        if fresh {
            // keep the first unscaled step from leaving the basin
            let pn = p.amax();
            if pn > 1.0 {
                alpha = 1.0 / pn;
            }
        }
        let mut accepted = None;
        for _ in 0..60 {
            let xt = &x + alpha * &p;
            let ft = fg(xt.as_slice(), g_new.as_mut_slice());
            if ft.is_finite() && g_new.iter().all(|v| v.is_finite()) && ft <= f + 1e-4 * alpha * slope {
                accepted = Some((xt, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xt, ft)) = accepted else {
            if fresh {
                break;
            }
            h = DMatrix::identity(n, n);
            fresh = true;
            continue;
        };
        let s = &xt - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        let rel_drop = (f - ft) / f.abs().max(1.0);
        x = xt;
        f = ft;
        g.copy_from(&g_new);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                let yy = y.dot(&y);
                h = DMatrix::identity(n, n) * (sy / yy);
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← (I − ρsyᵀ)H(I − ρysᵀ) + ρssᵀ, expanded
            h += (rho * rho * yhy + rho) * (&s * s.transpose())
                - rho * (&hy * s.transpose() + &s * hy.transpose());
            fresh = false;
        }
        if rel_drop < opts.ftol {
            break;
        }
    }
    Ok(Minimum {
        x: x.as_slice().to_vec(),
        value: f,
        iterations,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iter: usize,
    pub ftol: f64,
    pub xtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            ftol: 1e-10,
            xtol: 1e-12,
        }
    }
}

/// Forward-difference Jacobian of `residuals` at `p`, falling back to a
/// backward difference where the forward step leaves the domain. Columns
/// with no valid step stay zero.
pub fn forward_difference_jacobian<R>(residuals: &mut R, p: &[f64], r: &[f64]) -> DMatrix<f64>
where
    R: FnMut(&[f64]) -> Option<Vec<f64>> + ?Sized,
{
    let (m, n) = (r.len(), p.len());
    let mut jac = DMatrix::<f64>::zeros(m, n);
    for j in 0..n {
        let h = 1e-7 * p[j].abs().max(1.0);
        let mut pj = p.to_vec();
        pj[j] += h;
        let (rj, sign) = match residuals(&pj) {
            Some(v) if v.iter().all(|x| x.is_finite()) => (v, 1.0),
            _ => {
                pj[j] = p[j] - h;
                match residuals(&pj) {
                    Some(v) if v.iter().all(|x| x.is_finite()) => (v, -1.0),
                    _ => continue,
                }
            }
        };
        for i in 0..m {
            jac[(i, j)] = sign * (rj[i] - r[i]) / h;
        }
    }
    jac
}

/// Levenberg–Marquardt on `½‖r(p)‖²` with a forward-difference Jacobian.
///
/// The residual closure returns `None` where the parameters leave the
/// model's domain; such trial steps are rejected. `value` of the result is
/// the residual sum of squares.
pub fn levenberg_marquardt<R>(mut residuals: R, p0: &[f64], opts: LmOptions) -> Result<Minimum>
where
    R: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    levenberg_marquardt_with(
        |p: &[f64]| residuals(p),
        |res: &mut dyn FnMut(&[f64]) -> Option<Vec<f64>>, p: &[f64], r: &[f64]| {
            forward_difference_jacobian(res, p, r)
        },
        p0,
        opts,
    )
}

/// Levenberg–Marquardt with a caller-supplied Jacobian `jacobian(residuals,
/// p, r(p))`, for models whose structure makes columns cheaper than a full
/// residual evaluation each.
pub fn levenberg_marquardt_with<R, J>(mut residuals: R, mut jacobian: J, p0: &[f64], opts: LmOptions) -> Result<Minimum>
where
    R: FnMut(&[f64]) -> Option<Vec<f64>>,
    J: FnMut(&mut dyn FnMut(&[f64]) -> Option<Vec<f64>>, &[f64], &[f64]) -> DMatrix<f64>,
{
    let n = p0.len();
    let mut p = p0.to_vec();
    let mut r = residuals(&p)
        .filter(|r| r.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::OptimizerDiverged("residuals not finite at the starting point".into()))?;
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut stalls = 0;

    while iterations < opts.max_iter && cost > 0.0 {
        iterations += 1;
        let jac = jacobian(&mut residuals, &p, &r);
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * rv;
        if jtr.amax() < 1e-300 {
            break;
        }

        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-&jtr));
            let trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            match residuals(&trial) {
                Some(rt) if rt.iter().all(|v| v.is_finite()) => {
                    let ct: f64 = rt.iter().map(|v| v * v).sum();
                    if ct < cost {
                        let rel = (cost - ct) / cost;
                        let step = delta.amax() / p.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
                        p = trial;
                        r = rt;
                        cost = ct;
                        lambda = (lambda / 3.0).max(1e-12);
                        improved = true;
                        if rel < opts.ftol || step < opts.xtol {
                            stalls += 1;
                        } else {
                            stalls = 0;
                        }
                        break;
                    }
                }
                _ => {}
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !improved || stalls >= 3 {
            break;
        }
    }
    Ok(Minimum {
        x: p,
        value: cost,
        iterations,
    })
}
