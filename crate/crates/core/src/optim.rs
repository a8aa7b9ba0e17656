//! Derivative-free one- and multi-dimensional minimisers.

use alloc::vec;
use alloc::vec::Vec;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for a minimum of `f` on `[lo, hi]`.
pub(crate) fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while (hi - lo).abs() > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

pub(crate) struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub converged: bool,
}

/// Nelder–Mead on a box. Points are clamped into `[lower, upper]`.
/// Restarts from the best vertex until a restart no longer improves.
pub(crate) fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: f64,
    lower: f64,
    upper: f64,
    ftol: f64,
    max_evals: usize,
) -> NelderMeadResult {
    let n = x0.len();
    let clamp = |x: &mut [f64]| x.iter_mut().for_each(|v| *v = v.clamp(lower, upper));
    let mut best: Vec<f64> = x0.to_vec();
    clamp(&mut best);
    let mut best_f = f(&best);
    if n == 0 {
        return NelderMeadResult {
            x: best,
            fx: best_f,
            converged: true,
        };
    }
    let mut evals = 1;
    let mut converged = false;
    let mut restarts = 0;
    while evals < max_evals {
        let mut simplex: Vec<Vec<f64>> = vec![best.clone()];
        for i in 0..n {
            let mut v = best.clone();
            v[i] += if v[i] + step > upper { -step } else { step };
            clamp(&mut v);
            simplex.push(v);
        }
        let mut fs: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
        evals += n + 1;
        let start_f = best_f;
        loop {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| fs[a].total_cmp(&fs[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            fs = order.iter().map(|&i| fs[i]).collect();
            let spread = (fs[n] - fs[0]).abs();
            if spread <= ftol * (fs[0].abs() + ftol) || evals >= max_evals {
                break;
            }
            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                let mut v: Vec<f64> = centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (w - c)).collect();
                v.iter_mut().for_each(|x| *x = x.clamp(lower, upper));
                v
            };
            let xr = along(-1.0);
            let fr = f(&xr);
            evals += 1;
            if fr < fs[0] {
                let xe = along(-2.0);
                let fe = f(&xe);
                evals += 1;
                if fe < fr {
                    simplex[n] = xe;
                    fs[n] = fe;
                } else {
                    simplex[n] = xr;
                    fs[n] = fr;
                }
            } else if fr < fs[n - 1] {
                simplex[n] = xr;
                fs[n] = fr;
            } else {
                let (xc, fc) = if fr < fs[n] {
                    let xc = along(-0.5);
                    let fc = f(&xc);
                    (xc, fc)
                } else {
                    let xc = along(0.5);
                    let fc = f(&xc);
                    (xc, fc)
                };
                evals += 1;
                if fc < fs[n].min(fr) {
                    simplex[n] = xc;
                    fs[n] = fc;
                } else {
                    for i in 1..=n {
                        let v: Vec<f64> = simplex[0]
                            .iter()
                            .zip(&simplex[i])
                            .map(|(b, x)| b + 0.5 * (x - b))
                            .collect();
                        fs[i] = f(&v);
                        simplex[i] = v;
                    }
                    evals += n;
                }
            }
        }
        if fs[0] < best_f {
            best_f = fs[0];
            best = simplex[0].clone();
        }
        restarts += 1;
        if start_f - best_f <= ftol * (best_f.abs() + ftol) && restarts > 1 {
            converged = true;
            break;
        }
    }
    NelderMeadResult {
        x: best,
        fx: best_f,
        converged,
    }
}


use nalgebra::{DMatrix, DVector};

pub(crate) struct LmResult {
    pub params: Vec<f64>,
    pub sse: f64,
    pub jtj: DMatrix<f64>,
    pub residuals: DVector<f64>,
    pub converged: bool,
}

/// Levenberg–Marquardt with multiplicative damping on diag(JᵀJ).
///
/// `eval` returns the residual vector `y − f(p)` and the Jacobian of `f`,
/// or `None` when `p` leaves the feasible region (treated as a rejected step).
pub(crate) fn levenberg_marquardt<E>(mut eval: E, p0: &[f64], max_iter: usize) -> Option<LmResult>
where
    E: FnMut(&[f64]) -> Option<(DVector<f64>, DMatrix<f64>)>,
{
    let mut p = p0.to_vec();
    let (mut r, mut jac) = eval(&p)?;
    let mut sse = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..max_iter {
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        if grad.amax() <= 1e-14 * (1.0 + sse) {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&grad)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if let Some((r_new, j_new)) = eval(&trial) {
                let sse_new = r_new.norm_squared();
                if sse_new.is_finite() && sse_new <= sse {
                    let rel_drop = (sse - sse_new) / sse.max(f64::MIN_POSITIVE);
                    let small_step = step
                        .iter()
                        .zip(&trial)
                        .all(|(s, x)| s.abs() <= 1e-12 * (x.abs() + 1e-12));
                    p = trial;
                    r = r_new;
                    jac = j_new;
                    sse = sse_new;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if small_step || rel_drop < 1e-15 || sse < 1e-28 {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction left at any damping: a stationary point.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    let jtj = jac.transpose() * &jac;
    Some(LmResult {
        params: p,
        sse,
        jtj,
        residuals: r,
        converged,
    })
}
