//! Small dense least-squares helpers over nalgebra.

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

pub(crate) struct LeastSquares {
    pub beta: DVector<f64>,
    pub sse: f64,
    /// (XᵀX)⁻¹
    pub xtx_inv: DMatrix<f64>,
    pub residuals: DVector<f64>,
}

/// Ordinary least squares through a QR factorisation.
pub(crate) fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LeastSquares> {
    let (n, p) = x.shape();
    if n < p || p == 0 {
        return Err(Error::DegenerateDesign);
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..p).any(|i| r[(i, i)].abs() <= scale * 1e-13) {
        return Err(Error::DegenerateDesign);
    }
    let qty = qr.q().transpose() * y;
    let beta = r.solve_upper_triangular(&qty).ok_or(Error::DegenerateDesign)?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(Error::DegenerateDesign)?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let residuals = y - x * &beta;
    let sse = residuals.norm_squared();
    Ok(LeastSquares {
        beta,
        sse,
        xtx_inv,
        residuals,
    })
}

/// Inverse of a symmetric positive-definite matrix.
pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.inverse())
}

/// Inverse of a symmetric matrix that may be indefinite or singular;
/// falls back to the pseudo-inverse.
pub(crate) fn sym_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(inv) = spd_inverse(m) {
        return inv;
    }
    m.clone()
        .pseudo_inverse(1e-12)
        .unwrap_or_else(|_| DMatrix::from_element(m.nrows(), m.ncols(), f64::NAN))
}

/// Gaussian log-likelihood with the variance profiled at SSE/n.
pub(crate) fn profiled_loglik(sse: f64, n: usize) -> f64 {
    let n = n as f64;
    if sse <= 0.0 {
        return f64::INFINITY;
    }
    let sigma2 = sse / n;
    -0.5 * n * ((2.0 * core::f64::consts::PI * sigma2).ln() + 1.0)
}
