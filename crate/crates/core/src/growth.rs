//! Unrestricted exponential and logistic (Verhulst–Pearl) growth on the log
//! scale, with growth-rate and doubling-time conversions.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{least_squares, profiled_loglik, sym_pinv};
use crate::optim::levenberg_marquardt;
use crate::series::{AnnualSeries, Observations, SeriesKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrowthModel {
    Exponential,
    Logistic,
}

/// A fitted single-curve growth model. Time is measured in years from `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthFit {
    pub model: GrowthModel,
    pub t0: f64,
    /// Log of the initial volume at `t0`.
    pub b0: f64,
    /// Growth constant per year.
    pub b1: f64,
    /// Log capacity (logistic only).
    pub capacity: Option<f64>,
    /// Residual variance with divisor `n`.
    pub sigma2: f64,
    /// Standard errors in parameter order (b0, b1[, capacity]), scaled by
    /// the ML `sigma2`. Multiply by `sqrt(n / (n - p))` for the unbiased form.
    pub se: Vec<f64>,
    /// Parameter covariance in the same order, scaled by `sigma2`.
    pub covariance: DMatrix<f64>,
    pub n: usize,
    pub loglik: f64,
    pub residuals: Vec<f64>,
    pub converged: bool,
}

impl GrowthFit {
    /// Mean-model parameter count (sigma2 excluded).
    pub fn n_params(&self) -> usize {
        match self.model {
            GrowthModel::Exponential => 2,
            GrowthModel::Logistic => 3,
        }
    }

    pub fn sse(&self) -> f64 {
        self.sigma2 * self.n as f64
    }

    /// Model-implied log magnitude at offset `t`.
    pub fn predict(&self, t: f64) -> f64 {
        match self.capacity {
            None => self.b0 + self.b1 * t,
            Some(k) => logistic_value(self.b0, self.b1, k, t),
        }
    }

    pub fn predict_year(&self, year: f64) -> f64 {
        self.predict(year - self.t0)
    }

    pub fn growth_rate(&self) -> f64 {
        growth_rate(self.b1)
    }

    /// Approximate band at a calendar year: fitted ± z·sqrt(σ² + gᵀΣg).
    pub fn prediction_interval(&self, year: f64, z: f64) -> (f64, f64, f64) {
        let t = year - self.t0;
        let g = match self.capacity {
            None => DVector::from_vec(vec![1.0, t]),
            Some(k) => DVector::from_row_slice(&logistic_value_grad(self.b0, self.b1, k, t).1),
        };
        let v = self.predict(t);
        let var = self.sigma2 + (g.transpose() * &self.covariance * &g)[(0, 0)].max(0.0);
        let half = z * var.sqrt();
        (v, v - half, v + half)
    }
}

/// Annual growth fraction implied by a log-scale growth constant.
pub fn growth_rate(b1: f64) -> f64 {
    b1.exp_m1()
}

/// Years needed to double at annual growth fraction `g`.
pub fn doubling_time(g: f64) -> Result<f64> {
    if !(g > 0.0) {
        return Err(Error::NonPositiveGrowth(g));
    }
    Ok(core::f64::consts::LN_2 / g.ln_1p())
}

pub fn fit_exponential(series: &AnnualSeries, t0: i32) -> Result<GrowthFit> {
    check_log_series(series, t0)?;
    fit_exponential_obs(&series.observations(), f64::from(t0))
}

/// Exponential fit on stacked observations (pooled over any groups).
pub fn fit_exponential_obs(obs: &Observations, t0: f64) -> Result<GrowthFit> {
    let n = obs.len();
    if n < 3 {
        return Err(Error::TooShort { needed: 2, got: n });
    }
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { obs.years[i] - t0 });
    let y = DVector::from_column_slice(&obs.values);
    let ls = least_squares(&x, &y)?;
    let sigma2 = ls.sse / n as f64;
    let covariance = &ls.xtx_inv * sigma2;
    let se = (0..2).map(|i| covariance[(i, i)].max(0.0).sqrt()).collect();
    Ok(GrowthFit {
        model: GrowthModel::Exponential,
        t0,
        b0: ls.beta[0],
        b1: ls.beta[1],
        capacity: None,
        sigma2,
        se,
        covariance,
        n,
        loglik: profiled_loglik(ls.sse, n),
        residuals: ls.residuals.iter().copied().collect(),
        converged: true,
    })
}

pub fn fit_logistic(series: &AnnualSeries, t0: i32) -> Result<GrowthFit> {
    check_log_series(series, t0)?;
    fit_logistic_obs(&series.observations(), f64::from(t0))
}

/// Offsets added to the largest observation to seed the log capacity.
const CAPACITY_STARTS: [f64; 3] = [0.5, 1.0, 2.0];

/// Logistic fit on stacked observations by damped Gauss–Newton with
/// several capacity starts; the lowest-SSE converged start wins.
pub fn fit_logistic_obs(obs: &Observations, t0: f64) -> Result<GrowthFit> {
    let n = obs.len();
    if n < 4 {
        return Err(Error::TooShort { needed: 3, got: n });
    }
    let pre = fit_exponential_obs(obs, t0)?;
    let first_year = obs.first_year();
    let (sum, cnt) = obs
        .years
        .iter()
        .zip(&obs.values)
        .filter(|(y, _)| **y == first_year)
        .fold((0.0, 0.0), |(s, c), (_, v)| (s + v, c + 1.0));
    let b0_start = sum / cnt;
    let y_max = obs.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let t: Vec<f64> = obs.years.iter().map(|y| y - t0).collect();

    let mut best: Option<(Vec<f64>, f64, DMatrix<f64>, DVector<f64>)> = None;
    for dk in CAPACITY_STARTS {
        let start = [b0_start, pre.b1.max(1e-4), y_max.max(b0_start) + dk];
        let eval = |p: &[f64]| logistic_residuals(&t, &obs.values, p);
        let Some(res) = levenberg_marquardt(eval, &start, 2000) else {
            continue;
        };
        if !res.converged {
            continue;
        }
        if best.as_ref().is_none_or(|b| res.sse < b.1) {
            best = Some((res.params, res.sse, res.jtj, res.residuals));
        }
    }
    let (p, sse, jtj, residuals) = best.ok_or(Error::NoConvergence("logistic fit"))?;
    if p[2] - p[0] < 1e-6 {
        return Err(Error::CapacityCollapse);
    }
    let sigma2 = sse / n as f64;
    let covariance = sym_pinv(&jtj) * sigma2;
    let se = (0..3).map(|i| covariance[(i, i)].max(0.0).sqrt()).collect();
    Ok(GrowthFit {
        model: GrowthModel::Logistic,
        t0,
        b0: p[0],
        b1: p[1],
        capacity: Some(p[2]),
        sigma2,
        se,
        covariance,
        n,
        loglik: profiled_loglik(sse, n),
        residuals: residuals.iter().copied().collect(),
        converged: true,
    })
}

fn check_log_series(series: &AnnualSeries, t0: i32) -> Result<()> {
    if series.kind() != SeriesKind::LogCumulative {
        return Err(Error::WrongKind {
            expected: "log_cumulative",
        });
    }
    crate::series::time_index(series.start_year(), t0)?;
    Ok(())
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + (-(a - b).abs()).exp().ln_1p()
}

/// Log-scale logistic value, its gradient in (b0, b1, capacity) and its
/// derivative in `t`. Requires `capacity > b0`.
pub(crate) fn logistic_value_grad(b0: f64, b1: f64, k: f64, t: f64) -> (f64, [f64; 3], f64) {
    let r = (b0 - k).exp();
    let ln_d = k + (-r).ln_1p();
    let a = ln_d - b1 * t;
    let l = log_add_exp(a, b0);
    let w = (a - l).exp();
    let value = k + b0 - l;
    let d_b0 = w / (1.0 - r);
    (value, [d_b0, w * t, 1.0 - d_b0], w * b1)
}

pub(crate) fn logistic_value(b0: f64, b1: f64, k: f64, t: f64) -> f64 {
    logistic_value_grad(b0, b1, k, t).0
}

fn logistic_residuals(t: &[f64], y: &[f64], p: &[f64]) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let (b0, b1, k) = (p[0], p[1], p[2]);
    if !(k > b0) || !p.iter().all(|v| v.is_finite()) || (b0 - k).exp() >= 1.0 {
        return None;
    }
    let n = t.len();
    let mut r = DVector::zeros(n);
    let mut jac = DMatrix::zeros(n, 3);
    for i in 0..n {
        let (f, g, _) = logistic_value_grad(b0, b1, k, t[i]);
        if !f.is_finite() {
            return None;
        }
        r[i] = y[i] - f;
        for j in 0..3 {
            jac[(i, j)] = g[j];
        }
    }
    Some((r, jac))
}

/// Generates `ln y_t` values from the logistic curve for offsets `0..len`.
pub fn logistic_curve(b0: f64, b1: f64, k: f64, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, v) in out.iter_mut().enumerate() {
        *v = logistic_value(b0, b1, k, i as f64);
    }
    out
}
