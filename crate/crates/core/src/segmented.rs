//! Continuity-constrained piecewise log-linear growth with estimated
//! breakpoint years.
//!
//! With breakpoints `a_1 < … < a_{J-1}` and anchor `a_0 = t0`, the mean at
//! year `x` is `b0 + Σ_k b_k · B_k(x)` where
//! `B_k(x) = clamp(x − a_{k−1}, 0, a_k − a_{k−1})` and `a_J = ∞`. Segment `j`
//! covers years in `(a_{j−1}, a_j]`; the first segment also contains `t0`.
//!
//! Breakpoints are located in three stages: an exhaustive grid over
//! ordered integer-year tuples, coordinate-wise golden-section refinement
//! with the linear coefficients profiled out, and a joint damped
//! Gauss–Newton polish over every parameter. The last stage supplies the
//! covariance used for standard errors.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::growth::{fit_logistic_obs, logistic_value_grad};
use crate::linalg::{least_squares, profiled_loglik, sym_pinv};
use crate::optim::{golden_section, levenberg_marquardt};
use crate::series::{AnnualSeries, Observations, SeriesKind};

pub const MIN_SEGMENT_LENGTH: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedOptions {
    /// Anchor year; defaults to the first observed year.
    pub t0: Option<f64>,
    /// Minimum distinct years per segment.
    pub min_segment_length: usize,
    /// Stride (in distinct years) of the stage-1 grid.
    pub grid_stride: usize,
    /// Upper bound on stage-1 candidates; the stride widens until the grid fits.
    pub max_grid_candidates: usize,
    /// Number of best grid tuples carried into refinement.
    pub refine_starts: usize,
    /// Refinement stops once no breakpoint moves more than this (years).
    pub tolerance: f64,
    pub max_refine_passes: usize,
    /// Logistic growth in the first segment, log-linear afterwards.
    pub first_segment_logistic: bool,
    pub record_trace: bool,
}

impl Default for SegmentedOptions {
    fn default() -> Self {
        Self {
            t0: None,
            min_segment_length: MIN_SEGMENT_LENGTH,
            grid_stride: 5,
            max_grid_candidates: 1_000_000,
            refine_starts: 3,
            tolerance: 0.01,
            max_refine_passes: 200,
            first_segment_logistic: false,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchStage {
    Grid,
    Refine,
    Polish,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub stage: SearchStage,
    pub breakpoints: Vec<f64>,
    pub sse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedFit {
    pub t0: f64,
    pub b0: f64,
    /// Per-year log growth rate in each segment.
    pub slopes: Vec<f64>,
    /// Ending year of each segment but the last.
    pub breakpoints: Vec<f64>,
    /// Log capacity of a logistic first segment.
    pub capacity: Option<f64>,
    /// Parameter covariance in [`SegmentedFit::param_names`] order.
    pub covariance: DMatrix<f64>,
    /// Residual variance with divisor `n`.
    pub sigma2: f64,
    pub sse: f64,
    pub loglik: f64,
    pub n: usize,
    pub converged: bool,
    pub residuals: Vec<f64>,
    /// Group of each residual (all zero for a single series).
    pub residual_groups: Vec<usize>,
    pub search_trace: Option<Vec<TraceEntry>>,
}

/// Basis entries `B_1..B_J` at `year` for the given breakpoints.
pub fn segmented_design(year: f64, breakpoints: &[f64], t0: f64) -> Result<Vec<f64>> {
    check_ordered(breakpoints, t0)?;
    Ok(basis(year, breakpoints, t0))
}

fn check_ordered(breakpoints: &[f64], t0: f64) -> Result<()> {
    let mut prev = t0;
    for &a in breakpoints {
        if !(a > prev) {
            return Err(Error::UnorderedBreakpoints);
        }
        prev = a;
    }
    Ok(())
}

pub(crate) fn basis(year: f64, breakpoints: &[f64], t0: f64) -> Vec<f64> {
    let j = breakpoints.len() + 1;
    let mut out = vec![0.0; j];
    let mut lo = t0;
    for (k, slot) in out.iter_mut().enumerate() {
        let hi = if k + 1 < j { breakpoints[k] } else { f64::INFINITY };
        *slot = (year.min(hi) - lo).max(0.0);
        lo = hi;
    }
    out
}

impl SegmentedFit {
    pub fn segments(&self) -> usize {
        self.slopes.len()
    }

    /// Mean-model parameter count: intercept, slopes, breakpoints (and capacity).
    pub fn n_params(&self) -> usize {
        2 * self.segments() + usize::from(self.capacity.is_some())
    }

    pub fn param_names(&self) -> Vec<alloc::string::String> {
        use alloc::format;
        let mut names = vec![format!("b0")];
        names.extend((1..=self.segments()).map(|k| format!("b{k}")));
        if self.capacity.is_some() {
            names.push(format!("capacity"));
        }
        names.extend((1..self.segments()).map(|k| format!("a{k}")));
        names
    }

    /// Parameter values in [`SegmentedFit::param_names`] order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = vec![self.b0];
        out.extend_from_slice(&self.slopes);
        if let Some(k) = self.capacity {
            out.push(k);
        }
        out.extend_from_slice(&self.breakpoints);
        out
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.covariance.nrows())
            .map(|i| self.covariance[(i, i)].max(0.0).sqrt())
            .collect()
    }

    pub fn slope_se(&self) -> Vec<f64> {
        let se = self.standard_errors();
        se[1..=self.segments()].to_vec()
    }

    pub fn breakpoint_se(&self) -> Vec<f64> {
        let se = self.standard_errors();
        se[se.len() - self.breakpoints.len()..].to_vec()
    }

    pub fn b0_se(&self) -> f64 {
        self.standard_errors()[0]
    }

    /// Predicted log magnitude at a calendar year.
    pub fn predict(&self, year: f64) -> f64 {
        self.value_grad(year).0
    }

    /// Predicted value and its gradient in [`SegmentedFit::param_names`] order.
    pub fn value_grad(&self, year: f64) -> (f64, Vec<f64>) {
        let model = Model {
            t0: self.t0,
            segments: self.segments(),
            logistic: self.capacity.is_some(),
        };
        let (v, g) = model.value_grad(&model.pack(self), year);
        (v, model.to_name_order(&g))
    }

    /// Approximate 95% prediction band: fitted ± z·sqrt(σ² + gᵀΣg).
    pub fn prediction_interval(&self, year: f64, z: f64) -> (f64, f64, f64) {
        let (v, g) = self.value_grad(year);
        let g = DVector::from_vec(g);
        let var = self.sigma2 + (g.transpose() * &self.covariance * &g)[(0, 0)].max(0.0);
        let half = z * var.sqrt();
        (v, v - half, v + half)
    }

    pub fn segment_rates(&self) -> Vec<SegmentRate> {
        segment_rates(&self.slopes)
    }

    pub fn residual_lag1_autocorr(&self) -> Result<f64> {
        lag1_autocorrelation_grouped(&self.residuals, &self.residual_groups)
    }

    /// Largest jump of the predictor across any breakpoint, after removing
    /// the linear drift of the two adjacent segments over a tiny offset.
    pub fn continuity_gap(&self) -> f64 {
        const DELTA: f64 = 1e-7;
        self.breakpoints
            .iter()
            .enumerate()
            .map(|(k, &a)| {
                let left_slope = match (k, self.capacity) {
                    (0, Some(cap)) => logistic_value_grad(self.b0, self.slopes[0], cap, a - self.t0).2,
                    _ => self.slopes[k],
                };
                let left = self.predict(a - DELTA) + left_slope * DELTA;
                let right = self.predict(a + DELTA) - self.slopes[k + 1] * DELTA;
                (right - left).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Growth rate and doubling time of one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentRate {
    pub segment: usize,
    pub slope: f64,
    /// `e^b − 1`
    pub growth_rate: f64,
    /// `ln 2 / b`; `None` when the slope is not positive.
    pub doubling_time: Option<f64>,
    /// `ln 2 / ln(1 + b)`, i.e. reading the slope itself as the growth fraction.
    pub doubling_time_slope_as_rate: Option<f64>,
}

pub fn segment_rates(slopes: &[f64]) -> Vec<SegmentRate> {
    slopes
        .iter()
        .enumerate()
        .map(|(i, &b)| SegmentRate {
            segment: i + 1,
            slope: b,
            growth_rate: crate::growth::growth_rate(b),
            doubling_time: (b > 0.0).then(|| core::f64::consts::LN_2 / b),
            doubling_time_slope_as_rate: (b > 0.0).then(|| core::f64::consts::LN_2 / b.ln_1p()),
        })
        .collect()
}

/// Pearson correlation of consecutive residuals.
pub fn lag1_autocorrelation(residuals: &[f64]) -> Result<f64> {
    lag1_autocorrelation_grouped(residuals, &vec![0; residuals.len()])
}

/// Lag-1 correlation using only pairs that fall in the same group.
pub fn lag1_autocorrelation_grouped(residuals: &[f64], groups: &[usize]) -> Result<f64> {
    if residuals.len() < 3 {
        return Err(Error::TooShort {
            needed: 2,
            got: residuals.len(),
        });
    }
    let pairs: Vec<(f64, f64)> = residuals
        .windows(2)
        .zip(groups.windows(2))
        .filter(|(_, g)| g[0] == g[1])
        .map(|(e, _)| (e[1], e[0]))
        .collect();
    let n = pairs.len() as f64;
    if pairs.len() < 2 {
        return Err(Error::NotComputable("fewer than two lagged pairs"));
    }
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::NotComputable("zero residual variance"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn fit_segmented(series: &AnnualSeries, segments: usize, opts: &SegmentedOptions) -> Result<SegmentedFit> {
    if series.kind() != SeriesKind::LogCumulative {
        return Err(Error::WrongKind {
            expected: "log_cumulative",
        });
    }
    fit_segmented_obs(&series.observations(), segments, opts)
}

/// Segmented fit on stacked observations (pooled fixed effects).
pub fn fit_segmented_obs(obs: &Observations, segments: usize, opts: &SegmentedOptions) -> Result<SegmentedFit> {
    if segments == 0 {
        return Err(Error::InfeasibleSegmentation {
            segments,
            min_len: opts.min_segment_length,
            n: obs.len(),
        });
    }
    let t0 = opts.t0.unwrap_or_else(|| obs.first_year());
    if obs.years.iter().any(|&y| y < t0) {
        return Err(Error::NegativeOffset {
            year: obs.first_year() as i32,
            t0: t0 as i32,
        });
    }
    let table = YearTable::new(obs, t0);
    let n_years = table.x.len();
    let min_len = opts.min_segment_length.max(1);
    if n_years < segments * min_len + 1 || obs.len() < 2 * segments + 1 {
        return Err(Error::InfeasibleSegmentation {
            segments,
            min_len,
            n: n_years,
        });
    }
    let mut trace = opts.record_trace.then(Vec::new);
    let model = Model {
        t0,
        segments,
        logistic: opts.first_segment_logistic,
    };

    let breakpoints = if segments == 1 {
        Vec::new()
    } else {
        let starts = grid_search(&table, segments, min_len, opts, &mut trace);
        let mut best: Option<(Vec<f64>, f64)> = None;
        for start in starts {
            let (bps, sse) = refine(&table, start, min_len, opts, &mut trace);
            if best.as_ref().is_none_or(|b| sse < b.1) {
                best = Some((bps, sse));
            }
        }
        best.ok_or(Error::NoConvergence("breakpoint search"))?.0
    };

    // Linear coefficients at the refined breakpoints.
    let lin = linear_fit(obs, t0, &breakpoints)?;
    let params = if model.logistic {
        logistic_start(&model, obs, &table, min_len, opts, breakpoints)?
    } else {
        let mut p: Vec<f64> = lin.beta.iter().copied().collect();
        p.extend_from_slice(&breakpoints);
        p
    };

    let polished = polish(&model, obs, &table, min_len, &params);
    let (params, converged) = match polished {
        Some(p) => (p, true),
        None if !model.logistic => (params, true),
        None => return Err(Error::NoConvergence("segmented polish")),
    };
    if let Some(t) = trace.as_mut() {
        let bps = params[params.len() - (segments - 1)..].to_vec();
        let sse = model.sse(obs, &params);
        t.push(TraceEntry {
            stage: SearchStage::Polish,
            breakpoints: bps,
            sse,
        });
    }
    finish(&model, obs, params, converged, trace)
}

/// Linear segmented fit with the breakpoints held fixed. The covariance
/// covers only (b0, slopes); the breakpoint block is zero.
pub fn fit_at_breakpoints(obs: &Observations, t0: f64, breakpoints: &[f64]) -> Result<SegmentedFit> {
    if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::UnorderedBreakpoints);
    }
    let model = Model {
        t0,
        segments: breakpoints.len() + 1,
        logistic: false,
    };
    let lin = linear_fit(obs, t0, breakpoints)?;
    let mut params: Vec<f64> = lin.beta.iter().copied().collect();
    params.extend_from_slice(breakpoints);
    let mut fit = finish(&model, obs, params, true, None)?;
    let j = model.segments;
    let k = fit.covariance.nrows();
    let sigma2 = fit.sigma2;
    fit.covariance = DMatrix::from_fn(k, k, |r, c| {
        if r <= j && c <= j {
            sigma2 * lin.xtx_inv[(r, c)]
        } else {
            0.0
        }
    });
    Ok(fit)
}

fn finish(
    model: &Model,
    obs: &Observations,
    mut params: Vec<f64>,
    converged: bool,
    trace: Option<Vec<TraceEntry>>,
) -> Result<SegmentedFit> {
    let n = obs.len();
    let j = model.segments;
    let n_bp = j - 1;
    let breakpoints = params[params.len() - n_bp..].to_vec();
    let mut cov_override = None;
    if !model.logistic {
        // Re-solve the linear part exactly by QR at the final breakpoints.
        let lin = linear_fit(obs, model.t0, &breakpoints)?;
        params[..=j].copy_from_slice(lin.beta.as_slice());
        if n_bp == 0 {
            cov_override = Some(lin.xtx_inv);
        }
    }
    let mut jac = DMatrix::zeros(n, params.len());
    let mut residuals = Vec::with_capacity(n);
    for i in 0..n {
        let (v, g) = model.value_grad(&params, obs.years[i]);
        residuals.push(obs.values[i] - v);
        for (c, gv) in g.iter().enumerate() {
            jac[(i, c)] = *gv;
        }
    }
    let sse: f64 = residuals.iter().map(|r| r * r).sum();
    let sigma2 = sse / n as f64;
    let unscaled = cov_override.unwrap_or_else(|| sym_pinv(&(jac.transpose() * &jac)));
    let order = model.name_order_indices();
    let k = params.len();
    let covariance = DMatrix::from_fn(k, k, |r, c| sigma2 * unscaled[(order[r], order[c])]);
    let (b0, slopes, capacity) = model.unpack(&params);
    Ok(SegmentedFit {
        t0: model.t0,
        b0,
        slopes,
        breakpoints,
        capacity,
        covariance,
        sigma2,
        sse,
        loglik: profiled_loglik(sse, n),
        n,
        converged,
        residuals,
        residual_groups: obs.groups.clone(),
        search_trace: trace,
    })
}

/// Least squares for (b0, slopes) with breakpoints held fixed.
pub(crate) fn linear_fit(obs: &Observations, t0: f64, breakpoints: &[f64]) -> Result<crate::linalg::LeastSquares> {
    let j = breakpoints.len() + 1;
    let x = DMatrix::from_fn(obs.len(), j + 1, |i, c| {
        if c == 0 {
            1.0
        } else {
            basis(obs.years[i], breakpoints, t0)[c - 1]
        }
    });
    least_squares(&x, &DVector::from_column_slice(&obs.values))
}

/// Profiled SSE of the linear model at the given breakpoints.
#[cfg(test)]
pub(crate) fn profiled_sse(obs: &Observations, t0: f64, breakpoints: &[f64]) -> f64 {
    YearTable::new(obs, t0).sse(breakpoints, &mut Scratch::default())
}

/// Starting values for a logistic first segment. The first breakpoint is
/// re-scanned on the grid: for each candidate the head is fitted by the
/// logistic model and the later slopes by least squares from its end level.
fn logistic_start(
    model: &Model,
    obs: &Observations,
    table: &YearTable,
    min_len: usize,
    opts: &SegmentedOptions,
    mut breakpoints: Vec<f64>,
) -> Result<Vec<f64>> {
    let t0 = model.t0;
    let candidates: Vec<f64> = if breakpoints.is_empty() {
        vec![f64::INFINITY]
    } else {
        let (lo, hi) = table.bounds(&breakpoints, 0, min_len);
        let step = opts.grid_stride.max(1) as f64;
        let mut c = Vec::new();
        let mut a = lo.ceil();
        while a <= hi {
            c.push(a);
            a += step;
        }
        c.push(breakpoints[0]);
        c
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for a1 in candidates {
        if let Some(first) = breakpoints.first_mut() {
            *first = a1;
        }
        let Some(p) = logistic_profile(model, obs, t0, &breakpoints) else {
            continue;
        };
        let sse = model.sse(obs, &p);
        if best.as_ref().is_none_or(|b| sse < b.0) {
            best = Some((sse, p));
        }
    }
    best.map(|b| b.1).ok_or(Error::NoConvergence("logistic first segment"))
}

fn logistic_profile(model: &Model, obs: &Observations, t0: f64, bps: &[f64]) -> Option<Vec<f64>> {
    let a1 = bps.first().copied().unwrap_or(f64::INFINITY);
    let mut head = Observations {
        n_groups: obs.n_groups,
        ..Observations::default()
    };
    let mut tail = Vec::new();
    for i in 0..obs.len() {
        if obs.years[i] <= a1 {
            head.years.push(obs.years[i]);
            head.values.push(obs.values[i]);
            head.groups.push(obs.groups[i]);
        } else {
            tail.push(i);
        }
    }
    let f = fit_logistic_obs(&head, t0).ok()?;
    let k = f.capacity?;
    let mut p = vec![f.b0, f.b1, k];
    if model.segments > 1 {
        let end = f.predict(a1 - t0);
        let cols = model.segments - 1;
        let x = DMatrix::from_fn(tail.len(), cols, |r, c| basis(obs.years[tail[r]], bps, t0)[c + 1]);
        let y = DVector::from_iterator(tail.len(), tail.iter().map(|&i| obs.values[i] - end));
        let ls = least_squares(&x, &y).ok()?;
        p.extend(ls.beta.iter().copied());
        p.extend_from_slice(bps);
    }
    Some(p)
}

/// Mean structure with parameters packed as
/// `[b0, b1, (capacity), b2..bJ, a1..a_{J−1}]`.
struct Model {
    t0: f64,
    segments: usize,
    logistic: bool,
}

impl Model {
    fn n_params(&self) -> usize {
        2 * self.segments + usize::from(self.logistic)
    }

    fn pack(&self, fit: &SegmentedFit) -> Vec<f64> {
        let mut p = vec![fit.b0, fit.slopes[0]];
        if let Some(k) = fit.capacity {
            p.push(k);
        }
        p.extend_from_slice(&fit.slopes[1..]);
        p.extend_from_slice(&fit.breakpoints);
        p
    }

    fn unpack(&self, p: &[f64]) -> (f64, Vec<f64>, Option<f64>) {
        let off = usize::from(self.logistic);
        let mut slopes = vec![p[1]];
        slopes.extend_from_slice(&p[2 + off..2 + off + self.segments - 1]);
        (p[0], slopes, self.logistic.then(|| p[2]))
    }

    fn breakpoints<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[p.len() - (self.segments - 1)..]
    }

    /// Packed index of each parameter in name order (b0, slopes, capacity, breakpoints).
    fn name_order_indices(&self) -> Vec<usize> {
        let j = self.segments;
        let off = usize::from(self.logistic);
        let mut idx = vec![0, 1];
        idx.extend((2..=j).map(|k| k + off));
        if self.logistic {
            idx.push(2);
        }
        idx.extend((0..j - 1).map(|k| 1 + j + off + k));
        idx
    }

    fn to_name_order(&self, packed: &[f64]) -> Vec<f64> {
        self.name_order_indices().iter().map(|&i| packed[i]).collect()
    }

    fn value_grad(&self, p: &[f64], year: f64) -> (f64, Vec<f64>) {
        let j = self.segments;
        let off = usize::from(self.logistic);
        let bps = self.breakpoints(p);
        let mut g = vec![0.0; self.n_params()];
        let slope = |k: usize| if k == 0 { p[1] } else { p[1 + off + k] };
        let slope_idx = |k: usize| if k == 0 { 1 } else { 1 + off + k };
        let bp_idx = |k: usize| 1 + j + off + k;
        let b = basis(year, bps, self.t0);
        let mut value;
        if self.logistic {
            let a1 = bps.first().copied().unwrap_or(f64::INFINITY);
            let t = year.min(a1) - self.t0;
            let (v, lg, dv_dt) = logistic_value_grad(p[0], p[1], p[2], t);
            value = v;
            g[..3].copy_from_slice(&lg);
            if year > a1 {
                g[bp_idx(0)] += dv_dt;
            }
            for k in 1..j {
                value += slope(k) * b[k];
                g[slope_idx(k)] = b[k];
            }
        } else {
            value = p[0];
            g[0] = 1.0;
            for k in 0..j {
                value += slope(k) * b[k];
                g[slope_idx(k)] = b[k];
            }
        }
        for k in 0..j - 1 {
            if year > bps[k] {
                if !(self.logistic && k == 0) {
                    g[bp_idx(k)] += slope(k);
                }
                g[bp_idx(k)] -= slope(k + 1);
            }
        }
        (value, g)
    }

    fn sse(&self, obs: &Observations, p: &[f64]) -> f64 {
        (0..obs.len())
            .map(|i| {
                let r = obs.values[i] - self.value_grad(p, obs.years[i]).0;
                r * r
            })
            .sum()
    }
}

/// Joint damped Gauss–Newton over every parameter, rejecting steps that
/// break breakpoint ordering or segment minimum lengths.
fn polish(model: &Model, obs: &Observations, table: &YearTable, min_len: usize, start: &[f64]) -> Option<Vec<f64>> {
    let n = obs.len();
    let k = start.len();
    let eval = |p: &[f64]| -> Option<(DVector<f64>, DMatrix<f64>)> {
        if !p.iter().all(|v| v.is_finite()) {
            return None;
        }
        let bps = model.breakpoints(p);
        if !table.feasible(bps, min_len) {
            return None;
        }
        if model.logistic && !(p[2] > p[0]) {
            return None;
        }
        let mut r = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, k);
        for i in 0..n {
            let (v, g) = model.value_grad(p, obs.years[i]);
            r[i] = obs.values[i] - v;
            for (c, gv) in g.iter().enumerate() {
                jac[(i, c)] = *gv;
            }
        }
        Some((r, jac))
    };
    let start_sse = model.sse(obs, start);
    let res = levenberg_marquardt(eval, start, 500)?;
    (res.sse <= start_sse).then_some(res.params)
}

/// Per-distinct-year prefix sums, with years stored as offsets from `t0`.
pub(crate) struct YearTable {
    t0: f64,
    x: Vec<f64>,
    /// Prefix sums with a leading zero: count, Σx, Σx², Σy, Σxy.
    c: Vec<f64>,
    cx: Vec<f64>,
    cxx: Vec<f64>,
    sy: Vec<f64>,
    sxy: Vec<f64>,
    syy: f64,
}

#[derive(Default)]
struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
    v: Vec<f64>,
}

struct Sums {
    n: f64,
    sx: f64,
    sxx: f64,
    sy: f64,
    sxy: f64,
}

impl YearTable {
    pub(crate) fn new(obs: &Observations, t0: f64) -> Self {
        // Centred values: the intercept absorbs the mean, and the search
        // becomes invariant to constant shifts of the data.
        let mean = obs.values.iter().sum::<f64>() / obs.len().max(1) as f64;
        let mut rows: Vec<(f64, f64)> = obs
            .years
            .iter()
            .zip(&obs.values)
            .map(|(y, v)| (y - t0, v - mean))
            .collect();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut t = YearTable {
            t0,
            x: Vec::new(),
            c: vec![0.0],
            cx: vec![0.0],
            cxx: vec![0.0],
            sy: vec![0.0],
            sxy: vec![0.0],
            syy: rows.iter().map(|r| r.1 * r.1).sum(),
        };
        let mut i = 0;
        while i < rows.len() {
            let x = rows[i].0;
            let (mut cnt, mut s) = (0.0, 0.0);
            while i < rows.len() && rows[i].0 == x {
                cnt += 1.0;
                s += rows[i].1;
                i += 1;
            }
            let last = t.x.len();
            t.x.push(x);
            t.c.push(t.c[last] + cnt);
            t.cx.push(t.cx[last] + cnt * x);
            t.cxx.push(t.cxx[last] + cnt * x * x);
            t.sy.push(t.sy[last] + s);
            t.sxy.push(t.sxy[last] + x * s);
        }
        t
    }

    /// Number of distinct years with offset ≤ `a`.
    fn idx(&self, a: f64) -> usize {
        self.x.partition_point(|&v| v <= a)
    }

    fn sums(&self, lo: usize, hi: usize) -> Sums {
        Sums {
            n: self.c[hi] - self.c[lo],
            sx: self.cx[hi] - self.cx[lo],
            sxx: self.cxx[hi] - self.cxx[lo],
            sy: self.sy[hi] - self.sy[lo],
            sxy: self.sxy[hi] - self.sxy[lo],
        }
    }

    /// Breakpoints given as calendar years.
    pub(crate) fn feasible(&self, bps: &[f64], min_len: usize) -> bool {
        let mut prev_idx = 0;
        let mut prev = self.t0;
        for &a in bps {
            if !(a > prev) {
                return false;
            }
            let i = self.idx(a - self.t0);
            if i < prev_idx + min_len {
                return false;
            }
            prev_idx = i;
            prev = a;
        }
        self.x.len() >= prev_idx + min_len && prev < self.t0 + self.x[self.x.len() - 1]
    }

    /// Admissible interval for breakpoint `k` with its neighbours fixed.
    pub(crate) fn bounds(&self, bps: &[f64], k: usize, min_len: usize) -> (f64, f64) {
        let prev_idx = if k == 0 { 0 } else { self.idx(bps[k - 1] - self.t0) };
        let next_idx = if k + 1 < bps.len() {
            self.idx(bps[k + 1] - self.t0)
        } else {
            self.x.len()
        };
        let lo = self.x[prev_idx + min_len - 1];
        let hi = self.x[next_idx - min_len];
        (self.t0 + lo, self.t0 + hi - 1e-9)
    }

    /// Profiled SSE of the linear model; breakpoints as calendar years.
    fn sse(&self, bps: &[f64], scratch: &mut Scratch) -> f64 {
        let j = bps.len() + 1;
        let p = j + 1;
        scratch.a.clear();
        scratch.a.resize(p * p, 0.0);
        scratch.b.clear();
        scratch.b.resize(p, 0.0);
        scratch.v.clear();
        scratch.v.resize(p, 0.0);
        let (xtx, xty, v) = (&mut scratch.a, &mut scratch.b, &mut scratch.v);
        let mut lo_idx = 0;
        v[0] = 1.0;
        for seg in 1..=j {
            let a_prev = if seg == 1 { 0.0 } else { bps[seg - 2] - self.t0 };
            let hi_idx = if seg == j {
                self.x.len()
            } else {
                self.idx(bps[seg - 1] - self.t0)
            };
            let s = self.sums(lo_idx, hi_idx.max(lo_idx));
            let su = s.sx - s.n * a_prev;
            let suu = s.sxx - 2.0 * a_prev * s.sx + s.n * a_prev * a_prev;
            let suy = s.sxy - a_prev * s.sy;
            for r in 0..seg {
                for c in 0..seg {
                    xtx[r * p + c] += v[r] * v[c] * s.n;
                }
                xtx[r * p + seg] += v[r] * su;
                xtx[seg * p + r] += v[r] * su;
                xty[r] += v[r] * s.sy;
            }
            xtx[seg * p + seg] += suu;
            xty[seg] += suy;
            if seg < j {
                v[seg] = bps[seg - 1] - self.t0 - a_prev;
            }
            lo_idx = hi_idx.max(lo_idx);
        }
        match explained_ss(xtx, xty, p) {
            Some(fit) => (self.syy - fit).max(0.0),
            None => f64::INFINITY,
        }
    }
}

/// In-place Cholesky solve of a small dense SPD system; returns `x`.
/// `bᵀA⁻¹b` for symmetric positive definite `A` (row-major, overwritten by
/// its Cholesky factor; `b` by the forward solve).
fn explained_ss(a: &mut [f64], b: &mut [f64], p: usize) -> Option<f64> {
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j * p + j] = d;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / d;
        }
    }
    let mut total = 0.0;
    for i in 0..p {
        for k in 0..i {
            b[i] -= a[i * p + k] * b[k];
        }
        b[i] /= a[i * p + i];
        total += b[i] * b[i];
    }
    Some(total)
}

/// Stage 1: exhaustive enumeration of ordered breakpoint tuples on a grid
/// of distinct-year indices. Returns the best `refine_starts` tuples;
/// equal SSEs keep the lexicographically earliest tuple first.
fn grid_search(
    table: &YearTable,
    segments: usize,
    min_len: usize,
    opts: &SegmentedOptions,
    trace: &mut Option<Vec<TraceEntry>>,
) -> Vec<Vec<f64>> {
    let n = table.x.len();
    let n_bp = segments - 1;
    let mut stride = opts.grid_stride.max(1);
    let grid = |stride: usize| -> Vec<usize> { (min_len - 1..=n - 1 - min_len).step_by(stride).collect() };
    while count_tuples(&grid(stride), n_bp, min_len, n) > opts.max_grid_candidates as u128 {
        stride += 1;
    }
    let points = grid(stride);
    let keep = opts.refine_starts.max(1);
    // A wider pool, thinned afterwards so the starts sit in different basins.
    let pool = keep * 64;
    let mut best: Vec<(f64, Vec<usize>)> = Vec::new();
    let mut current = Vec::with_capacity(n_bp);
    let mut bps = vec![0.0; n_bp];
    let mut scratch = Scratch::default();
    let mut visit = |tuple: &[usize]| {
        for (b, &i) in bps.iter_mut().zip(tuple) {
            *b = table.t0 + table.x[i];
        }
        let sse = table.sse(&bps, &mut scratch);
        if best.len() < pool || sse < best[best.len() - 1].0 {
            let pos = best.partition_point(|b| b.0 <= sse);
            best.insert(pos, (sse, tuple.to_vec()));
            best.truncate(pool);
        }
    };
    enumerate(&points, 0, n_bp, min_len, n, &mut current, &mut visit);
    let mut chosen: Vec<(f64, Vec<usize>)> = Vec::with_capacity(keep);
    for cand in &best {
        let distinct = chosen
            .iter()
            .all(|c| c.1.iter().zip(&cand.1).any(|(a, b)| a.abs_diff(*b) > stride));
        if distinct {
            chosen.push(cand.clone());
            if chosen.len() == keep {
                break;
            }
        }
    }
    let best = chosen;
    let starts: Vec<Vec<f64>> = best
        .iter()
        .map(|(_, t)| t.iter().map(|&i| table.t0 + table.x[i]).collect())
        .collect();
    if let Some(tr) = trace.as_mut() {
        for ((sse, _), s) in best.iter().zip(&starts) {
            tr.push(TraceEntry {
                stage: SearchStage::Grid,
                breakpoints: s.clone(),
                sse: *sse,
            });
        }
    }
    starts
}

fn enumerate<F: FnMut(&[usize])>(
    points: &[usize],
    from: usize,
    remaining: usize,
    min_len: usize,
    n: usize,
    current: &mut Vec<usize>,
    visit: &mut F,
) {
    if remaining == 0 {
        visit(current);
        return;
    }
    for pi in from..points.len() {
        let i = points[pi];
        if let Some(&last) = current.last() {
            if i < last + min_len {
                continue;
            }
        }
        // Room for the remaining breakpoints and the final segment.
        if i + remaining * min_len > n - 1 {
            break;
        }
        current.push(i);
        enumerate(points, pi + 1, remaining - 1, min_len, n, current, visit);
        current.pop();
    }
}

fn count_tuples(points: &[usize], n_bp: usize, min_len: usize, n: usize) -> u128 {
    if n_bp == 0 {
        return 1;
    }
    // ways[p] = number of feasible tuples of the remaining length starting at point p
    let m = points.len();
    let mut ways: Vec<u128> = points.iter().map(|&i| u128::from(i + min_len < n)).collect();
    for _ in 1..n_bp {
        let mut next = vec![0u128; m];
        let mut suffix = vec![0u128; m + 1];
        for p in (0..m).rev() {
            suffix[p] = suffix[p + 1] + ways[p];
        }
        for p in 0..m {
            let q = points.partition_point(|&j| j < points[p] + min_len);
            next[p] = suffix[q];
        }
        ways = next;
    }
    ways.iter().sum()
}

/// Stage 2: coordinate-wise golden-section search on the profiled SSE,
/// each breakpoint within one grid stride of its current value.
fn refine(
    table: &YearTable,
    mut bps: Vec<f64>,
    min_len: usize,
    opts: &SegmentedOptions,
    trace: &mut Option<Vec<TraceEntry>>,
) -> (Vec<f64>, f64) {
    let mut scratch = Scratch::default();
    let mut sse = table.sse(&bps, &mut scratch);
    for _ in 0..opts.max_refine_passes {
        let mut moved: f64 = 0.0;
        for k in 0..bps.len() {
            let (lo, hi) = table.bounds(&bps, k, min_len);
            if !(hi > lo) {
                continue;
            }
            let mut trial = bps.clone();
            // Integer scan first: the profile is not unimodal in general.
            let mut centre = (bps[k], sse);
            let mut y = lo.ceil();
            while y <= hi {
                trial[k] = y;
                let f = table.sse(&trial, &mut scratch);
                if f < centre.1 {
                    centre = (y, f);
                }
                y += 1.0;
            }
            let lo = lo.max(centre.0 - 1.0);
            let hi = hi.min(centre.0 + 1.0);
            let (a, fa) = golden_section(
                |a| {
                    trial[k] = a;
                    table.sse(&trial, &mut scratch)
                },
                lo,
                hi,
                1e-4,
            );
            let (a, fa) = if fa <= centre.1 { (a, fa) } else { centre };
            if fa < sse {
                moved = moved.max((a - bps[k]).abs());
                bps[k] = a;
                sse = fa;
            }
        }
        // Joint moves of neighbouring breakpoints once single moves stall.
        for k in 0..bps.len().saturating_sub(1) {
            if moved >= opts.tolerance {
                break;
            }
            if let Some((pair, f)) = pair_scan(table, &bps, k, min_len, sse, &mut scratch) {
                moved = moved.max((pair.0 - bps[k]).abs()).max((pair.1 - bps[k + 1]).abs());
                bps[k] = pair.0;
                bps[k + 1] = pair.1;
                sse = f;
            }
        }
        if let Some(t) = trace.as_mut() {
            t.push(TraceEntry {
                stage: SearchStage::Refine,
                breakpoints: bps.clone(),
                sse,
            });
        }
        if moved < opts.tolerance {
            break;
        }
    }
    (bps, sse)
}

/// Joint integer scan of breakpoints `k` and `k + 1` between their
/// neighbours: coarse first, then year by year around the coarse optimum.
/// Returns the pair only if it improves on `current`.
fn pair_scan(
    table: &YearTable,
    bps: &[f64],
    k: usize,
    min_len: usize,
    current: f64,
    scratch: &mut Scratch,
) -> Option<((f64, f64), f64)> {
    const COARSE_EVALS: f64 = 40_000.0;
    let mut trial = bps.to_vec();
    // Data indices i < j with the same admissibility rule as `bounds`.
    let prev_idx = if k == 0 { 0 } else { table.idx(bps[k - 1] - table.t0) };
    let next_idx = if k + 2 < bps.len() {
        table.idx(bps[k + 2] - table.t0)
    } else {
        table.x.len()
    };
    let lo = prev_idx + min_len - 1;
    let last = next_idx.checked_sub(min_len + 1)?;
    if lo + min_len > last {
        return None;
    }
    let width = (last - lo + 1) as f64;
    let step = ((width * width / 2.0 / COARSE_EVALS).sqrt().ceil() as usize).max(1);
    let mut eval = |i: usize, j: usize, trial: &mut Vec<f64>| {
        trial[k] = table.t0 + table.x[i];
        trial[k + 1] = table.t0 + table.x[j];
        table.sse(trial, scratch)
    };
    let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
    let mut i = lo;
    while i + min_len <= last {
        let mut j = i + min_len;
        while j <= last {
            let f = eval(i, j, &mut trial);
            if f < best.2 {
                best = (i, j, f);
            }
            j += step;
        }
        i += step;
    }
    if step > 1 && best.2.is_finite() {
        let (ci, cj) = (best.0, best.1);
        for i in ci.saturating_sub(step).max(lo)..=(ci + step).min(last) {
            for j in cj.saturating_sub(step).max(i + min_len)..=(cj + step).min(last) {
                let f = eval(i, j, &mut trial);
                if f < best.2 {
                    best = (i, j, f);
                }
            }
        }
    }
    (best.2 < current).then(|| ((table.t0 + table.x[best.0], table.t0 + table.x[best.1]), best.2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_examples() {
        assert_eq!(segmented_design(1700.0, &[1809.0], 1665.0).unwrap(), vec![35.0, 0.0]);
        assert_eq!(segmented_design(1809.0, &[1809.0], 1665.0).unwrap(), vec![144.0, 0.0]);
        assert_eq!(segmented_design(1810.0, &[1809.0], 1665.0).unwrap(), vec![144.0, 1.0]);
        assert_eq!(
            segmented_design(1900.0, &[1809.0, 1881.0], 1665.0).unwrap(),
            vec![144.0, 72.0, 19.0]
        );
        assert_eq!(
            segmented_design(1900.0, &[1881.0, 1809.0], 1665.0),
            Err(Error::UnorderedBreakpoints)
        );
    }

    #[test]
    fn segment_rate_examples() {
        let r = segment_rates(&[0.0576, core::f64::consts::LN_2, 0.075, -0.0282]);
        assert!((r[0].doubling_time.unwrap() - 12.03).abs() < 0.005);
        assert!((r[1].doubling_time.unwrap() - 1.0).abs() < 1e-15);
        assert!((r[2].growth_rate - 0.0779).abs() < 5e-5);
        assert!((r[2].doubling_time.unwrap() - 9.24).abs() < 0.005);
        assert!(r[3].doubling_time.is_none());
        // 0.042 read as a growth fraction gives the 16.9-year convention.
        let s = segment_rates(&[0.042]);
        assert!((s[0].doubling_time_slope_as_rate.unwrap() - 16.85).abs() < 0.01);
    }

    #[test]
    fn lag1_examples() {
        let alt: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((lag1_autocorrelation(&alt).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(lag1_autocorrelation(&[0.3; 10]), Err(Error::NotComputable(_))));
        assert!(matches!(lag1_autocorrelation(&[1.0, 2.0]), Err(Error::TooShort { .. })));
    }

    #[test]
    fn fast_sse_matches_qr() {
        let years: Vec<f64> = (1700..=1900).map(f64::from).collect();
        let values: Vec<f64> = years
            .iter()
            .map(|y| 3.0 + 0.03 * (y - 1700.0) + 0.1 * ((y * 0.37).sin()))
            .collect();
        let obs = Observations {
            groups: vec![0; years.len()],
            years,
            values,
            n_groups: 1,
        };
        for bps in [vec![], vec![1800.0], vec![1750.5, 1811.25, 1850.0]] {
            let fast = profiled_sse(&obs, 1700.0, &bps);
            let slow = linear_fit(&obs, 1700.0, &bps).unwrap().sse;
            assert!((fast - slow).abs() < 1e-8 * slow.max(1.0), "{fast} vs {slow}");
        }
    }

    #[test]
    fn tuple_count_matches_enumeration() {
        let n = 60;
        let points: Vec<usize> = (4..=n - 1 - 5).step_by(3).collect();
        for n_bp in 1..4 {
            let mut count = 0u128;
            enumerate(&points, 0, n_bp, 5, n, &mut Vec::new(), &mut |_| count += 1);
            assert_eq!(count_tuples(&points, n_bp, 5, n), count);
        }
    }
}
