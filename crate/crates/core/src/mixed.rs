//! Latent piecewise growth curves: one segmented mean shared by all sources,
//! with per-source random deviations of the intercept and segment slopes.
//!
//! With the breakpoints fixed the model is linear:
//! `y_g = X_g β + Z_g u_g + ε_g`, `u_g ~ N(0, D)`, `ε_g ~ N(0, σ² I)`.
//! `D = σ² Λ Λᵀ` with `Λ` lower triangular (diagonal unless the intercept
//! and first slope covary). β and σ² are profiled out of the deviance
//!
//! `−2ℓ = Σ_g ln|I + ΛᵀZ_gᵀZ_gΛ| + N (1 + ln(2π r²/N))`
//!
//! where `r²` is the penalised residual sum of squares, and the deviance is
//! minimised over the log relative SDs and the Fisher z of the correlation.
//! Breakpoints are updated in an outer loop with Λ held fixed.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{least_squares, sym_pinv};
use crate::optim::{golden_section, levenberg_marquardt, nelder_mead};
use crate::segmented::{basis, fit_segmented_obs, SegmentedFit, SegmentedOptions, YearTable};
use crate::series::{Observations, Panel, SeriesKind};

/// Multiplier applied to random-slope design columns unless overridden.
pub const DEFAULT_SLOPE_SCALING: f64 = 100.0;
/// Effect variances below this are reported as collapsed.
pub const BOUNDARY_VARIANCE: f64 = 1e-12;

const LOG_LOWER: f64 = -20.0;
const LOG_UPPER: f64 = 12.0;
/// Half-width (years) of the integer scan around each breakpoint in the
/// outer loop.
const SCAN_HALF_WIDTH: f64 = 10.0;

/// Which random effects enter the model. Effect index 0 is the intercept,
/// index `k ≥ 1` the slope of segment `k`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RandomEffectsSpec {
    pub random_intercept: bool,
    /// One flag per segment.
    pub random_slopes: Vec<bool>,
    pub intercept_slope1_covariance: bool,
    /// Design-column multipliers, one per effect index (`1 + segments`).
    pub scaling: Vec<f64>,
}

impl RandomEffectsSpec {
    pub fn none(segments: usize) -> Self {
        Self {
            random_intercept: false,
            random_slopes: vec![false; segments],
            intercept_slope1_covariance: false,
            scaling: default_scaling(segments),
        }
    }

    /// Random intercept and a random slope in every segment.
    pub fn full(segments: usize, covariance: bool) -> Self {
        Self {
            random_intercept: true,
            random_slopes: vec![true; segments],
            intercept_slope1_covariance: covariance,
            scaling: default_scaling(segments),
        }
    }

    pub fn intercept_only(segments: usize) -> Self {
        Self {
            random_intercept: true,
            ..Self::none(segments)
        }
    }

    pub fn segments(&self) -> usize {
        self.random_slopes.len()
    }

    pub fn with_scaling(mut self, effect: usize, c: f64) -> Self {
        self.scaling[effect] = c;
        self
    }

    pub fn is_random(&self, effect: usize) -> bool {
        if effect == 0 {
            self.random_intercept
        } else {
            self.random_slopes[effect - 1]
        }
    }

    pub fn n_effects(&self) -> usize {
        usize::from(self.random_intercept) + self.random_slopes.iter().filter(|&&b| b).count()
    }

    /// Variance parameters excluding the residual variance.
    pub fn n_variance_params(&self) -> usize {
        self.n_effects() + usize::from(self.intercept_slope1_covariance)
    }

    pub fn validate(&self, segments: usize) -> Result<()> {
        if self.random_slopes.len() != segments {
            return Err(Error::InvalidSpec(alloc::format!(
                "{} slope flags for {segments} segments",
                self.random_slopes.len()
            )));
        }
        if self.scaling.len() != segments + 1 {
            return Err(Error::InvalidSpec(alloc::format!(
                "{} scaling factors for {} effects",
                self.scaling.len(),
                segments + 1
            )));
        }
        if self.scaling.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::InvalidSpec("scaling factors must be positive".into()));
        }
        if self.intercept_slope1_covariance && !(self.random_intercept && self.random_slopes.first() == Some(&true)) {
            return Err(Error::InvalidSpec(
                "covariance needs a random intercept and a random first slope".into(),
            ));
        }
        Ok(())
    }

    fn effects(&self) -> Vec<usize> {
        (0..=self.segments()).filter(|&e| self.is_random(e)).collect()
    }
}

fn default_scaling(segments: usize) -> Vec<f64> {
    let mut s = vec![DEFAULT_SLOPE_SCALING; segments + 1];
    s[0] = 1.0;
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpgcmOptions {
    /// Breakpoint search settings; also supplies `t0` and the minimum
    /// segment length.
    pub segmented: SegmentedOptions,
    pub max_outer_iterations: usize,
    /// Outer loop stops once no breakpoint moves more than this (years).
    pub tolerance: f64,
    /// Fail with [`Error::SingularD`] instead of flagging a collapsed variance.
    pub strict: bool,
    /// Deviance evaluations allowed per variance optimisation.
    pub max_evaluations: usize,
}

impl Default for LpgcmOptions {
    fn default() -> Self {
        Self {
            segmented: SegmentedOptions::default(),
            max_outer_iterations: 50,
            tolerance: 0.01,
            strict: false,
            max_evaluations: 4000,
        }
    }
}

/// Parameters sitting on the edge of the parameter space.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundaryFlags {
    /// Per effect index; `true` when the variance collapsed.
    pub variances: Vec<bool>,
    /// `|r| ≥ 1 − 1e-6`.
    pub correlation: bool,
}

impl BoundaryFlags {
    pub fn any(&self) -> bool {
        self.correlation || self.variances.iter().any(|&b| b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpgcmFit {
    /// Shared fixed effects. `loglik` is the marginal log-likelihood,
    /// `residuals` are marginal (`y − Xβ`), `covariance` comes from the
    /// generalised least squares information at the final variance components.
    pub fixed: SegmentedFit,
    pub spec: RandomEffectsSpec,
    pub sources: Vec<String>,
    pub first_year: i32,
    pub last_year: i32,
    /// SDs in natural units per effect index; `None` where not random.
    pub vc: Vec<Option<f64>>,
    /// SDs of the effects attached to the scaled design columns.
    pub vc_scaled: Vec<Option<f64>>,
    pub r_u1u0: Option<f64>,
    pub sigma2_eps: f64,
    /// Predicted deviations per source and effect index (natural units,
    /// zero where not random).
    pub group_effects: Vec<Vec<f64>>,
    pub loglik: f64,
    pub n_total: usize,
    pub n_groups: usize,
    pub boundary: BoundaryFlags,
    pub outer_iterations: usize,
    pub converged: bool,
}

impl LpgcmFit {
    pub fn segments(&self) -> usize {
        self.fixed.slopes.len()
    }

    /// Parameter count used for BIC: fixed effects, breakpoints, residual
    /// variance and variance components.
    pub fn n_params(&self) -> usize {
        2 * self.segments() + 1 + self.spec.n_variance_params()
    }

    pub fn source_index(&self, source_id: &str) -> Result<usize> {
        self.sources
            .iter()
            .position(|s| s == source_id)
            .ok_or_else(|| Error::UnknownSource(source_id.into()))
    }

    /// Fixed-effect prediction plus the group's deviations.
    pub fn group_predict(&self, group: usize, year: f64) -> f64 {
        let f = &self.fixed;
        let d = &self.group_effects[group];
        let b = basis(year, &f.breakpoints, f.t0);
        f.b0 + d[0]
            + b.iter()
                .enumerate()
                .map(|(k, bk)| (f.slopes[k] + d[k + 1]) * bk)
                .sum::<f64>()
    }

    /// Predicted log values of one source over `first_year..=last_year`.
    pub fn group_curve(&self, source_id: &str) -> Result<Vec<f64>> {
        let g = self.source_index(source_id)?;
        Ok((self.first_year..=self.last_year)
            .map(|y| self.group_predict(g, f64::from(y)))
            .collect())
    }

    /// Sum over sources of each predicted deviation (near zero under
    /// shrinkage; a diagnostic, not a constraint).
    pub fn effect_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.segments() + 1];
        for d in &self.group_effects {
            for (o, v) in out.iter_mut().zip(d) {
                *o += v;
            }
        }
        out
    }
}

pub fn marginal_loglik(fit: &LpgcmFit) -> f64 {
    fit.loglik
}

/// Maximum-likelihood latent piecewise growth curve fit.
pub fn fit_lpgcm(panel: &Panel, segments: usize, spec: &RandomEffectsSpec, opts: &LpgcmOptions) -> Result<LpgcmFit> {
    if panel.kind() != SeriesKind::LogCumulative {
        return Err(Error::WrongKind {
            expected: "log_cumulative",
        });
    }
    spec.validate(segments)?;
    if panel.n_sources() < 2 {
        return Err(Error::InvalidPanel(
            "latent growth model needs at least two sources".into(),
        ));
    }
    let min_len = opts.segmented.min_segment_length.max(1);
    for (s, col) in panel.sources().iter().zip(panel.columns()) {
        let n = col.iter().filter(|v| v.is_some()).count();
        if n < segments * min_len {
            return Err(Error::InvalidPanel(alloc::format!(
                "source {s} has {n} observations, {} needed",
                segments * min_len
            )));
        }
    }
    let obs = panel.observations();
    let t0 = opts.segmented.t0.unwrap_or(f64::from(panel.first_year()));
    let seg_opts = SegmentedOptions {
        t0: Some(t0),
        ..opts.segmented.clone()
    };
    let base = |fixed: SegmentedFit| LpgcmFit {
        spec: spec.clone(),
        sources: panel.sources().to_vec(),
        first_year: panel.first_year(),
        last_year: panel.last_year(),
        vc: vec![None; segments + 1],
        vc_scaled: vec![None; segments + 1],
        r_u1u0: None,
        sigma2_eps: fixed.sigma2,
        group_effects: vec![vec![0.0; segments + 1]; panel.n_sources()],
        loglik: fixed.loglik,
        n_total: obs.len(),
        n_groups: panel.n_sources(),
        boundary: BoundaryFlags {
            variances: vec![false; segments + 1],
            correlation: false,
        },
        outer_iterations: 0,
        converged: fixed.converged,
        fixed,
    };
    if spec.n_effects() == 0 {
        return Ok(base(fit_segmented_obs(&obs, segments, &seg_opts)?));
    }

    let layout = Layout::new(spec);
    let table = YearTable::new(&obs, t0);
    let ranges = obs.group_ranges();

    // Starting breakpoints from a pooled fit after removing source levels.
    let offsets = source_levels(&obs);
    let mut adjusted = obs.clone();
    for (v, g) in adjusted.values.iter_mut().zip(&obs.groups) {
        *v -= offsets[*g];
    }
    let start = fit_segmented_obs(&adjusted, segments, &seg_opts)?;
    let mut bps = start.breakpoints.clone();

    let mut x = start_theta(&obs, &ranges, t0, &bps, &layout);
    let mut iterations = 0;
    let mut converged = false;
    let mut theta_ok = false;
    while iterations < opts.max_outer_iterations {
        iterations += 1;
        let stats = Stats::new(&obs, &ranges, t0, &bps, &layout);
        (x, theta_ok) = optimise_theta(&stats, &layout, &x, opts.max_evaluations);
        if bps.is_empty() {
            converged = true;
            break;
        }
        let lam = layout.lambda(&x);
        let before = bps.clone();
        bps = update_breakpoints(&obs, &ranges, t0, &table, min_len, &layout, &lam, bps);
        let moved = bps.iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if moved < opts.tolerance {
            converged = true;
            break;
        }
    }

    let converged = converged && theta_ok;
    let lam = layout.lambda(&x);
    let stats = Stats::new(&obs, &ranges, t0, &bps, &layout);
    let prof = profile(&stats, &lam).ok_or(Error::NoConvergence("latent growth model"))?;
    let n = obs.len();
    let sigma2 = prof.r2 / n as f64;
    let loglik = -0.5 * prof.deviance;

    // Fixed-effect covariance from the augmented least-squares information.
    let params = augmented_params(&prof, &bps);
    let (_, jac) =
        augmented_eval(&obs, &ranges, t0, &layout, &lam, &params).ok_or(Error::NoConvergence("latent growth model"))?;
    let info_inv = sym_pinv(&(jac.transpose() * &jac));
    let k = 2 * segments;
    let covariance = DMatrix::from_fn(k, k, |r, c| sigma2 * info_inv[(r, c)]);

    let mut residuals = Vec::with_capacity(n);
    for i in 0..n {
        let b = basis(obs.years[i], &bps, t0);
        let mean = prof.beta[0] + b.iter().zip(prof.beta.iter().skip(1)).map(|(x, y)| x * y).sum::<f64>();
        residuals.push(obs.values[i] - mean);
    }
    let sse = residuals.iter().map(|r| r * r).sum();

    let q = layout.effects.len();
    let d_scaled = &lam * lam.transpose() * sigma2;
    let mut vc = vec![None; segments + 1];
    let mut vc_scaled = vec![None; segments + 1];
    let mut flags = vec![false; segments + 1];
    for (i, &e) in layout.effects.iter().enumerate() {
        let var = d_scaled[(i, i)].max(0.0);
        let sd = var.sqrt();
        vc_scaled[e] = Some(sd);
        let natural = sd * layout.scale[i];
        vc[e] = Some(natural);
        flags[e] = natural * natural < BOUNDARY_VARIANCE || x[i] <= LOG_LOWER + 1e-9;
    }
    let r_u1u0 = layout.cov.map(|_| x[q].tanh());
    let corr_flag = r_u1u0.is_some_and(|r| r.abs() >= 1.0 - 1e-6);
    if opts.strict && flags.iter().any(|&f| f) {
        return Err(Error::SingularD);
    }

    let mut group_effects = vec![vec![0.0; segments + 1]; obs.n_groups];
    for (g, u) in prof.u.iter().enumerate() {
        let dev = &lam * u;
        for (i, &e) in layout.effects.iter().enumerate() {
            group_effects[g][e] = dev[i] * layout.scale[i];
        }
    }

    let fixed = SegmentedFit {
        t0,
        b0: prof.beta[0],
        slopes: prof.beta.iter().skip(1).copied().collect(),
        breakpoints: bps,
        capacity: None,
        covariance,
        sigma2,
        sse,
        loglik,
        n,
        converged,
        residuals,
        residual_groups: obs.groups.clone(),
        search_trace: None,
    };
    let mut fit = base(fixed);
    fit.vc = vc;
    fit.vc_scaled = vc_scaled;
    fit.r_u1u0 = r_u1u0;
    fit.sigma2_eps = sigma2;
    fit.group_effects = group_effects;
    fit.loglik = loglik;
    fit.boundary = BoundaryFlags {
        variances: flags,
        correlation: corr_flag,
    };
    fit.outer_iterations = iterations;
    fit.converged = converged;
    Ok(fit)
}

/// Random-effect columns in effect-index order, with the positions of the
/// intercept and first slope when they covary.
struct Layout {
    effects: Vec<usize>,
    scale: Vec<f64>,
    cov: Option<(usize, usize)>,
}

impl Layout {
    fn new(spec: &RandomEffectsSpec) -> Self {
        let effects = spec.effects();
        let scale = effects.iter().map(|&e| spec.scaling[e]).collect();
        let cov = spec.intercept_slope1_covariance.then(|| {
            let i0 = effects.iter().position(|&e| e == 0).unwrap_or(0);
            let i1 = effects.iter().position(|&e| e == 1).unwrap_or(0);
            (i0, i1)
        });
        Self { effects, scale, cov }
    }

    fn n_theta(&self) -> usize {
        self.effects.len() + usize::from(self.cov.is_some())
    }

    /// `x` holds log relative SDs, then the Fisher z of the correlation.
    fn lambda(&self, x: &[f64]) -> DMatrix<f64> {
        let q = self.effects.len();
        let mut lam = DMatrix::zeros(q, q);
        for i in 0..q {
            lam[(i, i)] = x[i].exp();
        }
        if let Some((i0, i1)) = self.cov {
            let r = x[q].tanh();
            let s1 = x[i1].exp();
            lam[(i1, i0)] = r * s1;
            lam[(i1, i1)] = s1 * (1.0 - r * r).max(0.0).sqrt();
        }
        lam
    }

    fn z_row(&self, b: &[f64]) -> Vec<f64> {
        self.effects
            .iter()
            .zip(&self.scale)
            .map(|(&e, c)| if e == 0 { *c } else { c * b[e - 1] })
            .collect()
    }
}

/// Two-way additive levels `y ≈ α_g + γ_year`, normalised to mean zero.
fn source_levels(obs: &Observations) -> Vec<f64> {
    let first = obs.first_year();
    let n_years = (obs.last_year() - first) as usize + 1;
    let year_idx: Vec<usize> = obs.years.iter().map(|y| (y - first) as usize).collect();
    let mut alpha = vec![0.0; obs.n_groups];
    let mut gamma = vec![0.0; n_years];
    for _ in 0..50 {
        let mut sum = vec![0.0; n_years];
        let mut cnt = vec![0.0; n_years];
        for i in 0..obs.len() {
            sum[year_idx[i]] += obs.values[i] - alpha[obs.groups[i]];
            cnt[year_idx[i]] += 1.0;
        }
        for t in 0..n_years {
            if cnt[t] > 0.0 {
                gamma[t] = sum[t] / cnt[t];
            }
        }
        let mut sum = vec![0.0; obs.n_groups];
        let mut cnt = vec![0.0; obs.n_groups];
        for i in 0..obs.len() {
            sum[obs.groups[i]] += obs.values[i] - gamma[year_idx[i]];
            cnt[obs.groups[i]] += 1.0;
        }
        for g in 0..obs.n_groups {
            if cnt[g] > 0.0 {
                alpha[g] = sum[g] / cnt[g];
            }
        }
    }
    let mean = alpha.iter().sum::<f64>() / alpha.len().max(1) as f64;
    alpha.iter().map(|a| a - mean).collect()
}

/// Moment-style starting values from per-source least squares.
fn start_theta(
    obs: &Observations,
    ranges: &[core::ops::Range<usize>],
    t0: f64,
    bps: &[f64],
    layout: &Layout,
) -> Vec<f64> {
    let j = bps.len() + 1;
    let mut coefs: Vec<Vec<f64>> = Vec::new();
    let mut sse = 0.0;
    let mut dof = 0.0;
    for r in ranges {
        let n = r.len();
        let x = DMatrix::from_fn(n, j + 1, |i, c| {
            if c == 0 {
                1.0
            } else {
                basis(obs.years[r.start + i], bps, t0)[c - 1]
            }
        });
        let y = DVector::from_column_slice(&obs.values[r.clone()]);
        if let Ok(ls) = least_squares(&x, &y) {
            sse += ls.sse;
            dof += n as f64;
            coefs.push(ls.beta.iter().copied().collect());
        }
    }
    let sigma = if dof > 0.0 && sse > 0.0 {
        (sse / dof).sqrt()
    } else {
        1.0
    };
    let q = layout.effects.len();
    let mut x = vec![0.0; layout.n_theta()];
    let column = |e: usize| -> Vec<f64> { coefs.iter().map(|c| c[e]).collect() };
    let sd = |v: &[f64]| -> f64 {
        if v.len() < 2 {
            return 0.0;
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    for (i, &e) in layout.effects.iter().enumerate() {
        let rel = sd(&column(e)) / layout.scale[i] / sigma;
        x[i] = if rel > 0.0 { rel.ln() } else { 0.0 }.clamp(LOG_LOWER + 1.0, LOG_UPPER - 1.0);
    }
    if let Some((_, _)) = layout.cov {
        let a = column(0);
        let b = column(1);
        let (sa, sb) = (sd(&a), sd(&b));
        let r = if sa > 0.0 && sb > 0.0 {
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            let c: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64;
            (c / (sa * sb)).clamp(-0.9, 0.9)
        } else {
            0.0
        };
        x[q] = r.atanh();
    }
    x
}

struct GroupStats {
    ztz: DMatrix<f64>,
    ztx: DMatrix<f64>,
    zty: DVector<f64>,
}

/// Cross-products of the fixed and random designs at given breakpoints,
/// with `y` centred at its mean.
struct Stats {
    groups: Vec<GroupStats>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    mean: f64,
    n: usize,
}

impl Stats {
    fn new(obs: &Observations, ranges: &[core::ops::Range<usize>], t0: f64, bps: &[f64], layout: &Layout) -> Self {
        let p = bps.len() + 2;
        let q = layout.effects.len();
        let n = obs.len();
        let mean = obs.values.iter().sum::<f64>() / n as f64;
        let mut xtx = DMatrix::zeros(p, p);
        let mut xty = DVector::zeros(p);
        let mut yty = 0.0;
        let mut groups = Vec::with_capacity(ranges.len());
        let mut xr = vec![0.0; p];
        for r in ranges {
            let mut g = GroupStats {
                ztz: DMatrix::zeros(q, q),
                ztx: DMatrix::zeros(q, p),
                zty: DVector::zeros(q),
            };
            for i in r.clone() {
                let b = basis(obs.years[i], bps, t0);
                xr[0] = 1.0;
                xr[1..].copy_from_slice(&b);
                let z = layout.z_row(&b);
                let y = obs.values[i] - mean;
                yty += y * y;
                for a in 0..p {
                    xty[a] += xr[a] * y;
                    for c in 0..=a {
                        xtx[(a, c)] += xr[a] * xr[c];
                    }
                }
                for a in 0..q {
                    g.zty[a] += z[a] * y;
                    for c in 0..p {
                        g.ztx[(a, c)] += z[a] * xr[c];
                    }
                    for c in 0..=a {
                        g.ztz[(a, c)] += z[a] * z[c];
                    }
                }
            }
            for a in 0..q {
                for c in 0..a {
                    g.ztz[(c, a)] = g.ztz[(a, c)];
                }
            }
            groups.push(g);
        }
        for a in 0..p {
            for c in 0..a {
                xtx[(c, a)] = xtx[(a, c)];
            }
        }
        Self {
            groups,
            xtx,
            xty,
            yty,
            mean,
            n,
        }
    }
}

struct Profile {
    deviance: f64,
    /// Fixed effects on the original (uncentred) scale.
    beta: DVector<f64>,
    /// Spherical random effects per group (`b_g = Λ u_g`).
    u: Vec<DVector<f64>>,
    r2: f64,
}

fn profile(stats: &Stats, lam: &DMatrix<f64>) -> Option<Profile> {
    let q = lam.nrows();
    let mut schur = stats.xtx.clone();
    let mut rhs = stats.xty.clone();
    let mut logdet = 0.0;
    let lt = lam.transpose();
    let mut parts = Vec::with_capacity(stats.groups.len());
    for g in &stats.groups {
        let m = &lt * &g.ztz * lam + DMatrix::identity(q, q);
        let ch = m.cholesky()?;
        logdet += 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let b = &lt * &g.ztx;
        let c = &lt * &g.zty;
        let mb = ch.solve(&b);
        let mc = ch.solve(&c);
        schur -= b.transpose() * &mb;
        rhs -= b.transpose() * &mc;
        parts.push((c, mb, mc));
    }
    let beta = schur.cholesky()?.solve(&rhs);
    let mut explained = beta.dot(&stats.xty);
    let mut u = Vec::with_capacity(parts.len());
    for (c, mb, mc) in parts {
        let ug = mc - mb * &beta;
        explained += ug.dot(&c);
        u.push(ug);
    }
    let r2 = stats.yty - explained;
    if !(r2 > 0.0) || !logdet.is_finite() {
        return None;
    }
    let n = stats.n as f64;
    let deviance = logdet + n * (1.0 + (2.0 * PI * r2 / n).ln());
    let mut beta = beta;
    beta[0] += stats.mean;
    Some(Profile { deviance, beta, u, r2 })
}

fn deviance(stats: &Stats, layout: &Layout, x: &[f64]) -> f64 {
    profile(stats, &layout.lambda(x)).map_or(f64::INFINITY, |p| p.deviance)
}

/// Best of the starts, and whether its simplex collapsed within budget.
fn optimise_theta(stats: &Stats, layout: &Layout, x0: &[f64], max_evals: usize) -> (Vec<f64>, bool) {
    let f = |x: &[f64]| deviance(stats, layout, x);
    let mut starts = vec![x0.to_vec()];
    if layout.cov.is_some() {
        let mut alt = x0.to_vec();
        let last = alt.len() - 1;
        alt[last] = 0.0;
        starts.push(alt);
    }
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for s in starts {
        let res = nelder_mead(f, &s, 1.0, LOG_LOWER, LOG_UPPER, 1e-9, max_evals);
        if best.as_ref().is_none_or(|b| res.fx < b.1) {
            best = Some((res.x, res.fx, res.converged));
        }
    }
    best.map_or_else(|| (x0.to_vec(), false), |b| (b.0, b.2))
}

/// Coordinate-wise breakpoint moves on the exact deviance (Λ fixed),
/// followed by a joint Gauss–Newton polish of the penalised least squares.
#[allow(clippy::too_many_arguments)]
fn update_breakpoints(
    obs: &Observations,
    ranges: &[core::ops::Range<usize>],
    t0: f64,
    table: &YearTable,
    min_len: usize,
    layout: &Layout,
    lam: &DMatrix<f64>,
    mut bps: Vec<f64>,
) -> Vec<f64> {
    let dev_at = |b: &[f64]| -> f64 {
        if !table.feasible(b, min_len) {
            return f64::INFINITY;
        }
        profile(&Stats::new(obs, ranges, t0, b, layout), lam).map_or(f64::INFINITY, |p| p.deviance)
    };
    let mut current = dev_at(&bps);
    for _ in 0..20 {
        let mut moved: f64 = 0.0;
        for k in 0..bps.len() {
            let (lo, hi) = table.bounds(&bps, k, min_len);
            let lo = lo.max(bps[k] - SCAN_HALF_WIDTH);
            let hi = hi.min(bps[k] + SCAN_HALF_WIDTH);
            if !(hi > lo) {
                continue;
            }
            let mut trial = bps.clone();
            let mut centre = (bps[k], current);
            let mut y = lo.ceil();
            while y <= hi {
                trial[k] = y;
                let f = dev_at(&trial);
                if f < centre.1 {
                    centre = (y, f);
                }
                y += 1.0;
            }
            let (glo, ghi) = (lo.max(centre.0 - 1.0), hi.min(centre.0 + 1.0));
            let (a, fa) = golden_section(
                |a| {
                    trial[k] = a;
                    dev_at(&trial)
                },
                glo,
                ghi,
                1e-4,
            );
            let (a, fa) = if fa <= centre.1 { (a, fa) } else { centre };
            if fa < current {
                moved = moved.max((a - bps[k]).abs());
                bps[k] = a;
                current = fa;
            }
        }
        if moved < 1e-3 {
            break;
        }
    }

    // Joint polish over (β, breakpoints, u); kept only if the deviance drops.
    let stats = Stats::new(obs, ranges, t0, &bps, layout);
    if let Some(prof) = profile(&stats, lam) {
        let p0 = augmented_params(&prof, &bps);
        let eval = |p: &[f64]| {
            augmented_eval(obs, ranges, t0, layout, lam, p)
                .filter(|_| table.feasible(&p[bps.len() + 2..2 * bps.len() + 2], min_len))
        };
        if let Some(res) = levenberg_marquardt(eval, &p0, 200) {
            let cand = res.params[bps.len() + 2..2 * bps.len() + 2].to_vec();
            if dev_at(&cand) < current {
                bps = cand;
            }
        }
    }
    bps
}

/// `[b0, slopes, breakpoints, u_1, …, u_G]`.
fn augmented_params(prof: &Profile, bps: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = prof.beta.iter().copied().collect();
    p.extend_from_slice(bps);
    for u in &prof.u {
        p.extend(u.iter().copied());
    }
    p
}

/// Residuals and model Jacobian of the penalised problem
/// `‖y − Xβ − ZΛu‖² + ‖u‖²` with breakpoints as free parameters.
fn augmented_eval(
    obs: &Observations,
    ranges: &[core::ops::Range<usize>],
    t0: f64,
    layout: &Layout,
    lam: &DMatrix<f64>,
    p: &[f64],
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    if !p.iter().all(|v| v.is_finite()) {
        return None;
    }
    let q = layout.effects.len();
    let g_count = ranges.len();
    let n_bp = (p.len() - g_count * q) / 2 - 1;
    let j = n_bp + 1;
    let bps = &p[j + 1..j + 1 + n_bp];
    if bps.windows(2).any(|w| !(w[0] < w[1])) || bps.first().is_some_and(|&a| !(a > t0)) {
        return None;
    }
    let u_off = j + 1 + n_bp;
    let n = obs.len();
    let rows = n + g_count * q;
    let mut r = DVector::zeros(rows);
    let mut jac = DMatrix::zeros(rows, p.len());
    for (g, range) in ranges.iter().enumerate() {
        let u = DVector::from_column_slice(&p[u_off + g * q..u_off + (g + 1) * q]);
        let dev = lam * &u;
        // Natural slope deviation per segment.
        let mut delta = vec![0.0; j];
        for (i, &e) in layout.effects.iter().enumerate() {
            if e > 0 {
                delta[e - 1] = dev[i] * layout.scale[i];
            }
        }
        for i in range.clone() {
            let x = obs.years[i];
            let b = basis(x, bps, t0);
            let z = layout.z_row(&b);
            let mut value = p[0];
            jac[(i, 0)] = 1.0;
            for k in 0..j {
                value += p[1 + k] * b[k];
                jac[(i, 1 + k)] = b[k];
            }
            for (zi, di) in z.iter().zip(dev.iter()) {
                value += zi * di;
            }
            for k in 0..n_bp {
                if x > bps[k] {
                    jac[(i, j + 1 + k)] = p[1 + k] + delta[k] - p[2 + k] - delta[k + 1];
                }
            }
            // ∂/∂u = zᵀΛ
            for c in 0..q {
                let mut s = 0.0;
                for a in c..q {
                    s += z[a] * lam[(a, c)];
                }
                jac[(i, u_off + g * q + c)] = s;
            }
            r[i] = obs.values[i] - value;
        }
        for c in 0..q {
            let row = n + g * q + c;
            r[row] = -u[c];
            jac[(row, u_off + g * q + c)] = 1.0;
        }
    }
    Some((r, jac))
}
