//! Multiple imputation of missing panel cells by data augmentation under a
//! multivariate normal model across sources (years are the rows), and
//! pooling of per-imputation estimates with the total-variance rule
//! `T = W + (1 + 1/m) B`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::growth::{fit_exponential_obs, fit_logistic_obs, GrowthFit, GrowthModel};
use crate::mixed::{fit_lpgcm, LpgcmFit, LpgcmOptions, RandomEffectsSpec};
use crate::segmented::{fit_segmented_obs, SegmentedFit, SegmentedOptions};
use crate::series::{Panel, SeriesKind};

pub const DEFAULT_M: usize = 5;
pub const DEFAULT_BURNIN: usize = 200;
pub const DEFAULT_GAP: usize = 100;
/// Added to the diagonal of every covariance draw.
const SIGMA_RIDGE: f64 = 1e-6;

/// State of the chain at one saved imputation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChainSummary {
    pub iteration: usize,
    pub mu: Vec<f64>,
    pub sigma_diag: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationSet {
    pub m: usize,
    /// Completed panels, all with the input's years, sources and kind.
    pub panels: Vec<Panel>,
    pub seed: u64,
    pub burnin: usize,
    pub gap: usize,
    /// `imputed[source][year index]` is true where the input cell was missing.
    pub imputed: Vec<Vec<bool>>,
    /// One entry per saved panel; empty when nothing had to be imputed.
    pub trace: Vec<ChainSummary>,
}

impl ImputationSet {
    pub fn imputed_count(&self) -> usize {
        self.imputed.iter().flatten().filter(|&&b| b).count()
    }

    /// Year-on-year decreases that involve at least one imputed cell, summed
    /// over panels. Log-cumulative values should never decrease; the sampler
    /// does not enforce it.
    pub fn monotonicity_violations(&self) -> usize {
        let mut count = 0;
        for panel in &self.panels {
            for (s, col) in panel.columns().iter().enumerate() {
                for i in 1..col.len() {
                    if !(self.imputed[s][i] || self.imputed[s][i - 1]) {
                        continue;
                    }
                    if let (Some(a), Some(b)) = (col[i - 1], col[i]) {
                        if b < a {
                            count += 1;
                        }
                    }
                }
            }
        }
        count
    }
}

/// Draws `m` completed copies of a log-cumulative panel.
///
/// At least one source must be observed in every year; it anchors the
/// starting values. Each iteration draws the missing cells of every year
/// from their conditional normal given that year's observed cells, then
/// draws `(μ, Σ)` from the posterior under the Jeffreys prior
/// `p(μ, Σ) ∝ |Σ|^{-(p+1)/2}`. Panels are saved after iterations
/// `burnin + gap, burnin + 2·gap, ...`.
pub fn impute_mcmc(panel: &Panel, m: usize, seed: u64, burnin: usize, gap: usize) -> Result<ImputationSet> {
    if panel.kind() != SeriesKind::LogCumulative {
        return Err(Error::WrongKind {
            expected: "log-cumulative",
        });
    }
    if m == 0 {
        return Err(Error::EmptyInput);
    }
    let imputed: Vec<Vec<bool>> = panel
        .columns()
        .iter()
        .map(|c| c.iter().map(Option::is_none).collect())
        .collect();
    let mut set = ImputationSet {
        m,
        panels: Vec::with_capacity(m),
        seed,
        burnin,
        gap,
        imputed,
        trace: Vec::new(),
    };
    if panel.is_complete() {
        set.panels = vec![panel.clone(); m];
        return Ok(set);
    }
    let backbone = (0..panel.n_sources())
        .find(|&s| panel.column(s).iter().all(Option::is_some))
        .ok_or(Error::NoCompleteBackbone)?;
    let n = panel.n_years();
    let p = panel.n_sources();
    if n < p + 2 {
        return Err(Error::TooShort { needed: p + 1, got: n });
    }

    let mut y = start_values(panel, backbone)?;
    let patterns = Patterns::new(panel);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chi: Vec<ChiSquared<f64>> = (0..p)
        .map(|i| ChiSquared::new((n - 1 - i) as f64).map_err(|_| Error::ChainDivergence))
        .collect::<Result<_>>()?;

    let total = burnin + m * gap.max(1);
    for it in 1..=total {
        let (mu, sigma) = draw_parameters(&y, &chi, &mut rng)?;
        patterns.draw_missing(&mut y, &mu, &sigma, &mut rng)?;
        if it > burnin && (it - burnin).is_multiple_of(gap.max(1)) {
            let columns = (0..p).map(|s| (0..n).map(|i| Some(y[(i, s)])).collect()).collect();
            set.panels.push(panel.with_columns(columns)?);
            set.trace.push(ChainSummary {
                iteration: it,
                mu: mu.iter().copied().collect(),
                sigma_diag: sigma.diagonal().iter().copied().collect(),
            });
        }
    }
    Ok(set)
}

/// Missing cells start at the least-squares line of their source on the
/// backbone, fitted over the years both are observed.
fn start_values(panel: &Panel, backbone: usize) -> Result<DMatrix<f64>> {
    let n = panel.n_years();
    let p = panel.n_sources();
    let x = panel.column(backbone);
    let mut y = DMatrix::zeros(n, p);
    for s in 0..p {
        let col = panel.column(s);
        let pairs: Vec<(f64, f64)> = col.iter().zip(x).filter_map(|(v, b)| Some(((*b)?, (*v)?))).collect();
        let (a, b) = match pairs.len() {
            0 => {
                return Err(Error::InvalidPanel(format!(
                    "source `{}` has no values",
                    panel.sources()[s]
                )))
            }
            1 => (pairs[0].1 - pairs[0].0, 1.0),
            k => {
                let k = k as f64;
                let mx = pairs.iter().map(|q| q.0).sum::<f64>() / k;
                let my = pairs.iter().map(|q| q.1).sum::<f64>() / k;
                let sxx: f64 = pairs.iter().map(|q| (q.0 - mx).powi(2)).sum();
                let sxy: f64 = pairs.iter().map(|q| (q.0 - mx) * (q.1 - my)).sum();
                let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
                (my - b * mx, b)
            }
        };
        for i in 0..n {
            y[(i, s)] = match col[i] {
                Some(v) => v,
                None => a + b * x[i].unwrap_or(0.0),
            };
        }
    }
    Ok(y)
}

/// `Σ ~ W⁻¹(n − 1, S)`, `μ | Σ ~ N(ȳ, Σ/n)` with `S` the centred
/// cross-product matrix of the current completed data.
fn draw_parameters<R: Rng>(
    y: &DMatrix<f64>,
    chi: &[ChiSquared<f64>],
    rng: &mut R,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, p) = y.shape();
    let mean = DVector::from_iterator(p, (0..p).map(|s| y.column(s).mean()));
    let mut centred = y.clone();
    for s in 0..p {
        let ms = mean[s];
        centred.column_mut(s).iter_mut().for_each(|v| *v -= ms);
    }
    let mut scatter = centred.transpose() * &centred;
    let jitter = 1e-12 * scatter.trace().max(f64::MIN_POSITIVE);
    for s in 0..p {
        scatter[(s, s)] += jitter;
    }
    let scale_inv = scatter.cholesky().ok_or(Error::ChainDivergence)?.inverse();
    let l = scale_inv.cholesky().ok_or(Error::ChainDivergence)?.l();
    // Bartlett factor.
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        a[(i, i)] = chi[i].sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    let wishart = &la * la.transpose();
    let mut sigma = wishart.cholesky().ok_or(Error::ChainDivergence)?.inverse();
    sigma = (&sigma + sigma.transpose()) * 0.5;
    for s in 0..p {
        sigma[(s, s)] += SIGMA_RIDGE;
    }
    let chol = sigma.clone().cholesky().ok_or(Error::ChainDivergence)?;
    let z = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let mu = mean + chol.l() * z / (n as f64).sqrt();
    if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
        return Err(Error::ChainDivergence);
    }
    Ok((mu, sigma))
}

/// Rows grouped by their set of missing sources.
struct Patterns {
    groups: Vec<(Vec<usize>, Vec<usize>, Vec<usize>)>,
}

impl Patterns {
    fn new(panel: &Panel) -> Self {
        let p = panel.n_sources();
        let mut groups: Vec<(Vec<usize>, Vec<usize>, Vec<usize>)> = Vec::new();
        for i in 0..panel.n_years() {
            let missing: Vec<usize> = (0..p).filter(|&s| panel.column(s)[i].is_none()).collect();
            if missing.is_empty() {
                continue;
            }
            match groups.iter_mut().find(|g| g.0 == missing) {
                Some(g) => g.2.push(i),
                None => {
                    let observed = (0..p).filter(|s| !missing.contains(s)).collect();
                    groups.push((missing, observed, vec![i]));
                }
            }
        }
        Self { groups }
    }

    fn draw_missing<R: Rng>(
        &self,
        y: &mut DMatrix<f64>,
        mu: &DVector<f64>,
        sigma: &DMatrix<f64>,
        rng: &mut R,
    ) -> Result<()> {
        for (mis, obs, rows) in &self.groups {
            let pick = |r: &[usize], c: &[usize]| DMatrix::from_fn(r.len(), c.len(), |i, j| sigma[(r[i], c[j])]);
            let s_mm = pick(mis, mis);
            let s_mo = pick(mis, obs);
            let s_oo = pick(obs, obs);
            // Regression coefficients Σ_MO Σ_OO⁻¹ and the conditional covariance.
            let coef = s_oo
                .cholesky()
                .ok_or(Error::ChainDivergence)?
                .solve(&s_mo.transpose())
                .transpose();
            let mut cond = &s_mm - &coef * s_mo.transpose();
            cond = (&cond + cond.transpose()) * 0.5;
            let l = cond.cholesky().ok_or(Error::ChainDivergence)?.l();
            for &i in rows {
                let dev = DVector::from_iterator(obs.len(), obs.iter().map(|&s| y[(i, s)] - mu[s]));
                let mean = &coef * dev;
                let z = DVector::from_iterator(mis.len(), (0..mis.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let draw = mean + &l * z;
                for (k, &s) in mis.iter().enumerate() {
                    let v = mu[s] + draw[k];
                    if !v.is_finite() {
                        return Err(Error::ChainDivergence);
                    }
                    y[(i, s)] = v;
                }
            }
        }
        Ok(())
    }
}

/// Combined estimate of one scalar over `m` imputations.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PooledEstimate {
    pub m: usize,
    pub point: f64,
    /// Mean squared standard error.
    pub within: f64,
    /// Sample variance of the estimates.
    pub between: f64,
    pub total: f64,
    pub se: f64,
    /// Fraction of missing information.
    pub gamma: f64,
    pub relative_efficiency: f64,
}

pub fn pool(estimates: &[f64], ses: &[f64]) -> Result<PooledEstimate> {
    if estimates.len() != ses.len() {
        return Err(Error::LengthMismatch(estimates.len(), ses.len()));
    }
    if estimates.is_empty() {
        return Err(Error::EmptyInput);
    }
    let m = estimates.len();
    let mf = m as f64;
    // Centred on the first estimate so identical inputs give B = 0 exactly.
    let first = estimates[0];
    let point = first + estimates.iter().map(|e| e - first).sum::<f64>() / mf;
    let within = ses.iter().map(|s| s * s).sum::<f64>() / mf;
    let between = if m > 1 {
        estimates.iter().map(|e| (e - point).powi(2)).sum::<f64>() / (mf - 1.0)
    } else {
        0.0
    };
    let inflated = (1.0 + 1.0 / mf) * between;
    let total = within + inflated;
    let gamma = if total > 0.0 { inflated / total } else { 0.0 };
    let mut out = PooledEstimate {
        m,
        point,
        within,
        between,
        total,
        se: total.sqrt(),
        gamma,
        relative_efficiency: 1.0,
    };
    out.relative_efficiency = relative_efficiency(&out, m);
    Ok(out)
}

/// `1 / (1 + γ/m)`.
pub fn relative_efficiency(pooled: &PooledEstimate, m: usize) -> f64 {
    1.0 / (1.0 + pooled.gamma / m as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationOptions {
    pub m: usize,
    pub seed: u64,
    pub burnin: usize,
    pub gap: usize,
}

impl Default for ImputationOptions {
    fn default() -> Self {
        Self {
            m: DEFAULT_M,
            seed: 0,
            burnin: DEFAULT_BURNIN,
            gap: DEFAULT_GAP,
        }
    }
}

/// A model to fit on each completed panel. Single-curve models are fitted
/// to the pooled observations of all sources.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelRequest {
    Exponential {
        t0: Option<f64>,
    },
    Logistic {
        t0: Option<f64>,
    },
    Segmented {
        segments: usize,
        options: SegmentedOptions,
    },
    Lpgcm {
        segments: usize,
        spec: RandomEffectsSpec,
        options: LpgcmOptions,
    },
}

impl ModelRequest {
    pub fn fit(&self, panel: &Panel) -> Result<ModelFit> {
        let obs = panel.observations();
        let t0 = |t: &Option<f64>| t.unwrap_or(f64::from(panel.first_year()));
        Ok(match self {
            ModelRequest::Exponential { t0: t } => ModelFit::Growth(fit_exponential_obs(&obs, t0(t))?),
            ModelRequest::Logistic { t0: t } => ModelFit::Growth(fit_logistic_obs(&obs, t0(t))?),
            ModelRequest::Segmented { segments, options } => {
                ModelFit::Segmented(fit_segmented_obs(&obs, *segments, options)?)
            }
            ModelRequest::Lpgcm {
                segments,
                spec,
                options,
            } => ModelFit::Lpgcm(fit_lpgcm(panel, *segments, spec, options)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelFit {
    Growth(GrowthFit),
    Segmented(SegmentedFit),
    Lpgcm(LpgcmFit),
}

impl ModelFit {
    pub fn converged(&self) -> bool {
        match self {
            ModelFit::Growth(f) => f.converged,
            ModelFit::Segmented(f) => f.converged,
            ModelFit::Lpgcm(f) => f.converged,
        }
    }

    pub fn loglik(&self) -> f64 {
        match self {
            ModelFit::Growth(f) => f.loglik,
            ModelFit::Segmented(f) => f.loglik,
            ModelFit::Lpgcm(f) => f.loglik,
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            ModelFit::Growth(f) => f.n_params(),
            ModelFit::Segmented(f) => f.n_params(),
            ModelFit::Lpgcm(f) => f.n_params(),
        }
    }

    pub fn n_obs(&self) -> usize {
        match self {
            ModelFit::Growth(f) => f.n,
            ModelFit::Segmented(f) => f.n,
            ModelFit::Lpgcm(f) => f.n_total,
        }
    }

    /// Parameter names, estimates and standard errors. Variance components
    /// of the latent growth model carry no standard error (reported as 0),
    /// so their pooled variance is the between-imputation part only.
    pub fn parameters(&self) -> Vec<(String, f64, f64)> {
        match self {
            ModelFit::Growth(f) => {
                let mut names = vec![String::from("b0"), String::from("b1")];
                let mut values = vec![f.b0, f.b1];
                if let Some(k) = f.capacity {
                    names.push("capacity".into());
                    values.push(k);
                }
                names
                    .into_iter()
                    .zip(values)
                    .zip(f.se.iter().copied().chain(core::iter::repeat(f64::NAN)))
                    .map(|((n, v), s)| (n, v, s))
                    .collect()
            }
            ModelFit::Segmented(f) => segmented_parameters(f),
            ModelFit::Lpgcm(f) => {
                let mut out = segmented_parameters(&f.fixed);
                for (e, sd) in f.vc.iter().enumerate() {
                    if let Some(sd) = sd {
                        out.push((format!("sd_u{e}"), *sd, 0.0));
                    }
                }
                if let Some(r) = f.r_u1u0 {
                    out.push(("r_u1u0".into(), r, 0.0));
                }
                out.push(("sigma2_eps".into(), f.sigma2_eps, 0.0));
                out
            }
        }
    }

    /// Predicted log value of one source in a calendar year.
    pub fn predict(&self, source: usize, year: f64) -> f64 {
        match self {
            ModelFit::Growth(f) => f.predict_year(year),
            ModelFit::Segmented(f) => f.predict(year),
            ModelFit::Lpgcm(f) => f.group_predict(source, year),
        }
    }

    pub fn model_name(&self) -> &'static str {
        match self {
            ModelFit::Growth(f) if f.model == GrowthModel::Exponential => "exponential",
            ModelFit::Growth(_) => "logistic",
            ModelFit::Segmented(_) => "segmented",
            ModelFit::Lpgcm(_) => "lpgcm",
        }
    }
}

fn segmented_parameters(f: &SegmentedFit) -> Vec<(String, f64, f64)> {
    f.param_names()
        .into_iter()
        .zip(f.params())
        .zip(f.standard_errors())
        .map(|((n, v), s)| (n, v, s))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledParameter {
    pub name: String,
    pub estimate: PooledEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledFit {
    pub parameters: Vec<PooledParameter>,
    /// Mean prediction across the pooled fits, `[source][year index]`.
    pub predicted: Vec<Vec<f64>>,
    /// Per imputation; `None` where the fit failed or did not converge.
    pub fits: Vec<Option<ModelFit>>,
    /// Indices of imputations left out of the pool, with the reason.
    pub failed: Vec<(usize, Error)>,
    /// Mean log-likelihood of the pooled fits.
    pub mean_loglik: f64,
    pub imputations: ImputationSet,
}

impl PooledFit {
    pub fn parameter(&self, name: &str) -> Option<&PooledEstimate> {
        self.parameters.iter().find(|p| p.name == name).map(|p| &p.estimate)
    }

    pub fn first_fit(&self) -> Option<&ModelFit> {
        self.fits.iter().flatten().next()
    }
}

/// Minimum number of usable fits: `⌈m/2⌉`.
pub fn required_successes(m: usize) -> usize {
    m.div_ceil(2)
}

/// Imputes, fits `request` to every completed panel and pools the results.
pub fn fit_with_imputation(panel: &Panel, request: &ModelRequest, opts: &ImputationOptions) -> Result<PooledFit> {
    let set = impute_mcmc(panel, opts.m, opts.seed, opts.burnin, opts.gap)?;
    let results = set.panels.iter().map(|p| request.fit(p)).collect();
    pool_fits(set, results)
}

/// Pools per-imputation fit results (one per panel of `set`, in order).
/// Non-converged fits count as failures. Fails with `TooManyFailures` when
/// fewer than `⌈m/2⌉` fits are usable.
pub fn pool_fits(set: ImputationSet, results: Vec<Result<ModelFit>>) -> Result<PooledFit> {
    if results.len() != set.m {
        return Err(Error::LengthMismatch(set.m, results.len()));
    }
    let mut fits = Vec::with_capacity(set.m);
    let mut failed = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(f) if f.converged() => fits.push(Some(f)),
            Ok(_) => {
                failed.push((k, Error::NoConvergence("imputation fit")));
                fits.push(None);
            }
            Err(e) => {
                failed.push((k, e));
                fits.push(None);
            }
        }
    }
    let good: Vec<&ModelFit> = fits.iter().flatten().collect();
    if good.is_empty() || good.len() < required_successes(set.m) {
        return Err(Error::TooManyFailures {
            succeeded: good.len(),
            m: set.m,
        });
    }
    let per_fit: Vec<Vec<(String, f64, f64)>> = good.iter().map(|f| f.parameters()).collect();
    let mut parameters = Vec::new();
    for (i, (name, _, _)) in per_fit[0].iter().enumerate() {
        let mut est = Vec::with_capacity(good.len());
        let mut ses = Vec::with_capacity(good.len());
        for pf in &per_fit {
            // Parameter lists agree across fits of one request.
            let (n, v, s) = pf.get(i).ok_or(Error::LengthMismatch(per_fit[0].len(), pf.len()))?;
            if n != name {
                return Err(Error::LengthMismatch(per_fit[0].len(), pf.len()));
            }
            est.push(*v);
            ses.push(*s);
        }
        parameters.push(PooledParameter {
            name: name.clone(),
            estimate: pool(&est, &ses)?,
        });
    }
    let panel = &set.panels[0];
    let k = good.len() as f64;
    let predicted = (0..panel.n_sources())
        .map(|s| {
            panel
                .years()
                .map(|y| good.iter().map(|f| f.predict(s, f64::from(y))).sum::<f64>() / k)
                .collect()
        })
        .collect();
    let mean_loglik = good.iter().map(|f| f.loglik()).sum::<f64>() / k;
    Ok(PooledFit {
        parameters,
        predicted,
        fits,
        failed,
        mean_loglik,
        imputations: set,
    })
}
