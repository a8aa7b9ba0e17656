//! Load, fit, impute, pool and score: the work behind each subcommand,
//! callable without going through argument parsing.

use std::path::{Path, PathBuf};

use growthseg_core::imputation::{
    impute_mcmc, pool, pool_fits, ImputationSet, ModelFit, ModelRequest, DEFAULT_BURNIN, DEFAULT_GAP,
};
use growthseg_core::mixed::{LpgcmOptions, RandomEffectsSpec};
use growthseg_core::segmented::{lag1_autocorrelation_grouped, segment_rates, SegmentedOptions};
use growthseg_core::selection::{compare, Convention, ModelScore};
use growthseg_core::simulate::{simulate, SimSpec, SourceTruth};
use growthseg_core::{Panel, SeriesKind};
use serde::{Deserialize, Serialize};

use crate::error::{IoError, Result};
use crate::io::{read_fred_csv, read_panel_csv, write_panel_csv};
use crate::prepare::{prepare_panel, prepare_series, InputKind, DEFAULT_T0_TRIM};
use crate::report::{
    CurvePoint, Diagnostics, FitReport, ParameterRow, PoolingRow, RandomEffectReport, SegmentReport, SCHEMA_VERSION,
};

pub const SEED_ENV: &str = "GROWTHSEG_SEED";
/// Normal quantile of the reported prediction band.
const BAND_Z: f64 = 1.959963984540054;

/// `--seed` if given, else `GROWTHSEG_SEED`, else 0.
pub fn effective_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| IoError::Unsupported(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Exp,
    Logistic,
    Segmented,
}

/// Where the data come from and how they are prepared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputConfig {
    pub path: PathBuf,
    /// FRED export rather than a panel CSV.
    pub fred: bool,
    pub kind: InputKind,
    pub t0_trim: usize,
}

impl InputConfig {
    pub fn panel(path: impl Into<PathBuf>, kind: InputKind) -> Self {
        Self {
            path: path.into(),
            fred: false,
            kind,
            t0_trim: DEFAULT_T0_TRIM,
        }
    }

    /// Reads and prepares the log-cumulative panel. FRED files are levels
    /// whatever `kind` says.
    pub fn load(&self) -> Result<Panel> {
        if self.fred {
            let series = prepare_series(&read_fred_csv(&self.path)?, self.t0_trim)?;
            return Ok(Panel::align(&[series])?);
        }
        let raw = read_panel_csv(&self.path, self.kind.series_kind())?;
        prepare_panel(&raw, self.t0_trim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputeConfig {
    pub m: usize,
    pub burnin: usize,
    pub gap: usize,
}

impl ImputeConfig {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            burnin: DEFAULT_BURNIN,
            gap: DEFAULT_GAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub input: Option<InputConfig>,
    pub model: ModelKind,
    /// Ignored for the single-curve models.
    pub segments: usize,
    /// Latent growth model with source-level random effects.
    pub mixed: bool,
    /// Intercept/first-slope covariance in the mixed model.
    pub covariance: bool,
    pub impute: Option<ImputeConfig>,
    pub seed: u64,
}

impl FitConfig {
    pub fn new(model: ModelKind, segments: usize) -> Self {
        Self {
            input: None,
            model,
            segments,
            mixed: false,
            covariance: false,
            impute: None,
            seed: 0,
        }
    }

    pub fn segment_count(&self) -> usize {
        match self.model {
            ModelKind::Segmented => self.segments,
            _ => 1,
        }
    }

    pub fn request(&self) -> Result<ModelRequest> {
        let j = self.segment_count();
        Ok(match (self.model, self.mixed) {
            (ModelKind::Exp, false) => ModelRequest::Exponential { t0: None },
            (ModelKind::Logistic, false) => ModelRequest::Logistic { t0: None },
            (ModelKind::Segmented, false) => ModelRequest::Segmented {
                segments: j,
                options: SegmentedOptions::default(),
            },
            (ModelKind::Logistic, true) => {
                return Err(IoError::Unsupported(
                    "the mixed-effects logistic model is not implemented".into(),
                ))
            }
            (_, true) => ModelRequest::Lpgcm {
                segments: j,
                spec: RandomEffectsSpec::full(j, self.covariance),
                options: LpgcmOptions::default(),
            },
        })
    }

    pub fn describe(&self) -> String {
        let base = match self.model {
            ModelKind::Exp => "exponential growth".to_string(),
            ModelKind::Logistic => "logistic growth".to_string(),
            ModelKind::Segmented => format!(
                "segmented regression, {} segment{}",
                self.segments,
                if self.segments == 1 { "" } else { "s" }
            ),
        };
        let mut out = base;
        if self.mixed {
            out.push_str(", random intercept and slopes");
            if self.covariance {
                out.push_str(", intercept/first-slope covariance");
            }
        }
        if let Some(imp) = &self.impute {
            out.push_str(&format!(", pooled over {} imputations", imp.m));
        }
        out
    }
}

/// Fits each completed panel on its own thread; results keep panel order.
pub fn fit_imputations(set: &ImputationSet, request: &ModelRequest) -> Vec<growthseg_core::Result<ModelFit>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = set.panels.iter().map(|p| scope.spawn(move || request.fit(p))).collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or(Err(growthseg_core::Error::NoConvergence("fit thread")))
            })
            .collect()
    })
}

/// Usable fits, the panels they were fitted on, pooled parameters and the
/// imputation bookkeeping.
struct Fitted {
    fits: Vec<ModelFit>,
    panels: Vec<Panel>,
    parameters: Vec<ParameterRow>,
    set: Option<ImputationSet>,
    failed: Vec<usize>,
}

fn fit_all(panel: &Panel, config: &FitConfig) -> Result<Fitted> {
    let request = config.request()?;
    let Some(imp) = &config.impute else {
        let fit = request.fit(panel)?;
        let parameters = fit
            .parameters()
            .into_iter()
            .map(|(name, estimate, se)| ParameterRow {
                name,
                estimate,
                se,
                pooling: None,
            })
            .collect();
        return Ok(Fitted {
            fits: vec![fit],
            panels: vec![panel.clone()],
            parameters,
            set: None,
            failed: Vec::new(),
        });
    };
    let set = impute_mcmc(panel, imp.m, config.seed, imp.burnin, imp.gap)?;
    let results = fit_imputations(&set, &request);
    let pooled = pool_fits(set, results)?;
    let parameters = pooled
        .parameters
        .iter()
        .map(|p| {
            let e = &p.estimate;
            ParameterRow {
                name: p.name.clone(),
                estimate: e.point,
                se: e.se,
                pooling: Some(PoolingRow {
                    m: e.m,
                    within: e.within,
                    between: e.between,
                    total: e.total,
                    gamma: e.gamma,
                    relative_efficiency: e.relative_efficiency,
                }),
            }
        })
        .collect();
    let mut fits = Vec::new();
    let mut panels = Vec::new();
    for (k, f) in pooled.fits.iter().enumerate() {
        if let Some(f) = f {
            fits.push(f.clone());
            panels.push(pooled.imputations.panels[k].clone());
        }
    }
    Ok(Fitted {
        fits,
        panels,
        parameters,
        failed: pooled.failed.iter().map(|f| f.0).collect(),
        set: Some(pooled.imputations),
    })
}

/// Fitted value, parameter-uncertainty variance and residual variance.
fn band_parts(fit: &ModelFit, source: usize, year: f64) -> (f64, f64, f64) {
    match fit {
        ModelFit::Growth(f) => {
            let (v, lo, _) = f.prediction_interval(year, 1.0);
            (v, ((v - lo).powi(2) - f.sigma2).max(0.0), f.sigma2)
        }
        ModelFit::Segmented(f) => {
            let (v, lo, _) = f.prediction_interval(year, 1.0);
            (v, ((v - lo).powi(2) - f.sigma2).max(0.0), f.sigma2)
        }
        ModelFit::Lpgcm(f) => {
            let (v, lo, _) = f.fixed.prediction_interval(year, 1.0);
            let pvar = ((v - lo).powi(2) - f.fixed.sigma2).max(0.0);
            (f.group_predict(source, year), pvar, f.sigma2_eps)
        }
    }
}

fn sse_of(fit: &ModelFit) -> Option<f64> {
    match fit {
        ModelFit::Growth(f) => Some(f.sse()),
        ModelFit::Segmented(f) => Some(f.sse),
        ModelFit::Lpgcm(_) => None,
    }
}

/// BIC rows for a set of fits of one model (means over imputations).
fn scores(id: &str, fits: &[ModelFit]) -> Result<Vec<ModelScore>> {
    let k = fits.len() as f64;
    let first = &fits[0];
    let loglik = fits.iter().map(ModelFit::loglik).sum::<f64>() / k;
    let n = first.n_obs();
    let converged = fits.iter().all(ModelFit::converged);
    Ok(match first {
        ModelFit::Lpgcm(_) => vec![ModelScore::from_loglik(id, loglik, first.n_params(), n, converged)?],
        _ => {
            let sse = fits.iter().filter_map(sse_of).sum::<f64>() / k;
            vec![
                ModelScore::from_loglik(id, loglik, first.n_params() + 1, n, converged)?,
                ModelScore::from_sse(id, sse, first.n_params(), n, converged)?,
            ]
        }
    })
}

/// Fits `config` to a prepared log-cumulative panel.
pub fn fit_panel(panel: &Panel, config: &FitConfig) -> Result<FitReport> {
    if panel.kind() != SeriesKind::LogCumulative {
        return Err(IoError::Unsupported("fit_panel expects a log-cumulative panel".into()));
    }
    let fitted = fit_all(panel, config)?;
    let first = &fitted.fits[0];
    let estimate = |name: &str| fitted.parameters.iter().find(|p| p.name == name).map(|p| p.estimate);
    let j = config.segment_count();
    let slopes: Vec<f64> = match first {
        ModelFit::Growth(_) => vec![estimate("b1").unwrap_or(f64::NAN)],
        _ => (1..=j)
            .map(|k| estimate(&format!("b{k}")).unwrap_or(f64::NAN))
            .collect(),
    };
    let breakpoints: Vec<f64> = (1..j).map(|k| estimate(&format!("a{k}")).unwrap_or(f64::NAN)).collect();
    let mut edges = vec![f64::from(panel.first_year())];
    edges.extend(&breakpoints);
    edges.push(f64::from(panel.last_year()));
    let segments = segment_rates(&slopes)
        .into_iter()
        .enumerate()
        .map(|(k, r)| SegmentReport {
            segment: k + 1,
            from_year: edges[k],
            to_year: edges[k + 1],
            slope: r.slope,
            growth_rate: r.growth_rate,
            doubling_time: r.doubling_time,
            doubling_time_slope_as_rate: r.doubling_time_slope_as_rate,
        })
        .collect();

    let mut curves = Vec::with_capacity(panel.n_sources() * panel.n_years());
    for (s, source) in panel.sources().iter().enumerate() {
        for (i, year) in panel.years().enumerate() {
            let parts: Vec<(f64, f64, f64)> = fitted.fits.iter().map(|f| band_parts(f, s, f64::from(year))).collect();
            let values: Vec<f64> = parts.iter().map(|p| p.0).collect();
            let ses: Vec<f64> = parts.iter().map(|p| p.1.sqrt()).collect();
            let pooled = pool(&values, &ses)?;
            let sigma2 = parts.iter().map(|p| p.2).sum::<f64>() / parts.len() as f64;
            let half = BAND_Z * (sigma2 + pooled.total).sqrt();
            let original = panel.column(s)[i];
            let imputed = original.is_none() && fitted.set.is_some();
            let observed = original.or_else(|| {
                imputed.then(|| {
                    let cells: Vec<f64> = fitted.panels.iter().filter_map(|p| p.column(s)[i]).collect();
                    cells.iter().sum::<f64>() / cells.len() as f64
                })
            });
            curves.push(CurvePoint {
                source: source.clone(),
                year,
                observed,
                fitted: pooled.point,
                lower: pooled.point - half,
                upper: pooled.point + half,
                imputed,
            });
        }
    }

    let mut diagnostics = Diagnostics {
        converged: fitted.fits.iter().all(ModelFit::converged),
        failed_imputations: fitted.failed.clone(),
        monotonicity_violations: fitted.set.as_ref().map(ImputationSet::monotonicity_violations),
        ..Diagnostics::default()
    };
    let mut random_effects = Vec::new();
    let mut r_u1u0 = None;
    match first {
        ModelFit::Growth(f) => {
            let groups = fitted.panels[0].observations().groups;
            diagnostics.lag1_autocorrelation = lag1_autocorrelation_grouped(&f.residuals, &groups).ok();
        }
        ModelFit::Segmented(f) => {
            diagnostics.lag1_autocorrelation = f.residual_lag1_autocorr().ok();
            diagnostics.continuity_gap = Some(f.continuity_gap());
        }
        ModelFit::Lpgcm(f) => {
            diagnostics.lag1_autocorrelation = f.fixed.residual_lag1_autocorr().ok();
            diagnostics.continuity_gap = Some(f.fixed.continuity_gap());
            let lp: Vec<_> = fitted
                .fits
                .iter()
                .filter_map(|x| match x {
                    ModelFit::Lpgcm(l) => Some(l),
                    _ => None,
                })
                .collect();
            diagnostics.boundary_variances = (0..f.boundary.variances.len())
                .map(|e| lp.iter().any(|l| l.boundary.variances[e]))
                .collect();
            diagnostics.boundary_correlation = lp.iter().any(|l| l.boundary.correlation);
            for (e, sd) in f.vc.iter().enumerate() {
                if sd.is_some() {
                    let mean = |v: &dyn Fn(&growthseg_core::LpgcmFit) -> f64| {
                        lp.iter().map(|l| v(l)).sum::<f64>() / lp.len() as f64
                    };
                    random_effects.push(RandomEffectReport {
                        effect: if e == 0 {
                            "intercept".into()
                        } else {
                            format!("slope {e}")
                        },
                        sd: mean(&|l| l.vc[e].unwrap_or(0.0)),
                        sd_scaled: mean(&|l| l.vc_scaled[e].unwrap_or(0.0)),
                    });
                }
            }
            r_u1u0 = estimate("r_u1u0");
            diagnostics
                .notes
                .push("prediction band omits the uncertainty of the predicted source deviations".into());
        }
    }

    let model_id = format!("{:?} J={}", config.model, j).to_lowercase();
    Ok(FitReport {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        seed: config.seed,
        model: config.describe(),
        n_obs: first.n_obs(),
        first_year: panel.first_year(),
        last_year: panel.last_year(),
        sources: panel.sources().to_vec(),
        parameters: fitted.parameters,
        segments,
        breakpoints,
        random_effects,
        r_u1u0,
        bic: scores(&model_id, &fitted.fits)?,
        curves,
        diagnostics,
    })
}

/// Loads `config.input` and fits it.
pub fn run_fit(config: &FitConfig) -> Result<FitReport> {
    let input = config
        .input
        .as_ref()
        .ok_or_else(|| IoError::Unsupported("no input given".into()))?;
    fit_panel(&input.load()?, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Menu {
    /// Segmented fits for each J in the range.
    Segments,
    /// Exponential, logistic, then segmented J = 2.. (MSE criterion).
    Single,
    /// Fixed and mixed exponential, then mixed segmented J = 2..5.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub input: Option<InputConfig>,
    pub menu: Menu,
    pub jmin: usize,
    pub jmax: usize,
    /// For the segment sweep: latent growth model instead of pooled fits.
    pub mixed: bool,
    pub covariance: bool,
    pub impute: Option<ImputeConfig>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub model_id: String,
    pub description: String,
    pub segments: usize,
    pub score: Option<ModelScore>,
    pub rank: Option<usize>,
    pub delta: Option<f64>,
    pub best: bool,
    pub equivalent_to_best: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub config: CompareConfig,
    pub seed: u64,
    pub convention: Convention,
    pub best: Option<String>,
    pub rows: Vec<CompareRow>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl CompareReport {
    pub fn best_segments(&self) -> Option<usize> {
        self.rows.iter().find(|r| r.best).map(|r| r.segments)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(std::io::Error::from)?;
        w.write_record([
            "model_id",
            "description",
            "segments",
            "p",
            "n",
            "loglik",
            "mse",
            "bic",
            "delta",
            "rank",
            "converged",
            "best",
            "equivalent_to_best",
            "error",
        ])
        .map_err(std::io::Error::from)?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for r in &self.rows {
            let s = r.score.as_ref();
            w.write_record([
                r.model_id.clone(),
                r.description.clone(),
                r.segments.to_string(),
                s.map_or_else(String::new, |s| s.p.to_string()),
                s.map_or_else(String::new, |s| s.n.to_string()),
                opt(s.and_then(|s| s.loglik)),
                opt(s.and_then(|s| s.mse)),
                opt(s.map(|s| s.bic)),
                opt(r.delta),
                r.rank.map_or_else(String::new, |k| k.to_string()),
                s.map_or_else(String::new, |s| s.converged.to_string()),
                if r.best { "*".into() } else { String::new() },
                r.equivalent_to_best.to_string(),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(std::io::Error::from)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Candidate {
    id: String,
    description: String,
    segments: usize,
    config: FitConfig,
}

fn candidates(config: &CompareConfig) -> (Vec<Candidate>, Convention, Vec<String>) {
    let base = |model, j| FitConfig {
        input: None,
        model,
        segments: j,
        mixed: false,
        covariance: false,
        impute: config.impute.clone(),
        seed: config.seed,
    };
    let mut out = Vec::new();
    let mut notes = Vec::new();
    let mut push = |id: String, segments, c: FitConfig| {
        out.push(Candidate {
            id,
            description: c.describe(),
            segments,
            config: c,
        })
    };
    let convention = match config.menu {
        Menu::Segments => {
            for j in config.jmin..=config.jmax {
                let mut c = base(ModelKind::Segmented, j);
                c.mixed = config.mixed;
                c.covariance = config.covariance;
                push(format!("J={j:02}"), j, c);
            }
            if config.mixed {
                Convention::Loglik
            } else {
                Convention::Mse
            }
        }
        Menu::Single => {
            push("M1".into(), 1, base(ModelKind::Exp, 1));
            push("M2".into(), 1, base(ModelKind::Logistic, 1));
            for j in config.jmin.max(2)..=config.jmax {
                push(format!("M{}", j + 1), j, base(ModelKind::Segmented, j));
            }
            Convention::Mse
        }
        Menu::Mixed => {
            let mixed = |model, j, cov| {
                let mut c = base(model, j);
                c.mixed = true;
                c.covariance = cov;
                c
            };
            push("M1".into(), 1, base(ModelKind::Exp, 1));
            push("M2".into(), 1, mixed(ModelKind::Exp, 1, false));
            push("M3".into(), 1, mixed(ModelKind::Exp, 1, true));
            notes.push("M4 (mixed logistic growth) is not implemented and is skipped".into());
            push("M5".into(), 2, mixed(ModelKind::Segmented, 2, false));
            push("M6".into(), 2, mixed(ModelKind::Segmented, 2, true));
            for j in 3..=5 {
                push(format!("M{}", j + 4), j, mixed(ModelKind::Segmented, j, true));
            }
            Convention::Loglik
        }
    };
    (out, convention, notes)
}

fn score_candidate(panel: &Panel, c: &Candidate, convention: Convention) -> Result<ModelScore> {
    // The fixed-effects exponential in the mixed menu is scored as a mixed
    // model without random effects so all rows share one convention.
    if convention == Convention::Loglik && !c.config.mixed {
        let request = ModelRequest::Lpgcm {
            segments: c.segments,
            spec: RandomEffectsSpec::none(c.segments),
            options: LpgcmOptions::default(),
        };
        let fit = request.fit(panel)?;
        return Ok(scores(&c.id, &[fit])?.remove(0));
    }
    let fitted = fit_all(panel, &c.config)?;
    let all = scores(&c.id, &fitted.fits)?;
    all.into_iter()
        .find(|s| s.convention() == convention)
        .ok_or_else(|| IoError::Unsupported(format!("{} has no {convention:?} score", c.id)))
}

/// Scores every candidate of the menu on a prepared panel; candidates run
/// on separate threads.
pub fn compare_panel(panel: &Panel, config: &CompareConfig) -> Result<CompareReport> {
    if config.jmin == 0 || config.jmax < config.jmin {
        return Err(IoError::Unsupported(format!(
            "segment range {}..{} is empty",
            config.jmin, config.jmax
        )));
    }
    let (cands, convention, notes) = candidates(config);
    let results: Vec<Result<ModelScore>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cands
            .iter()
            .map(|c| scope.spawn(move || score_candidate(panel, c, convention)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(IoError::Unsupported("fit thread panicked".into())))
            })
            .collect()
    });
    let ok: Vec<ModelScore> = results.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
    let ranking = if ok.is_empty() { Vec::new() } else { compare(&ok)? };
    let best = ranking.first().map(|r| r.score.model_id.clone());
    let rows = cands
        .iter()
        .zip(results)
        .map(|(c, r)| {
            let ranked = ranking.iter().find(|x| x.score.model_id == c.id);
            CompareRow {
                model_id: c.id.clone(),
                description: c.description.clone(),
                segments: c.segments,
                rank: ranked.map(|x| x.rank),
                delta: ranked.map(|x| x.delta),
                best: best.as_deref() == Some(c.id.as_str()),
                equivalent_to_best: ranked.is_some_and(|x| x.equivalent_to_best),
                error: r.as_ref().err().map(|e| e.to_string()),
                score: r.ok(),
            }
        })
        .collect();
    Ok(CompareReport {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        seed: config.seed,
        convention,
        best,
        rows,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub schema_version: u32,
    pub spec: SimSpec,
    pub truth: Vec<SourceTruth>,
}

/// Writes the simulated log-cumulative panel and its ground truth.
pub fn simulate_to_files(spec: &SimSpec, panel_path: &Path, truth_path: Option<&Path>) -> Result<Panel> {
    let sim = simulate(spec)?;
    write_panel_csv(&sim.panel, panel_path)?;
    if let Some(path) = truth_path {
        let truth = TruthFile {
            schema_version: SCHEMA_VERSION,
            spec: spec.clone(),
            truth: sim.truth,
        };
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &truth)?;
    }
    Ok(sim.panel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationSummary {
    pub schema_version: u32,
    pub seed: u64,
    pub m: usize,
    pub burnin: usize,
    pub gap: usize,
    pub imputed_cells: usize,
    pub monotonicity_violations: usize,
    pub files: Vec<PathBuf>,
    pub trace: Vec<growthseg_core::imputation::ChainSummary>,
}

/// Writes `imputation_<k>.csv` (log-cumulative values) for each completed
/// panel and `imputation.json` into `dir`.
pub fn impute_to_dir(panel: &Panel, config: &ImputeConfig, seed: u64, dir: &Path) -> Result<ImputationSummary> {
    let set = impute_mcmc(panel, config.m, seed, config.burnin, config.gap)?;
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(set.m);
    for (k, p) in set.panels.iter().enumerate() {
        let path = dir.join(format!("imputation_{}.csv", k + 1));
        write_panel_csv(p, &path)?;
        files.push(path);
    }
    let summary = ImputationSummary {
        schema_version: SCHEMA_VERSION,
        seed,
        m: set.m,
        burnin: set.burnin,
        gap: set.gap,
        imputed_cells: set.imputed_count(),
        monotonicity_violations: set.monotonicity_violations(),
        files,
        trace: set.trace.clone(),
    };
    let file = std::fs::File::create(dir.join("imputation.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &summary)?;
    Ok(summary)
}
