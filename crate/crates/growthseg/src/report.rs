//! Self-contained fit reports (JSON) and their plot-ready long form (CSV).

use std::io::Write;
use std::path::Path;

use growthseg_core::selection::ModelScore;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::pipeline::FitConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    /// Present when the estimate is pooled over imputations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<PoolingRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolingRow {
    pub m: usize,
    pub within: f64,
    pub between: f64,
    pub total: f64,
    pub gamma: f64,
    pub relative_efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub segment: usize,
    pub from_year: f64,
    pub to_year: f64,
    pub slope: f64,
    /// `e^b − 1`.
    pub growth_rate: f64,
    /// `ln 2 / b`.
    pub doubling_time: Option<f64>,
    /// `ln 2 / ln(1 + b)`.
    pub doubling_time_slope_as_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub source: String,
    pub year: i32,
    /// Observed value, or the mean imputed value where `imputed`.
    pub observed: Option<f64>,
    pub fitted: f64,
    pub lower: f64,
    pub upper: f64,
    pub imputed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEffectReport {
    pub effect: String,
    pub sd: f64,
    pub sd_scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub converged: bool,
    pub lag1_autocorrelation: Option<f64>,
    pub continuity_gap: Option<f64>,
    #[serde(default)]
    pub boundary_variances: Vec<bool>,
    #[serde(default)]
    pub boundary_correlation: bool,
    pub monotonicity_violations: Option<usize>,
    #[serde(default)]
    pub failed_imputations: Vec<usize>,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub tool_version: String,
    /// Everything needed to re-run the fit.
    pub config: FitConfig,
    /// Effective root seed.
    pub seed: u64,
    pub model: String,
    pub n_obs: usize,
    pub first_year: i32,
    pub last_year: i32,
    pub sources: Vec<String>,
    pub parameters: Vec<ParameterRow>,
    pub segments: Vec<SegmentReport>,
    pub breakpoints: Vec<f64>,
    #[serde(default)]
    pub random_effects: Vec<RandomEffectReport>,
    pub r_u1u0: Option<f64>,
    pub bic: Vec<ModelScore>,
    pub curves: Vec<CurvePoint>,
    pub diagnostics: Diagnostics,
}

impl FitReport {
    pub fn parameter(&self, name: &str) -> Option<&ParameterRow> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Long-form rows `year,source,observed,fitted,lower,upper,imputed_flag`,
/// sources in report order, years ascending within each source.
pub fn write_plot_csv<W: Write>(report: &FitReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["year", "source", "observed", "fitted", "lower", "upper", "imputed_flag"])
        .map_err(std::io::Error::from)?;
    for p in &report.curves {
        w.write_record([
            p.year.to_string(),
            p.source.clone(),
            p.observed.map_or_else(String::new, |v| v.to_string()),
            p.fitted.to_string(),
            p.lower.to_string(),
            p.upper.to_string(),
            u8::from(p.imputed).to_string(),
        ])
        .map_err(std::io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}
