//! Turns an ingested panel into the log-cumulative panel the estimators use.

use growthseg_core::{AnnualSeries, Panel, SeriesKind};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Years dropped from the head of every source by default.
pub const DEFAULT_T0_TRIM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    /// Annual counts; cumulated, then logged.
    Raw,
    /// Levels (cumulative counts, GDP); logged.
    Cumulative,
    /// Already log-cumulative.
    Log,
}

impl InputKind {
    pub fn series_kind(self) -> SeriesKind {
        match self {
            InputKind::Raw => SeriesKind::RawAnnual,
            InputKind::Cumulative => SeriesKind::Cumulative,
            InputKind::Log => SeriesKind::LogCumulative,
        }
    }
}

/// Per source: leading zero years dropped and counts cumulated (raw input),
/// logged, then the first `trim` years discarded. Each source keeps its own
/// start; the result is re-aligned on the union of years.
pub fn prepare_series(series: &AnnualSeries, trim: usize) -> Result<AnnualSeries> {
    let logged = match series.kind() {
        SeriesKind::RawAnnual => series.trim_leading_zeros()?.cumulate()?.log_transform()?,
        SeriesKind::Cumulative => series.log_transform()?,
        SeriesKind::LogCumulative => series.clone(),
    };
    Ok(logged.truncate_head(trim)?)
}

pub fn prepare_panel(panel: &Panel, trim: usize) -> Result<Panel> {
    let series = (0..panel.n_sources())
        .map(|s| prepare_series(&panel.source_series(s)?, trim))
        .collect::<Result<Vec<_>>>()?;
    Ok(Panel::align(&series)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_sources_keep_their_own_start() {
        let a: Vec<Option<f64>> = (0..20).map(|i| Some(f64::from(i + 1))).collect();
        let b: Vec<Option<f64>> = (0..20).map(|i| (i >= 8).then_some(2.0)).collect();
        let panel = Panel::new(1900, vec!["a".into(), "b".into()], vec![a, b], SeriesKind::RawAnnual).unwrap();
        let out = prepare_panel(&panel, 5).unwrap();
        assert_eq!(out.first_year(), 1905);
        assert_eq!(out.kind(), SeriesKind::LogCumulative);
        assert_eq!(out.get(1912, 1), None);
        // b starts 1908; five years dropped leaves 1913 with cumulative 12.
        assert!((out.get(1913, 1).unwrap() - 12f64.ln()).abs() < 1e-15);
        assert!((out.get(1905, 0).unwrap() - 21f64.ln()).abs() < 1e-15);
    }
}
