//! Schwarz criterion on the log-likelihood or on the mean squared error,
//! model ranking, and choice of the number of segments.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::growth::GrowthFit;
use crate::mixed::{fit_lpgcm, LpgcmFit, LpgcmOptions, RandomEffectsSpec};
use crate::segmented::{fit_segmented_obs, SegmentedFit, SegmentedOptions};
use crate::series::{Observations, Panel};

/// Models within this BIC distance of the best are reported as equivalent.
pub const EQUIVALENCE_THRESHOLD: f64 = 2.0;

/// `−2·loglik + p·ln(n)`.
pub fn bic_loglik(loglik: f64, p: usize, n: usize) -> f64 {
    -2.0 * loglik + p as f64 * (n as f64).ln()
}

/// `n·ln(sse/n) + p·ln(n)`.
pub fn bic_mse(sse: f64, p: usize, n: usize) -> Result<f64> {
    if !(sse > 0.0) {
        return Err(Error::NonPositiveSse);
    }
    if n <= p {
        return Err(Error::TooShort { needed: p, got: n });
    }
    let nf = n as f64;
    Ok(nf * (sse / nf).ln() + p as f64 * nf.ln())
}

/// Which quantity feeds the criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Convention {
    /// Parameter count includes the residual variance.
    Loglik,
    /// Parameter count covers the mean model only.
    Mse,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelScore {
    pub model_id: String,
    pub p: usize,
    pub n: usize,
    pub loglik: Option<f64>,
    pub mse: Option<f64>,
    pub bic: f64,
    pub converged: bool,
}

impl ModelScore {
    pub fn from_loglik(model_id: impl Into<String>, loglik: f64, p: usize, n: usize, converged: bool) -> Result<Self> {
        check_counts(p, n)?;
        Ok(Self {
            model_id: model_id.into(),
            p,
            n,
            loglik: Some(loglik),
            mse: None,
            bic: bic_loglik(loglik, p, n),
            converged,
        })
    }

    pub fn from_sse(model_id: impl Into<String>, sse: f64, p: usize, n: usize, converged: bool) -> Result<Self> {
        check_counts(p, n)?;
        Ok(Self {
            model_id: model_id.into(),
            p,
            n,
            loglik: None,
            mse: Some(sse / n as f64),
            bic: bic_mse(sse, p, n)?,
            converged,
        })
    }

    pub fn convention(&self) -> Convention {
        if self.loglik.is_some() {
            Convention::Loglik
        } else {
            Convention::Mse
        }
    }

    pub fn of_growth(model_id: impl Into<String>, fit: &GrowthFit, convention: Convention) -> Result<Self> {
        match convention {
            Convention::Loglik => Self::from_loglik(model_id, fit.loglik, fit.n_params() + 1, fit.n, fit.converged),
            Convention::Mse => Self::from_sse(model_id, fit.sse(), fit.n_params(), fit.n, fit.converged),
        }
    }

    pub fn of_segmented(model_id: impl Into<String>, fit: &SegmentedFit, convention: Convention) -> Result<Self> {
        match convention {
            Convention::Loglik => Self::from_loglik(model_id, fit.loglik, fit.n_params() + 1, fit.n, fit.converged),
            Convention::Mse => Self::from_sse(model_id, fit.sse, fit.n_params(), fit.n, fit.converged),
        }
    }

    /// Always log-likelihood based; `n` is the total observation count.
    pub fn of_lpgcm(model_id: impl Into<String>, fit: &LpgcmFit) -> Result<Self> {
        Self::from_loglik(model_id, fit.loglik, fit.n_params(), fit.n_total, fit.converged)
    }
}

fn check_counts(p: usize, n: usize) -> Result<()> {
    if p == 0 {
        return Err(Error::NotComputable("BIC needs at least one parameter"));
    }
    if n <= p {
        return Err(Error::TooShort { needed: p, got: n });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Ranked {
    pub score: ModelScore,
    /// 1-based.
    pub rank: usize,
    /// BIC minus the best converged BIC.
    pub delta: f64,
    /// Converged and within [`EQUIVALENCE_THRESHOLD`] of the best.
    pub equivalent_to_best: bool,
}

/// Ascending BIC; non-converged models after all converged ones; ties by id.
pub fn compare(scores: &[ModelScore]) -> Result<Vec<Ranked>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    let convention = scores[0].convention();
    if scores.iter().any(|s| s.convention() != convention) {
        return Err(Error::MixedConvention);
    }
    let mut sorted: Vec<&ModelScore> = scores.iter().collect();
    sorted.sort_by(|a, b| {
        b.converged
            .cmp(&a.converged)
            .then(a.bic.total_cmp(&b.bic))
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
    let best = sorted.iter().find(|s| s.converged).map_or(sorted[0].bic, |s| s.bic);
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let delta = s.bic - best;
            Ranked {
                score: s.clone(),
                rank: i + 1,
                delta,
                equivalent_to_best: s.converged && delta < EQUIVALENCE_THRESHOLD,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRow<T> {
    pub segments: usize,
    pub outcome: Result<(T, ModelScore)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentChoice<T> {
    pub best: usize,
    pub rows: Vec<SegmentRow<T>>,
    pub ranking: Vec<Ranked>,
}

impl<T> SegmentChoice<T> {
    pub fn best_fit(&self) -> Option<&T> {
        self.rows
            .iter()
            .find(|r| r.segments == self.best)
            .and_then(|r| r.outcome.as_ref().ok())
            .map(|(t, _)| t)
    }
}

/// Fits every `J` in `jmin..=jmax` with `fit` and picks the lowest BIC.
/// Failed fits stay in the table with their error.
pub fn select_segments<T, F>(jmin: usize, jmax: usize, mut fit: F) -> Result<SegmentChoice<T>>
where
    F: FnMut(usize) -> Result<(T, ModelScore)>,
{
    if jmin == 0 || jmax < jmin {
        return Err(Error::InvalidSpec(format!("segment range {jmin}..={jmax}")));
    }
    let rows: Vec<SegmentRow<T>> = (jmin..=jmax)
        .map(|j| SegmentRow {
            segments: j,
            outcome: fit(j),
        })
        .collect();
    let scores: Vec<ModelScore> = rows
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok().map(|(_, s)| s.clone()))
        .collect();
    if scores.is_empty() {
        return Err(Error::AllFitsFailed);
    }
    let ranking = compare(&scores)?;
    let best_id = &ranking[0].score.model_id;
    let best = rows
        .iter()
        .find(|r| matches!(&r.outcome, Ok((_, s)) if &s.model_id == best_id))
        .map_or(jmin, |r| r.segments);
    Ok(SegmentChoice { best, rows, ranking })
}

/// Segment-count sweep of a single pooled series scored by the MSE BIC
/// (`p = 2J`). SSE is floored at a residual RMS of 1e-9 times the largest
/// |value|, so fits that are exact up to rounding tie on fit and the
/// penalty decides.
pub fn select_segments_obs(
    obs: &Observations,
    jmin: usize,
    jmax: usize,
    opts: &SegmentedOptions,
) -> Result<SegmentChoice<SegmentedFit>> {
    let scale = obs.values.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    let floor = obs.len() as f64 * (1e-9 * scale).powi(2);
    select_segments(jmin, jmax, |j| {
        let fit = fit_segmented_obs(obs, j, opts)?;
        let score = ModelScore::from_sse(segment_id(j), fit.sse.max(floor), fit.n_params(), fit.n, fit.converged)?;
        Ok((fit, score))
    })
}

/// Segment-count sweep of the latent growth model scored by the
/// log-likelihood BIC; `spec_for(J)` gives the random effects for `J`.
pub fn select_segments_lpgcm<S>(
    panel: &Panel,
    jmin: usize,
    jmax: usize,
    spec_for: S,
    opts: &LpgcmOptions,
) -> Result<SegmentChoice<LpgcmFit>>
where
    S: Fn(usize) -> RandomEffectsSpec,
{
    select_segments(jmin, jmax, |j| {
        let fit = fit_lpgcm(panel, j, &spec_for(j), opts)?;
        let score = ModelScore::of_lpgcm(segment_id(j), &fit)?;
        Ok((fit, score))
    })
}

/// `J=<j>`; zero-padded so ids sort like their counts.
fn segment_id(j: usize) -> String {
    format!("J={j:02}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_anchors() {
        assert!((bic_loglik(0.0, 1, 7) - 7f64.ln()).abs() < 1e-15);
        assert!((bic_loglik(-1.5, 2, 10) - (3.0 + 2.0 * 10f64.ln())).abs() < 1e-12);
        assert!((bic_loglik(-3.0, 5, 100) - bic_loglik(-3.0, 4, 100) - 100f64.ln()).abs() < 1e-12);
        let a = bic_mse(2.0, 3, 50).unwrap();
        let b = bic_mse(1.0, 3, 50).unwrap();
        assert!((a - b - 50.0 * 2f64.ln()).abs() < 1e-10);
        assert!(bic_mse(1.0, 4, 50).unwrap() > b);
        assert_eq!(bic_mse(0.0, 2, 10), Err(Error::NonPositiveSse));
    }
}
