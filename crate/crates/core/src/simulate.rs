//! Seeded synthetic panels drawn from the exponential, logistic and
//! segmented mean models, with optional per-source random effects and
//! coverage windows. Used as the ground-truth oracle in tests.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::growth::logistic_value;
use crate::segmented::segmented_design;
use crate::series::{Panel, SeriesKind};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum SimModel {
    Exponential {
        b0: f64,
        b1: f64,
    },
    Logistic {
        b0: f64,
        b1: f64,
        capacity: f64,
    },
    Segmented {
        b0: f64,
        slopes: Vec<f64>,
        breakpoints: Vec<f64>,
    },
}

/// Observed year window of one source (inclusive).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SourceSpec {
    pub id: String,
    pub first_year: i32,
    pub last_year: i32,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RandomEffectsSim {
    pub sd_intercept: f64,
    /// SD of each segment's slope deviation; missing entries are zero.
    pub sd_slopes: Vec<f64>,
    /// Correlation between the intercept and first-segment slope deviations.
    pub corr_intercept_slope1: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimSpec {
    pub model: SimModel,
    pub t0: i32,
    pub t_end: i32,
    /// Residual SD on the log scale.
    pub noise_sd: f64,
    /// Empty means a single source `s1` observed over `[t0, t_end]`.
    #[cfg_attr(feature = "serde", serde(default))]
    pub sources: Vec<SourceSpec>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub random_effects: Option<RandomEffectsSim>,
    pub seed: u64,
}

/// Realised per-source deviations.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SourceTruth {
    pub id: String,
    pub intercept_deviation: f64,
    pub slope_deviations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub panel: Panel,
    pub truth: Vec<SourceTruth>,
    /// Noise-free log means per source and year.
    pub means: Vec<Vec<f64>>,
}

impl SimModel {
    fn segments(&self) -> usize {
        match self {
            SimModel::Segmented { slopes, .. } => slopes.len(),
            _ => 1,
        }
    }

    fn mean(&self, year: f64, t0: f64, du0: f64, dslopes: &[f64]) -> f64 {
        let dslope = |k: usize| dslopes.get(k).copied().unwrap_or(0.0);
        match self {
            SimModel::Exponential { b0, b1 } => b0 + du0 + (b1 + dslope(0)) * (year - t0),
            SimModel::Logistic { b0, b1, capacity } => {
                logistic_value(b0 + du0, b1 + dslope(0), capacity + du0, year - t0)
            }
            SimModel::Segmented {
                b0,
                slopes,
                breakpoints,
            } => {
                let basis = segmented_design(year, breakpoints, t0).unwrap_or_default();
                b0 + du0
                    + basis
                        .iter()
                        .enumerate()
                        .map(|(k, b)| (slopes[k] + dslope(k)) * b)
                        .sum::<f64>()
            }
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.into()));
        if self.t_end <= self.t0 {
            return bad("t_end must follow t0");
        }
        if !(self.noise_sd >= 0.0) {
            return bad("noise_sd must be non-negative");
        }
        match &self.model {
            SimModel::Logistic { b0, capacity, .. } if !(capacity > b0) => {
                return bad("logistic capacity must exceed b0");
            }
            SimModel::Segmented {
                slopes, breakpoints, ..
            } => {
                if slopes.len() != breakpoints.len() + 1 {
                    return bad("need one more slope than breakpoints");
                }
                let mut prev = f64::from(self.t0);
                for &a in breakpoints {
                    if !(a > prev) {
                        return bad("breakpoints must increase after t0");
                    }
                    prev = a;
                }
                if prev >= f64::from(self.t_end) {
                    return bad("breakpoints must precede t_end");
                }
            }
            _ => {}
        }
        for s in &self.sources {
            if s.first_year < self.t0 || s.last_year > self.t_end || s.first_year > s.last_year {
                return Err(Error::InvalidSpec(format!(
                    "coverage of `{}` lies outside [t0, t_end]",
                    s.id
                )));
            }
        }
        if let Some(re) = &self.random_effects {
            if !(re.sd_intercept >= 0.0) || re.sd_slopes.iter().any(|s| !(*s >= 0.0)) {
                return bad("random-effect SDs must be non-negative");
            }
            if !(re.corr_intercept_slope1.abs() <= 1.0) {
                return bad("correlation must lie in [-1, 1]");
            }
            if re.sd_slopes.len() > self.model.segments() {
                return bad("more slope SDs than segments");
            }
        }
        Ok(())
    }
}

/// Draws a log-cumulative panel from `spec`. Deterministic in `spec.seed`;
/// noise is drawn for every year of every source before coverage masking,
/// so changing a coverage window never changes the other cells.
pub fn simulate(spec: &SimSpec) -> Result<Simulated> {
    spec.validate()?;
    let sources = if spec.sources.is_empty() {
        vec![SourceSpec {
            id: "s1".into(),
            first_year: spec.t0,
            last_year: spec.t_end,
        }]
    } else {
        spec.sources.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let segments = spec.model.segments();
    let truth: Vec<SourceTruth> = sources
        .iter()
        .map(|s| {
            let (du0, dslopes) = match &spec.random_effects {
                None => (0.0, vec![0.0; segments]),
                Some(re) => draw_effects(&mut rng, re, segments),
            };
            SourceTruth {
                id: s.id.clone(),
                intercept_deviation: du0,
                slope_deviations: dslopes,
            }
        })
        .collect();
    let t0 = f64::from(spec.t0);
    let n_years = (spec.t_end - spec.t0 + 1) as usize;
    let mut means = Vec::with_capacity(sources.len());
    let mut columns = Vec::with_capacity(sources.len());
    for (s, tr) in sources.iter().zip(&truth) {
        let mut mean_col = Vec::with_capacity(n_years);
        let mut col = Vec::with_capacity(n_years);
        for i in 0..n_years {
            let year = spec.t0 + i as i32;
            let mu = spec
                .model
                .mean(f64::from(year), t0, tr.intercept_deviation, &tr.slope_deviations);
            let z: f64 = rng.sample(StandardNormal);
            let v = mu + spec.noise_sd * z;
            if !v.is_finite() {
                return Err(Error::InvalidSpec("non-finite simulated value".into()));
            }
            mean_col.push(mu);
            col.push((year >= s.first_year && year <= s.last_year).then_some(v));
        }
        means.push(mean_col);
        columns.push(col);
    }
    let ids = sources.iter().map(|s| s.id.clone()).collect();
    let panel =
        Panel::new(spec.t0, ids, columns, SeriesKind::LogCumulative).map_err(|e| Error::InvalidSpec(format!("{e}")))?;
    Ok(Simulated { panel, truth, means })
}

fn draw_effects<R: Rng>(rng: &mut R, re: &RandomEffectsSim, segments: usize) -> (f64, Vec<f64>) {
    let z0: f64 = rng.sample(StandardNormal);
    let mut slopes = vec![0.0; segments];
    for (k, slot) in slopes.iter_mut().enumerate() {
        let z: f64 = rng.sample(StandardNormal);
        let sd = re.sd_slopes.get(k).copied().unwrap_or(0.0);
        *slot = if k == 0 {
            let r = re.corr_intercept_slope1;
            sd * (r * z0 + (1.0 - r * r).max(0.0).sqrt() * z)
        } else {
            sd * z
        };
    }
    (re.sd_intercept * z0, slopes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_spec(noise: f64, seed: u64) -> SimSpec {
        SimSpec {
            model: SimModel::Exponential { b0: 2.0, b1: 0.05 },
            t0: 1900,
            t_end: 1999,
            noise_sd: noise,
            sources: vec![],
            random_effects: None,
            seed,
        }
    }

    #[test]
    fn noiseless_line() {
        let sim = simulate(&exp_spec(0.0, 1)).unwrap();
        let col = sim.panel.column(0);
        for (i, v) in col.iter().enumerate() {
            assert!((v.unwrap() - (2.0 + 0.05 * i as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn seed_determinism() {
        assert_eq!(
            simulate(&exp_spec(0.2, 7)).unwrap(),
            simulate(&exp_spec(0.2, 7)).unwrap()
        );
        assert_ne!(
            simulate(&exp_spec(0.2, 7)).unwrap(),
            simulate(&exp_spec(0.2, 8)).unwrap()
        );
    }

    #[test]
    fn coverage_windows_mask_cells() {
        let mut spec = exp_spec(0.1, 3);
        spec.sources = vec![
            SourceSpec {
                id: "a".into(),
                first_year: 1900,
                last_year: 1999,
            },
            SourceSpec {
                id: "b".into(),
                first_year: 1950,
                last_year: 1999,
            },
        ];
        let sim = simulate(&spec).unwrap();
        assert_eq!(sim.panel.missing_count(), 50);
        assert_eq!(sim.panel.get(1949, 1), None);
        assert!(sim.panel.get(1950, 1).is_some());
    }

    #[test]
    fn invalid_specs() {
        let mut spec = exp_spec(-1.0, 0);
        assert!(matches!(simulate(&spec), Err(Error::InvalidSpec(_))));
        spec.noise_sd = 0.0;
        spec.model = SimModel::Segmented {
            b0: 0.0,
            slopes: vec![0.1, 0.2],
            breakpoints: vec![1800.0],
        };
        assert!(matches!(simulate(&spec), Err(Error::InvalidSpec(_))));
        spec.model = SimModel::Logistic {
            b0: 3.0,
            b1: 0.1,
            capacity: 2.0,
        };
        assert!(matches!(simulate(&spec), Err(Error::InvalidSpec(_))));
    }
}
