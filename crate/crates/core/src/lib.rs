//! Growth-curve estimation for cumulative annual time series.
//!
//! The crate fits unrestricted exponential and logistic growth on the log
//! scale, continuity-constrained segmented (piecewise log-linear) growth
//! with estimated breakpoint years, and a latent piecewise growth curve
//! model that shares the segmented fixed effects across several sources
//! while letting each source carry its own intercept and slope deviations.
//! Missing panel cells are handled by data-augmentation multiple
//! imputation with pooled (within/between variance) estimates, and models
//! are ranked by BIC.
//!
//! Everything here is pure computation over in-memory values and builds
//! without `std`; file formats and the command-line driver live in the
//! `growthseg` crate.
#![no_std]
#![forbid(unsafe_code)]

// Float methods come from `num_traits::Float`. Those imports carry
// `allow(unused_imports)`: whenever std is linked (tests, or a dependent
// enabling std features) its inherent methods take precedence.
extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
mod linalg;

pub mod growth;
pub mod imputation;
pub mod mixed;
mod optim;
pub mod segmented;
pub mod selection;
pub mod series;
pub mod simulate;

pub use error::{Error, Result};
pub use growth::{doubling_time, growth_rate, GrowthFit, GrowthModel};
pub use imputation::{pool, relative_efficiency, ImputationSet, PooledEstimate};
pub use mixed::{LpgcmFit, RandomEffectsSpec};
pub use segmented::{segmented_design, SegmentedFit, SegmentedOptions};
pub use selection::{bic_loglik, bic_mse, compare, ModelScore};
pub use series::{AnnualSeries, Observations, Panel, SeriesKind};
