//! File formats, data preparation, reports and the `growthseg` command line
//! on top of `growthseg-core`.

pub mod cli;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod prepare;
pub mod report;

pub use error::{IoError, Result};
pub use io::{parse_fred_csv, parse_panel_csv, read_fred_csv, read_panel_csv, write_panel_csv, write_panel_csv_to};
pub use pipeline::{compare_panel, fit_panel, run_fit, CompareConfig, FitConfig, InputConfig, Menu, ModelKind};
pub use prepare::{prepare_panel, prepare_series, InputKind};
pub use report::{write_plot_csv, FitReport};
