//! `growthseg` subcommands. Exit codes: 0 success (including help and
//! version), 1 usage or input error, 2 estimation failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use growthseg_core::simulate::SimSpec;

use crate::error::IoError;
use crate::pipeline::{
    compare_panel, effective_seed, fit_panel, impute_to_dir, simulate_to_files, CompareConfig, FitConfig, ImputeConfig,
    InputConfig, Menu, ModelKind,
};
use crate::prepare::{InputKind, DEFAULT_T0_TRIM};
use crate::report::{write_plot_csv, FitReport};

#[derive(Debug, Parser)]
#[command(
    name = "growthseg",
    version,
    about = "Growth curves, segmented regression and latent growth models for annual panels"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model and write a JSON report.
    Fit(FitArgs),
    /// Rank a menu of models by BIC.
    Compare(CompareArgs),
    /// Write multiply imputed panels.
    Impute(ImputeArgs),
    /// Simulate a panel from a JSON spec.
    Simulate(SimulateArgs),
    /// Turn a fit report into plot-ready CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Panel CSV (`year,<source>,...`) or, with --fred, a FRED export.
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long)]
    pub fred: bool,
    #[arg(long, value_enum, default_value_t = InputKind::Raw)]
    pub kind: InputKind,
    /// Years dropped from the head of each source after transformation.
    #[arg(long, default_value_t = DEFAULT_T0_TRIM)]
    pub t0_trim: usize,
}

impl InputArgs {
    fn config(&self) -> InputConfig {
        InputConfig {
            path: self.input.clone(),
            fred: self.fred,
            kind: self.kind,
            t0_trim: self.t0_trim,
        }
    }
}

#[derive(Debug, Args)]
pub struct ImputeFlags {
    /// Number of imputations; enables multiple imputation.
    #[arg(long = "impute", value_name = "M")]
    pub m: Option<usize>,
    #[arg(long, default_value_t = growthseg_core::imputation::DEFAULT_BURNIN)]
    pub burnin: usize,
    #[arg(long, default_value_t = growthseg_core::imputation::DEFAULT_GAP)]
    pub gap: usize,
}

impl ImputeFlags {
    fn config(&self) -> Option<ImputeConfig> {
        self.m.map(|m| ImputeConfig {
            m,
            burnin: self.burnin,
            gap: self.gap,
        })
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = ModelKind::Segmented)]
    pub model: ModelKind,
    #[arg(long, short = 'j', default_value_t = 1)]
    pub segments: usize,
    #[arg(long)]
    pub mixed: bool,
    #[arg(long)]
    pub covariance: bool,
    #[command(flatten)]
    pub impute: ImputeFlags,
    /// Root seed; falls back to GROWTHSEG_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report path.
    #[arg(long, short, default_value = "fit.json")]
    pub output: PathBuf,
    /// Also write the plot CSV here.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = Menu::Segments)]
    pub menu: Menu,
    #[arg(long, default_value_t = 1)]
    pub jmin: usize,
    #[arg(long, default_value_t = 6)]
    pub jmax: usize,
    #[arg(long)]
    pub mixed: bool,
    #[arg(long)]
    pub covariance: bool,
    #[command(flatten)]
    pub impute: ImputeFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Writes `<prefix>.csv` and `<prefix>.json`.
    #[arg(long, short, default_value = "compare")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(short, default_value_t = growthseg_core::imputation::DEFAULT_M)]
    pub m: usize,
    #[arg(long, default_value_t = growthseg_core::imputation::DEFAULT_BURNIN)]
    pub burnin: usize,
    #[arg(long, default_value_t = growthseg_core::imputation::DEFAULT_GAP)]
    pub gap: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short, default_value = "imputations")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON simulation spec.
    #[arg(long)]
    pub spec: PathBuf,
    /// Overrides the seed in the spec.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Log-cumulative panel CSV.
    #[arg(long, short, default_value = "simulated.csv")]
    pub output: PathBuf,
    /// Ground-truth JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Fit report written by `fit`.
    #[arg(long, short)]
    pub report: PathBuf,
    /// Plot CSV path; stdout when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

enum Failure {
    Input(IoError),
    Fit(IoError),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Input(_) => 1,
            Failure::Fit(_) => 2,
        }
    }

    fn error(&self) -> &IoError {
        match self {
            Failure::Input(e) | Failure::Fit(e) => e,
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn input<T>(r: crate::error::Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Input)
}

/// Estimation errors map to exit code 2; a refused configuration or an
/// unreadable file is the caller's problem and maps to 1.
fn estimation<T>(r: crate::error::Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(|e| match e {
        IoError::Core(_) => Failure::Fit(e),
        other => Failure::Input(other),
    })
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.error());
            f.code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Outcome {
    match command {
        Command::Fit(a) => fit(a, out),
        Command::Compare(a) => compare(a, out),
        Command::Impute(a) => impute(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Report(a) => report(a, out),
    }
}

fn fit(a: FitArgs, out: &mut dyn Write) -> Outcome {
    let input_config = a.input.config();
    let config = FitConfig {
        input: Some(input_config.clone()),
        model: a.model,
        segments: a.segments,
        mixed: a.mixed,
        covariance: a.covariance,
        impute: a.impute.config(),
        seed: input(effective_seed(a.seed))?,
    };
    input(config.request())?;
    let panel = input(input_config.load())?;
    let report = estimation(fit_panel(&panel, &config))?;
    input(report.write_json(&a.output))?;
    if let Some(path) = &a.plot {
        let file = input(std::fs::File::create(path).map_err(IoError::from))?;
        input(write_plot_csv(&report, std::io::BufWriter::new(file)))?;
    }
    let _ = writeln!(
        out,
        "{}: {} observations, seed {}",
        report.model, report.n_obs, report.seed
    );
    for p in &report.parameters {
        let _ = writeln!(out, "  {:<12} {:>14.6} (se {:.6})", p.name, p.estimate, p.se);
    }
    for s in &report.segments {
        let dt = s.doubling_time.map_or_else(|| "-".to_string(), |d| format!("{d:.1}"));
        let _ = writeln!(
            out,
            "  segment {} {:.1}-{:.1}: growth {:.2}%/yr, doubling {dt} yr",
            s.segment,
            s.from_year,
            s.to_year,
            100.0 * s.growth_rate
        );
    }
    if !report.diagnostics.converged {
        let _ = writeln!(out, "  warning: the optimiser did not converge");
    }
    let _ = writeln!(out, "report written to {}", a.output.display());
    Ok(())
}

fn with_extension(prefix: &std::path::Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn compare(a: CompareArgs, out: &mut dyn Write) -> Outcome {
    let input_config = a.input.config();
    let config = CompareConfig {
        input: Some(input_config.clone()),
        menu: a.menu,
        jmin: a.jmin,
        jmax: a.jmax,
        mixed: a.mixed,
        covariance: a.covariance,
        impute: a.impute.config(),
        seed: input(effective_seed(a.seed))?,
    };
    let panel = input(input_config.load())?;
    let report = estimation(compare_panel(&panel, &config))?;
    input(report.write_csv(with_extension(&a.output, "csv")))?;
    input(report.write_json(with_extension(&a.output, "json")))?;
    for r in &report.rows {
        let bic = r
            .score
            .as_ref()
            .map_or_else(|| "failed".to_string(), |s| format!("{:.2}", s.bic));
        let mark = if r.best {
            " *"
        } else if r.equivalent_to_best {
            " ~"
        } else {
            ""
        };
        let _ = writeln!(out, "{:<6} {:>12}{mark}  {}", r.model_id, bic, r.description);
    }
    for n in &report.notes {
        let _ = writeln!(out, "note: {n}");
    }
    match &report.best {
        Some(b) => {
            let _ = writeln!(out, "best: {b}");
            Ok(())
        }
        None => Err(Failure::Fit(IoError::Core(growthseg_core::Error::AllFitsFailed))),
    }
}

fn impute(a: ImputeArgs, out: &mut dyn Write) -> Outcome {
    let seed = input(effective_seed(a.seed))?;
    let panel = input(a.input.config().load())?;
    let config = ImputeConfig {
        m: a.m,
        burnin: a.burnin,
        gap: a.gap,
    };
    let summary = estimation(impute_to_dir(&panel, &config, seed, &a.output))?;
    let _ = writeln!(
        out,
        "{} imputations of {} cells written to {}",
        summary.m,
        summary.imputed_cells,
        a.output.display()
    );
    if summary.monotonicity_violations > 0 {
        let _ = writeln!(
            out,
            "note: {} imputed cells break monotonicity of the cumulative series",
            summary.monotonicity_violations
        );
    }
    Ok(())
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Outcome {
    let text = input(std::fs::read_to_string(&a.spec).map_err(|source| IoError::Open {
        path: a.spec.clone(),
        source,
    }))?;
    let mut spec: SimSpec = input(serde_json::from_str(&text).map_err(IoError::from))?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let panel = estimation(simulate_to_files(&spec, &a.output, a.truth.as_deref()))?;
    let _ = writeln!(
        out,
        "{} sources, {}-{}, written to {}",
        panel.n_sources(),
        panel.first_year(),
        panel.last_year(),
        a.output.display()
    );
    Ok(())
}

fn report(a: ReportArgs, out: &mut dyn Write) -> Outcome {
    let report = input(FitReport::read_json(&a.report))?;
    match &a.output {
        Some(path) => {
            let file = input(std::fs::File::create(path).map_err(IoError::from))?;
            input(write_plot_csv(&report, std::io::BufWriter::new(file)))
        }
        None => input(write_plot_csv(&report, out)),
    }
}
