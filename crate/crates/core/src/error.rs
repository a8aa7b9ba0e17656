use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("input is empty")]
    EmptyInput,
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
    #[error("first cumulative value is zero; trim leading zero years first")]
    LeadingZero,
    #[error("non-positive value {value} at index {index}")]
    NonPositiveValue { index: usize, value: f64 },
    #[error("series too short: need more than {needed} values, have {got}")]
    TooShort { needed: usize, got: usize },
    #[error("series kinds differ")]
    KindMismatch,
    #[error("operation expects a {expected} series")]
    WrongKind { expected: &'static str },
    #[error("year {year} precedes the anchor year {t0}")]
    NegativeOffset { year: i32, t0: i32 },
    #[error("design matrix is degenerate")]
    DegenerateDesign,
    #[error("{0} did not converge")]
    NoConvergence(&'static str),
    #[error("logistic capacity collapsed onto the initial level")]
    CapacityCollapse,
    #[error("growth rate must be positive, got {0}")]
    NonPositiveGrowth(f64),
    #[error("breakpoints must be strictly increasing and after the anchor year")]
    UnorderedBreakpoints,
    #[error("cannot place {segments} segments of at least {min_len} observations in {n} observations")]
    InfeasibleSegmentation { segments: usize, min_len: usize, n: usize },
    #[error("statistic not computable: {0}")]
    NotComputable(&'static str),
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("random-effect covariance is singular at the boundary")]
    SingularD,
    #[error("no source is observed over the full year range")]
    NoCompleteBackbone,
    #[error("imputation chain produced a non-finite draw")]
    ChainDivergence,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sum of squared errors must be positive")]
    NonPositiveSse,
    #[error("scores mix log-likelihood and MSE based BIC")]
    MixedConvention,
    #[error("every candidate fit failed")]
    AllFitsFailed,
    #[error("only {succeeded} of {m} imputation fits succeeded")]
    TooManyFailures { succeeded: usize, m: usize },
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
}
