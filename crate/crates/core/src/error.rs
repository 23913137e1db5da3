use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite tensor")]
    NonFinite,

    #[error("non-finite value in {layer}")]
    NonFiniteIn { layer: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("budget unbounded")]
    BudgetUnbounded,

    #[error(
        "target epsilon {target} unreachable: sigma in [{sigma_lo}, {sigma_hi}] gives epsilon in [{eps_at_hi}, {eps_at_lo}]"
    )]
    Unreachable {
        target: f64,
        sigma_lo: f64,
        sigma_hi: f64,
        eps_at_lo: f64,
        eps_at_hi: f64,
    },

    #[error("clip contract violated: gradient norm {norm} exceeds bound {bound}")]
    ClipContractViolated { norm: f64, bound: f64 },

    #[error("training diverged at step {step}")]
    Diverged { step: u64 },

    #[error("unknown label {0}")]
    UnknownLabel(usize),

    #[error("empty input")]
    EmptyInput,

    #[error("degenerate pairs")]
    DegeneratePairs,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("run {config_hash} seed {seed}: {source}")]
    Run {
        config_hash: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
