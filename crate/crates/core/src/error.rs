use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure classes surfaced to the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Io,
    Diverged,
    Metric,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::Io => "io",
            Category::Diverged => "diverged",
            Category::Metric => "metric",
        }
    }

    /// Process exit code for this category.
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Io => 3,
            Category::Diverged => 4,
            Category::Metric => 5,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("value outside its domain: {0}")]
    Domain(String),

    #[error("autodiff: {0}")]
    Autodiff(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("sampling diverged at step {step}")]
    SamplingDiverged { step: usize },

    #[error("training diverged at step {step}: {reason}")]
    TrainingDiverged { step: usize, reason: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Dimension(_) | Error::Config(_) | Error::Domain(_) | Error::Autodiff(_) => {
                Category::Config
            }
            Error::NonFinite(_) | Error::SamplingDiverged { .. } | Error::TrainingDiverged { .. } => {
                Category::Diverged
            }
            Error::UndefinedMetric(_) => Category::Metric,
            Error::Corrupt(_) | Error::Io(_) => Category::Io,
            Error::Json(e) if e.is_io() => Category::Io,
            Error::Json(_) => Category::Config,
        }
    }
}

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
