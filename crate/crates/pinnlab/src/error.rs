use thiserror::Error;

/// Errors produced by the library. Configuration problems collect every
/// offending key so a bad config file is reported in one pass.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("parameter vector has {got} entries, spec requires {want}")]
    DimensionMismatch { got: usize, want: usize },

    #[error("network output '{0}' required by the configured system is missing")]
    MissingOutput(&'static str),

    #[error("loss term '{term}' is non-finite (divergent parameters?)")]
    NonFiniteLoss { term: &'static str },

    #[error("empty sample set for '{0}'")]
    EmptySamples(&'static str),

    #[error("domain has zero measure")]
    ZeroMeasureDomain,

    #[error("convergence fit needs at least 2 points with positive loss and error, got {0}")]
    FitTooFewPoints(usize),

    #[error("convergence fit input is degenerate: {0}")]
    FitDegenerate(String),

    #[error("training diverged at step {step}: loss = {loss:.6e}")]
    Diverged { step: u64, loss: f64 },

    #[error("configuration invalid:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("checkpoint file invalid: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input (config/CLI), which map to
    /// exit code 2; everything else is a runtime failure (exit code 3).
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
