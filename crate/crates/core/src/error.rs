use thiserror::Error;

/// Errors raised across the calibration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("overlap violation: behavior probability 0 for action {action} with target probability {target}")]
    OverlapViolation { action: usize, target: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("non-finite Bellman target at calibration index {index}")]
    NonfiniteTarget { index: usize },

    #[error("negative importance weight {0}")]
    NegativeWeight(f64),

    #[error("non-positive sample weight {0}")]
    NonpositiveWeight(f64),

    #[error("linear solve failed: {0}")]
    SolverFailure(String),

    #[error("singular coarsened system: {0}")]
    SingularSystem(String),

    #[error("stationary distribution did not converge")]
    StationaryNotFound,

    #[error("truncation too loose: tail bound {bound:.3e} exceeds tolerance {tol:.3e}")]
    TruncationTooLoose { bound: f64, tol: f64 },

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("io error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Display text followed by every source, joined with `": "`.
    pub fn full_message(&self) -> String {
        let mut text = self.to_string();
        let mut source = std::error::Error::source(self);
        while let Some(s) = source {
            let part = s.to_string();
            if !text.ends_with(&part) {
                text.push_str(": ");
                text.push_str(&part);
            }
            source = s.source();
        }
        text
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
