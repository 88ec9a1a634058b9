use thiserror::Error;

/// Errors raised by every stage of the toolkit.
///
/// Validation failures (bad input, violated preconditions) are kept apart
/// from internal failures so the CLI can map them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid metric: {0}")]
    InvalidMetric(String),

    #[error("empty space")]
    EmptySpace,

    #[error("degenerate speed: {0}")]
    DegenerateSpeed(String),

    #[error("curve is not injective: t[{i}] and t[{j}] map within {dist:e} of each other")]
    NotInjective { i: usize, j: usize, dist: f64 },

    #[error("resolution too coarse: {0}")]
    ResolutionTooCoarse(String),

    #[error("norm not C1: {0}")]
    NormNotC1(String),

    #[error("kernel is not finite at probe {probe:?}")]
    NonFiniteKernel { probe: Vec<f64> },

    #[error("power iteration did not converge in {0} steps")]
    NonConvergence(usize),

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("roundness unattainable after {attempts} orderings: witness point {witness} at level {level}")]
    RoundnessFailure {
        attempts: usize,
        witness: usize,
        level: i32,
    },

    #[error("complement empty, distance to complement undefined")]
    EmptyComplement,

    #[error("expression parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
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

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for failures that come from the environment rather than from the
    /// inputs (unwritable directories and the like).
    pub fn is_internal(&self) -> bool {
        match self {
            Error::Io(_) | Error::Csv(_) => true,
            Error::Stage { source, .. } => source.is_internal(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
