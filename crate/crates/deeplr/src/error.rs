//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any part of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument was outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input data cannot support the requested computation
    /// (too few samples, zero variance, and the like).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// A request that is well-formed but meaningless, e.g. a zero
    /// perturbation for a regression interval.
    #[error("degenerate request: {0}")]
    DegenerateRequest(String),

    /// A non-finite value appeared during network evaluation.
    #[error("non-finite value in layer {layer} during {context}")]
    Numeric { layer: usize, context: &'static str },

    /// The training loss became non-finite or exceeded the divergence guard.
    #[error("training diverged at epoch {epoch}, batch {batch} (loss {loss})")]
    TrainingDiverged { epoch: usize, batch: usize, loss: f64 },

    /// A failure inside one ensemble member's training run.
    #[error("ensemble member {member}: {source}")]
    EnsembleMember {
        member: usize,
        #[source]
        source: Box<Error>,
    },

    /// The perturbed network did not move the prediction toward the
    /// requested side, so no value of lambda can reach the tested c.
    #[error("unreachable direction: {0}")]
    UnreachableDirection(String),

    /// The distribution head does not match the network architecture.
    #[error("head/spec mismatch: {0}")]
    HeadSpecMismatch(String),

    /// A file could not be parsed.
    #[error("parse error in {what} (line {line}): {message}")]
    Parse { what: &'static str, line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for the error kind, used by the CLI's
    /// JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::DegenerateData(_) => "degenerate-data",
            Error::DegenerateRequest(_) => "degenerate-request",
            Error::Numeric { .. } => "numeric",
            Error::TrainingDiverged { .. } => "training-diverged",
            Error::EnsembleMember { source, .. } => source.kind(),
            Error::UnreachableDirection(_) => "unreachable-direction",
            Error::HeadSpecMismatch(_) => "head-spec-mismatch",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
