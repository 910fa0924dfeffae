use thiserror::Error;

/// Errors raised by the phase-space operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {what} at {point}")]
    NonFinite { what: String, point: String },

    #[error(
        "missing second derivative block `{0}`; supply it analytically or call \
         `with_fd_second_derivatives()` to FD-back it"
    )]
    MissingSecondDerivative(&'static str),

    #[error("mapping variant {0} has no canonicity criterion (use standard or cross)")]
    UnsupportedVariant(String),

    #[error("pivot index {k} degenerate (|C_k| = {pivot:.3e}), choose another k")]
    DegeneratePivot { k: usize, pivot: f64 },

    #[error("root not found: {0}")]
    RootNotFound(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("integration blow-up at t = {t}: {reason}")]
    BlowUp { t: f64, reason: String },

    #[error("Newton iteration failed to converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected,
            got,
            context,
        })
    }
}
