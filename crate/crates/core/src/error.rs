use thiserror::Error;

/// Errors raised while building or running a pricing problem.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or input failed validation.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// The grid or FFT size requested is larger than the configured cap.
    #[error("size cap exceeded: {0}")]
    Capacity(String),

    /// A direct solve hit a zero pivot or failed its residual check.
    #[error("linear solver failure: {0}")]
    Solver(String),

    /// An iterative procedure did not meet its stopping rule.
    #[error("no convergence after {iterations} iterations: {what}")]
    NoConvergence { what: String, iterations: usize },
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Solver(_) | Error::NoConvergence { .. } | Error::Capacity(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
