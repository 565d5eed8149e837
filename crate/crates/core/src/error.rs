use thiserror::Error;

/// Errors raised by the solvers.
///
/// The variants map onto the three outcomes the command-line front end
/// distinguishes: bad input (`Domain`), numerical failure
/// (`Integration`, `Convergence`, `Numerical`), and broken invariants.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("integration failed to reach tolerance (partial estimate {partial:e})")]
    Integration { partial: f64 },

    #[error("no convergence after {iterations} iterations (last change {last_delta:e})")]
    Convergence {
        iterations: usize,
        last_delta: f64,
        trace: Vec<f64>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors caused by invalid input rather than numerics.
    pub fn is_domain(&self) -> bool {
        matches!(self, Error::Domain(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
