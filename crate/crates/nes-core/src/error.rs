use thiserror::Error;

/// Errors reported by the NES library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NesError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{what} did not converge after {iterations} iterations (achieved {achieved:e})")]
    NonConvergence {
        what: String,
        iterations: usize,
        achieved: f64,
    },

    #[error("critical point search failed on a {resolution}-point scan: {detail}")]
    RootBracketing { resolution: usize, detail: String },

    #[error("single-well potential: an explicit absorbing threshold is required")]
    ThresholdRequired,

    #[error("saddle-point inapplicable: {0}")]
    SaddleInapplicable(String),

    #[error("implied volatility inversion failed: price violates the {bound} bound")]
    NoArbitrage { bound: String },

    #[error("ODE integration failed: {0}")]
    Integration(String),
}

impl NesError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        NesError::InvalidInput(msg.into())
    }

    /// True for numerical failures (as opposed to bad inputs).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            NesError::NonConvergence { .. }
                | NesError::RootBracketing { .. }
                | NesError::Integration(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, NesError>;
