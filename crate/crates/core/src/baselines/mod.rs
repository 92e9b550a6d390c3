//! Non-network regression baselines fitted on the same scaled features as
//! the perceptron.

mod linreg;
mod svr;

pub use linreg::{fit_linreg, LinRegModel, DEFAULT_RIDGE};
pub use svr::{fit_svr, fit_svr_detailed, Kernel, SvrFit, SvrModel, SvrParams};

use thiserror::Error;

use crate::DimensionMismatch;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("normal equations are singular (ridge = 0)")]
    SingularDesign,
    #[error("SVR did not reach KKT tolerance within {iterations} updates")]
    NoConvergence { iterations: usize },
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
}
