//! Trainers for [`MlpModel`]: conjugate gradient, Levenberg-Marquardt and
//! Bayesian-regularized Levenberg-Marquardt, plus data splitting and the
//! hidden-size sweep.
//!
//! All trainers work on the model's own scaled units: inputs and targets
//! are mapped through `model.scaling` before any error is computed, so the
//! caller decides the scaling (normally [`initial_model`]).

mod br;
mod cg;
mod lm;
mod split;
mod sweep;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::BaselineError;
use crate::mlp::{fit_scaling, Dataset, MlpError, MlpModel};
use crate::DimensionMismatch;

pub use br::{train_br, BrConfig, BrOuter, BrState};
pub use cg::{train_cg, CgConfig};
pub use lm::{damped_step, train_lm, LmConfig};
pub use split::{split, split_indices, SplitMode};
pub use sweep::{sweep_hidden, SweepConfig, SweepResult, SweepRow};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("damped normal equations stayed singular up to lambda = {lambda:e}")]
    SingularNormalEquations { lambda: f64 },
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("Hessian approximation is not invertible")]
    HessianNotInvertible,
    #[error("non-finite hyperparameter: alpha = {alpha}, beta = {beta}")]
    NonFiniteHyperparameter { alpha: f64, beta: f64 },
    #[error("by-episode split needs at least 2 groups, got {groups}")]
    TooFewGroups { groups: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error(transparent)]
    Model(#[from] MlpError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Cg,
    Lm,
    Br,
    Linreg,
    Svr,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Cg,
        Algorithm::Lm,
        Algorithm::Br,
        Algorithm::Linreg,
        Algorithm::Svr,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Cg => "cg",
            Algorithm::Lm => "lm",
            Algorithm::Br => "br",
            Algorithm::Linreg => "linreg",
            Algorithm::Svr => "svr",
        }
    }

    pub fn is_mlp(&self) -> bool {
        matches!(self, Algorithm::Cg | Algorithm::Lm | Algorithm::Br)
    }

    /// Row label used in report tables.
    pub fn display_name(&self) -> &'static str {
        match self {
            Algorithm::Cg => "Conjugate gradient",
            Algorithm::Lm => "Levenberg-Marquardt",
            Algorithm::Br => "Bayesian regularization",
            Algorithm::Linreg => "Linear regression",
            Algorithm::Svr => "SVM",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown algorithm {s:?} (expected cg, lm, br, linreg or svr)"))
    }
}

/// Why an iterative trainer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    SmallGradient,
    SmallStep,
    LambdaMax,
    LineSearchFailed,
    Converged,
    /// Closed-form fit, no iterations.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Training MSE in raw target units after the iteration.
    pub mse: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gamma: Option<f64>,
}

impl TraceEntry {
    pub(crate) fn mse(mse: f64) -> Self {
        Self {
            mse,
            lambda: None,
            alpha: None,
            beta: None,
            gamma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub final_mse: f64,
    pub stop_reason: StopReason,
    pub trace: Vec<TraceEntry>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_s: Option<f64>,
}

/// Settings for all three network trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lm: LmConfig,
    pub br: BrConfig,
    pub cg: CgConfig,
}

/// Seeded initial network with scaling fitted on `data`.
pub fn initial_model(data: &Dataset, hidden: usize, seed: u64) -> MlpModel {
    MlpModel::init(data.n_features(), hidden, seed).with_scaling(fit_scaling(data))
}

/// Initializes and trains a network with one of the three trainers.
pub fn fit_mlp(
    algorithm: Algorithm,
    data: &Dataset,
    hidden: usize,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainReport, Option<BrState>), TrainError> {
    let model = initial_model(data, hidden, seed);
    let (m, mut report, state) = match algorithm {
        Algorithm::Lm => {
            let (m, r) = train_lm(&model, data, &cfg.lm)?;
            (m, r, None)
        }
        Algorithm::Br => {
            let (m, s, r) = train_br(&model, data, &cfg.br)?;
            (m, r, Some(s))
        }
        Algorithm::Cg => {
            let (m, r) = train_cg(&model, data, &cfg.cg)?;
            (m, r, None)
        }
        other => {
            return Err(TrainError::InvalidConfig(format!(
                "{other} is not a network trainer"
            )))
        }
    };
    report.seed = Some(seed);
    Ok((m, report, state))
}

/// Raw-unit MSE of a model on `data`.
pub fn mse_raw(model: &MlpModel, data: &Dataset) -> Result<f64, TrainError> {
    let p = model.predict_dataset(data)?;
    Ok(p.iter()
        .zip(data.targets().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / data.len() as f64)
}

pub(crate) fn check_data(model: &MlpModel, data: &Dataset) -> Result<(), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    model.check_width(data)?;
    Ok(())
}

/// Converts a scaled sum of squares into raw-unit MSE.
pub(crate) fn raw_mse(model: &MlpModel, sse_scaled: f64, n: usize) -> f64 {
    let g = model.scaling.output_gain();
    sse_scaled / (g * g) / n as f64
}
