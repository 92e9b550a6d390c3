//! Gait-based estimation of blood alcohol content.
//!
//! The crate covers the whole offline pipeline: parsing inertial gait
//! recordings and hourly drink reports ([`ingest`]), computing estimated
//! blood alcohol content ([`ebac`]), sliding-window gait features
//! ([`features`]), a single-hidden-layer perceptron ([`mlp`]) with three
//! trainers ([`train`]), linear and support-vector baselines
//! ([`baselines`]), metrics and report export ([`eval`]), a deterministic
//! synthetic data generator ([`synth`]), the end-to-end driver
//! ([`pipeline`]) and the `gaitbac` command line ([`cli`]).

pub mod baselines;
pub mod cli;
pub mod ebac;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod mlp;
pub mod model_file;
pub mod pipeline;
pub mod synth;
pub mod train;

use thiserror::Error;

/// Input vector length does not match what a model was fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("dimension mismatch: expected {expected} inputs, got {got}")]
pub struct DimensionMismatch {
    pub expected: usize,
    pub got: usize,
}

/// Anything that maps a raw feature vector to a raw eBAC estimate.
pub trait Regressor {
    fn n_inputs(&self) -> usize;

    fn predict_one(&self, x: &[f64]) -> Result<f64, DimensionMismatch>;

    /// Predictions for every row of `data`.
    fn predict(&self, data: &mlp::Dataset) -> Result<Vec<f64>, DimensionMismatch> {
        if data.n_features() != self.n_inputs() {
            return Err(DimensionMismatch {
                expected: self.n_inputs(),
                got: data.n_features(),
            });
        }
        (0..data.len()).map(|k| self.predict_one(&data.row(k))).collect()
    }
}

/// Mixes a base seed with stream coordinates (subject, fold, ...) into an
/// independent 64-bit seed. Order of `parts` matters.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(7, &[1, 2]);
        assert_eq!(a, derive_seed(7, &[1, 2]));
        assert_ne!(a, derive_seed(7, &[2, 1]));
        assert_ne!(a, derive_seed(8, &[1, 2]));
        assert_ne!(derive_seed(7, &[]), derive_seed(7, &[0]));
    }
}
