//! Single-hidden-layer perceptron: sigmoid hidden units, linear output.
//!
//! `y = b0 + sum_j w_j * sigmoid(sum_i w_ij * x_i + b_j)`, evaluated on
//! min-max scaled inputs and mapped back through the inverse target scaling.
//!
//! Parameters flatten in a fixed order: hidden weights row-major (`H x n_in`,
//! row `j` holds the weights into hidden unit `j`), hidden biases, output
//! weights, output bias. Errors are `e = target - output` in scaled units.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::RecordingKey;
use crate::{DimensionMismatch, Regressor};

#[derive(Debug, Error)]
pub enum MlpError {
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("expected {expected} parameters, got {got}")]
    ParameterCount { expected: usize, got: usize },
    #[error("invalid model document: {0}")]
    InvalidDocument(String),
}

/// Overflow-safe logistic function.
pub fn sigmoid(gamma: f64) -> f64 {
    if gamma >= 0.0 {
        1.0 / (1.0 + (-gamma).exp())
    } else {
        let e = gamma.exp();
        e / (1.0 + e)
    }
}

/// Episode a row came from; splits can keep whole episodes together.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey(pub String);

impl GroupKey {
    /// Key for a row with no natural grouping.
    pub fn row(i: usize) -> Self {
        GroupKey(format!("row{i}"))
    }
}

impl From<&RecordingKey> for GroupKey {
    fn from(k: &RecordingKey) -> Self {
        GroupKey(k.file_stem())
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Raw regression rows: features, eBAC targets and group keys.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    targets: DVector<f64>,
    groups: Vec<GroupKey>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, targets: DVector<f64>, groups: Vec<GroupKey>) -> Result<Self, MlpError> {
        if inputs.nrows() == 0 {
            return Err(MlpError::EmptyDataset);
        }
        if targets.len() != inputs.nrows() || groups.len() != inputs.nrows() {
            return Err(DimensionMismatch {
                expected: inputs.nrows(),
                got: targets.len().min(groups.len()),
            }
            .into());
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(MlpError::NonFinite("inputs"));
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(MlpError::NonFinite("targets"));
        }
        Ok(Self {
            inputs,
            targets,
            groups,
        })
    }

    /// Rows with one group per row.
    pub fn from_rows(rows: &[Vec<f64>], targets: &[f64]) -> Result<Self, MlpError> {
        let groups = (0..rows.len()).map(GroupKey::row).collect();
        Self::with_groups(rows, targets, groups)
    }

    pub fn with_groups(rows: &[Vec<f64>], targets: &[f64], groups: Vec<GroupKey>) -> Result<Self, MlpError> {
        let n = rows.len();
        if n == 0 {
            return Err(MlpError::EmptyDataset);
        }
        let d = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(DimensionMismatch {
                expected: d,
                got: bad.len(),
            }
            .into());
        }
        let inputs = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        Self::new(inputs, DVector::from_column_slice(targets), groups)
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn groups(&self) -> &[GroupKey] {
        &self.groups
    }

    pub fn row(&self, k: usize) -> Vec<f64> {
        self.inputs.row(k).iter().copied().collect()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let inputs = self.inputs.select_rows(indices);
        let targets = DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.targets[i]));
        let groups = indices.iter().map(|&i| self.groups[i].clone()).collect();
        Dataset {
            inputs,
            targets,
            groups,
        }
    }

    /// Concatenates two datasets with the same feature count.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset, MlpError> {
        if self.n_features() != other.n_features() {
            return Err(DimensionMismatch {
                expected: self.n_features(),
                got: other.n_features(),
            }
            .into());
        }
        let n = self.len() + other.len();
        let d = self.n_features();
        let inputs = DMatrix::from_fn(n, d, |i, j| {
            if i < self.len() {
                self.inputs[(i, j)]
            } else {
                other.inputs[(i - self.len(), j)]
            }
        });
        let targets = DVector::from_iterator(n, self.targets.iter().chain(other.targets.iter()).copied());
        let groups = self.groups.iter().chain(&other.groups).cloned().collect();
        Ok(Dataset {
            inputs,
            targets,
            groups,
        })
    }
}

/// `scaled = (raw - center) * gain`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub center: f64,
    pub gain: f64,
    /// The fitted column had zero range.
    pub degenerate: bool,
}

impl AffineMap {
    pub const IDENTITY: AffineMap = AffineMap {
        center: 0.0,
        gain: 1.0,
        degenerate: false,
    };

    /// Maps the observed `[min, max]` onto `[-1, 1]`.
    pub fn fit(values: impl Iterator<Item = f64>) -> AffineMap {
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi > lo {
            AffineMap {
                center: lo + (hi - lo) / 2.0,
                gain: 2.0 / (hi - lo),
                degenerate: false,
            }
        } else {
            AffineMap {
                center: lo,
                gain: 0.0,
                degenerate: true,
            }
        }
    }

    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.center) * self.gain
    }

    /// Inverse map. Degenerate maps invert to their center.
    pub fn invert(&self, scaled: f64) -> f64 {
        if self.gain == 0.0 {
            self.center
        } else {
            scaled / self.gain + self.center
        }
    }

    fn is_finite(&self) -> bool {
        self.center.is_finite() && self.gain.is_finite()
    }
}

/// Per-feature input maps and the target map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub input: Vec<AffineMap>,
    pub output: AffineMap,
}

impl Scaling {
    pub fn identity(n_in: usize) -> Self {
        Self {
            input: vec![AffineMap::IDENTITY; n_in],
            output: AffineMap::IDENTITY,
        }
    }

    pub fn scale_inputs(&self, data: &Dataset) -> DMatrix<f64> {
        let x = data.inputs();
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| self.input[j].apply(x[(i, j)]))
    }

    pub fn scale_targets(&self, data: &Dataset) -> DVector<f64> {
        data.targets().map(|t| self.output.apply(t))
    }

    /// Gain used to convert scaled squared errors back to raw units.
    pub fn output_gain(&self) -> f64 {
        if self.output.gain == 0.0 {
            1.0
        } else {
            self.output.gain
        }
    }
}

/// Min-max maps for every feature column and for the target. Constant
/// feature columns map to 0; a constant target maps to 0 with unit gain so
/// it stays invertible.
pub fn fit_scaling(data: &Dataset) -> Scaling {
    let x = data.inputs();
    let input = (0..x.ncols())
        .map(|j| AffineMap::fit(x.column(j).iter().copied()))
        .collect();
    let mut output = AffineMap::fit(data.targets().iter().copied());
    if output.degenerate {
        output.gain = 1.0;
    }
    Scaling { input, output }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub hidden_weights: DMatrix<f64>,
    pub hidden_bias: DVector<f64>,
    pub output_weights: DVector<f64>,
    pub output_bias: f64,
    pub scaling: Scaling,
}

impl MlpModel {
    /// All parameters zero, identity scaling.
    pub fn zeros(n_in: usize, n_hidden: usize) -> Self {
        Self {
            hidden_weights: DMatrix::zeros(n_hidden, n_in),
            hidden_bias: DVector::zeros(n_hidden),
            output_weights: DVector::zeros(n_hidden),
            output_bias: 0.0,
            scaling: Scaling::identity(n_in),
        }
    }

    /// Weights uniform in `±0.5/sqrt(fan_in)`, drawn from a seeded stream.
    pub fn init(n_in: usize, n_hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a_in = 0.5 / (n_in.max(1) as f64).sqrt();
        let a_out = 0.5 / (n_hidden.max(1) as f64).sqrt();
        let mut m = Self::zeros(n_in, n_hidden);
        for j in 0..n_hidden {
            for i in 0..n_in {
                m.hidden_weights[(j, i)] = rng.random_range(-a_in..=a_in);
            }
        }
        for j in 0..n_hidden {
            m.hidden_bias[j] = rng.random_range(-a_in..=a_in);
        }
        for j in 0..n_hidden {
            m.output_weights[j] = rng.random_range(-a_out..=a_out);
        }
        m.output_bias = rng.random_range(-a_out..=a_out);
        m
    }

    pub fn with_scaling(mut self, scaling: Scaling) -> Self {
        assert_eq!(scaling.input.len(), self.n_in(), "scaling width");
        self.scaling = scaling;
        self
    }

    pub fn n_in(&self) -> usize {
        self.hidden_weights.ncols()
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden_weights.nrows()
    }

    /// `H*n_in + H + H + 1`.
    pub fn param_count(&self) -> usize {
        param_count(self.n_in(), self.n_hidden())
    }

    pub fn flatten(&self) -> DVector<f64> {
        let (h, d) = (self.n_hidden(), self.n_in());
        let mut p = DVector::zeros(self.param_count());
        for j in 0..h {
            for i in 0..d {
                p[j * d + i] = self.hidden_weights[(j, i)];
            }
        }
        let off = h * d;
        for j in 0..h {
            p[off + j] = self.hidden_bias[j];
            p[off + h + j] = self.output_weights[j];
        }
        p[off + 2 * h] = self.output_bias;
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<(), MlpError> {
        let (h, d) = (self.n_hidden(), self.n_in());
        if p.len() != self.param_count() {
            return Err(MlpError::ParameterCount {
                expected: self.param_count(),
                got: p.len(),
            });
        }
        for j in 0..h {
            for i in 0..d {
                self.hidden_weights[(j, i)] = p[j * d + i];
            }
        }
        let off = h * d;
        for j in 0..h {
            self.hidden_bias[j] = p[off + j];
            self.output_weights[j] = p[off + h + j];
        }
        self.output_bias = p[off + 2 * h];
        Ok(())
    }

    pub fn from_params(n_in: usize, n_hidden: usize, p: &[f64], scaling: Scaling) -> Result<Self, MlpError> {
        let mut m = Self::zeros(n_in, n_hidden).with_scaling(scaling);
        m.set_params(p)?;
        Ok(m)
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
            && self.scaling.input.iter().all(AffineMap::is_finite)
            && self.scaling.output.is_finite()
    }

    /// Hidden activations `n x H` for scaled inputs.
    pub(crate) fn hidden_activations(&self, xs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = xs * self.hidden_weights.transpose();
        for mut row in z.row_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = sigmoid(*v + self.hidden_bias[j]);
            }
        }
        z
    }

    /// Scaled outputs for scaled inputs.
    pub fn scaled_outputs(&self, xs: &DMatrix<f64>) -> DVector<f64> {
        let a = self.hidden_activations(xs);
        self.outputs_from_activations(&a)
    }

    pub(crate) fn outputs_from_activations(&self, a: &DMatrix<f64>) -> DVector<f64> {
        let mut y = a * &self.output_weights;
        y.add_scalar_mut(self.output_bias);
        y
    }

    /// Scaled residuals `e = t - y`.
    pub fn scaled_residuals(&self, xs: &DMatrix<f64>, ts: &DVector<f64>) -> DVector<f64> {
        ts - self.scaled_outputs(xs)
    }

    /// Raw-unit prediction for one raw input vector.
    pub fn forward(&self, x: &[f64]) -> Result<f64, DimensionMismatch> {
        if x.len() != self.n_in() {
            return Err(DimensionMismatch {
                expected: self.n_in(),
                got: x.len(),
            });
        }
        let mut y = self.output_bias;
        for j in 0..self.n_hidden() {
            let mut z = self.hidden_bias[j];
            for (i, &xi) in x.iter().enumerate() {
                z += self.hidden_weights[(j, i)] * self.scaling.input[i].apply(xi);
            }
            y += self.output_weights[j] * sigmoid(z);
        }
        Ok(self.scaling.output.invert(y))
    }

    /// Jacobian of the scaled errors of every row of `data` with respect to
    /// the flattened parameters (`n x N`).
    pub fn jacobian(&self, data: &Dataset) -> Result<DMatrix<f64>, MlpError> {
        self.check_width(data)?;
        Ok(self.scaled_jacobian(&self.scaling.scale_inputs(data)))
    }

    pub(crate) fn check_width(&self, data: &Dataset) -> Result<(), DimensionMismatch> {
        if data.n_features() != self.n_in() {
            return Err(DimensionMismatch {
                expected: self.n_in(),
                got: data.n_features(),
            });
        }
        Ok(())
    }

    /// Jacobian for already scaled inputs.
    pub fn scaled_jacobian(&self, xs: &DMatrix<f64>) -> DMatrix<f64> {
        let a = self.hidden_activations(xs);
        self.jacobian_from_activations(xs, &a)
    }

    pub(crate) fn jacobian_from_activations(&self, xs: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
        self.jacobian_t_from_activations(xs, a).transpose()
    }

    /// Transposed Jacobian (`N x n`).
    pub(crate) fn jacobian_t_from_activations(&self, xs: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, d, h) = (xs.nrows(), self.n_in(), self.n_hidden());
        let np = self.param_count();
        // Built transposed so each row's derivatives are contiguous.
        let mut jt = DMatrix::zeros(np, n);
        for k in 0..n {
            let mut col = jt.column_mut(k);
            for j in 0..h {
                let s = a[(k, j)];
                let c = -self.output_weights[j] * s * (1.0 - s);
                for i in 0..d {
                    col[j * d + i] = c * xs[(k, i)];
                }
                col[h * d + j] = c;
                col[h * d + h + j] = -s;
            }
            col[np - 1] = -1.0;
        }
        jt
    }

    /// Sum of squared scaled errors and its gradient (`2 J^T e`), by
    /// back-propagation.
    pub fn sse_gradient(&self, xs: &DMatrix<f64>, ts: &DVector<f64>) -> (f64, DVector<f64>) {
        let (d, h) = (self.n_in(), self.n_hidden());
        let a = self.hidden_activations(xs);
        let e = ts - self.outputs_from_activations(&a);
        let sse = e.norm_squared();
        // delta[k, j] = d sse / d z_kj
        let mut delta = a.clone();
        for k in 0..a.nrows() {
            for j in 0..h {
                let s = a[(k, j)];
                delta[(k, j)] = -2.0 * e[k] * self.output_weights[j] * s * (1.0 - s);
            }
        }
        let gw = delta.transpose() * xs; // H x d
        let mut g = DVector::zeros(self.param_count());
        for j in 0..h {
            for i in 0..d {
                g[j * d + i] = gw[(j, i)];
            }
        }
        let gb = delta.row_sum();
        let gv = a.transpose() * &e * -2.0;
        for j in 0..h {
            g[h * d + j] = gb[j];
            g[h * d + h + j] = gv[j];
        }
        g[h * d + 2 * h] = -2.0 * e.sum();
        (sse, g)
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<f64>, DimensionMismatch> {
        self.check_width(data)?;
        let xs = self.scaling.scale_inputs(data);
        Ok(self
            .scaled_outputs(&xs)
            .iter()
            .map(|&y| self.scaling.output.invert(y))
            .collect())
    }
}

pub fn param_count(n_in: usize, n_hidden: usize) -> usize {
    n_hidden * n_in + 2 * n_hidden + 1
}

impl Regressor for MlpModel {
    fn n_inputs(&self) -> usize {
        self.n_in()
    }

    fn predict_one(&self, x: &[f64]) -> Result<f64, DimensionMismatch> {
        self.forward(x)
    }

    fn predict(&self, data: &Dataset) -> Result<Vec<f64>, DimensionMismatch> {
        self.predict_dataset(data)
    }
}

/// Self-describing JSON form of an [`MlpModel`]. Floats are written in
/// shortest round-trip decimal, so a save/load cycle is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpDocument {
    pub n_in: usize,
    pub n_hidden: usize,
    pub hidden_activation: String,
    pub output_activation: String,
    pub parameter_order: String,
    pub parameters: Vec<f64>,
    pub input_scale: Vec<AffineMap>,
    pub output_scale: AffineMap,
}

const PARAMETER_ORDER: &str =
    "hidden_weights[H][n_in] row-major, hidden_bias[H], output_weights[H], output_bias";

impl From<&MlpModel> for MlpDocument {
    fn from(m: &MlpModel) -> Self {
        Self {
            n_in: m.n_in(),
            n_hidden: m.n_hidden(),
            hidden_activation: "sigmoid".into(),
            output_activation: "linear".into(),
            parameter_order: PARAMETER_ORDER.into(),
            parameters: m.flatten().iter().copied().collect(),
            input_scale: m.scaling.input.clone(),
            output_scale: m.scaling.output,
        }
    }
}

impl TryFrom<MlpDocument> for MlpModel {
    type Error = MlpError;

    fn try_from(doc: MlpDocument) -> Result<Self, MlpError> {
        if doc.hidden_activation != "sigmoid" || doc.output_activation != "linear" {
            return Err(MlpError::InvalidDocument(format!(
                "unsupported activations {}/{}",
                doc.hidden_activation, doc.output_activation
            )));
        }
        if doc.input_scale.len() != doc.n_in {
            return Err(MlpError::InvalidDocument(format!(
                "{} input maps for {} inputs",
                doc.input_scale.len(),
                doc.n_in
            )));
        }
        let scaling = Scaling {
            input: doc.input_scale,
            output: doc.output_scale,
        };
        let m = MlpModel::from_params(doc.n_in, doc.n_hidden, &doc.parameters, scaling)?;
        if !m.is_finite() {
            return Err(MlpError::NonFinite("model parameters"));
        }
        Ok(m)
    }
}

impl Serialize for MlpModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MlpDocument::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for MlpModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = MlpDocument::deserialize(d)?;
        MlpModel::try_from(doc).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(1000.0) - 1.0).abs() < 1e-15);
        assert_eq!(sigmoid(-1000.0), 0.0);
        for g in [0.1, 1.0, 3.7, 20.0, 300.0, 999.0] {
            assert!((sigmoid(g) + sigmoid(-g) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = MlpModel::zeros(24, 45);
        assert_eq!(m.param_count(), 45 * 24 + 45 + 45 + 1);
        assert_eq!(m.forward(&[3.0; 24]).unwrap(), 0.0);
        assert!(m.forward(&[0.0; 23]).is_err());
    }

    #[test]
    fn single_unit_hand_value() {
        let mut m = MlpModel::zeros(3, 1);
        m.output_weights[0] = 2.0;
        m.output_bias = 0.75;
        // Pre-activation is zero for x = 0, so the unit outputs 0.5.
        assert_eq!(m.forward(&[0.0, 0.0, 0.0]).unwrap(), 0.75 + 1.0);
        m.hidden_weights[(0, 1)] = 1.5;
        m.hidden_bias[0] = -3.0;
        assert_eq!(m.forward(&[9.0, 2.0, -4.0]).unwrap(), 0.75 + 1.0);
        let a = m.forward(&[0.3, 0.2, 0.1]).unwrap();
        let b = m.forward(&[0.3, 0.2, 0.1]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn scaling_examples() {
        let ds = Dataset::from_rows(
            &[vec![0.0, 7.0], vec![10.0, 7.0], vec![5.0, 7.0]],
            &[1.0, 3.0, 2.0],
        )
        .unwrap();
        let s = fit_scaling(&ds);
        assert_eq!(s.input[0].apply(5.0), 0.0);
        assert_eq!(s.input[0].apply(0.0), -1.0);
        assert_eq!(s.input[0].apply(10.0), 1.0);
        assert!(s.input[1].degenerate);
        assert_eq!(s.input[1].apply(7.0), 0.0);
        assert_eq!(s.input[1].apply(123.0), 0.0);
        for y in [1.0, 2.5, 3.0, -17.25, 1e-3] {
            assert!((s.output.invert(s.output.apply(y)) - y).abs() < 1e-12);
        }
        let flat = Dataset::from_rows(&[vec![1.0], vec![2.0]], &[0.4, 0.4]).unwrap();
        let s = fit_scaling(&flat);
        assert_eq!(s.output.apply(0.4), 0.0);
        assert_eq!(s.output.invert(0.0), 0.4);
    }

    fn random_problem(seed: u64, n_in: usize, h: usize, n: usize) -> (MlpModel, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = MlpModel::zeros(n_in, h);
        let p: Vec<f64> = (0..m.param_count())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        m.set_params(&p).unwrap();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n_in).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ds = Dataset::from_rows(&rows, &ys).unwrap();
        let s = fit_scaling(&ds);
        (m.with_scaling(s), ds)
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for seed in 0..20 {
            let (m, ds) = random_problem(seed, 4, 3, 6);
            let j = m.jacobian(&ds).unwrap();
            let xs = m.scaling.scale_inputs(&ds);
            let ts = m.scaling.scale_targets(&ds);
            let p0 = m.flatten();
            let step = 1e-6;
            for c in 0..m.param_count() {
                let mut mp = m.clone();
                let mut mm = m.clone();
                let mut pp = p0.clone();
                pp[c] += step;
                mp.set_params(pp.as_slice()).unwrap();
                pp[c] -= 2.0 * step;
                mm.set_params(pp.as_slice()).unwrap();
                let ep = mp.scaled_residuals(&xs, &ts);
                let em = mm.scaled_residuals(&xs, &ts);
                for k in 0..ds.len() {
                    let fd = (ep[k] - em[k]) / (2.0 * step);
                    let an = j[(k, c)];
                    assert!(
                        (fd - an).abs() <= 1e-8f64.max(1e-5 * an.abs()),
                        "seed {seed} row {k} col {c}: {an} vs {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_weight_jacobian_and_duplicate_rows() {
        let m = MlpModel::zeros(2, 2);
        let ds = Dataset::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0], vec![1.0, 2.0]], &[0.0, 1.0, 1.0]).unwrap();
        let j = m.jacobian(&ds).unwrap();
        for c in 0..4 {
            assert_eq!(j[(0, c)], 0.0);
        }
        assert_eq!(j.row(1), j.row(2));
    }

    #[test]
    fn gradient_is_twice_jt_e() {
        let (m, ds) = random_problem(7, 5, 4, 9);
        let xs = m.scaling.scale_inputs(&ds);
        let ts = m.scaling.scale_targets(&ds);
        let (sse, g) = m.sse_gradient(&xs, &ts);
        let e = m.scaled_residuals(&xs, &ts);
        assert!((sse - e.norm_squared()).abs() < 1e-12);
        let g2 = m.scaled_jacobian(&xs).transpose() * e * 2.0;
        assert!((g - g2).amax() < 1e-10);
    }

    #[test]
    fn batch_and_single_forward_agree() {
        let (m, ds) = random_problem(3, 6, 5, 12);
        let batch = m.predict_dataset(&ds).unwrap();
        for k in 0..ds.len() {
            assert!((batch[k] - m.forward(&ds.row(k)).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let (m, _) = random_problem(11, 24, 7, 30);
        let text = serde_json::to_string(&m).unwrap();
        let back: MlpModel = serde_json::from_str(&text).unwrap();
        assert_eq!(
            back.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            m.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(back, m);
        let bad = text.replace("\"sigmoid\"", "\"tanh\"");
        assert!(serde_json::from_str::<MlpModel>(&bad).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = MlpModel::init(24, 10, 5);
        assert_eq!(a, MlpModel::init(24, 10, 5));
        assert_ne!(a, MlpModel::init(24, 10, 6));
        let bound = 0.5 / 24f64.sqrt();
        assert!(a.hidden_weights.iter().all(|w| w.abs() <= bound));
    }

    proptest! {
        #[test]
        fn flatten_round_trip(seed in any::<u64>(), h in 1usize..6, d in 1usize..5) {
            let m = MlpModel::init(d, h, seed);
            let back = MlpModel::from_params(d, h, m.flatten().as_slice(), m.scaling.clone()).unwrap();
            prop_assert_eq!(back, m);
        }

        #[test]
        fn input_gradient_bounded(seed in 0u64..500) {
            let (m, ds) = random_problem(seed, 3, 4, 4);
            let x = ds.row(0);
            let out_gain = m.scaling.output.gain;
            for i in 0..3 {
                let bound: f64 = (0..4)
                    .map(|j| m.output_weights[j].abs() * m.hidden_weights[(j, i)].abs() / 4.0)
                    .sum::<f64>()
                    * m.scaling.input[i].gain.abs()
                    / out_gain.abs();
                let h = 1e-6;
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let d = (m.forward(&xp).unwrap() - m.forward(&xm).unwrap()) / (2.0 * h);
                prop_assert!(d.abs() <= bound * (1.0 + 1e-6) + 1e-9);
            }
        }
    }
}
