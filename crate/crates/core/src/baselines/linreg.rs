use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::mlp::{fit_scaling, Dataset};
use crate::{DimensionMismatch, Regressor};

pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Ordinary least squares with a small ridge, coefficients in raw units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinRegModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub ridge: f64,
}

impl LinRegModel {
    pub fn zeros(n_in: usize, intercept: f64) -> Self {
        Self {
            coefficients: vec![0.0; n_in],
            intercept,
            ridge: DEFAULT_RIDGE,
        }
    }
}

impl Regressor for LinRegModel {
    fn n_inputs(&self) -> usize {
        self.coefficients.len()
    }

    fn predict_one(&self, x: &[f64]) -> Result<f64, DimensionMismatch> {
        if x.len() != self.coefficients.len() {
            return Err(DimensionMismatch {
                expected: self.coefficients.len(),
                got: x.len(),
            });
        }
        Ok(self.intercept + self.coefficients.iter().zip(x).map(|(c, v)| c * v).sum::<f64>())
    }
}

/// Minimizes `SSE + ridge * |coef|^2` on min-max scaled features (intercept
/// unpenalized), then maps the solution back to raw units. Constant feature
/// columns get a zero coefficient.
pub fn fit_linreg(data: &Dataset, ridge: f64) -> Result<LinRegModel, BaselineError> {
    if data.len() < 2 {
        return Err(BaselineError::TooFewRows {
            needed: 2,
            got: data.len(),
        });
    }
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(BaselineError::InvalidParams(format!("ridge = {ridge}")));
    }
    let scaling = fit_scaling(data);
    let xs = scaling.scale_inputs(data);
    let ys = scaling.scale_targets(data);
    let active: Vec<usize> = (0..data.n_features())
        .filter(|&j| !scaling.input[j].degenerate)
        .collect();
    let y_mean = ys.mean();
    let mut xc = xs.select_columns(&active);
    let x_means: Vec<f64> = xc.column_iter().map(|c| c.mean()).collect();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-x_means[j]);
    }
    let yc = ys.add_scalar(-y_mean);

    let mut gram: DMatrix<f64> = xc.transpose() * &xc;
    for d in 0..gram.nrows() {
        gram[(d, d)] += ridge;
    }
    let rhs: DVector<f64> = xc.transpose() * &yc;
    let scale = gram.diagonal().max().max(f64::MIN_POSITIVE);
    let beta = match gram.clone().cholesky() {
        Some(ch) if ridge == 0.0 && ch.l().diagonal().iter().any(|l| l * l < 1e-13 * scale) => {
            return Err(BaselineError::SingularDesign)
        }
        Some(ch) => ch.solve(&rhs),
        None if ridge == 0.0 => return Err(BaselineError::SingularDesign),
        None => gram.lu().solve(&rhs).ok_or(BaselineError::SingularDesign)?,
    };
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(BaselineError::SingularDesign);
    }

    // ys = sum_j b_j xs_j + b0, xs_j = (x_j - c_j) g_j, ys = (y - c_y) g_y
    let out = scaling.output;
    let b0 = y_mean - beta.iter().zip(&x_means).map(|(b, m)| b * m).sum::<f64>();
    let mut coefficients = vec![0.0; data.n_features()];
    let mut shift = 0.0;
    for (k, &j) in active.iter().enumerate() {
        let m = scaling.input[j];
        coefficients[j] = beta[k] * m.gain / out.gain;
        shift += beta[k] * m.gain * m.center;
    }
    let intercept = out.center + (b0 - shift) / out.gain;
    Ok(LinRegModel {
        coefficients,
        intercept,
        ridge,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-3.0..5.0)).collect())
            .collect()
    }

    #[test]
    fn exact_linear_recovery() {
        let rows = random_rows(1, 60, 24);
        let ys: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] + 1.0).collect();
        let m = fit_linreg(&Dataset::from_rows(&rows, &ys).unwrap(), DEFAULT_RIDGE).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-8);
        assert!(m.coefficients[1..].iter().all(|c| c.abs() < 1e-8));
        assert!((m.intercept - 1.0).abs() < 1e-8);
    }

    #[test]
    fn constant_targets() {
        let rows = random_rows(2, 30, 5);
        let m = fit_linreg(&Dataset::from_rows(&rows, &[0.7; 30]).unwrap(), DEFAULT_RIDGE).unwrap();
        assert!(m.coefficients.iter().all(|c| c.abs() < 1e-12));
        assert!((m.intercept - 0.7).abs() < 1e-12);
        let z = LinRegModel::zeros(5, 0.25);
        assert_eq!(z.predict_one(&[1.0; 5]).unwrap(), 0.25);
        assert!(z.predict_one(&[1.0; 4]).is_err());
    }

    #[test]
    fn residuals_orthogonal_to_features() {
        let rows = random_rows(3, 200, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ys: Vec<f64> = rows
            .iter()
            .map(|r| r[1] - 0.5 * r[3] + rng.random_range(-1.0..1.0))
            .collect();
        let ds = Dataset::from_rows(&rows, &ys).unwrap();
        let m = fit_linreg(&ds, 0.0).unwrap();
        let res: Vec<f64> = (0..ds.len())
            .map(|k| ys[k] - m.predict_one(&rows[k]).unwrap())
            .collect();
        assert!(res.iter().sum::<f64>().abs() < 1e-6);
        for j in 0..6 {
            let dot: f64 = res.iter().zip(&rows).map(|(r, x)| r * x[j]).sum();
            assert!(dot.abs() < 1e-6, "column {j}: {dot}");
        }
    }

    #[test]
    fn local_optimality_probe() {
        let rows = random_rows(5, 80, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ys: Vec<f64> = rows.iter().map(|r| r[0] * r[1] + rng.random_range(-0.1..0.1)).collect();
        let ds = Dataset::from_rows(&rows, &ys).unwrap();
        let m = fit_linreg(&ds, DEFAULT_RIDGE).unwrap();
        let sse = |m: &LinRegModel| -> f64 {
            (0..ds.len())
                .map(|k| (ys[k] - m.predict_one(&rows[k]).unwrap()).powi(2))
                .sum()
        };
        let best = sse(&m);
        for _ in 0..100 {
            let mut p = m.clone();
            for c in &mut p.coefficients {
                *c += rng.random_range(-1e-3..1e-3);
            }
            p.intercept += rng.random_range(-1e-3..1e-3);
            assert!(sse(&p) >= best - 1e-9);
        }
    }

    #[test]
    fn singular_without_ridge() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let ys: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ds = Dataset::from_rows(&rows, &ys).unwrap();
        assert!(matches!(fit_linreg(&ds, 0.0), Err(BaselineError::SingularDesign)));
        assert!(fit_linreg(&ds, DEFAULT_RIDGE).is_ok());
    }
}
