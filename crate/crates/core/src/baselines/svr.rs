//! Epsilon-insensitive support vector regression.
//!
//! The dual is solved with pairwise sequential minimal optimization over the
//! `2n` variables `(a+, a-)`, choosing each pair by second-order working-set
//! selection. Everything happens on min-max scaled inputs and targets, so
//! `epsilon` and `c` are in scaled target units.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::mlp::{fit_scaling, Dataset, Scaling};
use crate::{DimensionMismatch, Regressor};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvrParams {
    pub kernel: Kernel,
    pub c: f64,
    pub epsilon: f64,
    /// KKT violation tolerance for stopping.
    pub tol: f64,
    /// A pass is `n` pair updates; `None` means `10 * n` passes.
    pub max_passes: Option<usize>,
    /// Kernel rows kept in memory.
    pub cache_rows: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            kernel: Kernel::Rbf { gamma: 1.0 / 24.0 },
            c: 1.0,
            epsilon: 0.001,
            tol: 1e-3,
            max_passes: None,
            cache_rows: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvrModel {
    pub kernel: Kernel,
    pub c: f64,
    pub epsilon: f64,
    /// Scaled training inputs with a nonzero dual coefficient.
    pub support_vectors: Vec<Vec<f64>>,
    /// `a+ - a-` per support vector; bounded by `c` in magnitude.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub scaling: Scaling,
}

impl SvrModel {
    /// Decision value in scaled target units for a scaled input.
    pub fn decision(&self, xs: &[f64]) -> f64 {
        self.bias
            + self
                .support_vectors
                .iter()
                .zip(&self.dual_coef)
                .map(|(sv, b)| b * self.kernel.eval(sv, xs))
                .sum::<f64>()
    }
}

impl Regressor for SvrModel {
    fn n_inputs(&self) -> usize {
        self.scaling.input.len()
    }

    fn predict_one(&self, x: &[f64]) -> Result<f64, DimensionMismatch> {
        if x.len() != self.n_inputs() {
            return Err(DimensionMismatch {
                expected: self.n_inputs(),
                got: x.len(),
            });
        }
        let xs: Vec<f64> = x
            .iter()
            .zip(&self.scaling.input)
            .map(|(v, m)| m.apply(*v))
            .collect();
        Ok(self.scaling.output.invert(self.decision(&xs)))
    }
}

/// Solver output with the per-row dual coefficients (zero rows included).
#[derive(Debug, Clone)]
pub struct SvrFit {
    pub model: SvrModel,
    pub coef: Vec<f64>,
    pub iterations: usize,
}

struct KernelRows<'a> {
    x: &'a [Vec<f64>],
    kernel: Kernel,
    rows: Vec<Option<Vec<f64>>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelRows<'a> {
    fn new(x: &'a [Vec<f64>], kernel: Kernel, capacity: usize) -> Self {
        Self {
            x,
            kernel,
            rows: vec![None; x.len()],
            order: VecDeque::new(),
            capacity: capacity.max(2),
        }
    }

    /// Loads row `i`, never evicting `keep`.
    fn ensure(&mut self, i: usize, keep: usize) {
        if self.rows[i].is_some() {
            return;
        }
        while self.order.len() >= self.capacity {
            let Some(old) = self.order.pop_front() else { break };
            if old == keep {
                self.order.push_back(old);
                continue;
            }
            self.rows[old] = None;
        }
        let xi = &self.x[i];
        self.rows[i] = Some(self.x.iter().map(|xj| self.kernel.eval(xi, xj)).collect());
        self.order.push_back(i);
    }

    fn row(&self, i: usize) -> &[f64] {
        self.rows[i].as_deref().expect("row ensured before use")
    }
}

pub fn fit_svr(data: &Dataset, params: &SvrParams) -> Result<SvrModel, BaselineError> {
    fit_svr_detailed(data, params).map(|f| f.model)
}

pub fn fit_svr_detailed(data: &Dataset, params: &SvrParams) -> Result<SvrFit, BaselineError> {
    let n = data.len();
    if n < 2 {
        return Err(BaselineError::TooFewRows { needed: 2, got: n });
    }
    if !(params.c.is_finite() && params.c > 0.0) {
        return Err(BaselineError::InvalidParams(format!("c = {}", params.c)));
    }
    if !(params.epsilon.is_finite() && params.epsilon >= 0.0) {
        return Err(BaselineError::InvalidParams(format!("epsilon = {}", params.epsilon)));
    }
    if let Kernel::Rbf { gamma } = params.kernel {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(BaselineError::InvalidParams(format!("gamma = {gamma}")));
        }
    }
    let scaling = fit_scaling(data);
    let xm = scaling.scale_inputs(data);
    let z = scaling.scale_targets(data);
    let x: Vec<Vec<f64>> = (0..n).map(|k| xm.row(k).iter().copied().collect()).collect();
    let c = params.c;

    // Variables t < n are a+ (sign +1), t >= n are a- (sign -1).
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let diag: Vec<f64> = x.iter().map(|xi| params.kernel.eval(xi, xi)).collect();
    let mut alpha = vec![0.0f64; 2 * n];
    let mut grad: Vec<f64> = (0..2 * n)
        .map(|t| {
            if t < n {
                params.epsilon - z[t]
            } else {
                params.epsilon + z[t - n]
            }
        })
        .collect();
    let mut cache = KernelRows::new(&x, params.kernel, params.cache_rows);
    let max_iter = params.max_passes.unwrap_or(10 * n).saturating_mul(n);
    let is_upper = |a: f64| a >= c;
    let is_lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    loop {
        // i maximizes -y G over the "up" set.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..2 * n {
            let y = sign(t);
            let can_up = if y > 0.0 { !is_upper(alpha[t]) } else { !is_lower(alpha[t]) };
            if can_up && -y * grad[t] >= gmax {
                gmax = -y * grad[t];
                i_sel = Some(t);
            }
        }
        let Some(i) = i_sel else { break };
        cache.ensure(i % n, i % n);
        let yi = sign(i);
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best = f64::INFINITY;
        {
            let ki = cache.row(i % n);
            for t in 0..2 * n {
                let y = sign(t);
                let can_down = if y > 0.0 { !is_lower(alpha[t]) } else { !is_upper(alpha[t]) };
                if !can_down {
                    continue;
                }
                let yg = y * grad[t];
                if yg >= gmax2 {
                    gmax2 = yg;
                }
                let diff = gmax + yg;
                if diff > 0.0 {
                    let q_it = yi * y * ki[t % n];
                    let mut quad = diag[i % n] + diag[t % n] - 2.0 * yi * y * q_it;
                    if quad <= 0.0 {
                        quad = TAU;
                    }
                    let obj = -(diff * diff) / quad;
                    if obj <= best {
                        best = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        if gmax + gmax2 < params.tol || j_sel.is_none() {
            break;
        }
        if iterations >= max_iter {
            return Err(BaselineError::NoConvergence { iterations });
        }
        iterations += 1;
        let j = j_sel.unwrap();
        cache.ensure(j % n, i % n);
        let yj = sign(j);
        let kij = cache.row(i % n)[j % n];
        let q_ij = yi * yj * kij;
        let (ai_old, aj_old) = (alpha[i], alpha[j]);
        let (mut ai, mut aj) = (ai_old, aj_old);
        if yi != yj {
            let mut quad = diag[i % n] + diag[j % n] + 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let mut quad = diag[i % n] + diag[j % n] - 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (dai, daj) = (ai - ai_old, aj - aj_old);
        let ki = cache.row(i % n);
        let kj = cache.row(j % n);
        for m in 0..n {
            // Q[t][s] = y_t y_s K; update the a+ and a- halves together.
            let u = yi * dai * ki[m] + yj * daj * kj[m];
            grad[m] += u;
            grad[m + n] -= u;
        }
    }

    // Bias from free variables, or the middle of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free_n) = (0.0, 0usize);
    for t in 0..2 * n {
        let y = sign(t);
        let yg = y * grad[t];
        if is_upper(alpha[t]) {
            if y < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if is_lower(alpha[t]) {
            if y > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            free_n += 1;
        }
    }
    let rho = if free_n > 0 {
        free_sum / free_n as f64
    } else {
        (ub + lb) / 2.0
    };

    let coef: Vec<f64> = (0..n).map(|k| alpha[k] - alpha[k + n]).collect();
    let (support_vectors, dual_coef): (Vec<Vec<f64>>, Vec<f64>) = coef
        .iter()
        .enumerate()
        .filter(|(_, b)| **b != 0.0)
        .map(|(k, b)| (x[k].clone(), *b))
        .unzip();
    Ok(SvrFit {
        model: SvrModel {
            kernel: params.kernel,
            c,
            epsilon: params.epsilon,
            support_vectors,
            dual_coef,
            bias: -rho,
            scaling,
        },
        coef,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tube_absorbs_constant_targets() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let ds = Dataset::from_rows(&rows, &[0.0; 20]).unwrap();
        let fit = fit_svr_detailed(&ds, &SvrParams::default()).unwrap();
        assert!(fit.coef.iter().all(|&b| b == 0.0));
        assert!(fit.model.support_vectors.is_empty());
        assert_eq!(fit.model.predict_one(&[3.0, 4.0]).unwrap(), fit.model.scaling.output.invert(fit.model.bias));
        assert!(fit.model.predict_one(&[3.0, 4.0]).unwrap().abs() < 1e-12);
    }

    fn linear_1d(seed: u64, n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
        let ys: Vec<f64> = rows.iter().map(|r| 0.8 * r[0] - 0.3).collect();
        Dataset::from_rows(&rows, &ys).unwrap()
    }

    #[test]
    fn linear_kernel_recovers_line() {
        let params = SvrParams {
            kernel: Kernel::Linear,
            c: 100.0,
            epsilon: 0.01,
            ..SvrParams::default()
        };
        let m = fit_svr(&linear_1d(1, 80), &params).unwrap();
        let test = linear_1d(2, 200);
        let mse: f64 = (0..test.len())
            .map(|k| (m.predict_one(&test.row(k)).unwrap() - test.targets()[k]).powi(2))
            .sum::<f64>()
            / test.len() as f64;
        assert!(mse.sqrt() <= 0.02, "rmse {}", mse.sqrt());
    }

    #[test]
    fn kkt_conditions_hold_at_exit() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..120)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ys: Vec<f64> = rows
            .iter()
            .map(|r| (2.0 * r[0]).sin() + r[1] * r[2] + rng.random_range(-0.1..0.1))
            .collect();
        let ds = Dataset::from_rows(&rows, &ys).unwrap();
        let params = SvrParams {
            epsilon: 0.05,
            c: 2.0,
            ..SvrParams::default()
        };
        let fit = fit_svr_detailed(&ds, &params).unwrap();
        let m = &fit.model;
        let xs = m.scaling.scale_inputs(&ds);
        let zs = m.scaling.scale_targets(&ds);
        let tol = params.tol;
        for k in 0..ds.len() {
            let xk: Vec<f64> = xs.row(k).iter().copied().collect();
            let r = m.decision(&xk) - zs[k];
            let b = fit.coef[k];
            assert!(b.abs() <= params.c + 1e-12);
            let e = params.epsilon;
            if b == 0.0 {
                assert!(r.abs() <= e + tol, "row {k}: r={r}");
            } else if b > 0.0 && b < params.c {
                assert!((r + e).abs() <= tol, "row {k}: r={r}");
            } else if b >= params.c {
                assert!(r <= -e + tol);
            } else if b > -params.c {
                assert!((r - e).abs() <= tol, "row {k}: r={r}");
            } else {
                assert!(r >= e - tol);
            }
            // Strictly inside the tube means no coefficient.
            if r.abs() < e - tol {
                assert_eq!(b, 0.0);
            }
        }
        // Predictions agree with the stored decision function.
        for k in 0..5 {
            let xk: Vec<f64> = xs.row(k).iter().copied().collect();
            let p = m.predict_one(&ds.row(k)).unwrap();
            assert!((p - m.scaling.output.invert(m.decision(&xk))).abs() < 1e-12);
        }
    }

    #[test]
    fn small_cache_gives_same_answer() {
        let ds = linear_1d(4, 60);
        let a = fit_svr_detailed(&ds, &SvrParams::default()).unwrap();
        let b = fit_svr_detailed(
            &ds,
            &SvrParams {
                cache_rows: 2,
                ..SvrParams::default()
            },
        )
        .unwrap();
        assert_eq!(a.coef, b.coef);
        assert_eq!(a.model.bias, b.model.bias);
    }

    #[test]
    fn rejects_bad_params() {
        let ds = linear_1d(5, 10);
        for p in [
            SvrParams { c: 0.0, ..SvrParams::default() },
            SvrParams { epsilon: -1.0, ..SvrParams::default() },
            SvrParams { kernel: Kernel::Rbf { gamma: 0.0 }, ..SvrParams::default() },
        ] {
            assert!(matches!(fit_svr(&ds, &p), Err(BaselineError::InvalidParams(_))));
        }
    }
}
