use std::time::Instant;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{minimize, Objective};
use super::{check_data, raw_mse, Algorithm, LmConfig, StopReason, TraceEntry, TrainError, TrainReport};
use crate::mlp::{Dataset, MlpModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrConfig {
    /// Inner optimizer settings; `lm.max_iters` caps the total number of
    /// inner iterations across all outer passes.
    pub lm: LmConfig,
    pub max_outer: usize,
    /// Relative change of both hyperparameters that ends the outer loop.
    pub tol: f64,
    /// Inner iterations per outer pass.
    pub inner_iters: usize,
    pub alpha0: f64,
    pub beta0: f64,
}

impl Default for BrConfig {
    fn default() -> Self {
        Self {
            lm: LmConfig::default(),
            max_outer: 50,
            tol: 1e-3,
            inner_iters: 20,
            alpha0: 0.0,
            beta0: 1.0,
        }
    }
}

impl BrConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.lm.validate()?;
        if self.max_outer == 0 || self.inner_iters == 0 {
            return Err(TrainError::InvalidConfig(
                "max_outer and inner_iters must be at least 1".into(),
            ));
        }
        if !(self.tol > 0.0 && self.alpha0 >= 0.0 && self.beta0 > 0.0)
            || !(self.alpha0.is_finite() && self.beta0.is_finite())
        {
            return Err(TrainError::InvalidConfig(
                "need tol > 0, alpha0 >= 0, beta0 > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Hyperparameters after one outer pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrOuter {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub e_d: f64,
    pub e_w: f64,
    pub objective: f64,
    pub inner_iterations: usize,
}

/// Final evidence-framework state. `e_d` is the scaled sum of squared
/// errors and `e_w` the sum of squared parameters (biases included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrState {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub e_d: f64,
    pub e_w: f64,
    /// `beta * e_d + alpha * e_w`.
    pub objective: f64,
    pub n_params: usize,
    pub converged: bool,
    pub history: Vec<BrOuter>,
}

/// `N - alpha * tr((beta J^T J + alpha I)^-1)`.
fn effective_params(jtj: &DMatrix<f64>, alpha: f64, beta: f64) -> Result<f64, TrainError> {
    let np = jtj.nrows() as f64;
    if alpha == 0.0 {
        return Ok(np);
    }
    let half_hessian = |jitter: f64| {
        let mut a = jtj * beta;
        for d in 0..a.nrows() {
            a[(d, d)] += alpha + jitter;
        }
        a
    };
    let chol = half_hessian(0.0)
        .cholesky()
        .or_else(|| half_hessian(1e-12).cholesky())
        .ok_or(TrainError::HessianNotInvertible)?;
    let trace = chol.inverse().trace();
    if !trace.is_finite() {
        return Err(TrainError::HessianNotInvertible);
    }
    Ok(np - alpha * trace)
}

/// Levenberg-Marquardt on `beta * E_D + alpha * E_W` with the
/// hyperparameters re-estimated after every outer pass.
pub fn train_br(model: &MlpModel, data: &Dataset, cfg: &BrConfig) -> Result<(MlpModel, BrState, TrainReport), TrainError> {
    cfg.validate()?;
    check_data(model, data)?;
    if data.len() < 2 {
        return Err(TrainError::InvalidConfig("Bayesian regularization needs at least 2 rows".into()));
    }
    let started = Instant::now();
    let xs = model.scaling.scale_inputs(data);
    let ts = model.scaling.scale_targets(data);
    let n = data.len() as f64;
    let np = model.param_count();
    let to_mse = |sse: f64| raw_mse(model, sse, data.len());

    let mut m = model.clone();
    let (mut alpha, mut beta) = (cfg.alpha0, cfg.beta0);
    let mut gamma = np as f64;
    let mut lambda = cfg.lm.lambda0;
    let mut trace = Vec::new();
    let mut history = Vec::new();
    let mut total = 0;
    let mut converged = false;
    let mut last_stop = StopReason::MaxIterations;
    let (mut e_d, mut e_w) = (f64::NAN, f64::NAN);

    for _ in 0..cfg.max_outer {
        if total >= cfg.lm.max_iters {
            break;
        }
        if lambda > cfg.lm.lambda_max {
            lambda = cfg.lm.lambda0;
        }
        let budget = cfg.inner_iters.min(cfg.lm.max_iters - total);
        let run = minimize(
            &mut m,
            &xs,
            &ts,
            Objective { alpha, beta },
            &mut lambda,
            &cfg.lm,
            budget,
            |sse, lam| {
                trace.push(TraceEntry {
                    mse: to_mse(sse),
                    lambda: Some(lam),
                    alpha: Some(alpha),
                    beta: Some(beta),
                    gamma: Some(gamma),
                })
            },
        )?;
        total += run.iterations;
        last_stop = run.stop;

        let w = m.flatten();
        let a = m.hidden_activations(&xs);
        e_d = run.sse;
        e_w = w.norm_squared();
        let jt = m.jacobian_t_from_activations(&xs, &a);
        let jtj = &jt * jt.transpose();
        let raw_gamma = effective_params(&jtj, alpha, beta)?;
        gamma = raw_gamma.clamp(0.0, np as f64);
        if (raw_gamma - gamma).abs() > 1e-6 {
            warn!("effective parameter count {raw_gamma} clipped to [0, {np}]");
        }

        let new_alpha = if e_w > 0.0 { gamma / (2.0 * e_w) } else { alpha };
        let new_beta = if n - gamma > 0.0 && e_d > 0.0 {
            (n - gamma) / (2.0 * e_d)
        } else {
            warn!("beta update skipped: n - gamma = {}, E_D = {e_d}", n - gamma);
            beta
        };
        if !(new_alpha.is_finite() && new_beta.is_finite()) || new_alpha < 0.0 || new_beta <= 0.0 {
            return Err(TrainError::NonFiniteHyperparameter {
                alpha: new_alpha,
                beta: new_beta,
            });
        }
        converged = alpha > 0.0
            && ((new_alpha - alpha) / alpha).abs() < cfg.tol
            && ((new_beta - beta) / beta).abs() < cfg.tol;
        alpha = new_alpha;
        beta = new_beta;
        history.push(BrOuter {
            alpha,
            beta,
            gamma,
            e_d,
            e_w,
            objective: beta * e_d + alpha * e_w,
            inner_iterations: run.iterations,
        });
        if converged {
            break;
        }
    }
    if history.is_empty() {
        // Zero budget: report the starting point.
        let e = m.scaled_residuals(&xs, &ts);
        e_d = e.norm_squared();
        e_w = m.flatten().norm_squared();
    }

    let state = BrState {
        alpha,
        beta,
        gamma,
        e_d,
        e_w,
        objective: beta * e_d + alpha * e_w,
        n_params: np,
        converged,
        history,
    };
    let report = TrainReport {
        algorithm: Algorithm::Br,
        iterations: total,
        final_mse: to_mse(e_d),
        stop_reason: if converged { StopReason::Converged } else { last_stop },
        trace,
        seed: None,
        wall_time_s: Some(started.elapsed().as_secs_f64()),
    };
    Ok((m, state, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::fit_scaling;
    use crate::train::{mse_raw, train_lm};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn generated(n: usize, noise: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut teacher = MlpModel::init(4, 3, 99);
        for v in teacher.hidden_weights.iter_mut() {
            *v *= 4.0;
        }
        let xs = rows(n, 4, &mut rng);
        let noise = Normal::new(0.0, noise).unwrap();
        let ys: Vec<f64> = xs
            .iter()
            .map(|r| teacher.forward(r).unwrap() + noise.sample(&mut rng))
            .collect();
        Dataset::from_rows(&xs, &ys).unwrap()
    }

    fn start(data: &Dataset, hidden: usize, seed: u64) -> MlpModel {
        MlpModel::init(data.n_features(), hidden, seed).with_scaling(fit_scaling(data))
    }

    #[test]
    fn first_pass_is_plain_lm() {
        let data = generated(60, 0.01, 1);
        let m0 = start(&data, 4, 2);
        let cfg = BrConfig {
            max_outer: 1,
            inner_iters: 7,
            ..BrConfig::default()
        };
        let (br, state, _) = train_br(&m0, &data, &cfg).unwrap();
        let lm_cfg = LmConfig {
            max_iters: 7,
            ..LmConfig::default()
        };
        let (lm, _) = train_lm(&m0, &data, &lm_cfg).unwrap();
        assert_eq!(br.flatten(), lm.flatten());
        assert_eq!(state.history[0].gamma, m0.param_count() as f64);
    }

    #[test]
    fn noise_targets_leave_few_effective_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs = rows(300, 4, &mut rng);
        let ys: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..1.0)).collect();
        let data = Dataset::from_rows(&xs, &ys).unwrap();
        let test_x = rows(400, 4, &mut rng);
        let test_y: Vec<f64> = (0..400).map(|_| rng.random_range(0.0..1.0)).collect();
        let test = Dataset::from_rows(&test_x, &test_y).unwrap();
        let m0 = start(&data, 30, 4);
        let (m, state, _) = train_br(&m0, &data, &BrConfig::default()).unwrap();
        let np = m0.param_count() as f64;
        assert!(state.gamma < 0.25 * np, "gamma {} of {np}", state.gamma);
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let baseline = test_y.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / test_y.len() as f64;
        let mse = mse_raw(&m, &test).unwrap();
        assert!(mse <= 2.0 * baseline, "{mse} vs {baseline}");
    }

    #[test]
    fn beta_grows_on_noiseless_data() {
        let data = generated(150, 0.0, 5);
        let m0 = start(&data, 3, 6);
        let cfg = BrConfig {
            inner_iters: 5,
            ..BrConfig::default()
        };
        let (_, state, _) = train_br(&m0, &data, &cfg).unwrap();
        let betas: Vec<f64> = state.history.iter().map(|h| h.beta).collect();
        assert!(betas.len() >= 3);
        assert!(betas[1] > betas[0] && betas[2] > betas[1], "{betas:?}");
    }

    #[test]
    fn state_invariants_and_objective() {
        let data = generated(120, 0.05, 7);
        let m0 = start(&data, 6, 8);
        let (m, state, report) = train_br(&m0, &data, &BrConfig::default()).unwrap();
        let np = m0.param_count() as f64;
        for h in &state.history {
            assert!(h.alpha >= 0.0 && h.beta >= 0.0);
            assert!((0.0..=np).contains(&h.gamma));
            assert!(h.alpha.is_finite() && h.beta.is_finite());
        }
        let xs = m.scaling.scale_inputs(&data);
        let ts = m.scaling.scale_targets(&data);
        let e_d = m.scaled_residuals(&xs, &ts).norm_squared();
        let e_w: f64 = m.flatten().iter().map(|w| w * w).sum();
        let f = state.beta * e_d + state.alpha * e_w;
        assert!((f - state.objective).abs() <= 1e-10 * f.abs());
        assert_eq!(report.trace.len(), report.iterations);
    }

    #[test]
    fn deterministic() {
        let data = generated(80, 0.02, 9);
        let m0 = start(&data, 5, 10);
        let cfg = BrConfig {
            max_outer: 5,
            ..BrConfig::default()
        };
        let (a, sa, _) = train_br(&m0, &data, &cfg).unwrap();
        let (b, sb, _) = train_br(&m0, &data, &cfg).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        assert_eq!(sa, sb);
    }

    #[test]
    fn gamma_formula_matches_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let j = DMatrix::from_fn(30, 8, |_, _| rng.random_range(-1.0..1.0));
        let jtj = j.transpose() * &j;
        let (alpha, beta) = (0.7, 3.0);
        let eig = jtj.clone().symmetric_eigen().eigenvalues;
        // sum of beta*l / (beta*l + alpha)
        let expected: f64 = eig.iter().map(|l| beta * l / (beta * l + alpha)).sum();
        let got = effective_params(&jtj, alpha, beta).unwrap();
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }
}
