use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_data, raw_mse, Algorithm, StopReason, TraceEntry, TrainError, TrainReport};
use crate::mlp::{Dataset, MlpModel};

/// Damping never drops below this, so the damped system stays definite.
const LAMBDA_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub lambda0: f64,
    /// Multiplier after a rejected step.
    pub lambda_up: f64,
    /// Divisor after an accepted step.
    pub lambda_down: f64,
    pub lambda_max: f64,
    pub max_iters: usize,
    pub min_grad: f64,
    pub min_step: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            lambda0: 10.0,
            lambda_up: 10.0,
            lambda_down: 10.0,
            lambda_max: 1e10,
            max_iters: 1000,
            min_grad: 1e-10,
            min_step: 1e-12,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("lambda0", self.lambda0),
            ("lambda_max", self.lambda_max),
            ("min_grad", self.min_grad),
            ("min_step", self.min_step),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(TrainError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda_up > 1.0 && self.lambda_down > 1.0) {
            return Err(TrainError::InvalidConfig(
                "lambda_up and lambda_down must exceed 1".into(),
            ));
        }
        Ok(())
    }
}

/// Solves `(beta * JtJ + shift * I) h = g` by Cholesky with one round of
/// iterative refinement. `None` when the matrix is not positive definite.
pub fn damped_step(jtj: &DMatrix<f64>, g: &DVector<f64>, beta: f64, shift: f64) -> Option<DVector<f64>> {
    let mut a = jtj * beta;
    for d in 0..a.nrows() {
        a[(d, d)] += shift;
    }
    let chol = a.clone().cholesky()?;
    let mut h = chol.solve(g);
    let r = g - &a * &h;
    h += chol.solve(&r);
    h.iter().all(|v| v.is_finite()).then_some(h)
}

/// Penalized least-squares objective `beta * SSE + alpha * |w|^2`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Objective {
    pub alpha: f64,
    pub beta: f64,
}

impl Objective {
    pub fn value(&self, sse: f64, w: &DVector<f64>) -> f64 {
        self.beta * sse + self.alpha * w.norm_squared()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmRun {
    pub iterations: usize,
    pub stop: StopReason,
    pub sse: f64,
}

/// Levenberg-Marquardt on `obj`, updating `model` and `lambda` in place.
/// `on_iter` sees the scaled SSE and the damping after every iteration.
pub(crate) fn minimize(
    model: &mut MlpModel,
    xs: &DMatrix<f64>,
    ts: &DVector<f64>,
    obj: Objective,
    lambda: &mut f64,
    cfg: &LmConfig,
    max_iters: usize,
    mut on_iter: impl FnMut(f64, f64),
) -> Result<LmRun, TrainError> {
    let mut w = model.flatten();
    let mut a = model.hidden_activations(xs);
    let mut e = ts - model.outputs_from_activations(&a);
    let mut sse = e.norm_squared();
    let mut f = obj.value(sse, &w);
    if !f.is_finite() {
        return Err(TrainError::NonFiniteLoss { iteration: 0 });
    }
    let mut trial = model.clone();
    let mut iterations = 0;
    let mut stop = StopReason::MaxIterations;
    while iterations < max_iters {
        let jt = model.jacobian_t_from_activations(xs, &a);
        let jtj = &jt * jt.transpose();
        // Half the gradient of the objective (J is de/dw, so the step is subtracted).
        let g = (&jt * &e) * obj.beta + &w * obj.alpha;
        if 2.0 * g.norm() < cfg.min_grad {
            stop = StopReason::SmallGradient;
            break;
        }
        let mut accepted = None;
        let mut solved = false;
        loop {
            if let Some(h) = damped_step(&jtj, &g, obj.beta, obj.alpha + *lambda) {
                solved = true;
                let w_new = &w - &h;
                trial.set_params(w_new.as_slice())?;
                let a_new = trial.hidden_activations(xs);
                let e_new = ts - trial.outputs_from_activations(&a_new);
                let sse_new = e_new.norm_squared();
                let f_new = obj.value(sse_new, &w_new);
                if f_new.is_finite() && f_new < f {
                    *lambda = (*lambda / cfg.lambda_down).max(LAMBDA_FLOOR);
                    accepted = Some((h.norm(), w_new, a_new, e_new, sse_new, f_new));
                    break;
                }
            }
            *lambda *= cfg.lambda_up;
            if *lambda > cfg.lambda_max {
                if !solved {
                    return Err(TrainError::SingularNormalEquations { lambda: *lambda });
                }
                break;
            }
        }
        iterations += 1;
        match accepted {
            None => {
                on_iter(sse, *lambda);
                stop = StopReason::LambdaMax;
                break;
            }
            Some((step, w_new, a_new, e_new, sse_new, f_new)) => {
                model.set_params(w_new.as_slice())?;
                w = w_new;
                a = a_new;
                e = e_new;
                sse = sse_new;
                f = f_new;
                on_iter(sse, *lambda);
                if step < cfg.min_step {
                    stop = StopReason::SmallStep;
                    break;
                }
            }
        }
    }
    Ok(LmRun {
        iterations,
        stop,
        sse,
    })
}

/// Plain Levenberg-Marquardt on the scaled sum of squared errors.
pub fn train_lm(model: &MlpModel, data: &Dataset, cfg: &LmConfig) -> Result<(MlpModel, TrainReport), TrainError> {
    cfg.validate()?;
    check_data(model, data)?;
    let started = Instant::now();
    let xs = model.scaling.scale_inputs(data);
    let ts = model.scaling.scale_targets(data);
    let mut m = model.clone();
    let mut lambda = cfg.lambda0;
    let mut trace = Vec::new();
    let to_mse = |sse: f64| raw_mse(model, sse, data.len());
    let run = minimize(
        &mut m,
        &xs,
        &ts,
        Objective { alpha: 0.0, beta: 1.0 },
        &mut lambda,
        cfg,
        cfg.max_iters,
        |sse, lam| {
            trace.push(TraceEntry {
                lambda: Some(lam),
                ..TraceEntry::mse(to_mse(sse))
            })
        },
    )?;
    let report = TrainReport {
        algorithm: Algorithm::Lm,
        iterations: run.iterations,
        final_mse: to_mse(run.sse),
        stop_reason: run.stop,
        trace,
        seed: None,
        wall_time_s: Some(started.elapsed().as_secs_f64()),
    };
    Ok((m, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::fit_scaling;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn teacher_data(n_in: usize, hidden: usize, n: usize, seed: u64) -> Dataset {
        let teacher = MlpModel::init(n_in, hidden, seed ^ 0xabc);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut t = teacher.clone();
        for v in t.hidden_weights.iter_mut() {
            *v *= 6.0;
        }
        let ys: Vec<f64> = rows.iter().map(|r| t.forward(r).unwrap()).collect();
        Dataset::from_rows(&rows, &ys).unwrap()
    }

    fn student(data: &Dataset, hidden: usize, seed: u64) -> MlpModel {
        MlpModel::init(data.n_features(), hidden, seed).with_scaling(fit_scaling(data))
    }

    #[test]
    fn recovers_single_unit_generator() {
        let data = teacher_data(3, 1, 60, 11);
        let (m, report) = train_lm(&student(&data, 1, 5), &data, &LmConfig::default()).unwrap();
        let xs = m.scaling.scale_inputs(&data);
        let ts = m.scaling.scale_targets(&data);
        let sse = m.scaled_residuals(&xs, &ts).norm_squared();
        assert!(sse < 1e-10, "sse {sse}, stop {:?}", report.stop_reason);
        assert_eq!(report.trace.len(), report.iterations);
    }

    fn system(seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let data = teacher_data(4, 3, 40, seed);
        let m = student(&data, 3, seed + 1);
        let xs = m.scaling.scale_inputs(&data);
        let ts = m.scaling.scale_targets(&data);
        (m.scaled_jacobian(&xs), m.scaled_residuals(&xs, &ts))
    }

    #[test]
    fn zero_damping_is_gauss_newton() {
        let (j, e) = system(3);
        let jt = j.transpose();
        let h = damped_step(&(&jt * &j), &(&jt * &e), 1.0, 0.0).unwrap();
        // Least-squares solution of J h = e by SVD.
        let gn = j.clone().svd(true, true).solve(&e, 1e-14).unwrap();
        assert!((&h - &gn).norm() <= 1e-6 * gn.norm(), "{} vs {}", h.norm(), gn.norm());
    }

    #[test]
    fn heavy_damping_is_gradient_direction() {
        let (j, e) = system(4);
        let jt = j.transpose();
        let g = &jt * &e;
        let h = damped_step(&(&jt * &j), &g, 1.0, 1e8).unwrap();
        let cos = h.dot(&g) / (h.norm() * g.norm());
        assert!(1.0 - cos < 1e-3, "cosine {cos}");
    }

    #[test]
    fn damped_solve_residual_is_small() {
        let (j, e) = system(5);
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * &e;
        for lambda in [1e-8, 1e-3, 1.0, 10.0, 1e6] {
            let h = damped_step(&jtj, &g, 1.0, lambda).unwrap();
            let mut a = jtj.clone();
            for d in 0..a.nrows() {
                a[(d, d)] += lambda;
            }
            let r = (&a * &h - &g).norm();
            assert!(r <= 1e-8 * g.norm(), "lambda {lambda}: residual {r}");
        }
    }

    #[test]
    fn deterministic() {
        let data = teacher_data(5, 4, 80, 9);
        let cfg = LmConfig {
            max_iters: 30,
            ..LmConfig::default()
        };
        let (a, ra) = train_lm(&student(&data, 6, 1), &data, &cfg).unwrap();
        let (b, rb) = train_lm(&student(&data, 6, 1), &data, &cfg).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        assert_eq!(ra.trace, rb.trace);
    }

    #[test]
    fn rejects_bad_config() {
        let data = teacher_data(2, 1, 10, 1);
        let m = student(&data, 2, 1);
        for cfg in [
            LmConfig { lambda_up: 1.0, ..LmConfig::default() },
            LmConfig { lambda0: 0.0, ..LmConfig::default() },
            LmConfig { min_grad: f64::NAN, ..LmConfig::default() },
        ] {
            assert!(matches!(train_lm(&m, &data, &cfg), Err(TrainError::InvalidConfig(_))));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn trace_never_increases(seed in 0u64..1000, hidden in 1usize..6) {
            let data = teacher_data(3, 2, 30, seed);
            let m0 = student(&data, hidden, seed + 7);
            let cfg = LmConfig { max_iters: 25, ..LmConfig::default() };
            let (m, report) = train_lm(&m0, &data, &cfg).unwrap();
            let initial = crate::train::mse_raw(&m0, &data).unwrap();
            let last = crate::train::mse_raw(&m, &data).unwrap();
            prop_assert!(last <= initial);
            prop_assert_eq!(report.trace.len(), report.iterations);
            for pair in report.trace.windows(2) {
                prop_assert!(pair[1].mse <= pair[0].mse);
            }
        }
    }
}
