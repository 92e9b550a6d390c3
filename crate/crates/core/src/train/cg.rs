use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_data, raw_mse, Algorithm, StopReason, TraceEntry, TrainError, TrainReport};
use crate::mlp::{Dataset, MlpModel};

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CgConfig {
    pub max_iters: usize,
    /// Stop when the gradient norm falls below this.
    pub tol: f64,
    /// Directions between restarts; `None` means the parameter count.
    pub restart: Option<usize>,
    /// Optional per-parameter mask in flattened order; masked-out
    /// parameters keep their starting values.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trainable: Option<Vec<bool>>,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            tol: 1e-10,
            restart: None,
            trainable: None,
        }
    }
}

struct Problem<'a> {
    model: MlpModel,
    xs: &'a DMatrix<f64>,
    ts: &'a DVector<f64>,
    mask: Option<&'a [bool]>,
}

impl Problem<'_> {
    fn sse(&mut self, w: &DVector<f64>) -> Result<f64, TrainError> {
        self.model.set_params(w.as_slice())?;
        Ok(self.model.scaled_residuals(self.xs, self.ts).norm_squared())
    }

    fn sse_grad(&mut self, w: &DVector<f64>) -> Result<(f64, DVector<f64>), TrainError> {
        self.model.set_params(w.as_slice())?;
        let (f, mut g) = self.model.sse_gradient(self.xs, self.ts);
        if let Some(mask) = self.mask {
            for (gi, &on) in g.iter_mut().zip(mask) {
                if !on {
                    *gi = 0.0;
                }
            }
        }
        Ok((f, g))
    }
}

/// Armijo backtracking along `d` from `w`, refined by the minimizer of the
/// quadratic through `f(0)`, `f'(0)` and `f(t)`.
fn line_search(
    p: &mut Problem,
    w: &DVector<f64>,
    f0: f64,
    slope: f64,
    d: &DVector<f64>,
    t0: f64,
) -> Result<Option<(f64, f64)>, TrainError> {
    let mut t = t0;
    for _ in 0..MAX_BACKTRACKS {
        let ft = p.sse(&(w + d * t))?;
        let curvature = ft - f0 - slope * t;
        let t_quad = if curvature > 0.0 {
            -slope * t * t / (2.0 * curvature)
        } else {
            f64::NAN
        };
        if ft.is_finite() && ft <= f0 + ARMIJO_C * t * slope {
            // Try the interpolated minimizer once when it moves the step.
            if t_quad.is_finite() && t_quad > 0.0 && (t_quad - t).abs() > 1e-3 * t {
                let fq = p.sse(&(w + d * t_quad))?;
                if fq.is_finite() && fq < ft && fq <= f0 + ARMIJO_C * t_quad * slope {
                    return Ok(Some((t_quad, fq)));
                }
            }
            return Ok(Some((t, ft)));
        }
        t = if t_quad.is_finite() {
            t_quad.clamp(0.1 * t, 0.5 * t)
        } else {
            0.5 * t
        };
        if t * d.norm() < f64::EPSILON * (1.0 + w.norm()) {
            break;
        }
    }
    Ok(None)
}

/// Fletcher-Reeves nonlinear conjugate gradient on the scaled sum of
/// squared errors.
pub fn train_cg(model: &MlpModel, data: &Dataset, cfg: &CgConfig) -> Result<(MlpModel, TrainReport), TrainError> {
    check_data(model, data)?;
    let np = model.param_count();
    if let Some(mask) = &cfg.trainable {
        if mask.len() != np {
            return Err(TrainError::InvalidConfig(format!(
                "trainable mask has {} entries for {np} parameters",
                mask.len()
            )));
        }
    }
    if !(cfg.tol >= 0.0) {
        return Err(TrainError::InvalidConfig(format!("tol = {}", cfg.tol)));
    }
    let started = Instant::now();
    let xs = model.scaling.scale_inputs(data);
    let ts = model.scaling.scale_targets(data);
    let restart = cfg.restart.unwrap_or(np).max(1);
    let to_mse = |sse: f64| raw_mse(model, sse, data.len());
    let mut p = Problem {
        model: model.clone(),
        xs: &xs,
        ts: &ts,
        mask: cfg.trainable.as_deref(),
    };

    let mut w = model.flatten();
    let (mut f, mut g) = p.sse_grad(&w)?;
    if !f.is_finite() {
        return Err(TrainError::NonFiniteLoss { iteration: 0 });
    }
    let mut d = -&g;
    let mut since_restart = 0;
    let mut prev: Option<(f64, f64)> = None; // (step, slope)
    let mut trace = Vec::new();
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        if g.norm() < cfg.tol {
            trace.push(TraceEntry::mse(to_mse(f)));
            stop = StopReason::SmallGradient;
            break;
        }
        let mut slope = g.dot(&d);
        if slope >= 0.0 {
            d = -&g;
            slope = -g.norm_squared();
            since_restart = 0;
        }
        let t0 = match prev {
            Some((t, s)) => (t * s / slope).min(1e6 / d.norm()),
            None => 1.0 / d.norm().max(1.0),
        };
        let mut found = line_search(&mut p, &w, f, slope, &d, t0)?;
        if found.is_none() && since_restart > 0 {
            d = -&g;
            slope = -g.norm_squared();
            since_restart = 0;
            found = line_search(&mut p, &w, f, slope, &d, 1.0 / d.norm().max(1.0))?;
        }
        let Some((t, _)) = found else {
            trace.push(TraceEntry::mse(to_mse(f)));
            stop = StopReason::LineSearchFailed;
            break;
        };
        w += &d * t;
        let (f_new, g_new) = p.sse_grad(&w)?;
        if !f_new.is_finite() {
            return Err(TrainError::NonFiniteLoss { iteration: iterations });
        }
        prev = Some((t, slope));
        since_restart += 1;
        if since_restart >= restart {
            d = -&g_new;
            since_restart = 0;
        } else {
            let fr = g_new.norm_squared() / g.norm_squared();
            d = -&g_new + &d * fr;
        }
        f = f_new;
        g = g_new;
        trace.push(TraceEntry::mse(to_mse(f)));
    }

    p.model.set_params(w.as_slice())?;
    let report = TrainReport {
        algorithm: Algorithm::Cg,
        iterations,
        final_mse: to_mse(f),
        stop_reason: stop,
        trace,
        seed: None,
        wall_time_s: Some(started.elapsed().as_secs_f64()),
    };
    Ok((p.model, report))
}
