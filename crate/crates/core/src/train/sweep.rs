use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_mlp, mse_raw, Algorithm, TrainConfig, TrainError};
use crate::derive_seed;
use crate::mlp::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub candidates: Vec<usize>,
    pub folds: usize,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            candidates: (1..=12).map(|k| 5 * k).collect(),
            folds: 5,
            algorithm: Algorithm::Br,
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub hidden: usize,
    /// Pooled held-out MSE over all folds; absent if any fold failed.
    pub cv_mse: Option<f64>,
    pub fold_mse: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Sorted by hidden size.
    pub rows: Vec<SweepRow>,
    pub selected: Option<usize>,
}

impl SweepResult {
    /// `hidden,cv_mse,failed_folds` with an empty cell for disqualified rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("hidden,cv_mse,failed_folds\n");
        for r in &self.rows {
            let failed = r.fold_mse.iter().filter(|m| m.is_none()).count();
            let mse = r.cv_mse.map(|v| format!("{v:e}")).unwrap_or_default();
            out.push_str(&format!("{},{mse},{failed}\n", r.hidden));
        }
        out
    }
}

/// Fold membership for each row, balanced and seeded.
fn assign_folds(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xf01d])));
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % folds;
    }
    fold
}

/// k-fold cross-validated MSE for each candidate hidden size.
pub fn sweep_hidden(data: &Dataset, cfg: &SweepConfig) -> Result<SweepResult, TrainError> {
    if cfg.candidates.is_empty() || cfg.candidates.contains(&0) {
        return Err(TrainError::InvalidConfig("candidates must be non-empty and positive".into()));
    }
    if cfg.folds < 2 || cfg.folds > data.len() {
        return Err(TrainError::InvalidConfig(format!(
            "need 2 <= folds <= {}, got {}",
            data.len(),
            cfg.folds
        )));
    }
    if !cfg.algorithm.is_mlp() {
        return Err(TrainError::InvalidConfig(format!("cannot sweep {}", cfg.algorithm)));
    }
    let mut candidates = cfg.candidates.clone();
    candidates.sort_unstable();
    candidates.dedup();
    let fold_of = assign_folds(data.len(), cfg.folds, cfg.seed);
    let tasks: Vec<(usize, usize)> = candidates
        .iter()
        .flat_map(|&h| (0..cfg.folds).map(move |f| (h, f)))
        .collect();
    let results: Vec<Option<f64>> = tasks
        .par_iter()
        .map(|&(h, f)| {
            let train: Vec<usize> = (0..data.len()).filter(|&k| fold_of[k] != f).collect();
            let held: Vec<usize> = (0..data.len()).filter(|&k| fold_of[k] == f).collect();
            let (tr, te) = (data.subset(&train), data.subset(&held));
            let seed = derive_seed(cfg.seed, &[h as u64, f as u64]);
            match fit_mlp(cfg.algorithm, &tr, h, seed, &cfg.train).and_then(|(m, _, _)| mse_raw(&m, &te)) {
                Ok(mse) if mse.is_finite() => Some(mse * te.len() as f64),
                Ok(_) => {
                    warn!("H = {h}, fold {f}: non-finite held-out error");
                    None
                }
                Err(e) => {
                    warn!("H = {h}, fold {f} failed: {e}");
                    None
                }
            }
        })
        .collect();

    let fold_sizes: Vec<usize> = (0..cfg.folds)
        .map(|f| fold_of.iter().filter(|&&g| g == f).count())
        .collect();
    let rows: Vec<SweepRow> = candidates
        .iter()
        .zip(results.chunks(cfg.folds))
        .map(|(&hidden, sse)| {
            let fold_mse = sse
                .iter()
                .zip(&fold_sizes)
                .map(|(s, &m)| s.map(|s| s / m as f64))
                .collect();
            let cv_mse = sse
                .iter()
                .copied()
                .sum::<Option<f64>>()
                .map(|s| s / data.len() as f64);
            SweepRow {
                hidden,
                cv_mse,
                fold_mse,
            }
        })
        .collect();
    let mut selected: Option<(usize, f64)> = None;
    for r in &rows {
        if let Some(v) = r.cv_mse {
            if selected.is_none_or(|(_, best)| v < best) {
                selected = Some((r.hidden, v));
            }
        }
    }
    Ok(SweepResult {
        rows,
        selected: selected.map(|(h, _)| h),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::LmConfig;
    use rand::Rng;

    fn data(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ys: Vec<f64> = rows.iter().map(|r| r[0] * r[1] + r[2]).collect();
        Dataset::from_rows(&rows, &ys).unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            lm: LmConfig {
                max_iters: 20,
                ..LmConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn singleton_candidate() {
        let cfg = SweepConfig {
            candidates: vec![4],
            folds: 3,
            algorithm: Algorithm::Lm,
            train: quick(),
            ..SweepConfig::default()
        };
        let r = sweep_hidden(&data(60, 1), &cfg).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.selected, Some(4));
        assert_eq!(r.rows[0].fold_mse.len(), 3);
        assert!(r.to_csv().starts_with("hidden,cv_mse,failed_folds\n4,"));
    }

    #[test]
    fn folds_are_balanced() {
        let f = assign_folds(23, 5, 3);
        for k in 0..5 {
            let c = f.iter().filter(|&&g| g == k).count();
            assert!(c == 4 || c == 5);
        }
    }

    #[test]
    fn parallel_equals_sequential() {
        let cfg = SweepConfig {
            candidates: vec![3, 1, 2],
            folds: 2,
            algorithm: Algorithm::Lm,
            train: quick(),
            ..SweepConfig::default()
        };
        let d = data(40, 2);
        let par = sweep_hidden(&d, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let seq = pool.install(|| sweep_hidden(&d, &cfg).unwrap());
        assert_eq!(par, seq);
        let hs: Vec<usize> = par.rows.iter().map(|r| r.hidden).collect();
        assert_eq!(hs, vec![1, 2, 3]);
    }

    #[test]
    fn rejects_bad_config() {
        let d = data(10, 3);
        for cfg in [
            SweepConfig { candidates: vec![], ..SweepConfig::default() },
            SweepConfig { folds: 1, ..SweepConfig::default() },
            SweepConfig { algorithm: Algorithm::Svr, ..SweepConfig::default() },
        ] {
            assert!(matches!(sweep_hidden(&d, &cfg), Err(TrainError::InvalidConfig(_))));
        }
    }
}
