use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::mlp::{Dataset, GroupKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Rows shuffled independently.
    RandomWindow,
    /// All rows of one group land on the same side.
    ByEpisode,
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::RandomWindow => "random",
            SplitMode::ByEpisode => "episode",
        })
    }
}

impl FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" | "random_window" => Ok(SplitMode::RandomWindow),
            "episode" | "by_episode" => Ok(SplitMode::ByEpisode),
            other => Err(format!("unknown split mode {other:?} (expected random or episode)")),
        }
    }
}

fn side_count(frac: f64, total: usize) -> usize {
    ((frac * total as f64).round() as usize).clamp(1, total - 1)
}

/// Row indices of the two sides, each in ascending order.
pub fn split_indices(
    data: &Dataset,
    train_frac: f64,
    mode: SplitMode,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(TrainError::InvalidConfig(format!(
            "train fraction must be in (0, 1), got {train_frac}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = match mode {
        SplitMode::RandomWindow => {
            if data.len() < 2 {
                return Err(TrainError::InvalidConfig(format!(
                    "cannot split {} rows",
                    data.len()
                )));
            }
            let mut idx: Vec<usize> = (0..data.len()).collect();
            idx.shuffle(&mut rng);
            let k = side_count(train_frac, idx.len());
            let test = idx.split_off(k);
            (idx, test)
        }
        SplitMode::ByEpisode => {
            let mut groups: BTreeMap<&GroupKey, Vec<usize>> = BTreeMap::new();
            for (k, g) in data.groups().iter().enumerate() {
                groups.entry(g).or_default().push(k);
            }
            if groups.len() < 2 {
                return Err(TrainError::TooFewGroups {
                    groups: groups.len(),
                });
            }
            let mut keys: Vec<&GroupKey> = groups.keys().copied().collect();
            keys.shuffle(&mut rng);
            let k = side_count(train_frac, keys.len());
            let collect = |ks: &[&GroupKey]| -> Vec<usize> {
                ks.iter().flat_map(|g| groups[g].iter().copied()).collect()
            };
            (collect(&keys[..k]), collect(&keys[k..]))
        }
    };
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Disjoint, exhaustive partition into (train, test).
pub fn split(data: &Dataset, train_frac: f64, mode: SplitMode, seed: u64) -> Result<(Dataset, Dataset), TrainError> {
    let (a, b) = split_indices(data, train_frac, mode, seed)?;
    Ok((data.subset(&a), data.subset(&b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn grouped(n: usize, per_group: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let ys: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let groups = (0..n).map(|i| GroupKey(format!("g{}", i / per_group))).collect();
        Dataset::with_groups(&rows, &ys, groups).unwrap()
    }

    #[test]
    fn random_counts() {
        let (a, b) = split(&grouped(100, 1), 0.7, SplitMode::RandomWindow, 1).unwrap();
        assert_eq!((a.len(), b.len()), (70, 30));
    }

    #[test]
    fn seed_controls_permutation() {
        let d = grouped(100, 1);
        let s1 = split_indices(&d, 0.7, SplitMode::RandomWindow, 5).unwrap();
        assert_eq!(s1, split_indices(&d, 0.7, SplitMode::RandomWindow, 5).unwrap());
        assert_ne!(s1, split_indices(&d, 0.7, SplitMode::RandomWindow, 6).unwrap());
    }

    #[test]
    fn too_few_groups() {
        let d = grouped(10, 10);
        assert!(matches!(
            split(&d, 0.5, SplitMode::ByEpisode, 0),
            Err(TrainError::TooFewGroups { groups: 1 })
        ));
        assert!(split(&d, 1.0, SplitMode::RandomWindow, 0).is_err());
    }

    proptest! {
        #[test]
        fn partitions(n in 2usize..200, per in 1usize..9, frac in 0.05f64..0.95, seed: u64, episode: bool) {
            let d = grouped(n, per);
            let mode = if episode { SplitMode::ByEpisode } else { SplitMode::RandomWindow };
            prop_assume!(!episode || n > per);
            let (a, b) = split_indices(&d, frac, mode, seed).unwrap();
            prop_assert!(!a.is_empty() && !b.is_empty());
            let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            if episode {
                let ga: BTreeSet<_> = a.iter().map(|&k| &d.groups()[k]).collect();
                prop_assert!(b.iter().all(|&k| !ga.contains(&d.groups()[k])));
            }
        }
    }
}
