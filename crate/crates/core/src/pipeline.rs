//! Stage helpers shared by the command-line tool and the end-to-end
//! `reproduce` run: synthetic data, ingest, features, the five-way model
//! comparison and the output tree with its content manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::baselines::{fit_linreg, fit_svr, SvrParams, DEFAULT_RIDGE};
use crate::eval::{evaluate_splits, format_comparison_table, format_mse_r_table, Evaluation, MetricsReport};
use crate::features::{extract_all, save_features_csv, to_dataset, FeatureVector, WindowConfig};
use crate::ingest::{align, parse_ema_files, parse_sensor_dir, Alignment};
use crate::mlp::Dataset;
use crate::model_file::{FittedModel, ModelFile};
use crate::synth::{generate, write_output, SynthConfig};
use crate::train::{fit_mlp, split_indices, Algorithm, BrState, SplitMode, StopReason, TrainConfig, TrainReport};
use crate::ebac::EbacParams;
use crate::{derive_seed, Regressor};

pub const MANIFEST: &str = "manifest.json";
pub const TIMINGS: &str = "timings.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Synth,
    Ingest,
    Ebac,
    Features,
    Split,
    Train,
    Sweep,
    Evaluate,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().expect("unit variant"))
    }
}

/// Whether the caller or the computation is at fault.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Usage,
    Runtime,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: ErrorKind,
    pub message: String,
}

impl PipelineError {
    pub fn usage(stage: Stage, message: impl fmt::Display) -> Self {
        Self {
            stage,
            kind: ErrorKind::Usage,
            message: message.to_string(),
        }
    }

    pub fn runtime(stage: Stage, message: impl fmt::Display) -> Self {
        Self {
            stage,
            kind: ErrorKind::Runtime,
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Usage => 2,
            ErrorKind::Runtime => 1,
        }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": self }).to_string()
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.message)
    }
}

impl std::error::Error for PipelineError {}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| PipelineError::runtime(Stage::Write, format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| PipelineError::runtime(Stage::Write, format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| PipelineError::runtime(Stage::Write, e))?;
    write_text(path, &(s + "\n"))
}

/// Reads a JSON config, rejecting unknown keys.
pub fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| PipelineError::usage(Stage::Config, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&s).map_err(|e| PipelineError::usage(Stage::Config, format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// Every file under `dir` except the manifest itself and the timings file,
/// sorted by `/`-separated relative path.
pub fn manifest_entries(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let io = |e: std::io::Error| PipelineError::runtime(Stage::Write, format!("{}: {e}", dir.display()));
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files).map_err(io)?;
    let mut entries = Vec::new();
    for rel in files {
        let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if path == MANIFEST || path == TIMINGS {
            continue;
        }
        let bytes = fs::read(dir.join(&rel)).map_err(io)?;
        entries.push(ManifestEntry {
            path,
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(entries)
}

pub fn write_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let entries = manifest_entries(dir)?;
    write_json(&dir.join(MANIFEST), &json!({ "files": entries }))?;
    Ok(entries)
}

/// Parses a sensor directory and drink reports and labels each recording.
pub fn ingest_inputs(sensors: &Path, ema: &[PathBuf], params: &EbacParams) -> Result<Alignment> {
    params.validate().map_err(|e| PipelineError::usage(Stage::Config, e))?;
    if !sensors.is_dir() {
        return Err(PipelineError::usage(Stage::Ingest, format!("{} is not a directory", sensors.display())));
    }
    for p in ema {
        if !p.is_file() {
            return Err(PipelineError::usage(Stage::Ingest, format!("{}: no such file", p.display())));
        }
    }
    let recordings = parse_sensor_dir(sensors).map_err(|e| PipelineError::runtime(Stage::Ingest, e))?;
    let set = parse_ema_files(ema).map_err(|e| PipelineError::runtime(Stage::Ingest, e))?;
    Ok(align(recordings, &set, params))
}

pub fn extract_features(alignment: &Alignment, window: &WindowConfig) -> Result<Vec<FeatureVector>> {
    window.validate().map_err(|e| PipelineError::usage(Stage::Config, e))?;
    extract_all(&alignment.labeled, window).map_err(|e| PipelineError::runtime(Stage::Features, e))
}

/// Loads a feature CSV; a missing or unreadable file is a usage error.
pub fn load_features(path: &Path) -> Result<(Vec<FeatureVector>, Dataset)> {
    if !path.is_file() {
        return Err(PipelineError::usage(Stage::Features, format!("{}: no such file", path.display())));
    }
    let rows = crate::features::load_features_csv(path).map_err(|e| PipelineError::usage(Stage::Features, format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(PipelineError::usage(Stage::Features, format!("{}: no feature rows", path.display())));
    }
    let data = to_dataset(&rows);
    Ok((rows, data))
}

/// Settings for the two non-network baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub ridge: f64,
    pub svr: SvrParams,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            ridge: DEFAULT_RIDGE,
            svr: SvrParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: ModelFile,
    pub report: TrainReport,
    pub br_state: Option<BrState>,
}

/// Fits any of the five algorithms on `train`.
pub fn fit_algorithm(
    algorithm: Algorithm,
    train: &Dataset,
    hidden: usize,
    seed: u64,
    cfg: &TrainConfig,
    baselines: &BaselineConfig,
) -> Result<Fitted> {
    let started = Instant::now();
    let err = |e: &dyn fmt::Display| PipelineError::runtime(Stage::Train, format!("{algorithm}: {e}"));
    let (model, report, br_state) = if algorithm.is_mlp() {
        let (m, r, s) = fit_mlp(algorithm, train, hidden, seed, cfg).map_err(|e| err(&e))?;
        (FittedModel::Mlp(m), r, s)
    } else {
        let model = match algorithm {
            Algorithm::Linreg => FittedModel::Linreg(fit_linreg(train, baselines.ridge).map_err(|e| err(&e))?),
            _ => FittedModel::Svr(fit_svr(train, &baselines.svr).map_err(|e| err(&e))?),
        };
        let pred = model.predict(train).map_err(|e| err(&e))?;
        let mse = pred.iter().zip(train.targets().iter()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / train.len() as f64;
        let report = TrainReport {
            algorithm,
            iterations: 0,
            final_mse: mse,
            stop_reason: StopReason::Direct,
            trace: Vec::new(),
            seed: None,
            wall_time_s: Some(started.elapsed().as_secs_f64()),
        };
        (model, report, None)
    };
    Ok(Fitted {
        model: ModelFile::new(algorithm, model),
        report,
        br_state,
    })
}

/// Writes `metrics.json`, `histogram.csv` and `scatter.csv`.
pub fn write_evaluation(ev: &Evaluation, dir: &Path) -> Result<()> {
    write_json(
        &dir.join("metrics.json"),
        &json!({ "metrics": ev.metrics, "fit_lines": ev.fit_lines }),
    )?;
    write_text(&dir.join("histogram.csv"), &ev.histogram.to_csv())?;
    write_text(&dir.join("scatter.csv"), &ev.scatter_csv())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReproduceConfig {
    /// Seeds every stage; overrides `synth.seed`.
    pub seed: u64,
    pub synth: SynthConfig,
    pub window: WindowConfig,
    pub hidden: usize,
    pub train_frac: f64,
    pub split: SplitMode,
    /// Share of recordings held out by episode before the train/test split,
    /// scored as independent samples.
    pub independent_frac: f64,
    pub algorithms: Vec<Algorithm>,
    pub train: TrainConfig,
    pub baselines: BaselineConfig,
}

impl Default for ReproduceConfig {
    fn default() -> Self {
        let mut train = TrainConfig::default();
        train.lm.max_iters = 150;
        train.br.lm.max_iters = 150;
        train.cg.max_iters = 1000;
        Self {
            seed: 0,
            synth: SynthConfig::default(),
            window: WindowConfig::default(),
            hidden: 45,
            train_frac: 0.7,
            split: SplitMode::RandomWindow,
            independent_frac: 0.15,
            algorithms: Algorithm::ALL.to_vec(),
            train,
            baselines: BaselineConfig::default(),
        }
    }
}

impl ReproduceConfig {
    /// Effective config: the global seed propagated into the generator.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        c.synth.seed = self.seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::usage(Stage::Config, m));
        self.synth.validate().map_err(|e| PipelineError::usage(Stage::Config, e))?;
        self.window.validate().map_err(|e| PipelineError::usage(Stage::Config, e))?;
        if self.hidden == 0 {
            return bad("hidden must be positive".into());
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return bad(format!("train_frac must be in (0, 1), got {}", self.train_frac));
        }
        if !(self.independent_frac > 0.0 && self.independent_frac < 1.0) {
            return bad(format!("independent_frac must be in (0, 1), got {}", self.independent_frac));
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms selected".into());
        }
        self.train.lm.validate().map_err(|e| PipelineError::usage(Stage::Config, e))?;
        self.train.br.lm.validate().map_err(|e| PipelineError::usage(Stage::Config, e))?;
        Ok(())
    }
}

/// Headline numbers of a reproduce run, also written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproduceSummary {
    pub rows: usize,
    pub recordings: usize,
    pub dropped_recordings: usize,
    /// Largest gap between an ingested label and the generator's truth.
    pub label_truth_max_abs_diff: f64,
    pub split_sizes: BTreeMap<String, usize>,
    /// Per algorithm, per split (`train`, `test`, `independent`, `all`).
    pub metrics: BTreeMap<Algorithm, BTreeMap<String, MetricsReport>>,
}

const SPLIT_INDEPENDENT: u64 = 1;
const SPLIT_TRAIN_TEST: u64 = 2;

/// Full synthetic run into `out_dir`. Returns the summary; the tables,
/// models, reports, evaluations and manifest are on disk.
pub fn reproduce(config: &ReproduceConfig, out_dir: &Path) -> Result<ReproduceSummary> {
    let cfg = config.effective();
    cfg.validate()?;
    let mut timings: BTreeMap<String, f64> = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };
    fs::create_dir_all(out_dir).map_err(|e| PipelineError::usage(Stage::Config, format!("{}: {e}", out_dir.display())))?;
    write_json(&out_dir.join("config.json"), &cfg)?;

    let synth = generate(&cfg.synth).map_err(|e| PipelineError::runtime(Stage::Synth, e))?;
    let synth_dir = out_dir.join("synth");
    write_output(&synth, &synth_dir).map_err(|e| PipelineError::runtime(Stage::Synth, e))?;
    lap("synth", &mut timings);

    // Read back what was written so the file formats are part of the run.
    let alignment = ingest_inputs(&synth_dir.join("sensors"), &[synth_dir.join("ema.json")], &cfg.synth.ebac)?;
    let truth: BTreeMap<_, _> = synth.truth.iter().map(|t| (t.key.clone(), t.ebac)).collect();
    let label_gap = alignment
        .labeled
        .iter()
        .map(|l| truth.get(l.recording.key()).map_or(f64::INFINITY, |t| (t - l.label).abs()))
        .fold(0.0, f64::max);
    lap("ingest", &mut timings);

    let rows = extract_features(&alignment, &cfg.window)?;
    if rows.is_empty() {
        return Err(PipelineError::runtime(Stage::Features, "no feature windows"));
    }
    save_features_csv(&rows, &out_dir.join("features.csv")).map_err(|e| PipelineError::runtime(Stage::Write, e))?;
    let data = to_dataset(&rows);
    lap("features", &mut timings);

    let split_err = |e: crate::train::TrainError| PipelineError::runtime(Stage::Split, e);
    let (pool_idx, indep_idx) = split_indices(
        &data,
        1.0 - cfg.independent_frac,
        SplitMode::ByEpisode,
        derive_seed(cfg.seed, &[SPLIT_INDEPENDENT]),
    )
    .map_err(split_err)?;
    let pool = data.subset(&pool_idx);
    let (tr_idx, te_idx) = split_indices(&pool, cfg.train_frac, cfg.split, derive_seed(cfg.seed, &[SPLIT_TRAIN_TEST])).map_err(split_err)?;
    let train = pool.subset(&tr_idx);
    let test = pool.subset(&te_idx);
    let independent = data.subset(&indep_idx);
    let mut side = vec!["independent"; data.len()];
    for &k in &tr_idx {
        side[pool_idx[k]] = "train";
    }
    for &k in &te_idx {
        side[pool_idx[k]] = "test";
    }
    let mut split_csv = String::from("row,recording_id,window_index,split\n");
    for (k, r) in rows.iter().enumerate() {
        split_csv.push_str(&format!("{k},{},{},{}\n", r.key.file_stem(), r.window_index, side[k]));
    }
    write_text(&out_dir.join("splits.csv"), &split_csv)?;
    let split_sizes: BTreeMap<String, usize> = [
        ("train".to_string(), train.len()),
        ("test".to_string(), test.len()),
        ("independent".to_string(), independent.len()),
    ]
    .into();
    lap("split", &mut timings);

    let mut algorithms = cfg.algorithms.clone();
    algorithms.sort();
    algorithms.dedup();
    let mut metrics = BTreeMap::new();
    for &algo in &algorithms {
        let seed = derive_seed(cfg.seed, &[0xa160, algo as u64]);
        let mut fitted = fit_algorithm(algo, &train, cfg.hidden, seed, &cfg.train, &cfg.baselines)?;
        fitted.report.wall_time_s = None;
        lap(&format!("train_{algo}"), &mut timings);
        fitted.model.save(&out_dir.join("models").join(format!("{algo}.json"))).map_err(|e| PipelineError::runtime(Stage::Write, e))?;
        write_json(
            &out_dir.join("reports").join(format!("{algo}.json")),
            &json!({ "report": fitted.report, "br_state": fitted.br_state, "hidden": algo.is_mlp().then_some(cfg.hidden) }),
        )?;
        let ev = evaluate_splits(&fitted.model.model, &[("train", &train), ("test", &test)])
            .map_err(|e| PipelineError::runtime(Stage::Evaluate, format!("{algo}: {e}")))?;
        let ind = evaluate_splits(&fitted.model.model, &[("independent", &independent)])
            .map_err(|e| PipelineError::runtime(Stage::Evaluate, format!("{algo}: {e}")))?;
        let eval_dir = out_dir.join("eval").join(algo.as_str());
        write_evaluation(&ev, &eval_dir)?;
        write_evaluation(&ind, &eval_dir.join("independent"))?;
        let mut m = ev.metrics.clone();
        m.extend(ind.metrics);
        metrics.insert(algo, m);
        lap(&format!("evaluate_{algo}"), &mut timings);
    }

    write_text(&out_dir.join("tables.txt"), &tables(&metrics))?;
    let summary = ReproduceSummary {
        rows: data.len(),
        recordings: alignment.labeled.len(),
        dropped_recordings: alignment.dropped,
        label_truth_max_abs_diff: label_gap,
        split_sizes,
        metrics,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    write_manifest(out_dir)?;
    lap("manifest", &mut timings);
    write_json(&out_dir.join(TIMINGS), &timings)?;
    Ok(summary)
}

/// The trainer comparison on test and independent data and the five-metric
/// comparison of the Bayesian-regularized network against the baselines.
pub fn tables(metrics: &BTreeMap<Algorithm, BTreeMap<String, MetricsReport>>) -> String {
    let rows_for = |algos: &[Algorithm], split: &str, mlp_label: bool| -> Vec<(&'static str, MetricsReport)> {
        algos
            .iter()
            .filter_map(|a| {
                let m = metrics.get(a)?.get(split)?.clone();
                let name = if mlp_label && *a == Algorithm::Br { "MLP" } else { a.display_name() };
                Some((name, m))
            })
            .collect()
    };
    let trainers = [Algorithm::Cg, Algorithm::Lm, Algorithm::Br];
    let compared = [Algorithm::Br, Algorithm::Svr, Algorithm::Linreg];
    let mut out = String::new();
    for (title, split) in [
        ("Testing training algorithms with testing data", "test"),
        ("Testing training algorithms with independent samples", "independent"),
    ] {
        let rows = rows_for(&trainers, split, false);
        let refs: Vec<(&str, &MetricsReport)> = rows.iter().map(|(n, m)| (*n, m)).collect();
        out.push_str(&format_mse_r_table(title, &refs));
        out.push('\n');
    }
    for (title, split) in [
        ("Comparison of regression techniques (test data)", "test"),
        ("Comparison of regression techniques (all data)", "all"),
    ] {
        let rows = rows_for(&compared, split, true);
        let refs: Vec<(&str, &MetricsReport)> = rows.iter().map(|(n, m)| (*n, m)).collect();
        out.push_str(&format_comparison_table(title, &refs));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_json_names_stage() {
        let e = PipelineError::usage(Stage::Features, "missing");
        assert_eq!(e.exit_code(), 2);
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["error"]["stage"], "features");
        assert_eq!(v["error"]["kind"], "usage");
        assert_eq!(PipelineError::runtime(Stage::Train, "x").exit_code(), 1);
        assert_eq!(Stage::Evaluate.to_string(), "evaluate");
    }

    #[test]
    fn manifest_skips_itself_and_timings() {
        let dir = tempfile::tempdir().unwrap();
        write_text(&dir.path().join("b/x.txt"), "hello").unwrap();
        write_text(&dir.path().join("a.txt"), "").unwrap();
        write_text(&dir.path().join(TIMINGS), "{}").unwrap();
        let first = write_manifest(dir.path()).unwrap();
        let again = write_manifest(dir.path()).unwrap();
        assert_eq!(first, again);
        let paths: Vec<&str> = first.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(paths, vec!["a.txt", "b/x.txt"]);
        assert_eq!(first[1].sha256, "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
    }

    #[test]
    fn small_reproduce_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ReproduceConfig::default();
        cfg.synth.n_subjects = 3;
        cfg.synth.sessions_per_subject = 2;
        cfg.synth.completion_rate = 0.8;
        cfg.hidden = 3;
        cfg.independent_frac = 0.25;
        cfg.train.lm.max_iters = 5;
        cfg.train.br.lm.max_iters = 5;
        cfg.train.cg.max_iters = 20;
        let s = reproduce(&cfg, dir.path()).unwrap();
        assert_eq!(s.label_truth_max_abs_diff, 0.0);
        assert_eq!(s.split_sizes.values().sum::<usize>(), s.rows);
        assert_eq!(s.metrics.len(), 5);
        for name in ["manifest.json", "tables.txt", "config.json", "models/br.json", "eval/svr/scatter.csv", "synth/truth.csv"] {
            assert!(dir.path().join(name).is_file(), "{name}");
        }
        let tables = fs::read_to_string(dir.path().join("tables.txt")).unwrap();
        assert!(tables.contains("Bayesian regularization") && tables.contains("Linear regression"));
        let back: ReproduceConfig = read_config(&dir.path().join("config.json")).unwrap();
        assert_eq!(back, cfg.effective());
    }

    #[test]
    fn invalid_config_is_usage_error() {
        let cfg = ReproduceConfig {
            train_frac: 1.5,
            ..ReproduceConfig::default()
        };
        let e = reproduce(&cfg, Path::new("/nonexistent/never")).unwrap_err();
        assert_eq!((e.stage, e.kind), (Stage::Config, ErrorKind::Usage));
    }
}
