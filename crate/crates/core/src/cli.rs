//! The `gaitbac` command line. Every subcommand takes an optional JSON
//! `--config` whose fields mirror its flags; flags win. The effective config
//! is written next to the outputs so the run can be replayed from it.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ebac::{ebac_timeline, EbacParams};
use crate::eval::{evaluate_splits, format_comparison_table, format_mse_r_table};
use crate::features::{save_features_csv, WindowConfig};
use crate::model_file::ModelFile;
use crate::pipeline::{
    extract_features, fit_algorithm, ingest_inputs, load_features, read_config, reproduce, write_evaluation, write_json,
    write_manifest, write_text, BaselineConfig, PipelineError, ReproduceConfig, Stage,
};
use crate::synth::{generate, write_output, SynthConfig};
use crate::train::{split, sweep_hidden, Algorithm, SplitMode, SweepConfig, TrainConfig};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("GAITBAC_BUILD_INFO"), ")");

type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Parser)]
#[command(name = "gaitbac", version = VERSION, about = "Estimate blood alcohol content from smartphone gait recordings")]
pub struct Cli {
    /// Cap on worker threads for parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse sensor logs and drink reports and label each recording.
    Ingest(IngestArgs),
    /// Hourly eBAC for every subject and evening in drink report files.
    Ebac(EbacArgs),
    /// Sliding-window gait features as CSV.
    Features(FeaturesArgs),
    /// Generate a synthetic study in the ingest formats.
    Synth(SynthArgs),
    /// Fit one model on a feature file.
    Train(TrainArgs),
    /// Cross-validated error for a range of hidden-layer sizes.
    Sweep(SweepArgs),
    /// Score a saved model on a feature file.
    Evaluate(EvaluateArgs),
    /// Full synthetic comparison run.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Directory of `<subject>_<date>_<hour>.csv` sensor logs.
    #[arg(long)]
    pub sensors: Option<PathBuf>,
    /// Drink report JSON file; may be repeated.
    #[arg(long)]
    pub ema: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EbacArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ema: Vec<PathBuf>,
    /// Elimination rate, g/dl per hour.
    #[arg(long)]
    pub beta60: Option<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub window_len: Option<usize>,
    #[arg(long)]
    pub hop: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub sessions: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// cg, lm, br, linreg or svr.
    #[arg(long)]
    pub algo: Option<Algorithm>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    /// random or episode.
    #[arg(long)]
    pub split: Option<SplitMode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training report to write.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// `start:stop:step` or a comma-separated list.
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub algo: Option<Algorithm>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Rows scored as the test split.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Optional rows scored as the train split.
    #[arg(long)]
    pub train_features: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub sensors: Option<PathBuf>,
    pub ema: Vec<PathBuf>,
    pub ebac: EbacParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EbacConfig {
    pub ema: Vec<PathBuf>,
    pub ebac: EbacParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    pub sensors: Option<PathBuf>,
    pub ema: Vec<PathBuf>,
    pub ebac: EbacParams,
    pub window: WindowConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub features: Option<PathBuf>,
    pub algorithm: Algorithm,
    pub hidden: usize,
    pub train_frac: f64,
    pub split: SplitMode,
    pub seed: u64,
    pub train: TrainConfig,
    pub baselines: BaselineConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            features: None,
            algorithm: Algorithm::Br,
            hidden: 45,
            train_frac: 0.7,
            split: SplitMode::RandomWindow,
            seed: 0,
            train: TrainConfig::default(),
            baselines: BaselineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SweepRunConfig {
    pub features: Option<PathBuf>,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub model: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub train_features: Option<PathBuf>,
}

fn load_or_default<T: Default + serde::de::DeserializeOwned>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        Some(p) => read_config(p),
        None => Ok(T::default()),
    }
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    v.as_ref()
        .ok_or_else(|| PipelineError::usage(Stage::Config, format!("--{flag} is required (flag or config)")))
}

fn merge_inputs(sensors: &mut Option<PathBuf>, ema: &mut Vec<PathBuf>, input: InputArgs) {
    if input.sensors.is_some() {
        *sensors = input.sensors;
    }
    if !input.ema.is_empty() {
        *ema = input.ema;
    }
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::usage(Stage::Config, format!("{}: {e}", dir.display())))
}

/// `a:b:s` (inclusive) or `a,b,c`.
pub fn parse_hidden_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    let bad = || format!("bad hidden sizes {s:?}: use start:stop:step or a comma list");
    if s.contains(':') {
        let parts: Vec<usize> = s
            .split(':')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<std::result::Result<_, _>>()?;
        let [a, b, step] = parts[..] else {
            return Err(bad());
        };
        if step == 0 || a > b {
            return Err(bad());
        }
        Ok((a..=b).step_by(step).collect())
    } else {
        s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
    }
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let mut cfg: IngestConfig = load_or_default(&args.config)?;
    merge_inputs(&mut cfg.sensors, &mut cfg.ema, args.input);
    let sensors = required(&cfg.sensors, "sensors")?;
    prepare_out_dir(&args.out_dir)?;
    write_json(&args.out_dir.join("config.json"), &cfg)?;
    let al = ingest_inputs(sensors, &cfg.ema, &cfg.ebac)?;
    let mut csv = String::from("recording_id,subject_id,session_date,hour_slot,samples,label\n");
    for l in &al.labeled {
        let k = l.recording.key();
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            k.file_stem(),
            k.subject_id,
            k.session_date,
            k.hour_slot,
            l.recording.len(),
            l.label
        ));
    }
    write_text(&args.out_dir.join("labels.csv"), &csv)?;
    write_json(
        &args.out_dir.join("summary.json"),
        &json!({ "labeled": al.labeled.len(), "dropped": al.dropped }),
    )?;
    write_manifest(&args.out_dir).map(drop)
}

fn cmd_ebac(args: EbacArgs) -> Result<()> {
    let mut cfg: EbacConfig = load_or_default(&args.config)?;
    if !args.ema.is_empty() {
        cfg.ema = args.ema;
    }
    if let Some(b) = args.beta60 {
        cfg.ebac.beta60 = b;
    }
    if cfg.ema.is_empty() {
        return Err(PipelineError::usage(Stage::Config, "--ema is required (flag or config)"));
    }
    cfg.ebac.validate().map_err(|e| PipelineError::usage(Stage::Config, e))?;
    for p in &cfg.ema {
        if !p.is_file() {
            return Err(PipelineError::usage(Stage::Ebac, format!("{}: no such file", p.display())));
        }
    }
    prepare_out_dir(&args.out_dir)?;
    write_json(&args.out_dir.join("config.json"), &cfg)?;
    let set = crate::ingest::parse_ema_files(&cfg.ema).map_err(|e| PipelineError::runtime(Stage::Ebac, e))?;
    let mut csv = String::from("subject_id,session_date,hour,drinks,ebac\n");
    for (profile, timeline) in set.pairs() {
        let trace = ebac_timeline(timeline, profile, &cfg.ebac);
        for (&hour, &v) in trace.values() {
            csv.push_str(&format!(
                "{},{},{hour},{},{v}\n",
                profile.subject_id(),
                timeline.session_date(),
                timeline.drinks_at(hour)
            ));
        }
    }
    write_text(&args.out_dir.join("ebac.csv"), &csv)?;
    write_manifest(&args.out_dir).map(drop)
}

fn cmd_features(args: FeaturesArgs) -> Result<()> {
    let mut cfg: FeaturesConfig = load_or_default(&args.config)?;
    merge_inputs(&mut cfg.sensors, &mut cfg.ema, args.input);
    if let Some(n) = args.window_len {
        cfg.window.window_len = n;
    }
    if let Some(h) = args.hop {
        cfg.window.hop = h;
    }
    let sensors = required(&cfg.sensors, "sensors")?;
    prepare_out_dir(&args.out_dir)?;
    write_json(&args.out_dir.join("config.json"), &cfg)?;
    let al = ingest_inputs(sensors, &cfg.ema, &cfg.ebac)?;
    let rows = extract_features(&al, &cfg.window)?;
    save_features_csv(&rows, &args.out_dir.join("features.csv")).map_err(|e| PipelineError::runtime(Stage::Write, e))?;
    write_manifest(&args.out_dir).map(drop)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = load_or_default(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.subjects {
        cfg.n_subjects = n;
    }
    if let Some(n) = args.sessions {
        cfg.sessions_per_subject = n;
    }
    cfg.validate().map_err(|e| PipelineError::usage(Stage::Config, e))?;
    prepare_out_dir(&args.out_dir)?;
    write_json(&args.out_dir.join("config.json"), &cfg)?;
    let out = generate(&cfg).map_err(|e| PipelineError::runtime(Stage::Synth, e))?;
    write_output(&out, &args.out_dir).map_err(|e| PipelineError::runtime(Stage::Write, e))?;
    write_manifest(&args.out_dir).map(drop)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg: TrainRunConfig = load_or_default(&args.config)?;
    if args.features.is_some() {
        cfg.features = args.features;
    }
    if let Some(a) = args.algo {
        cfg.algorithm = a;
    }
    if let Some(h) = args.hidden {
        cfg.hidden = h;
    }
    if let Some(f) = args.train_frac {
        cfg.train_frac = f;
    }
    if let Some(s) = args.split {
        cfg.split = s;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.max_iters {
        cfg.train.lm.max_iters = n;
        cfg.train.br.lm.max_iters = n;
        cfg.train.cg.max_iters = n;
    }
    if cfg.hidden == 0 {
        return Err(PipelineError::usage(Stage::Config, "hidden must be positive"));
    }
    let features = required(&cfg.features, "features")?;
    let (_, data) = load_features(features)?;
    let (train, test) = split(&data, cfg.train_frac, cfg.split, cfg.seed).map_err(|e| match e {
        crate::train::TrainError::InvalidConfig(m) => PipelineError::usage(Stage::Config, m),
        e => PipelineError::runtime(Stage::Split, e),
    })?;
    let fitted = fit_algorithm(cfg.algorithm, &train, cfg.hidden, cfg.seed, &cfg.train, &cfg.baselines)?;
    let ev = evaluate_splits(&fitted.model.model, &[("train", &train), ("test", &test)])
        .map_err(|e| PipelineError::runtime(Stage::Evaluate, e))?;
    fitted.model.save(&args.out).map_err(|e| PipelineError::runtime(Stage::Write, e))?;
    write_json(&args.out.with_extension("config.json"), &cfg)?;
    write_json(
        &args.report,
        &json!({
            "report": fitted.report,
            "br_state": fitted.br_state,
            "split": { "train": train.len(), "test": test.len() },
            "metrics": ev.metrics,
        }),
    )
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut cfg: SweepRunConfig = load_or_default(&args.config)?;
    if args.features.is_some() {
        cfg.features = args.features;
    }
    if let Some(h) = &args.hidden {
        cfg.sweep.candidates = parse_hidden_list(h).map_err(|e| PipelineError::usage(Stage::Config, e))?;
    }
    if let Some(k) = args.folds {
        cfg.sweep.folds = k;
    }
    if let Some(a) = args.algo {
        cfg.sweep.algorithm = a;
    }
    if let Some(s) = args.seed {
        cfg.sweep.seed = s;
    }
    if let Some(n) = args.max_iters {
        cfg.sweep.train.lm.max_iters = n;
        cfg.sweep.train.br.lm.max_iters = n;
        cfg.sweep.train.cg.max_iters = n;
    }
    let features = required(&cfg.features, "features")?;
    let (_, data) = load_features(features)?;
    prepare_out_dir(&args.out_dir)?;
    write_json(&args.out_dir.join("config.json"), &cfg)?;
    let result = sweep_hidden(&data, &cfg.sweep).map_err(|e| match e {
        crate::train::TrainError::InvalidConfig(m) => PipelineError::usage(Stage::Config, m),
        e => PipelineError::runtime(Stage::Sweep, e),
    })?;
    write_text(&args.out_dir.join("sweep.csv"), &result.to_csv())?;
    write_json(&args.out_dir.join("sweep.json"), &result)?;
    write_manifest(&args.out_dir).map(drop)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let mut cfg: EvaluateConfig = load_or_default(&args.config)?;
    if args.model.is_some() {
        cfg.model = args.model;
    }
    if args.features.is_some() {
        cfg.features = args.features;
    }
    if args.train_features.is_some() {
        cfg.train_features = args.train_features;
    }
    let model_path = required(&cfg.model, "model")?;
    if !model_path.is_file() {
        return Err(PipelineError::usage(Stage::Evaluate, format!("{}: no such file", model_path.display())));
    }
    let model = ModelFile::load(model_path).map_err(|e| PipelineError::usage(Stage::Evaluate, e))?;
    let (_, test) = load_features(required(&cfg.features, "features")?)?;
    let train = match &cfg.train_features {
        Some(p) => Some(load_features(p)?.1),
        None => None,
    };
    prepare_out_dir(&args.out_dir)?;
    write_json(&args.out_dir.join("config.json"), &cfg)?;
    let mut splits = Vec::new();
    if let Some(t) = &train {
        splits.push(("train", t));
    }
    splits.push(("test", &test));
    let ev = evaluate_splits(&model.model, &splits).map_err(|e| PipelineError::runtime(Stage::Evaluate, e))?;
    write_evaluation(&ev, &args.out_dir)?;
    let name = model.algorithm.display_name();
    let mut table = String::new();
    for (split, _) in &splits {
        let m = &ev.metrics[*split];
        table.push_str(&format_mse_r_table(&format!("{split} data"), &[(name, m)]));
        table.push('\n');
        table.push_str(&format_comparison_table(&format!("{split} data"), &[(name, m)]));
        table.push('\n');
    }
    write_text(&args.out_dir.join("table.txt"), &table)?;
    write_manifest(&args.out_dir).map(drop)
}

fn cmd_reproduce(args: ReproduceArgs) -> Result<()> {
    let mut cfg: ReproduceConfig = load_or_default(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(h) = args.hidden {
        cfg.hidden = h;
    }
    if let Some(f) = args.train_frac {
        cfg.train_frac = f;
    }
    let summary = reproduce(&cfg, &args.out_dir)?;
    let tables = fs::read_to_string(args.out_dir.join("tables.txt")).unwrap_or_default();
    println!("{tables}");
    log::info!("{} feature rows from {} recordings", summary.rows, summary.recordings);
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(PipelineError::usage(Stage::Config, "--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| PipelineError::runtime(Stage::Config, e))?;
    }
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Ebac(a) => cmd_ebac(a),
        Command::Features(a) => cmd_features(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Reproduce(a) => cmd_reproduce(a),
    }
}

/// Parses `args`, runs, and returns the process exit code. Errors go to
/// stderr as one JSON object.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hidden_lists() {
        assert_eq!(parse_hidden_list("5:60:5").unwrap().len(), 12);
        assert_eq!(parse_hidden_list("2,4, 8").unwrap(), vec![2, 4, 8]);
        assert!(parse_hidden_list("5:1:1").is_err());
        assert!(parse_hidden_list("1:2").is_err());
        assert!(parse_hidden_list("x").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
