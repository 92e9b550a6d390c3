//! Deterministic synthetic drinking evenings and tandem-gait traces.
//!
//! This is a test oracle, not a gait model. Its only contract is that the
//! signals depend on eBAC in a controlled, monotone way: more stride-time
//! jitter, a lateral sway component and an attitude wobble, all scaled by
//! the eBAC of the recording. Every recording draws from its own stream
//! keyed by `(seed, subject, session, hour)`, so parallel and sequential
//! generation give identical output.

use std::f64::consts::PI;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::ebac::{ebac_at_hour, ebac_timeline, EbacParams};
use crate::ingest::{
    save_ema, save_sensor_log, EmaSet, EmaTimeline, Gender, GaitRecording, ImuSample, IngestError,
    RecordingKey, SubjectProfile, SCHEDULE_FIRST_HOUR, SCHEDULE_LAST_HOUR,
};
use crate::mlp::{Dataset, MlpModel};

/// Per unit eBAC (g/dl) growth of each impairment signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacEffect {
    /// Extra step-interval SD, seconds.
    pub stride_jitter_sd: f64,
    /// Lateral sway amplitude, m/s².
    pub sway_amplitude: f64,
    /// Attitude wobble amplitude, rad.
    pub wobble_amplitude: f64,
}

impl Default for BacEffect {
    fn default() -> Self {
        Self {
            stride_jitter_sd: 0.5,
            sway_amplitude: 10.0,
            wobble_amplitude: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub sessions_per_subject: usize,
    pub seed: u64,
    pub step_freq_hz: f64,
    pub base_noise_sd: f64,
    pub bac_effect: BacEffect,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    /// Probability that a prompted gait task was recorded.
    pub completion_rate: f64,
    /// Probability that an evening involves any drinking.
    pub drinking_prob: f64,
    pub drinks_mean: f64,
    pub drinks_sd: f64,
    pub max_drinks: u32,
    /// Drinks are removed until the evening's peak eBAC is at most this.
    pub max_ebac: f64,
    /// Every subject reports zero drinks all evening.
    pub zero_drinking: bool,
    pub first_date: NaiveDate,
    pub ebac: EbacParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 10,
            sessions_per_subject: 8,
            seed: 0,
            step_freq_hz: 1.8,
            base_noise_sd: 0.05,
            bac_effect: BacEffect::default(),
            sample_rate_hz: 100.0,
            duration_s: 30.0,
            completion_rate: 0.35,
            drinking_prob: 0.85,
            drinks_mean: 3.6,
            drinks_sd: 2.2,
            max_drinks: 10,
            max_ebac: 0.25,
            zero_drinking: false,
            first_date: NaiveDate::from_ymd_opt(2017, 3, 3).expect("valid date"),
            ebac: EbacParams::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        let nonneg = [
            ("base_noise_sd", self.base_noise_sd),
            ("stride_jitter_sd", self.bac_effect.stride_jitter_sd),
            ("sway_amplitude", self.bac_effect.sway_amplitude),
            ("wobble_amplitude", self.bac_effect.wobble_amplitude),
            ("drinks_sd", self.drinks_sd),
            ("drinks_mean", self.drinks_mean),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        for (name, v) in [
            ("step_freq_hz", self.step_freq_hz),
            ("sample_rate_hz", self.sample_rate_hz),
            ("duration_s", self.duration_s),
            ("max_ebac", self.max_ebac),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("completion_rate", self.completion_rate),
            ("drinking_prob", self.drinking_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if self.duration_s * self.sample_rate_hz < 2.0 {
            return Err("recordings need at least two samples".into());
        }
        self.ebac.validate().map_err(|e| e.to_string())
    }

    pub fn subject_id(&self, subject: usize) -> String {
        format!("s{:02}", subject + 1)
    }

    pub fn session_date(&self, session: usize) -> NaiveDate {
        self.first_date + Duration::days(7 * session as i64)
    }
}

/// Ground truth for one generated recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub key: RecordingKey,
    pub ebac: f64,
    pub step_interval_sd: f64,
    pub sway_amplitude: f64,
    pub wobble_amplitude: f64,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub ema: EmaSet,
    pub recordings: Vec<GaitRecording>,
    pub truth: Vec<SynthTruth>,
}

const STREAM_PROFILE: u64 = 1;
const STREAM_TIMELINE: u64 = 2;
const STREAM_RECORDING: u64 = 3;
const STREAM_COMPLETION: u64 = 4;

fn hour_code(hour: i32) -> u64 {
    hour as u64
}

/// Gender and weight of one subject; weight ~ N(179, 35) lb truncated to
/// [90, 350].
pub fn gen_profile(cfg: &SynthConfig, subject: usize) -> SubjectProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_PROFILE, subject as u64]));
    let gender = if rng.random_bool(0.5) {
        Gender::Female
    } else {
        Gender::Male
    };
    let normal = Normal::new(179.0, 35.0).expect("valid normal");
    let weight = loop {
        let w: f64 = normal.sample(&mut rng);
        if (90.0..=350.0).contains(&w) {
            break w;
        }
    };
    SubjectProfile::with_gender(cfg.subject_id(subject), gender, (weight * 10.0).round() / 10.0)
        .expect("generated profile is valid")
}

/// Hourly reports for one evening of one subject. Every scheduled hour
/// gets a report.
pub fn gen_timeline(cfg: &SynthConfig, subject: usize, session: usize) -> (SubjectProfile, EmaTimeline) {
    let profile = gen_profile(cfg, subject);
    let date = cfg.session_date(session);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.seed,
        &[STREAM_TIMELINE, subject as u64, session as u64],
    ));
    let mut drinks = [0u32; (SCHEDULE_LAST_HOUR - SCHEDULE_FIRST_HOUR + 1) as usize];
    if !cfg.zero_drinking && rng.random_bool(cfg.drinking_prob) {
        let total = Normal::new(cfg.drinks_mean, cfg.drinks_sd)
            .expect("validated sd")
            .sample(&mut rng)
            .round()
            .clamp(1.0, cfg.max_drinks.max(1) as f64) as u32;
        let start = rng.random_range(0..3usize);
        let span = rng.random_range(1..=3usize).min(drinks.len() - 1 - start);
        for _ in 0..total {
            drinks[start + rng.random_range(0..span)] += 1;
        }
    }
    let build = |d: &[u32]| {
        EmaTimeline::from_reports(
            profile.subject_id(),
            date,
            d.iter()
                .enumerate()
                .map(|(k, &c)| (SCHEDULE_FIRST_HOUR + k as i32, c)),
        )
        .expect("drink counts within range")
    };
    let mut timeline = build(&drinks);
    // Trim the latest drinks until the evening stays under the cap.
    while ebac_timeline(&timeline, &profile, &cfg.ebac).max() > cfg.max_ebac {
        let Some(k) = drinks.iter().rposition(|&c| c > 0) else { break };
        drinks[k] -= 1;
        timeline = build(&drinks);
    }
    (profile, timeline)
}

fn gaussian_pulse(t: f64, center: f64, width: f64) -> f64 {
    let z = (t - center) / width;
    (-0.5 * z * z).exp()
}

/// A tandem-gait trace whose impairment signals scale with `ebac`.
pub fn gen_recording(key: &RecordingKey, ebac: f64, cfg: &SynthConfig) -> (GaitRecording, SynthTruth) {
    assert!(ebac >= 0.0 && ebac.is_finite(), "eBAC must be finite and >= 0");
    let stem_seed = key
        .file_stem()
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_RECORDING, stem_seed]));
    let fx = &cfg.bac_effect;
    let period = 1.0 / cfg.step_freq_hz;
    let jitter_sd = 0.01 + fx.stride_jitter_sd * ebac;
    let sway = fx.sway_amplitude * ebac;
    let wobble = fx.wobble_amplitude * ebac;
    let step_amp = rng.random_range(2.5..3.5);

    let mut steps = Vec::new();
    let mut t_step = rng.random_range(0.0..period);
    let jitter = Normal::new(0.0, jitter_sd).expect("positive sd");
    while t_step < cfg.duration_s + period {
        steps.push(t_step);
        t_step += (period + jitter.sample(&mut rng)).max(0.2 * period);
    }
    let phase: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
    let noise = Normal::new(0.0, cfg.base_noise_sd.max(f64::MIN_POSITIVE)).expect("valid sd");
    let n = (cfg.duration_s * cfg.sample_rate_hz).round() as usize;
    let mut samples = Vec::with_capacity(n);
    let mut step_idx = 0;
    for k in 0..n {
        let t = k as f64 / cfg.sample_rate_hz;
        while step_idx + 1 < steps.len() && steps[step_idx + 1] < t - 0.3 {
            step_idx += 1;
        }
        let impact: f64 = steps[step_idx..]
            .iter()
            .take_while(|&&s| s < t + 0.3)
            .map(|&s| gaussian_pulse(t, s, 0.04))
            .sum();
        let mut eps = || {
            if cfg.base_noise_sd > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            }
        };
        let lin_acc = [
            0.35 * step_amp * impact + eps(),
            sway * (2.0 * PI * 0.9 * t + phase[0]).sin() + eps(),
            step_amp * impact + eps(),
        ];
        let attitude = [
            wobble * (2.0 * PI * 0.4 * t + phase[1]).sin() + eps(),
            0.05 * (2.0 * PI * cfg.step_freq_hz * t).sin() + 0.5 * wobble * (2.0 * PI * 0.3 * t + phase[2]).sin() + eps(),
            wobble * (2.0 * PI * 0.25 * t + phase[3]).sin() + eps(),
        ];
        samples.push(ImuSample { t, lin_acc, attitude });
    }
    let rec = GaitRecording::new(key.clone(), samples).expect("generated recording is valid");
    let truth = SynthTruth {
        key: key.clone(),
        ebac,
        step_interval_sd: jitter_sd,
        sway_amplitude: sway,
        wobble_amplitude: wobble,
    };
    (rec, truth)
}

/// Profiles, timelines and the completed subset of recordings.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput, String> {
    cfg.validate()?;
    let mut ema = EmaSet::new();
    let mut jobs = Vec::new();
    for subject in 0..cfg.n_subjects {
        for session in 0..cfg.sessions_per_subject {
            let (profile, timeline) = gen_timeline(cfg, subject, session);
            for hour in SCHEDULE_FIRST_HOUR..=SCHEDULE_LAST_HOUR {
                let mut coin = ChaCha8Rng::seed_from_u64(derive_seed(
                    cfg.seed,
                    &[STREAM_COMPLETION, subject as u64, session as u64, hour_code(hour)],
                ));
                if coin.random_bool(cfg.completion_rate) {
                    let key = RecordingKey {
                        subject_id: profile.subject_id().to_string(),
                        session_date: timeline.session_date(),
                        hour_slot: hour,
                    };
                    let label = ebac_at_hour(&timeline, &profile, &cfg.ebac, hour);
                    jobs.push((key, label));
                }
            }
            ema.add_profile(profile).map_err(|e| e.to_string())?;
            ema.add_timeline(timeline).map_err(|e| e.to_string())?;
        }
    }
    let (recordings, truth) = jobs
        .par_iter()
        .map(|(key, label)| gen_recording(key, *label, cfg))
        .unzip();
    Ok(SynthOutput {
        ema,
        recordings,
        truth,
    })
}

/// `<dir>/sensors/*.csv`, `<dir>/ema.json` and `<dir>/truth.csv`.
pub fn write_output(out: &SynthOutput, dir: &Path) -> Result<(), IngestError> {
    let sensors = dir.join("sensors");
    fs::create_dir_all(&sensors).map_err(|e| IngestError::Io {
        path: sensors.clone(),
        source: e,
    })?;
    for rec in &out.recordings {
        save_sensor_log(rec, &sensors)?;
    }
    save_ema(&out.ema, &dir.join("ema.json"))?;
    let path = dir.join("truth.csv");
    let io_err = |e: io::Error| IngestError::Io {
        path: path.clone(),
        source: e,
    };
    let mut f = io::BufWriter::new(fs::File::create(&path).map_err(io_err)?);
    writeln!(f, "recording_id,ebac,step_interval_sd,sway_amplitude,wobble_amplitude").map_err(io_err)?;
    for t in &out.truth {
        writeln!(
            f,
            "{},{},{},{},{}",
            t.key.file_stem(),
            t.ebac,
            t.step_interval_sd,
            t.sway_amplitude,
            t.wobble_amplitude
        )
        .map_err(io_err)?;
    }
    f.flush().map_err(io_err)
}

/// Data drawn from a fixed random network, for checking trainers.
#[derive(Debug, Clone)]
pub struct TeacherFixture {
    pub teacher: MlpModel,
    pub train: Dataset,
    pub test: Dataset,
}

/// Inputs uniform on `[-1, 1]`, targets from a random `n_in-hidden-1`
/// sigmoid network plus Gaussian noise of SD `noise_sd`.
pub fn teacher_fixture(
    n_in: usize,
    hidden: usize,
    n_train: usize,
    n_test: usize,
    noise_sd: f64,
    seed: u64,
) -> TeacherFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x7eac]));
    let w_in = Normal::new(0.0, 0.53).expect("valid sd");
    let unit = Normal::new(0.0, 1.0).expect("valid sd");
    let mut teacher = MlpModel::zeros(n_in, hidden);
    for v in teacher.hidden_weights.iter_mut() {
        *v = w_in.sample(&mut rng);
    }
    for v in teacher.hidden_bias.iter_mut() {
        *v = 0.5 * unit.sample(&mut rng);
    }
    for v in teacher.output_weights.iter_mut() {
        *v = unit.sample(&mut rng);
    }
    teacher.output_bias = 0.1 * unit.sample(&mut rng);
    let mut draw = |n: usize| {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n_in).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect();
        let ys: Vec<f64> = rows
            .iter()
            .map(|r| {
                let y = teacher.forward(r).expect("matching width");
                if noise_sd > 0.0 {
                    y + noise_sd * unit.sample(&mut rng)
                } else {
                    y
                }
            })
            .collect();
        Dataset::from_rows(&rows, &ys).expect("finite rows")
    };
    let train = draw(n_train);
    let test = draw(n_test);
    TeacherFixture {
        teacher,
        train,
        test,
    }
}
