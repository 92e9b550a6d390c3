//! Sliding-window gait features.
//!
//! Every window yields 24 values: for linear acceleration and then attitude,
//! the per-axis mean, standard deviation and spectral energy, followed by the
//! three pairwise axis correlations.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{GaitRecording, LabeledRecording, RecordingKey};
use crate::mlp::{Dataset, GroupKey};

pub const FEATURE_COUNT: usize = 24;

/// Column names of the 24 features, in canonical order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "acc_mean_x",
    "acc_mean_y",
    "acc_mean_z",
    "acc_std_x",
    "acc_std_y",
    "acc_std_z",
    "acc_energy_x",
    "acc_energy_y",
    "acc_energy_z",
    "acc_corr_xy",
    "acc_corr_xz",
    "acc_corr_yz",
    "att_mean_roll",
    "att_mean_pitch",
    "att_mean_yaw",
    "att_std_roll",
    "att_std_pitch",
    "att_std_yaw",
    "att_energy_roll",
    "att_energy_pitch",
    "att_energy_yaw",
    "att_corr_roll_pitch",
    "att_corr_roll_yaw",
    "att_corr_pitch_yaw",
];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("recording {key} has {len} samples, window needs {window_len}")]
    TooShort {
        key: String,
        len: usize,
        window_len: usize,
    },
    #[error("invalid window config: {0}")]
    InvalidConfig(String),
    #[error("feature file: {0}")]
    Csv(#[from] csv::Error),
    #[error("feature file line {line}: {reason}")]
    BadRow { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub window_len: usize,
    pub hop: usize,
    /// Keep the zero-frequency bin in the energy feature.
    pub include_dc: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_len: 128,
            hop: 64,
            include_dc: true,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.window_len < 2 {
            return Err(FeatureError::InvalidConfig(format!(
                "window_len = {} < 2",
                self.window_len
            )));
        }
        if self.hop == 0 || self.hop > self.window_len {
            return Err(FeatureError::InvalidConfig(format!(
                "hop = {} outside 1..={}",
                self.hop, self.window_len
            )));
        }
        Ok(())
    }

    /// Number of full windows over `len` samples.
    pub fn window_count(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.hop + 1
        }
    }
}

pub fn window_mean(w: &[f64]) -> f64 {
    w.iter().sum::<f64>() / w.len() as f64
}

fn is_constant(w: &[f64]) -> bool {
    w.first().is_none_or(|f| w.iter().all(|v| v == f))
}

/// Population standard deviation.
pub fn window_std(w: &[f64]) -> f64 {
    if is_constant(w) {
        return 0.0;
    }
    let m = window_mean(w);
    (w.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / w.len() as f64).sqrt()
}

/// Pearson correlation; 0 when either window has zero variance.
pub fn window_corr(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "correlated windows must have equal length");
    if is_constant(a) || is_constant(b) {
        return 0.0;
    }
    let ma = window_mean(a);
    let mb = window_mean(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Spectral energy of fixed-length windows with a cached FFT plan.
pub struct EnergyCalculator {
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
    include_dc: bool,
}

impl EnergyCalculator {
    pub fn new(len: usize, include_dc: bool) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(len);
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        Self {
            fft,
            buf: vec![Complex::default(); len],
            scratch,
            include_dc,
        }
    }

    /// Sum of squared DFT magnitudes divided by the window length.
    pub fn energy(&mut self, w: &[f64]) -> f64 {
        assert_eq!(w.len(), self.buf.len(), "window length differs from plan");
        for (c, &v) in self.buf.iter_mut().zip(w) {
            *c = Complex::new(v, 0.0);
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        let skip = usize::from(!self.include_dc);
        let total: f64 = self.buf[skip..].iter().map(|c| c.norm_sqr()).sum();
        total / w.len() as f64
    }
}

/// FFT energy with the DC bin included; equals the sum of squares.
pub fn window_energy(w: &[f64]) -> f64 {
    EnergyCalculator::new(w.len(), true).energy(w)
}

/// 24 features of one window plus its label and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: [f64; FEATURE_COUNT],
    pub label: f64,
    pub key: RecordingKey,
    pub window_index: usize,
}

fn sensor_features(
    axes: [&[f64]; 3],
    energy: &mut EnergyCalculator,
    out: &mut [f64],
) {
    for (i, a) in axes.iter().enumerate() {
        out[i] = window_mean(a);
        out[3 + i] = window_std(a);
        out[6 + i] = energy.energy(a);
    }
    out[9] = window_corr(axes[0], axes[1]);
    out[10] = window_corr(axes[0], axes[2]);
    out[11] = window_corr(axes[1], axes[2]);
}

/// Slides a window over the recording; windows start at multiples of `hop`
/// and a trailing partial window is discarded.
pub fn extract(
    rec: &GaitRecording,
    label: f64,
    cfg: &WindowConfig,
) -> Result<Vec<FeatureVector>, FeatureError> {
    cfg.validate()?;
    if rec.len() < cfg.window_len {
        return Err(FeatureError::TooShort {
            key: rec.key().to_string(),
            len: rec.len(),
            window_len: cfg.window_len,
        });
    }
    let channels: Vec<Vec<f64>> = (0..6).map(|c| rec.channel(c)).collect();
    let mut energy = EnergyCalculator::new(cfg.window_len, cfg.include_dc);
    let count = cfg.window_count(rec.len());
    let mut out = Vec::with_capacity(count);
    for window_index in 0..count {
        let start = window_index * cfg.hop;
        let end = start + cfg.window_len;
        let w = |c: usize| &channels[c][start..end];
        let mut values = [0.0; FEATURE_COUNT];
        sensor_features([w(0), w(1), w(2)], &mut energy, &mut values[..12]);
        sensor_features([w(3), w(4), w(5)], &mut energy, &mut values[12..]);
        out.push(FeatureVector {
            values,
            label,
            key: rec.key().clone(),
            window_index,
        });
    }
    Ok(out)
}

/// Features for every labeled recording, in input order.
pub fn extract_all(
    labeled: &[LabeledRecording],
    cfg: &WindowConfig,
) -> Result<Vec<FeatureVector>, FeatureError> {
    let mut out = Vec::new();
    for lr in labeled {
        out.extend(extract(&lr.recording, lr.label, cfg)?);
    }
    Ok(out)
}

pub fn csv_header() -> Vec<String> {
    ["subject_id", "session_date", "hour", "window_index"]
        .into_iter()
        .chain(FEATURE_NAMES)
        .chain(["label"])
        .map(String::from)
        .collect()
}

pub fn write_features_csv<W: Write>(rows: &[FeatureVector], writer: W) -> Result<(), FeatureError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(csv_header())?;
    for r in rows {
        let mut rec = vec![
            r.key.subject_id.clone(),
            r.key.session_date.format("%Y-%m-%d").to_string(),
            r.key.hour_slot.to_string(),
            r.window_index.to_string(),
        ];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        rec.push(r.label.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_features_csv(rows: &[FeatureVector], path: &Path) -> Result<(), FeatureError> {
    let file = fs::File::create(path)?;
    write_features_csv(rows, io::BufWriter::new(file))
}

pub fn read_features_csv<R: Read>(reader: R) -> Result<Vec<FeatureVector>, FeatureError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header != csv_header() {
        return Err(FeatureError::BadRow {
            line: 1,
            reason: "unexpected header".into(),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let bad = |reason: String| FeatureError::BadRow { line, reason };
        let num = |j: usize| -> Result<f64, FeatureError> {
            let v: f64 = rec[j]
                .parse()
                .map_err(|_| bad(format!("column {} is not a number", j + 1)))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(format!("column {} is not finite", j + 1)))
            }
        };
        let session_date = NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d")
            .map_err(|_| bad("bad session_date".into()))?;
        let hour_slot = rec[2].parse().map_err(|_| bad("bad hour".into()))?;
        let window_index = rec[3].parse().map_err(|_| bad("bad window_index".into()))?;
        let mut values = [0.0; FEATURE_COUNT];
        for (k, v) in values.iter_mut().enumerate() {
            *v = num(4 + k)?;
        }
        let label = num(4 + FEATURE_COUNT)?;
        if label < 0.0 {
            return Err(bad("negative label".into()));
        }
        out.push(FeatureVector {
            values,
            label,
            key: RecordingKey {
                subject_id: rec[0].to_string(),
                session_date,
                hour_slot,
            },
            window_index,
        });
    }
    Ok(out)
}

pub fn load_features_csv(path: &Path) -> Result<Vec<FeatureVector>, FeatureError> {
    read_features_csv(io::BufReader::new(fs::File::open(path)?))
}

/// Stacks feature vectors into a regression dataset keyed by recording.
pub fn to_dataset(rows: &[FeatureVector]) -> Dataset {
    let inputs: Vec<Vec<f64>> = rows.iter().map(|r| r.values.to_vec()).collect();
    let targets: Vec<f64> = rows.iter().map(|r| r.label).collect();
    let groups = rows
        .iter()
        .map(|r| GroupKey::from(&r.key))
        .collect();
    Dataset::with_groups(&inputs, &targets, groups).expect("features are finite and labels >= 0")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ImuSample;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sine(n: usize, periods: f64) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * periods * i as f64 / n as f64).sin())
            .collect()
    }

    #[test]
    fn mean_examples() {
        assert_eq!(window_mean(&[0.5; 128]), 0.5);
        let alt: Vec<f64> = (0..128).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(window_mean(&alt), 0.0);
        // Brute-force summation of one period.
        let s = sine(128, 1.0);
        let mut acc = 0.0;
        for v in &s {
            acc += v;
        }
        assert!((acc / 128.0).abs() < 1e-12);
        assert!(window_mean(&s).abs() < 1e-12);
    }

    #[test]
    fn std_examples() {
        assert_eq!(window_std(&[3.25; 64]), 0.0);
        let alt: Vec<f64> = (0..128).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((window_std(&alt) - 1.0).abs() < 1e-15);
        let s = sine(128, 3.0);
        let brute = (s.iter().map(|v| v * v).sum::<f64>() / 128.0).sqrt();
        assert!((brute - 2f64.sqrt() / 2.0).abs() < 1e-9);
        assert!((window_std(&s) - 2f64.sqrt() / 2.0).abs() < 1e-9);
    }

    #[test]
    fn corr_examples() {
        let a = sine(128, 2.0);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((window_corr(&a, &a) - 1.0).abs() < 1e-12);
        assert!((window_corr(&a, &neg) + 1.0).abs() < 1e-12);
        assert_eq!(window_corr(&[2.0; 128], &a), 0.0);
    }

    #[test]
    fn energy_examples() {
        assert_eq!(window_energy(&[0.0; 128]), 0.0);
        assert!((window_energy(&[1.0; 128]) - 128.0).abs() < 1e-9);
        let mut no_dc = EnergyCalculator::new(128, false);
        assert!(no_dc.energy(&[1.0; 128]).abs() < 1e-9);
        let s = sine(128, 4.0);
        assert!((no_dc.energy(&s) - window_energy(&s)).abs() < 1e-9);
    }

    fn recording(n: usize) -> GaitRecording {
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / 100.0;
                ImuSample {
                    t,
                    lin_acc: [(3.0 * t).sin(), (5.0 * t).cos(), 0.1 * t],
                    attitude: [0.2 * (t).sin(), 0.1, (7.0 * t).sin() * 0.3],
                }
            })
            .collect();
        GaitRecording::new(
            RecordingKey {
                subject_id: "s".into(),
                session_date: NaiveDate::from_ymd_opt(2017, 3, 4).unwrap(),
                hour_slot: 21,
            },
            samples,
        )
        .unwrap()
    }

    #[test]
    fn window_counts() {
        let cfg = WindowConfig::default();
        let fv = extract(&recording(3000), 0.05, &cfg).unwrap();
        assert_eq!(fv.len(), 45);
        assert_eq!(fv.len(), (3000 - 128) / 64 + 1);
        assert!(fv.iter().all(|f| f.label == 0.05));
        assert_eq!(fv[44].window_index, 44);
        assert_eq!(extract(&recording(128), 0.0, &cfg).unwrap().len(), 1);
        assert!(matches!(
            extract(&recording(127), 0.0, &cfg),
            Err(FeatureError::TooShort { len: 127, .. })
        ));
    }

    #[test]
    fn canonical_order() {
        let rec = recording(300);
        let fv = &extract(&rec, 0.0, &WindowConfig::default()).unwrap()[1];
        let w = |c: usize| rec.channel(c)[64..192].to_vec();
        assert_eq!(fv.values[0], window_mean(&w(0)));
        assert_eq!(fv.values[5], window_std(&w(2)));
        assert!((fv.values[7] - window_energy(&w(1))).abs() < 1e-9 * fv.values[7]);
        assert_eq!(fv.values[10], window_corr(&w(0), &w(2)));
        assert_eq!(fv.values[13], window_mean(&w(4)));
        assert_eq!(fv.values[22], window_corr(&w(3), &w(5)));
        // Constant pitch channel has zero spread and zero correlation.
        assert_eq!(fv.values[16], 0.0);
        assert_eq!(fv.values[21], 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let fv = extract(&recording(400), 0.125, &WindowConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_features_csv(&fv, &mut buf).unwrap();
        let header = String::from_utf8(buf.clone()).unwrap();
        assert!(header.starts_with("subject_id,session_date,hour,window_index,acc_mean_x,"));
        assert_eq!(read_features_csv(buf.as_slice()).unwrap(), fv);
        let ds = to_dataset(&fv);
        assert_eq!(ds.len(), fv.len());
        assert_eq!(ds.n_features(), 24);
    }

    fn window() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, 128)
    }

    proptest! {
        #[test]
        fn parseval(w in window()) {
            let sumsq: f64 = w.iter().map(|v| v * v).sum();
            let e = window_energy(&w);
            prop_assert!((e - sumsq).abs() <= 1e-9 * sumsq.max(1e-300));
        }

        #[test]
        fn energy_scales_quadratically(w in window(), k in 0.1f64..10.0) {
            let scaled: Vec<f64> = w.iter().map(|v| k * v).collect();
            let e = window_energy(&w);
            prop_assert!((window_energy(&scaled) - k * k * e).abs() <= 1e-9 * k * k * e);
        }

        #[test]
        fn corr_symmetric_and_bounded(a in window(), b in window()) {
            let ab = window_corr(&a, &b);
            prop_assert!((ab - window_corr(&b, &a)).abs() < 1e-15);
            prop_assert!(ab.abs() <= 1.0 + 1e-12);
        }

        #[test]
        fn offset_invariance(a in window(), b in window(), c in -100.0f64..100.0) {
            let a2: Vec<f64> = a.iter().map(|v| v + c).collect();
            prop_assert!((window_mean(&a2) - (window_mean(&a) + c)).abs() < 1e-10);
            prop_assert!((window_std(&a2) - window_std(&a)).abs() < 1e-9);
            prop_assert!((window_corr(&a2, &b) - window_corr(&a, &b)).abs() < 1e-9);
        }
    }
}
