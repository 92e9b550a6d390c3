//! Regression metrics, error histograms, scatter export and the text tables
//! that summarize a comparison run.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mlp::Dataset;
use crate::{DimensionMismatch, Regressor};

pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("prediction has {pred} values but target has {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("target is constant; relative errors are undefined")]
    ZeroVarianceTarget,
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub mse: f64,
    /// Pearson correlation of prediction against target.
    pub r: f64,
    pub mae: f64,
    pub rmse: f64,
    /// Absent when the target is constant.
    pub rae_percent: Option<f64>,
    pub rrse_percent: Option<f64>,
}

fn check(pred: &[f64], target: &[f64]) -> Result<(), EvalError> {
    if pred.len() != target.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            target: target.len(),
        });
    }
    if pred.len() < 2 {
        return Err(EvalError::TooFewSamples(pred.len()));
    }
    match pred.iter().zip(target).position(|(p, t)| !p.is_finite() || !t.is_finite()) {
        Some(k) => Err(EvalError::NonFinite(k)),
        None => Ok(()),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if a.is_empty() || constant(a) || constant(b) {
        return 0.0;
    }
    let (ma, mb) = (mean(a), mean(b));
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

/// Relative absolute and root relative squared error in percent, against
/// the constant predictor at the target mean.
pub fn relative_errors(pred: &[f64], target: &[f64]) -> Result<(f64, f64), EvalError> {
    check(pred, target)?;
    let m = mean(target);
    let (mut abs, mut sq, mut abs0, mut sq0) = (0.0, 0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        abs += (p - t).abs();
        sq += (p - t) * (p - t);
        abs0 += (t - m).abs();
        sq0 += (t - m) * (t - m);
    }
    if abs0 == 0.0 || sq0 == 0.0 {
        return Err(EvalError::ZeroVarianceTarget);
    }
    Ok((100.0 * abs / abs0, 100.0 * (sq / sq0).sqrt()))
}

pub fn metrics(pred: &[f64], target: &[f64]) -> Result<MetricsReport, EvalError> {
    check(pred, target)?;
    let n = pred.len();
    let mse = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n as f64;
    let mae = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / n as f64;
    let (rae, rrse) = match relative_errors(pred, target) {
        Ok((a, b)) => (Some(a), Some(b)),
        Err(EvalError::ZeroVarianceTarget) => {
            log::warn!("constant target over {n} samples: RAE and RRSE left out");
            (None, None)
        }
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        n,
        mse,
        r: pearson(pred, target),
        mae,
        rmse: mse.sqrt(),
        rae_percent: rae,
        rrse_percent: rrse,
    })
}

/// Shared bin edges with per-split counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: BTreeMap<String, Vec<usize>>,
}

impl ErrorHistogram {
    pub fn bins(&self) -> usize {
        self.bin_edges.len() - 1
    }

    pub fn total(&self, split: &str) -> usize {
        self.counts.get(split).map_or(0, |c| c.iter().sum())
    }

    /// `lo,hi,<split>...` with one row per bin.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi");
        for name in self.counts.keys() {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for b in 0..self.bins() {
            let _ = write!(out, "{},{}", self.bin_edges[b], self.bin_edges[b + 1]);
            for c in self.counts.values() {
                let _ = write!(out, ",{}", c[b]);
            }
            out.push('\n');
        }
        out
    }
}

/// Equal-width bins over `[lo, hi]`; bins are right-open except the last.
/// Values outside the range are clamped into the end bins.
pub fn histogram_with_range(splits: &[(&str, &[f64])], bins: usize, lo: f64, hi: f64) -> ErrorHistogram {
    let bins = bins.max(1);
    let width = (hi - lo) / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins)
        .map(|k| if k == bins { hi } else { lo + width * k as f64 })
        .collect();
    let mut counts = BTreeMap::new();
    for (name, errors) in splits {
        let mut c = vec![0; bins];
        for &e in errors.iter() {
            let k = ((e - lo) / width).floor();
            let k = if k.is_nan() || k < 0.0 { 0 } else { (k as usize).min(bins - 1) };
            c[k] += 1;
        }
        counts.insert(name.to_string(), c);
    }
    ErrorHistogram { bin_edges, counts }
}

/// Bins spanning the pooled `[min, max]` of every split. A degenerate range
/// is widened by 0.5 on each side.
pub fn histogram_splits(splits: &[(&str, &[f64])], bins: usize) -> ErrorHistogram {
    let all = splits.iter().flat_map(|(_, e)| e.iter().copied()).filter(|e| e.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e), hi.max(e)));
    let (lo, hi) = if !lo.is_finite() {
        (-0.5, 0.5)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    };
    histogram_with_range(splits, bins, lo, hi)
}

pub fn histogram(errors: &[f64], bins: usize) -> ErrorHistogram {
    histogram_splits(&[("all", errors)], bins)
}

/// Least-squares line of prediction on target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitLine {
    pub slope: f64,
    pub intercept: f64,
}

/// `None` when the target is constant.
pub fn best_fit_line(target: &[f64], pred: &[f64]) -> Option<FitLine> {
    if target.is_empty() {
        return None;
    }
    let (mt, mp) = (mean(target), mean(pred));
    let (mut stp, mut stt) = (0.0, 0.0);
    for (t, p) in target.iter().zip(pred) {
        stp += (t - mt) * (p - mp);
        stt += (t - mt) * (t - mt);
    }
    if stt == 0.0 {
        return None;
    }
    let slope = stp / stt;
    Some(FitLine {
        slope,
        intercept: mp - slope * mt,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub target: f64,
    pub prediction: f64,
    pub split: String,
}

/// Metrics per split plus the pooled "all" split when there is more than one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: BTreeMap<String, MetricsReport>,
    pub fit_lines: BTreeMap<String, Option<FitLine>>,
    pub histogram: ErrorHistogram,
    #[serde(skip)]
    pub scatter: Vec<ScatterRow>,
}

impl Evaluation {
    pub fn scatter_csv(&self) -> String {
        let mut out = String::from("target,prediction,split\n");
        for r in &self.scatter {
            let _ = writeln!(out, "{},{},{}", r.target, r.prediction, r.split);
        }
        out
    }

    pub fn get(&self, split: &str) -> Option<&MetricsReport> {
        self.metrics.get(split)
    }
}

/// Evaluates `model` on each named split. Errors are `target - prediction`.
pub fn evaluate_splits(model: &dyn Regressor, splits: &[(&str, &Dataset)]) -> Result<Evaluation, EvalError> {
    let mut metrics_by = BTreeMap::new();
    let mut fit_lines = BTreeMap::new();
    let mut scatter = Vec::new();
    let mut columns: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for (name, data) in splits {
        let pred = model.predict(data)?;
        let target: Vec<f64> = data.targets().iter().copied().collect();
        scatter.extend(target.iter().zip(&pred).map(|(&t, &p)| ScatterRow {
            target: t,
            prediction: p,
            split: name.to_string(),
        }));
        columns.push((name.to_string(), pred, target));
    }
    if columns.len() > 1 {
        let pred = columns.iter().flat_map(|c| c.1.iter().copied()).collect();
        let target = columns.iter().flat_map(|c| c.2.iter().copied()).collect();
        columns.push(("all".into(), pred, target));
    }
    for (name, pred, target) in &columns {
        metrics_by.insert(name.clone(), metrics(pred, target)?);
        fit_lines.insert(name.clone(), best_fit_line(target, pred));
    }
    let errors: Vec<(String, Vec<f64>)> = columns[..splits.len()]
        .iter()
        .map(|(n, p, t)| (n.clone(), t.iter().zip(p).map(|(t, p)| t - p).collect()))
        .collect();
    let refs: Vec<(&str, &[f64])> = errors.iter().map(|(n, e)| (n.as_str(), e.as_slice())).collect();
    Ok(Evaluation {
        metrics: metrics_by,
        fit_lines,
        histogram: histogram_splits(&refs, DEFAULT_BINS),
        scatter,
    })
}

pub fn evaluate(model: &dyn Regressor, train: &Dataset, test: &Dataset) -> Result<Evaluation, EvalError> {
    evaluate_splits(model, &[("train", train), ("test", test)])
}

fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(k, (c, &w))| if k == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let rule = "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)) + "\n";
    let mut out = line(header.to_vec());
    out.push_str(&rule);
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

/// Two-column MSE / R comparison, one row per trainer.
pub fn format_mse_r_table(title: &str, rows: &[(&str, &MetricsReport)]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, m)| vec![name.to_string(), format!("{:.2e}", m.mse), format!("{:.6}", m.r)])
        .collect();
    format!("{title}\n\n{}", render(&["Training algorithm", "MSE", "R"], &body))
}

fn percent(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4} %"))
}

/// Five-metric comparison of regression techniques.
pub fn format_comparison_table(title: &str, rows: &[(&str, &MetricsReport)]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, m)| {
            vec![
                name.to_string(),
                format!("{:.4}", m.r),
                format!("{:.4e}", m.mae),
                format!("{:.4e}", m.rmse),
                percent(m.rae_percent),
                percent(m.rrse_percent),
            ]
        })
        .collect();
    let header = [
        "Regression technique",
        "Correlation coefficient",
        "Mean absolute error",
        "Root mean squared error",
        "Relative absolute error",
        "Root relative squared error",
    ];
    format!("{title}\n\n{}", render(&header, &body))
}
