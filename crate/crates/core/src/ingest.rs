//! Domain data model and file parsing for gait recordings and drink reports.
//!
//! Sensor logs are CSV files with the header `t,lax,lay,laz,roll,pitch,yaw`,
//! one file per recording, named `<subject>_<date>_<hour>.csv`. Drink
//! reports are a JSON array of per-session records; see [`EmaRecord`].

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ebac::{ebac_at_hour, EbacParams};

pub const GENDER_CONSTANT_FEMALE: f64 = 9.0;
pub const GENDER_CONSTANT_MALE: f64 = 7.5;

/// First and last scheduled prompt hours (8pm and 12am on a 24h clock).
pub const SCHEDULE_FIRST_HOUR: i32 = 20;
pub const SCHEDULE_LAST_HOUR: i32 = 24;

pub const MAX_DRINKS_PER_HOUR: u32 = 30;
pub const MAX_RECORDING_SECONDS: f64 = 60.0;
pub const MIN_MEDIAN_GAP_S: f64 = 0.005;
pub const MAX_MEDIAN_GAP_S: f64 = 0.020;

pub const SENSOR_HEADER: [&str; 7] = ["t", "lax", "lay", "laz", "roll", "pitch", "yaw"];

const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{source_name}:{line}: malformed row: {reason}")]
    MalformedRow {
        source_name: String,
        line: usize,
        reason: String,
    },
    #[error("{source_name}:{line}: timestamp does not increase")]
    NonMonotonicTime { source_name: String, line: usize },
    #[error("{0}: recording has no samples")]
    EmptyRecording(String),
    #[error("{source_name}: recording spans {duration_s} s, limit is {MAX_RECORDING_SECONDS} s")]
    RecordingTooLong { source_name: String, duration_s: f64 },
    #[error("{source_name}: median sample gap {median_gap_s} s outside [{MIN_MEDIAN_GAP_S}, {MAX_MEDIAN_GAP_S}]")]
    SampleRateOutOfRange {
        source_name: String,
        median_gap_s: f64,
    },
    #[error("{0}: file name does not follow <subject>_<date>_<hour>.csv")]
    BadFileName(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("duplicate report for {subject_id} {session_date} hour {hour}")]
    DuplicateHourSlot {
        subject_id: String,
        session_date: NaiveDate,
        hour: i32,
    },
    #[error("invalid gender constant {0}")]
    InvalidGenderConstant(String),
    #[error("invalid body weight {0} lb")]
    InvalidWeight(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub fn constant(self) -> f64 {
        match self {
            Gender::Female => GENDER_CONSTANT_FEMALE,
            Gender::Male => GENDER_CONSTANT_MALE,
        }
    }

    fn from_constant(gc: f64) -> Option<Gender> {
        if gc == GENDER_CONSTANT_FEMALE {
            Some(Gender::Female)
        } else if gc == GENDER_CONSTANT_MALE {
            Some(Gender::Male)
        } else {
            None
        }
    }
}

impl std::str::FromStr for Gender {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "female" => Ok(Gender::Female),
            "male" => Ok(Gender::Male),
            other => Err(IngestError::InvalidGenderConstant(other.to_string())),
        }
    }
}

/// Gender constant and body weight of one participant.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectProfile {
    subject_id: String,
    gender_constant: f64,
    weight_lb: f64,
}

impl SubjectProfile {
    pub fn new(
        subject_id: impl Into<String>,
        gender_constant: f64,
        weight_lb: f64,
    ) -> Result<Self, IngestError> {
        if Gender::from_constant(gender_constant).is_none() {
            return Err(IngestError::InvalidGenderConstant(gender_constant.to_string()));
        }
        if !(weight_lb.is_finite() && weight_lb > 0.0) {
            return Err(IngestError::InvalidWeight(weight_lb));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            gender_constant,
            weight_lb,
        })
    }

    pub fn with_gender(
        subject_id: impl Into<String>,
        gender: Gender,
        weight_lb: f64,
    ) -> Result<Self, IngestError> {
        Self::new(subject_id, gender.constant(), weight_lb)
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn gender_constant(&self) -> f64 {
        self.gender_constant
    }

    pub fn gender(&self) -> Gender {
        Gender::from_constant(self.gender_constant).expect("validated at construction")
    }

    pub fn weight_lb(&self) -> f64 {
        self.weight_lb
    }
}

/// One inertial sample: gravity-removed linear acceleration (m/s²) and
/// attitude as Euler angles (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub lin_acc: [f64; 3],
    pub attitude: [f64; 3],
}

impl ImuSample {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.lin_acc.iter().all(|v| v.is_finite())
            && self.attitude.iter().all(|v| v.is_finite())
    }

    /// Channel `c` in `[lax, lay, laz, roll, pitch, yaw]` order.
    pub fn channel(&self, c: usize) -> f64 {
        if c < 3 {
            self.lin_acc[c]
        } else {
            self.attitude[c - 3]
        }
    }
}

/// Identifies one prompted gait task: who, which evening, which hour.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordingKey {
    pub subject_id: String,
    pub session_date: NaiveDate,
    pub hour_slot: i32,
}

impl RecordingKey {
    pub fn file_stem(&self) -> String {
        format!(
            "{}_{}_{}",
            self.subject_id,
            self.session_date.format(DATE_FORMAT),
            self.hour_slot
        )
    }

    /// Parses `<subject>_<date>_<hour>`; the subject id may itself contain
    /// underscores.
    pub fn from_file_stem(stem: &str) -> Option<Self> {
        let mut parts = stem.rsplitn(3, '_');
        let hour = parts.next()?.parse::<i32>().ok()?;
        let date = NaiveDate::parse_from_str(parts.next()?, DATE_FORMAT).ok()?;
        let subject = parts.next()?;
        if subject.is_empty() {
            return None;
        }
        Some(Self {
            subject_id: subject.to_string(),
            session_date: date,
            hour_slot: hour,
        })
    }

    pub fn in_schedule(&self) -> bool {
        (SCHEDULE_FIRST_HOUR..=SCHEDULE_LAST_HOUR).contains(&self.hour_slot)
    }
}

impl fmt::Display for RecordingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.file_stem())
    }
}

/// A validated tandem-gait recording.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitRecording {
    key: RecordingKey,
    sample_rate_hz: f64,
    samples: Vec<ImuSample>,
}

impl GaitRecording {
    pub fn new(key: RecordingKey, samples: Vec<ImuSample>) -> Result<Self, IngestError> {
        let name = key.file_stem();
        if samples.is_empty() {
            return Err(IngestError::EmptyRecording(name));
        }
        for (i, s) in samples.iter().enumerate() {
            if !s.is_finite() {
                return Err(IngestError::MalformedRow {
                    source_name: name,
                    line: i + 2,
                    reason: "non-finite value".into(),
                });
            }
            if i > 0 && s.t <= samples[i - 1].t {
                return Err(IngestError::NonMonotonicTime {
                    source_name: name,
                    line: i + 2,
                });
            }
        }
        let duration_s = samples[samples.len() - 1].t - samples[0].t;
        if duration_s > MAX_RECORDING_SECONDS {
            return Err(IngestError::RecordingTooLong {
                source_name: name,
                duration_s,
            });
        }
        let sample_rate_hz = if samples.len() >= 2 {
            let mut gaps: Vec<f64> = samples.windows(2).map(|w| w[1].t - w[0].t).collect();
            gaps.sort_by(f64::total_cmp);
            let median_gap_s = gaps[gaps.len() / 2];
            if !(MIN_MEDIAN_GAP_S..=MAX_MEDIAN_GAP_S).contains(&median_gap_s) {
                return Err(IngestError::SampleRateOutOfRange {
                    source_name: name,
                    median_gap_s,
                });
            }
            1.0 / median_gap_s
        } else {
            100.0
        };
        if !key.in_schedule() {
            log::warn!("{name}: hour {} is outside the 20..=24 prompt schedule", key.hour_slot);
        }
        Ok(Self {
            key,
            sample_rate_hz,
            samples,
        })
    }

    pub fn key(&self) -> &RecordingKey {
        &self.key
    }

    pub fn subject_id(&self) -> &str {
        &self.key.subject_id
    }

    pub fn session_date(&self) -> NaiveDate {
        self.key.session_date
    }

    pub fn hour_slot(&self) -> i32 {
        self.key.hour_slot
    }

    /// Estimated from the median inter-sample gap.
    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn samples(&self) -> &[ImuSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples[self.samples.len() - 1].t - self.samples[0].t
    }

    /// Flagged recordings are kept but fall outside the 8pm to 12am prompts.
    pub fn in_schedule(&self) -> bool {
        self.key.in_schedule()
    }

    /// All values of one channel, `[lax, lay, laz, roll, pitch, yaw]` order.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.channel(c)).collect()
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads one sensor log; subject, date and hour come from the file name.
pub fn parse_sensor_log(path: &Path) -> Result<GaitRecording, IngestError> {
    let name = path.display().to_string();
    let key = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(RecordingKey::from_file_stem)
        .ok_or_else(|| IngestError::BadFileName(name.clone()))?;
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_sensor_log(file, &name, key)
}

/// Parses sensor CSV text from any reader.
pub fn read_sensor_log<R: Read>(
    reader: R,
    source_name: &str,
    key: RecordingKey,
) -> Result<GaitRecording, IngestError> {
    let malformed = |line: usize, reason: String| IngestError::MalformedRow {
        source_name: source_name.to_string(),
        line,
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| malformed(1, e.to_string()))?;
    if header.iter().ne(SENSOR_HEADER.iter().copied()) {
        return Err(malformed(
            1,
            format!("expected header `{}`", SENSOR_HEADER.join(",")),
        ));
    }
    let mut samples = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| malformed(line, e.to_string()))?;
        if record.len() != SENSOR_HEADER.len() {
            return Err(malformed(
                line,
                format!("expected {} columns, found {}", SENSOR_HEADER.len(), record.len()),
            ));
        }
        let mut v = [0.0f64; 7];
        for (slot, (field, name)) in v.iter_mut().zip(record.iter().zip(SENSOR_HEADER)) {
            let x: f64 = field
                .parse()
                .map_err(|_| malformed(line, format!("column `{name}`: cannot parse `{field}`")))?;
            if !x.is_finite() {
                return Err(malformed(line, format!("column `{name}`: non-finite value")));
            }
            *slot = x;
        }
        if let Some(prev) = samples.last() {
            let prev: &ImuSample = prev;
            if v[0] <= prev.t {
                return Err(IngestError::NonMonotonicTime {
                    source_name: source_name.to_string(),
                    line,
                });
            }
        }
        samples.push(ImuSample {
            t: v[0],
            lin_acc: [v[1], v[2], v[3]],
            attitude: [v[4], v[5], v[6]],
        });
    }
    if samples.is_empty() {
        return Err(IngestError::EmptyRecording(source_name.to_string()));
    }
    GaitRecording::new(key, samples).map_err(|e| match e {
        IngestError::RecordingTooLong { duration_s, .. } => IngestError::RecordingTooLong {
            source_name: source_name.to_string(),
            duration_s,
        },
        IngestError::SampleRateOutOfRange { median_gap_s, .. } => {
            IngestError::SampleRateOutOfRange {
                source_name: source_name.to_string(),
                median_gap_s,
            }
        }
        other => other,
    })
}

/// Writes a recording in the sensor CSV format. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_sensor_log<W: Write>(rec: &GaitRecording, writer: W) -> io::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(SENSOR_HEADER)?;
    for s in &rec.samples {
        wtr.write_record([
            s.t.to_string(),
            s.lin_acc[0].to_string(),
            s.lin_acc[1].to_string(),
            s.lin_acc[2].to_string(),
            s.attitude[0].to_string(),
            s.attitude[1].to_string(),
            s.attitude[2].to_string(),
        ])?;
    }
    wtr.flush()
}

pub fn save_sensor_log(rec: &GaitRecording, dir: &Path) -> Result<PathBuf, IngestError> {
    let path = dir.join(format!("{}.csv", rec.key.file_stem()));
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    write_sensor_log(rec, io::BufWriter::new(file)).map_err(io_err(&path))?;
    Ok(path)
}

/// Parses every `*.csv` sensor log in `dir`, sorted by recording key.
pub fn parse_sensor_dir(dir: &Path) -> Result<Vec<GaitRecording>, IngestError> {
    let entries = fs::read_dir(dir).map_err(io_err(dir))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            paths.push(path);
        }
    }
    paths.sort();
    let mut recs = paths
        .iter()
        .map(|p| parse_sensor_log(p))
        .collect::<Result<Vec<_>, _>>()?;
    recs.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(recs)
}

/// One hourly self-report: standard drinks consumed in the past hour.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmaReport {
    pub subject_id: String,
    pub session_date: NaiveDate,
    pub hour_slot: i32,
    pub drinks: u32,
}

/// Drink reports of one subject over one evening. Missing hours are allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmaTimeline {
    subject_id: String,
    session_date: NaiveDate,
    reports: BTreeMap<i32, u32>,
}

impl EmaTimeline {
    pub fn new(subject_id: impl Into<String>, session_date: NaiveDate) -> Self {
        Self {
            subject_id: subject_id.into(),
            session_date,
            reports: BTreeMap::new(),
        }
    }

    pub fn from_reports<I>(
        subject_id: impl Into<String>,
        session_date: NaiveDate,
        reports: I,
    ) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = (i32, u32)>,
    {
        let mut tl = Self::new(subject_id, session_date);
        for (hour, drinks) in reports {
            tl.insert(hour, drinks)?;
        }
        Ok(tl)
    }

    pub fn insert(&mut self, hour: i32, drinks: u32) -> Result<(), IngestError> {
        if drinks > MAX_DRINKS_PER_HOUR {
            return Err(IngestError::SchemaViolation(format!(
                "drinks = {drinks} exceeds {MAX_DRINKS_PER_HOUR}"
            )));
        }
        if self.reports.contains_key(&hour) {
            return Err(IngestError::DuplicateHourSlot {
                subject_id: self.subject_id.clone(),
                session_date: self.session_date,
                hour,
            });
        }
        self.reports.insert(hour, drinks);
        Ok(())
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn session_date(&self) -> NaiveDate {
        self.session_date
    }

    pub fn reports(&self) -> &BTreeMap<i32, u32> {
        &self.reports
    }

    /// Missing hours count as zero drinks.
    pub fn drinks_at(&self, hour: i32) -> u32 {
        self.reports.get(&hour).copied().unwrap_or(0)
    }

    pub fn iter_reports(&self) -> impl Iterator<Item = EmaReport> + '_ {
        self.reports.iter().map(|(&hour_slot, &drinks)| EmaReport {
            subject_id: self.subject_id.clone(),
            session_date: self.session_date,
            hour_slot,
            drinks,
        })
    }
}

/// On-disk EMA record, one per subject and evening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmaRecord {
    pub subject_id: String,
    pub gender: String,
    pub weight_lb: f64,
    pub session_date: String,
    pub reports: Vec<EmaEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmaEntry {
    pub hour: i64,
    pub drinks: i64,
}

/// Profiles (one per subject) and timelines (one per subject and evening).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmaSet {
    profiles: BTreeMap<String, SubjectProfile>,
    timelines: BTreeMap<(String, NaiveDate), EmaTimeline>,
}

impl EmaSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn profiles(&self) -> impl Iterator<Item = &SubjectProfile> {
        self.profiles.values()
    }

    pub fn profile(&self, subject_id: &str) -> Option<&SubjectProfile> {
        self.profiles.get(subject_id)
    }

    pub fn timelines(&self) -> impl Iterator<Item = &EmaTimeline> {
        self.timelines.values()
    }

    pub fn timeline(&self, subject_id: &str, date: NaiveDate) -> Option<&EmaTimeline> {
        self.timelines.get(&(subject_id.to_string(), date))
    }

    /// Every timeline with the profile of its subject.
    pub fn pairs(&self) -> impl Iterator<Item = (&SubjectProfile, &EmaTimeline)> {
        self.timelines
            .values()
            .map(|tl| (&self.profiles[&tl.subject_id], tl))
    }

    pub fn add_profile(&mut self, profile: SubjectProfile) -> Result<(), IngestError> {
        match self.profiles.get(profile.subject_id()) {
            Some(existing) if *existing != profile => Err(IngestError::SchemaViolation(format!(
                "conflicting profiles for subject {}",
                profile.subject_id()
            ))),
            Some(_) => Ok(()),
            None => {
                self.profiles.insert(profile.subject_id.clone(), profile);
                Ok(())
            }
        }
    }

    /// Adds a timeline, merging reports into an existing one for the same
    /// evening. The subject's profile must already be present.
    pub fn add_timeline(&mut self, timeline: EmaTimeline) -> Result<(), IngestError> {
        if !self.profiles.contains_key(&timeline.subject_id) {
            return Err(IngestError::SchemaViolation(format!(
                "timeline for unknown subject {}",
                timeline.subject_id
            )));
        }
        let key = (timeline.subject_id.clone(), timeline.session_date);
        match self.timelines.get_mut(&key) {
            Some(existing) => {
                for (&hour, &drinks) in &timeline.reports {
                    existing.insert(hour, drinks)?;
                }
            }
            None => {
                self.timelines.insert(key, timeline);
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: EmaSet) -> Result<(), IngestError> {
        for p in other.profiles.into_values() {
            self.add_profile(p)?;
        }
        for tl in other.timelines.into_values() {
            self.add_timeline(tl)?;
        }
        Ok(())
    }

    pub fn from_records(records: Vec<EmaRecord>) -> Result<Self, IngestError> {
        let mut set = EmaSet::new();
        for rec in records {
            let gender: Gender = rec.gender.parse()?;
            let profile = SubjectProfile::with_gender(&rec.subject_id, gender, rec.weight_lb)
                .map_err(|e| match e {
                    IngestError::InvalidWeight(w) => {
                        IngestError::SchemaViolation(format!("weight_lb = {w} must be positive"))
                    }
                    other => other,
                })?;
            set.add_profile(profile)?;
            let date = NaiveDate::parse_from_str(&rec.session_date, DATE_FORMAT).map_err(|_| {
                IngestError::SchemaViolation(format!(
                    "session_date `{}` is not an ISO-8601 date",
                    rec.session_date
                ))
            })?;
            let mut tl = EmaTimeline::new(&rec.subject_id, date);
            for entry in rec.reports {
                if !(0..=i64::from(MAX_DRINKS_PER_HOUR)).contains(&entry.drinks) {
                    return Err(IngestError::SchemaViolation(format!(
                        "drinks = {} outside 0..={MAX_DRINKS_PER_HOUR}",
                        entry.drinks
                    )));
                }
                let hour = i32::try_from(entry.hour).map_err(|_| {
                    IngestError::SchemaViolation(format!("hour = {} out of range", entry.hour))
                })?;
                tl.insert(hour, entry.drinks as u32)?;
            }
            set.add_timeline(tl)?;
        }
        Ok(set)
    }

    pub fn to_records(&self) -> Vec<EmaRecord> {
        self.pairs()
            .map(|(p, tl)| EmaRecord {
                subject_id: tl.subject_id.clone(),
                gender: match p.gender() {
                    Gender::Female => "female".into(),
                    Gender::Male => "male".into(),
                },
                weight_lb: p.weight_lb,
                session_date: tl.session_date.format(DATE_FORMAT).to_string(),
                reports: tl
                    .reports
                    .iter()
                    .map(|(&h, &d)| EmaEntry {
                        hour: i64::from(h),
                        drinks: i64::from(d),
                    })
                    .collect(),
            })
            .collect()
    }
}

pub fn read_ema<R: Read>(reader: R) -> Result<EmaSet, IngestError> {
    let records: Vec<EmaRecord> = serde_json::from_reader(reader)
        .map_err(|e| IngestError::SchemaViolation(e.to_string()))?;
    EmaSet::from_records(records)
}

pub fn parse_ema(path: &Path) -> Result<EmaSet, IngestError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_ema(io::BufReader::new(file))
}

/// Parses and merges several EMA files. Profiles are deduplicated per subject.
pub fn parse_ema_files<P: AsRef<Path>>(paths: &[P]) -> Result<EmaSet, IngestError> {
    let mut set = EmaSet::new();
    for p in paths {
        set.merge(parse_ema(p.as_ref())?)?;
    }
    Ok(set)
}

pub fn write_ema<W: Write>(set: &EmaSet, writer: W) -> io::Result<()> {
    serde_json::to_writer_pretty(writer, &set.to_records()).map_err(io::Error::other)
}

pub fn save_ema(set: &EmaSet, path: &Path) -> Result<(), IngestError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = io::BufWriter::new(file);
    write_ema(set, &mut w)
        .and_then(|_| w.write_all(b"\n"))
        .and_then(|_| w.flush())
        .map_err(io_err(path))
}

/// A recording paired with the eBAC at its hour.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecording {
    pub recording: GaitRecording,
    pub label: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Alignment {
    pub labeled: Vec<LabeledRecording>,
    /// Recordings with no timeline for their subject and evening.
    pub dropped: usize,
}

/// Labels each recording with the eBAC of its subject at its hour. Output is
/// sorted by recording key regardless of input order.
pub fn align(recordings: Vec<GaitRecording>, ema: &EmaSet, params: &EbacParams) -> Alignment {
    let mut out = Alignment::default();
    for rec in recordings {
        let Some(timeline) = ema.timeline(rec.subject_id(), rec.session_date()) else {
            log::info!("{}: no drink reports for this evening, dropped", rec.key);
            out.dropped += 1;
            continue;
        };
        let profile = ema
            .profile(rec.subject_id())
            .expect("timelines always have a profile");
        let label = ebac_at_hour(timeline, profile, params, rec.hour_slot());
        out.labeled.push(LabeledRecording {
            recording: rec,
            label,
        });
    }
    out.labeled.sort_by(|a, b| {
        a.recording
            .key
            .cmp(&b.recording.key)
            .then_with(|| a.recording.len().cmp(&b.recording.len()))
    });
    out
}
