//! Estimated blood alcohol content from self-reported drinks.
//!
//! `eBAC = (c / divisor) * (GC / weight) - beta60 * t`, clamped at zero, with
//! `c` the drinks consumed since the start of the current drinking episode
//! and `t` the hours elapsed since that start.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{EmaTimeline, SubjectProfile, SCHEDULE_FIRST_HOUR, SCHEDULE_LAST_HOUR};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EbacError {
    #[error("non-finite input to eBAC ({0})")]
    NonFiniteInput(&'static str),
    #[error("negative {0} passed to eBAC")]
    NegativeInput(&'static str),
    #[error("invalid eBAC parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EbacParams {
    /// Alcohol elimination rate, g/dl per hour.
    pub beta60: f64,
    pub drink_divisor: f64,
}

impl Default for EbacParams {
    fn default() -> Self {
        Self {
            beta60: 0.017,
            drink_divisor: 2.0,
        }
    }
}

impl EbacParams {
    pub fn validate(&self) -> Result<(), EbacError> {
        if !(self.beta60.is_finite() && self.beta60 > 0.0) {
            return Err(EbacError::InvalidParams(format!("beta60 = {}", self.beta60)));
        }
        if !(self.drink_divisor.is_finite() && self.drink_divisor > 0.0) {
            return Err(EbacError::InvalidParams(format!(
                "drink_divisor = {}",
                self.drink_divisor
            )));
        }
        Ok(())
    }
}

/// Unclamped formula value; may be negative.
fn raw_ebac(drinks: f64, profile: &SubjectProfile, hours: f64, params: &EbacParams) -> f64 {
    (drinks / params.drink_divisor) * (profile.gender_constant() / profile.weight_lb())
        - params.beta60 * hours
}

/// eBAC in g/dl after `drinks` standard drinks over `hours` hours.
pub fn ebac_instant(
    drinks: f64,
    profile: &SubjectProfile,
    hours: f64,
    params: &EbacParams,
) -> Result<f64, EbacError> {
    if !drinks.is_finite() {
        return Err(EbacError::NonFiniteInput("drinks"));
    }
    if !hours.is_finite() {
        return Err(EbacError::NonFiniteInput("hours"));
    }
    if drinks < 0.0 {
        return Err(EbacError::NegativeInput("drinks"));
    }
    if hours < 0.0 {
        return Err(EbacError::NegativeInput("hours"));
    }
    params.validate()?;
    Ok(raw_ebac(drinks, profile, hours, params).max(0.0))
}

/// Hourly eBAC over one evening.
#[derive(Debug, Clone, PartialEq)]
pub struct EbacTrace {
    values: BTreeMap<i32, f64>,
    episode_starts: Vec<i32>,
}

impl EbacTrace {
    pub fn values(&self) -> &BTreeMap<i32, f64> {
        &self.values
    }

    pub fn at(&self, hour: i32) -> Option<f64> {
        self.values.get(&hour).copied()
    }

    /// Hour of the first reported drink, if any.
    pub fn drinking_start(&self) -> Option<i32> {
        self.episode_starts.first().copied()
    }

    /// Start hour of every drinking episode; a new one begins when drinks
    /// are reported after earlier drinks have fully cleared.
    pub fn episode_starts(&self) -> &[i32] {
        &self.episode_starts
    }

    pub fn max(&self) -> f64 {
        self.values.values().copied().fold(0.0, f64::max)
    }
}

fn hour_range(timeline: &EmaTimeline, through: Option<i32>) -> (i32, i32) {
    let reports = timeline.reports();
    let mut lo = SCHEDULE_FIRST_HOUR;
    let mut hi = SCHEDULE_LAST_HOUR;
    if let (Some((&first, _)), Some((&last, _))) = (reports.first_key_value(), reports.last_key_value())
    {
        lo = lo.min(first);
        hi = hi.max(last);
    }
    if let Some(h) = through {
        hi = hi.max(h);
    }
    (lo, hi)
}

/// Runs the hourly recurrence over `lo..=hi`, calling `visit` per hour.
fn walk_timeline(
    timeline: &EmaTimeline,
    profile: &SubjectProfile,
    params: &EbacParams,
    (lo, hi): (i32, i32),
    mut visit: impl FnMut(i32, f64, Option<i32>),
) {
    let mut start: Option<i32> = None;
    let mut cum = 0u32;
    for hour in lo..=hi {
        let drinks = timeline.drinks_at(hour);
        // What the current episode alone would give at this hour.
        let carried = start.map(|s| raw_ebac(f64::from(cum), profile, f64::from(hour - s), params));
        if drinks > 0 {
            match carried {
                Some(r) if r > 0.0 => cum += drinks,
                _ => {
                    start = Some(hour);
                    cum = drinks;
                }
            }
        } else if matches!(carried, Some(r) if r <= 0.0) {
            start = None;
            cum = 0;
        }
        let value = match start {
            Some(s) => raw_ebac(f64::from(cum), profile, f64::from(hour - s), params).max(0.0),
            None => 0.0,
        };
        let new_episode = drinks > 0 && start == Some(hour);
        visit(hour, value, new_episode.then_some(hour));
    }
}

/// eBAC at every hour of the evening (20..=24, widened to cover any
/// reported hour). Missing reports count as zero drinks.
pub fn ebac_timeline(
    timeline: &EmaTimeline,
    profile: &SubjectProfile,
    params: &EbacParams,
) -> EbacTrace {
    let mut values = BTreeMap::new();
    let mut episode_starts = Vec::new();
    walk_timeline(
        timeline,
        profile,
        params,
        hour_range(timeline, None),
        |h, v, started| {
            values.insert(h, v);
            episode_starts.extend(started);
        },
    );
    EbacTrace {
        values,
        episode_starts,
    }
}

/// eBAC at a single hour, which may lie outside the prompt schedule.
pub fn ebac_at_hour(
    timeline: &EmaTimeline,
    profile: &SubjectProfile,
    params: &EbacParams,
    hour: i32,
) -> f64 {
    let (lo, hi) = hour_range(timeline, Some(hour));
    if hour < lo {
        return 0.0;
    }
    let mut out = 0.0;
    walk_timeline(timeline, profile, params, (lo, hi.min(hour)), |h, v, _| {
        if h == hour {
            out = v;
        }
    });
    out
}
