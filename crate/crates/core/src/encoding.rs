//! Calendar encoding, z-score standardization and categorical codes.

use std::f64::consts::PI;

use chrono::{Datelike, NaiveDateTime, Timelike};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarConfig {
    /// Observation intervals per daily cycle (288 for a full day of 5-minute
    /// intervals, 252 for a 03:00-24:00 span).
    pub moment_num: usize,
    /// Hours per weekly cycle.
    pub hour_num: usize,
    /// Minutes after midnight at which moment 0 starts.
    #[serde(default)]
    pub day_start_minutes: u32,
    #[serde(default = "default_interval")]
    pub interval_minutes: u32,
}

fn default_interval() -> u32 {
    5
}

impl Default for CalendarConfig {
    fn default() -> Self {
        CalendarConfig {
            moment_num: 288,
            hour_num: 168,
            day_start_minutes: 0,
            interval_minutes: 5,
        }
    }
}

impl CalendarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.moment_num == 0 || self.hour_num == 0 || self.interval_minutes == 0 {
            return Err(Error::Validation(
                "moment_num, hour_num and interval_minutes must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Moment-of-day and hour-of-week indices for a timestamp (weeks start on
    /// Monday 00:00).
    pub fn index_of(&self, ts: NaiveDateTime) -> Result<TimeIndex> {
        let minutes = ts.hour() * 60 + ts.minute();
        let since_start = i64::from(minutes) - i64::from(self.day_start_minutes);
        let moment = since_start.div_euclid(i64::from(self.interval_minutes));
        if since_start < 0 || moment as usize >= self.moment_num {
            return Err(Error::Validation(format!(
                "timestamp {ts} falls outside the daily observation span ({} moments from minute {})",
                self.moment_num, self.day_start_minutes
            )));
        }
        let hour = ts.weekday().num_days_from_monday() as usize * 24 + ts.hour() as usize;
        if hour >= self.hour_num {
            return Err(Error::Validation(format!(
                "hour-of-week {hour} is outside 0..{}",
                self.hour_num
            )));
        }
        Ok(TimeIndex {
            moment: moment as usize,
            hour,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeIndex {
    pub moment: usize,
    pub hour: usize,
}

impl TimeIndex {
    /// Reduces arbitrary indices onto their cycles.
    pub fn wrapped(moment: usize, hour: usize, cfg: &CalendarConfig) -> Self {
        TimeIndex {
            moment: moment % cfg.moment_num,
            hour: hour % cfg.hour_num,
        }
    }
}

/// `(moment_sin, moment_cos, hour_sin, hour_cos)`.
pub fn trig_encode(t: TimeIndex, cfg: &CalendarConfig) -> Result<[f64; 4]> {
    if t.moment >= cfg.moment_num || t.hour >= cfg.hour_num {
        return Err(Error::Validation(format!(
            "time index ({}, {}) outside ({}, {})",
            t.moment, t.hour, cfg.moment_num, cfg.hour_num
        )));
    }
    let m = 2.0 * PI * t.moment as f64 / cfg.moment_num as f64;
    let h = 2.0 * PI * t.hour as f64 / cfg.hour_num as f64;
    Ok([m.sin(), m.cos(), h.sin(), h.cos()])
}

/// Per-feature mean and (population) standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Standard deviations below this are treated as constant columns.
pub const STD_FLOOR: f64 = 1e-12;

impl StandardizationParams {
    pub fn identity(width: usize) -> Self {
        StandardizationParams {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Fits on rows of equal width. Constant columns get `std = 1`.
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        for row in &rows {
            if count == 0 {
                sum = vec![0.0; row.len()];
            } else if row.len() != sum.len() {
                return Err(Error::shape("zscore_fit", &[sum.len()], &[row.len()]));
            }
            for (s, v) in sum.iter_mut().zip(row.iter()) {
                *s += v;
            }
            count += 1;
        }
        if count < 2 {
            return Err(Error::Contract(format!(
                "standardization needs at least 2 rows, got {count}"
            )));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut sq = vec![0.0; mean.len()];
        for row in &rows {
            for ((q, v), m) in sq.iter_mut().zip(row.iter()).zip(&mean) {
                *q += (v - m) * (v - m);
            }
        }
        let std = sq
            .iter()
            .map(|q| {
                let s = (q / n).sqrt();
                if s < STD_FLOOR {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(StandardizationParams { mean, std })
    }

    pub fn apply_value(&self, feature: usize, x: f64) -> f64 {
        (x - self.mean[feature]) / self.std[feature]
    }

    pub fn invert_value(&self, feature: usize, z: f64) -> f64 {
        z * self.std[feature] + self.mean[feature]
    }

    /// Standardizes a flat buffer whose innermost axis is the feature axis.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let w = self.width();
        x.iter()
            .enumerate()
            .map(|(k, &v)| self.apply_value(k % w, v))
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        let w = self.width();
        z.iter()
            .enumerate()
            .map(|(k, &v)| self.invert_value(k % w, v))
            .collect()
    }
}

/// Label-to-code mapping in first-seen order; code 0 is reserved for labels
/// not seen while building.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    codes: IndexMap<String, u32>,
}

impl Vocabulary {
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(labels: I) -> Self {
        let mut v = Vocabulary::default();
        for l in labels {
            v.observe(l);
        }
        v
    }

    pub fn observe(&mut self, label: &str) -> u32 {
        let next = self.codes.len() as u32 + 1;
        *self.codes.entry(label.to_owned()).or_insert(next)
    }

    pub fn encode(&self, label: &str) -> u32 {
        self.codes.get(label).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}
