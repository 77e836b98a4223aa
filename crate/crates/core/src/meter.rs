//! Interval meter readings and their daily roll-up.

use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::UserId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeterReading {
    pub user: UserId,
    pub interval_start: DateTime<Utc>,
    pub kwh: f64,
}

impl MeterReading {
    pub fn new(user: UserId, interval_start: DateTime<Utc>, kwh: f64) -> Result<Self> {
        if !kwh.is_finite() || kwh < 0.0 {
            return Err(Error::InvalidParams(format!("kwh must be finite and non-negative, got {kwh}")));
        }
        Ok(MeterReading { user, interval_start, kwh })
    }
}

/// Per-user daily kWh totals keyed by UTC calendar day.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DailyUsage {
    days: BTreeMap<UserId, BTreeMap<NaiveDate, f64>>,
}

impl DailyUsage {
    /// Sums readings into UTC days. Readings must already be de-duplicated
    /// by (user, interval_start).
    pub fn from_readings<'a>(readings: impl IntoIterator<Item = &'a MeterReading>) -> Self {
        let mut days: BTreeMap<UserId, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
        for r in readings {
            *days
                .entry(r.user)
                .or_default()
                .entry(r.interval_start.date_naive())
                .or_insert(0.0) += r.kwh;
        }
        DailyUsage { days }
    }

    pub fn insert(&mut self, user: UserId, day: NaiveDate, kwh: f64) {
        *self.days.entry(user).or_default().entry(day).or_insert(0.0) += kwh;
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.days.keys().copied()
    }

    pub fn get(&self, user: UserId, day: NaiveDate) -> Option<f64> {
        self.days.get(&user).and_then(|d| d.get(&day)).copied()
    }

    /// Days with a reading in `[start, end)` and their kWh sum.
    pub fn window(&self, user: UserId, start: NaiveDate, end: NaiveDate) -> (usize, f64) {
        match self.days.get(&user) {
            Some(d) if start < end => d.range(start..end).fold((0, 0.0), |(n, s), (_, v)| (n + 1, s + v)),
            _ => (0, 0.0),
        }
    }

    /// Daily series in `[start, end)`, `None` for days without data.
    pub fn series(&self, user: UserId, start: NaiveDate, end: NaiveDate) -> Vec<(NaiveDate, Option<f64>)> {
        start
            .iter_days()
            .take_while(|d| *d < end)
            .map(|d| (d, self.get(user, d)))
            .collect()
    }

    pub fn last_day(&self) -> Option<NaiveDate> {
        self.days.values().filter_map(|d| d.keys().next_back()).max().copied()
    }
}
