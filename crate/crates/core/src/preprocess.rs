//! Outcome construction and model-ready feature matrices.
//!
//! Answers are z-scored per question over answered cells, extreme cells
//! (|z| ≥ 3) are dropped, and every missing cell is imputed with 0, the
//! column mean in z units.

use chrono::{Duration, NaiveDate};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{AnswerMatrix, QuestionId, UserId};
use crate::error::{Error, Result};
use crate::meter::DailyUsage;

/// Outlier cut on observed z-scores.
pub const OUTLIER_Z: f64 = 3.0;

/// Days summed for the rolling outcome and the scale applied to them.
pub const ROLLING_DAYS: i64 = 28;
pub const ROLLING_SCALE: f64 = 30.0 / 28.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeWindow {
    /// 28 days ending at (and including) `as_of`, scaled to 30 days.
    Rolling30 { as_of: NaiveDate },
    /// Total over `[start, end)`.
    Fixed { start: NaiveDate, end: NaiveDate },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeVector {
    pub window: OutcomeWindow,
    pub users: Vec<UserId>,
    /// Modeling values: deviations for rolling outcomes, z-scores (or raw
    /// totals when standardization is off) for fixed windows.
    pub values: Vec<f64>,
    /// Unstandardized per-user kWh for the same users.
    pub raw_kwh: Vec<f64>,
    pub group_mean: f64,
    pub group_sd: f64,
    pub standardized: bool,
    /// Users dropped for insufficient meter coverage.
    pub excluded: Vec<UserId>,
}

impl OutcomeVector {
    pub fn value_of(&self, user: UserId) -> Option<f64> {
        self.users.iter().position(|u| *u == user).map(|i| self.values[i])
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Rolling one-month deviation from the group mean.
///
/// Each user needs a reading on every one of the 28 days ending at `as_of`.
pub fn outcome_delta30(daily: &DailyUsage, users: &[UserId], as_of: NaiveDate) -> Result<OutcomeVector> {
    let start = as_of - Duration::days(ROLLING_DAYS - 1);
    let end = as_of + Duration::days(1);
    let mut kept = Vec::new();
    let mut scaled = Vec::new();
    let mut excluded = Vec::new();
    for &u in users {
        let (days, total) = daily.window(u, start, end);
        if days as i64 >= ROLLING_DAYS {
            kept.push(u);
            scaled.push(total * ROLLING_SCALE);
        } else {
            excluded.push(u);
        }
    }
    if kept.is_empty() {
        return Err(Error::NoEligibleUsers(format!("no user has {ROLLING_DAYS} days of readings ending {as_of}")));
    }
    let (group_mean, group_sd) = mean_sd(&scaled);
    Ok(OutcomeVector {
        window: OutcomeWindow::Rolling30 { as_of },
        users: kept,
        values: scaled.iter().map(|s| s - group_mean).collect(),
        raw_kwh: scaled,
        group_mean,
        group_sd,
        standardized: false,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowOptions {
    /// Fraction of window days a user must have readings for.
    pub min_coverage: f64,
    pub standardize: bool,
    /// Take ln(total) before standardizing.
    pub log_outcome: bool,
}

impl Default for WindowOptions {
    fn default() -> Self {
        WindowOptions { min_coverage: 0.9, standardize: true, log_outcome: false }
    }
}

/// Per-user total kWh over `[start, end)`.
///
/// Users with partial coverage have their total scaled up by
/// `window_days / covered_days`.
pub fn outcome_window_total(
    daily: &DailyUsage,
    users: &[UserId],
    start: NaiveDate,
    end: NaiveDate,
    opts: WindowOptions,
) -> Result<OutcomeVector> {
    if start >= end {
        return Err(Error::InvalidWindow(format!("start {start} is not before end {end}")));
    }
    let window_days = (end - start).num_days() as f64;
    let mut kept = Vec::new();
    let mut totals = Vec::new();
    let mut excluded = Vec::new();
    for &u in users {
        let (days, total) = daily.window(u, start, end);
        if days > 0 && days as f64 >= opts.min_coverage * window_days {
            kept.push(u);
            totals.push(total * window_days / days as f64);
        } else {
            excluded.push(u);
        }
    }
    if kept.is_empty() {
        return Err(Error::NoEligibleUsers(format!("no user covers {start}..{end}")));
    }
    let (group_mean, group_sd) = mean_sd(&totals);
    let mut values: Vec<f64> = if opts.log_outcome {
        totals.iter().map(|t| t.max(f64::MIN_POSITIVE).ln()).collect()
    } else {
        totals.clone()
    };
    if opts.standardize {
        if values.len() < 2 {
            return Err(Error::NoEligibleUsers("standardizing needs at least two users".into()));
        }
        let (m, sd) = mean_sd(&values);
        for v in &mut values {
            *v = if sd > 0.0 { (*v - m) / sd } else { 0.0 };
        }
    }
    Ok(OutcomeVector {
        window: OutcomeWindow::Fixed { start, end },
        users: kept,
        values,
        raw_kwh: totals,
        group_mean,
        group_sd,
        standardized: opts.standardize,
        excluded,
    })
}

/// Dense z-scored, imputed features. Row and column order follow the source
/// [`AnswerMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedMatrix {
    pub users: Vec<UserId>,
    pub questions: Vec<QuestionId>,
    pub z: Array2<f64>,
    /// Mean and sample sd of the surviving observed cells, raw units.
    pub col_means: Vec<f64>,
    pub col_sds: Vec<f64>,
    /// `true` where the cell was missing or dropped as an outlier.
    pub imputed: Array2<bool>,
    pub missing_fraction: Vec<f64>,
    pub outliers_removed: Vec<usize>,
}

impl StandardizedMatrix {
    pub fn n_rows(&self) -> usize {
        self.users.len()
    }

    pub fn n_cols(&self) -> usize {
        self.questions.len()
    }

    pub fn is_imputed(&self, row: usize, col: usize) -> bool {
        self.imputed[[row, col]]
    }

    pub fn row_of(&self, user: UserId) -> Option<usize> {
        self.users.iter().position(|u| *u == user)
    }

    /// Rows restricted to `users`, in that order. Column statistics are kept
    /// as computed on the full matrix.
    pub fn select_users(&self, users: &[UserId]) -> Result<StandardizedMatrix> {
        let rows: Vec<usize> = users
            .iter()
            .map(|u| self.row_of(*u).ok_or(Error::UnknownUser(*u)))
            .collect::<Result<_>>()?;
        Ok(StandardizedMatrix {
            users: users.to_vec(),
            questions: self.questions.clone(),
            z: self.z.select(ndarray::Axis(0), &rows),
            col_means: self.col_means.clone(),
            col_sds: self.col_sds.clone(),
            imputed: self.imputed.select(ndarray::Axis(0), &rows),
            missing_fraction: self.missing_fraction.clone(),
            outliers_removed: self.outliers_removed.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StandardizeOptions {
    pub drop_outliers: bool,
}

impl Default for StandardizeOptions {
    fn default() -> Self {
        StandardizeOptions { drop_outliers: true }
    }
}

/// Mean and sample sd of a column's surviving cells, or `None` when the column
/// cannot be scaled (fewer than two cells or zero spread).
fn scale_of(values: &[Option<f64>]) -> (f64, Option<f64>) {
    let obs: Vec<f64> = values.iter().flatten().copied().collect();
    if obs.is_empty() {
        return (0.0, None);
    }
    let (mean, sd) = mean_sd(&obs);
    if obs.len() >= 2 && sd > 0.0 && sd.is_finite() {
        (mean, Some(sd))
    } else {
        (mean, None)
    }
}

/// Z-scores each column over its answered cells, drops cells at |z| ≥ 3 and
/// re-standardizes the survivors, then imputes every missing cell with 0.
///
/// Dropping can shrink the sd enough to push another survivor past the cut,
/// so the drop/re-standardize step repeats until no observed cell is at
/// |z| ≥ 3. Columns without spread become all zeros.
pub fn standardize_impute(m: &AnswerMatrix, opts: StandardizeOptions) -> StandardizedMatrix {
    let (n, p) = (m.n_users(), m.n_questions());
    let mut z = Array2::<f64>::zeros((n, p));
    let mut imputed = Array2::<bool>::from_elem((n, p), true);
    let mut col_means = vec![f64::NAN; p];
    let mut col_sds = vec![0.0; p];
    let mut missing_fraction = vec![1.0; p];
    let mut outliers_removed = vec![0usize; p];

    for c in 0..p {
        let mut col = m.column(c);
        let answered = col.iter().filter(|v| v.is_some()).count();
        missing_fraction[c] = if n == 0 { 1.0 } else { 1.0 - answered as f64 / n as f64 };

        let (mut mean, mut sd) = scale_of(&col);
        if opts.drop_outliers {
            while let Some(s) = sd {
                let mut dropped = 0;
                for v in col.iter_mut() {
                    if let Some(x) = *v {
                        if ((x - mean) / s).abs() >= OUTLIER_Z {
                            *v = None;
                            dropped += 1;
                        }
                    }
                }
                if dropped == 0 {
                    break;
                }
                outliers_removed[c] += dropped;
                (mean, sd) = scale_of(&col);
            }
        }
        col_means[c] = mean;
        let Some(s) = sd else {
            // Degenerate column: everything imputed to 0, observed cells included.
            for (r, v) in col.iter().enumerate() {
                imputed[[r, c]] = v.is_none();
            }
            continue;
        };
        col_sds[c] = s;
        for (r, v) in col.iter().enumerate() {
            if let Some(x) = v {
                z[[r, c]] = (x - mean) / s;
                imputed[[r, c]] = false;
            }
        }
    }

    StandardizedMatrix {
        users: m.users().to_vec(),
        questions: m.questions().to_vec(),
        z,
        col_means,
        col_sds,
        imputed,
        missing_fraction,
        outliers_removed,
    }
}

/// Column-wise permutation used to build the null dataset.
pub trait ColumnShuffle: Sized {
    fn shuffle_columns(&self, rng: &mut ChaCha8Rng) -> Self;
}

fn permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

impl ColumnShuffle for AnswerMatrix {
    fn shuffle_columns(&self, rng: &mut ChaCha8Rng) -> Self {
        let (n, p) = (self.n_users(), self.n_questions());
        let mut out = self.clone();
        let cells = out.cells_mut();
        for c in 0..p {
            let perm = permutation(n, rng);
            for (r, &src) in perm.iter().enumerate() {
                cells[r * p + c] = self.get(src, c).copied();
            }
        }
        out
    }
}

impl ColumnShuffle for StandardizedMatrix {
    fn shuffle_columns(&self, rng: &mut ChaCha8Rng) -> Self {
        let (n, p) = (self.n_rows(), self.n_cols());
        let mut out = self.clone();
        for c in 0..p {
            let perm = permutation(n, rng);
            for (r, &src) in perm.iter().enumerate() {
                out.z[[r, c]] = self.z[[src, c]];
                out.imputed[[r, c]] = self.imputed[[src, c]];
            }
        }
        out
    }
}

impl ColumnShuffle for Array2<f64> {
    fn shuffle_columns(&self, rng: &mut ChaCha8Rng) -> Self {
        let (n, p) = self.dim();
        let mut out = self.clone();
        for c in 0..p {
            let perm = permutation(n, rng);
            for (r, &src) in perm.iter().enumerate() {
                out[[r, c]] = self[[src, c]];
            }
        }
        out
    }
}

/// Independently permutes every column across rows, keeping each column's
/// multiset (and missingness) while breaking the link to row outcomes.
pub fn shuffle_null<M: ColumnShuffle>(m: &M, seed: u64) -> M {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    m.shuffle_columns(&mut rng)
}
