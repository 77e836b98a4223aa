//! Per-question Pearson correlation with the outcome.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::domain::{AnswerMatrix, QuestionId, UserId};
use crate::preprocess::OutcomeVector;

/// Minimum users with both an answer and an outcome.
pub const MIN_PAIRS: usize = 3;
pub const STRONG_CORRELATION: f64 = 0.15;
pub const SIGN_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMode {
    /// Only users who answered the question.
    #[default]
    PairwiseComplete,
    /// Every user with an outcome; missing answers take the column mean.
    MeanImputed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    TooFewPairs,
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub question: QuestionId,
    pub r: f64,
    pub n_pairs: usize,
    /// 1-based rank by |r|.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRanking {
    /// Sorted by |r| descending, ties by question id.
    pub rows: Vec<CorrelationRow>,
    pub excluded: Vec<(QuestionId, Exclusion)>,
}

impl CorrelationRanking {
    /// Questions with |r| above 0.15.
    pub fn strong(&self) -> Vec<CorrelationRow> {
        self.rows.iter().filter(|r| r.r.abs() > STRONG_CORRELATION).copied().collect()
    }

    /// Share of negative correlations among questions with |r| ≥ 0.01.
    pub fn negative_fraction(&self) -> f64 {
        let considered: Vec<_> = self.rows.iter().filter(|r| r.r.abs() >= SIGN_FLOOR).collect();
        if considered.is_empty() {
            return 0.0;
        }
        considered.iter().filter(|r| r.r < 0.0).count() as f64 / considered.len() as f64
    }

    pub fn rank_of(&self, q: QuestionId) -> Option<usize> {
        self.rows.iter().find(|r| r.question == q).map(|r| r.rank)
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn correlation_ranking(m: &AnswerMatrix, y: &OutcomeVector, mode: CorrelationMode) -> CorrelationRanking {
    let outcome: HashMap<UserId, f64> = y.users.iter().copied().zip(y.values.iter().copied()).collect();
    let rows_with_y: Vec<(usize, f64)> = m
        .users()
        .iter()
        .enumerate()
        .filter_map(|(i, u)| outcome.get(u).map(|v| (i, *v)))
        .collect();

    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for (c, &q) in m.questions().iter().enumerate() {
        let pairs: Vec<(f64, f64)> =
            rows_with_y.iter().filter_map(|&(i, yv)| m.encoded(i, c).map(|x| (x, yv))).collect();
        if pairs.len() < MIN_PAIRS {
            excluded.push((q, Exclusion::TooFewPairs));
            continue;
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = match mode {
            CorrelationMode::PairwiseComplete => pairs.iter().copied().unzip(),
            CorrelationMode::MeanImputed => {
                let mean = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
                rows_with_y.iter().map(|&(i, yv)| (m.encoded(i, c).unwrap_or(mean), yv)).unzip()
            }
        };
        match pearson(&xs, &ys) {
            Some(r) => rows.push(CorrelationRow { question: q, r, n_pairs: pairs.len(), rank: 0 }),
            None => excluded.push((q, Exclusion::ZeroVariance)),
        }
    }
    rows.sort_by(|a, b| b.r.abs().total_cmp(&a.r.abs()).then(a.question.cmp(&b.question)));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    CorrelationRanking { rows, excluded }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::AnswerValue;
    use crate::preprocess::OutcomeWindow;
    use chrono::NaiveDate;

    fn outcome(values: Vec<f64>) -> OutcomeVector {
        let d = NaiveDate::from_ymd_opt(2014, 1, 1).unwrap();
        OutcomeVector {
            window: OutcomeWindow::Fixed { start: d, end: d.succ_opt().unwrap() },
            users: (1..=values.len() as u32).map(UserId).collect(),
            raw_kwh: values.clone(),
            values,
            group_mean: 0.0,
            group_sd: 1.0,
            standardized: false,
            excluded: vec![],
        }
    }

    #[test]
    fn self_correlation_and_constant_column() {
        let y = vec![3.0, 1.0, 4.0, 1.5, 9.0, 2.6];
        let n = y.len();
        let mut cells = Vec::new();
        for (i, v) in y.iter().enumerate() {
            cells.push(Some(AnswerValue::Numeric(*v)));
            cells.push(Some(AnswerValue::Numeric(7.0)));
            cells.push(Some(AnswerValue::Numeric((i % 3) as f64)));
            cells.push(if i < 2 { Some(AnswerValue::Numeric(i as f64)) } else { None });
        }
        let m = AnswerMatrix::from_cells((1..=n as u32).map(UserId).collect(), (1..=4).map(QuestionId).collect(), cells).unwrap();
        let ranking = correlation_ranking(&m, &outcome(y.clone()), CorrelationMode::PairwiseComplete);
        assert_eq!(ranking.rows[0].question, QuestionId(1));
        assert!((ranking.rows[0].r - 1.0).abs() < 1e-12);
        assert_eq!(ranking.rows[0].rank, 1);
        assert!(ranking.excluded.contains(&(QuestionId(2), Exclusion::ZeroVariance)));
        assert!(ranking.excluded.contains(&(QuestionId(4), Exclusion::TooFewPairs)));

        // Affine rescaling of y leaves |r| and the order unchanged.
        let scaled: Vec<f64> = y.iter().map(|v| -3.0 * v + 100.0).collect();
        let again = correlation_ranking(&m, &outcome(scaled), CorrelationMode::PairwiseComplete);
        assert_eq!(
            ranking.rows.iter().map(|r| r.question).collect::<Vec<_>>(),
            again.rows.iter().map(|r| r.question).collect::<Vec<_>>()
        );
    }

    #[test]
    fn negative_fraction_counts_only_nontrivial() {
        let mk = |r: f64, q: u32| CorrelationRow { question: QuestionId(q), r, n_pairs: 10, rank: q as usize };
        let ranking = CorrelationRanking {
            rows: vec![mk(0.5, 1), mk(-0.2, 2), mk(0.16, 3), mk(-0.005, 4), mk(0.05, 5)],
            excluded: vec![],
        };
        assert_eq!(ranking.negative_fraction(), 0.25);
        assert_eq!(ranking.strong().len(), 3);
    }
}
