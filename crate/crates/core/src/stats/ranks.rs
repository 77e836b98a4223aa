//! Side-by-side correlation and importance ranks.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::QuestionId;
use crate::error::{Error, Result};
use crate::stats::correlation::CorrelationRanking;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub question_id: QuestionId,
    pub r: f64,
    pub r_rank: usize,
    pub importance: f64,
    pub imp_rank: usize,
}

impl RankRow {
    /// Positive when importance ranks the question higher than correlation.
    pub fn delta(&self) -> i64 {
        self.r_rank as i64 - self.imp_rank as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    /// Ordered by importance rank.
    pub rows: Vec<RankRow>,
}

pub const RANKS_HEADER: [&str; 5] = ["question_id", "r", "r_rank", "importance", "imp_rank"];

/// Reranks both sides over the common question set.
///
/// `importance` pairs each question with its score; rank 1 is the highest
/// score, ties broken by question id.
pub fn rank_compare_table(correlation: &CorrelationRanking, importance: &[(QuestionId, f64)]) -> Result<RankTable> {
    let corr_ids: BTreeSet<QuestionId> = correlation.rows.iter().map(|r| r.question).collect();
    let imp_ids: BTreeSet<QuestionId> = importance.iter().map(|r| r.0).collect();
    if corr_ids.len() != correlation.rows.len() || imp_ids.len() != importance.len() {
        return Err(Error::InvalidParams("duplicate question in ranking".into()));
    }
    if corr_ids != imp_ids {
        let diff = corr_ids.symmetric_difference(&imp_ids).next().copied();
        return Err(Error::InvalidParams(format!(
            "rankings cover different question sets (e.g. {})",
            diff.map(|q| q.to_string()).unwrap_or_default()
        )));
    }

    let mut corr: Vec<_> = correlation.rows.iter().map(|r| (r.question, r.r)).collect();
    corr.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
    let r_of: BTreeMap<QuestionId, (f64, usize)> =
        corr.iter().enumerate().map(|(i, &(q, r))| (q, (r, i + 1))).collect();

    let mut imp = importance.to_vec();
    imp.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let rows = imp
        .iter()
        .enumerate()
        .map(|(i, &(q, score))| {
            let (r, r_rank) = r_of[&q];
            RankRow { question_id: q, r, r_rank, importance: score, imp_rank: i + 1 }
        })
        .collect();
    Ok(RankTable { rows })
}

impl RankTable {
    pub fn get(&self, q: QuestionId) -> Option<&RankRow> {
        self.rows.iter().find(|r| r.question_id == q)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(RANKS_HEADER)?;
        for r in &self.rows {
            out.write_record([
                r.question_id.to_string(),
                r.r.to_string(),
                r.r_rank.to_string(),
                r.importance.to_string(),
                r.imp_rank.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
