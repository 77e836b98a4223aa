//! Survey domain types and the sparse user × question answer matrix.
//!
//! Participants both pose and answer questions, so the matrix grows in both
//! directions over time and most cells stay empty. Rows are ordered by
//! participant id, which is assigned in join order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sequential participant id, assigned in join order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u32);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for UserId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .parse::<u32>()
            .map(UserId)
            .map_err(|_| Error::InvalidAnswer(format!("bad user id {s:?}")))
    }
}

/// Question identifier, rendered as `q<n>`.
///
/// Ordering is numeric, so `q2 < q10`. This order is also the column order of
/// every matrix and the tie-break order of model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct QuestionId(pub u32);

impl fmt::Display for QuestionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}", self.0)
    }
}

impl FromStr for QuestionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let digits = t.strip_prefix('q').or_else(|| t.strip_prefix('Q')).unwrap_or(t);
        digits
            .parse::<u32>()
            .map(QuestionId)
            .map_err(|_| Error::InvalidAnswer(format!("bad question id {s:?}")))
    }
}

impl From<QuestionId> for String {
    fn from(q: QuestionId) -> String {
        q.to_string()
    }
}

impl TryFrom<String> for QuestionId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    Numeric,
    YesNo,
    Likert5,
}

impl QuestionType {
    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::Numeric => "numeric",
            QuestionType::YesNo => "yes_no",
            QuestionType::Likert5 => "likert5",
        }
    }
}

impl FromStr for QuestionType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "numeric" => Ok(QuestionType::Numeric),
            "yes_no" => Ok(QuestionType::YesNo),
            "likert5" => Ok(QuestionType::Likert5),
            other => Err(Error::InvalidAnswer(format!("unknown question type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModerationStatus {
    Pending,
    Approved,
    Rejected,
}

impl ModerationStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ModerationStatus::Pending => "pending",
            ModerationStatus::Approved => "approved",
            ModerationStatus::Rejected => "rejected",
        }
    }
}

impl FromStr for ModerationStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pending" => Ok(ModerationStatus::Pending),
            "approved" => Ok(ModerationStatus::Approved),
            "rejected" => Ok(ModerationStatus::Rejected),
            other => Err(Error::InvalidAnswer(format!("unknown status {other:?}"))),
        }
    }
}

/// Who posed a question: the expert seed set or a participant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Author {
    Expert,
    Participant(UserId),
}

impl fmt::Display for Author {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Author::Expert => f.write_str("expert"),
            Author::Participant(u) => write!(f, "{u}"),
        }
    }
}

impl FromStr for Author {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "expert" {
            Ok(Author::Expert)
        } else {
            s.parse().map(Author::Participant)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: QuestionId,
    pub text: String,
    pub qtype: QuestionType,
    pub status: ModerationStatus,
    pub author: Author,
    pub created_at: DateTime<Utc>,
}

impl Question {
    pub fn new(
        id: QuestionId,
        text: impl Into<String>,
        qtype: QuestionType,
        status: ModerationStatus,
        author: Author,
        created_at: DateTime<Utc>,
    ) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::InvalidAnswer("question text is empty".into()));
        }
        Ok(Question { id, text, qtype, status, author, created_at })
    }

    pub fn is_approved(&self) -> bool {
        self.status == ModerationStatus::Approved
    }
}

/// The expert seed questions every deployment starts with.
pub const SEED_QUESTIONS: [(&str, QuestionType); 6] = [
    ("I generally use air conditioners on hot summer days", QuestionType::Likert5),
    ("Do you have a hot tub?", QuestionType::YesNo),
    ("How many teenagers are in your home?", QuestionType::Numeric),
    ("How many loads of laundry do you do per week?", QuestionType::Numeric),
    ("Do you have an electric hot water tank?", QuestionType::YesNo),
    (
        "Most of my appliances (laundry machines, refrigerator, etc.) are high efficiency.",
        QuestionType::Likert5,
    ),
];

/// Seed questions `q1..q6`, approved and authored by "expert".
pub fn seed_questions(created_at: DateTime<Utc>) -> Vec<Question> {
    SEED_QUESTIONS
        .iter()
        .enumerate()
        .map(|(i, (text, qtype))| Question {
            id: QuestionId(i as u32 + 1),
            text: (*text).to_string(),
            qtype: *qtype,
            status: ModerationStatus::Approved,
            author: Author::Expert,
            created_at,
        })
        .collect()
}

/// Five-level agree/disagree answer, 1 = strongly disagree, 5 = strongly agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct LikertLevel(u8);

impl LikertLevel {
    pub const LABELS: [&'static str; 5] = [
        "Strongly Disagree",
        "Disagree",
        "Neither agree nor disagree",
        "Agree",
        "Strongly Agree",
    ];

    pub fn new(level: u8) -> Result<Self> {
        if (1..=5).contains(&level) {
            Ok(LikertLevel(level))
        } else {
            Err(Error::InvalidAnswer(format!("likert level {level} outside 1..5")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn label(self) -> &'static str {
        Self::LABELS[usize::from(self.0 - 1)]
    }
}

impl TryFrom<u8> for LikertLevel {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        LikertLevel::new(v)
    }
}

impl From<LikertLevel> for u8 {
    fn from(l: LikertLevel) -> u8 {
        l.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum AnswerValue {
    Numeric(f64),
    YesNo(bool),
    Likert(LikertLevel),
}

impl AnswerValue {
    pub fn numeric(v: f64) -> Result<Self> {
        if v.is_finite() {
            Ok(AnswerValue::Numeric(v))
        } else {
            Err(Error::InvalidAnswer(format!("numeric answer {v} is not finite")))
        }
    }

    pub fn likert(level: u8) -> Result<Self> {
        LikertLevel::new(level).map(AnswerValue::Likert)
    }

    pub fn qtype(&self) -> QuestionType {
        match self {
            AnswerValue::Numeric(_) => QuestionType::Numeric,
            AnswerValue::YesNo(_) => QuestionType::YesNo,
            AnswerValue::Likert(_) => QuestionType::Likert5,
        }
    }

    /// Parses the text form used in `answers.csv` for a question of type `qtype`.
    pub fn parse(qtype: QuestionType, raw: &str) -> Result<Self> {
        let s = raw.trim();
        match qtype {
            QuestionType::Numeric => s
                .parse::<f64>()
                .map_err(|_| Error::InvalidAnswer(format!("{s:?} is not a number")))
                .and_then(AnswerValue::numeric),
            QuestionType::YesNo => match s.to_ascii_lowercase().as_str() {
                "yes" | "true" => Ok(AnswerValue::YesNo(true)),
                "no" | "false" => Ok(AnswerValue::YesNo(false)),
                _ => Err(Error::InvalidAnswer(format!("{s:?} is not yes/no"))),
            },
            QuestionType::Likert5 => s
                .parse::<u8>()
                .map_err(|_| Error::InvalidAnswer(format!("{s:?} is not a likert level")))
                .and_then(AnswerValue::likert),
        }
    }

    /// Inverse of [`AnswerValue::parse`].
    pub fn render(&self) -> String {
        match self {
            AnswerValue::Numeric(v) => format!("{v}"),
            AnswerValue::YesNo(true) => "yes".into(),
            AnswerValue::YesNo(false) => "no".into(),
            AnswerValue::Likert(l) => l.get().to_string(),
        }
    }
}

/// Numeric coding used for modeling: numbers pass through, no/yes → 0/1,
/// Likert level k → k on an equally spaced scale.
pub fn encode_answer(v: &AnswerValue) -> f64 {
    match *v {
        AnswerValue::Numeric(x) => x,
        AnswerValue::YesNo(b) => {
            if b {
                1.0
            } else {
                0.0
            }
        }
        AnswerValue::Likert(l) => f64::from(l.get()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub user: UserId,
    pub question: QuestionId,
    pub value: AnswerValue,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub id: UserId,
    pub joined_at: DateTime<Utc>,
}

/// Which questions become matrix columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatrixScope {
    /// Approved questions only; used for every model.
    #[default]
    Modeling,
    /// Every question id, including rejected and pending ones (empty columns).
    Raw,
}

/// Sparse users × questions answer matrix. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerMatrix {
    users: Vec<UserId>,
    questions: Vec<QuestionId>,
    // row-major
    cells: Vec<Option<AnswerValue>>,
}

impl AnswerMatrix {
    /// Builds a matrix from explicit cells; `cells` is row-major `n × p`.
    pub fn from_cells(
        users: Vec<UserId>,
        questions: Vec<QuestionId>,
        cells: Vec<Option<AnswerValue>>,
    ) -> Result<Self> {
        let expected = users.len() * questions.len();
        if cells.len() != expected {
            return Err(Error::DimensionMismatch { expected, actual: cells.len() });
        }
        Ok(AnswerMatrix { users, questions, cells })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_questions(&self) -> usize {
        self.questions.len()
    }

    pub fn users(&self) -> &[UserId] {
        &self.users
    }

    pub fn questions(&self) -> &[QuestionId] {
        &self.questions
    }

    pub fn get(&self, row: usize, col: usize) -> Option<&AnswerValue> {
        self.cells[row * self.questions.len() + col].as_ref()
    }

    pub fn encoded(&self, row: usize, col: usize) -> Option<f64> {
        self.get(row, col).map(encode_answer)
    }

    /// Encoded values of one column, `None` where missing.
    pub fn column(&self, col: usize) -> Vec<Option<f64>> {
        (0..self.users.len()).map(|r| self.encoded(r, col)).collect()
    }

    pub fn row_of(&self, user: UserId) -> Option<usize> {
        self.users.binary_search(&user).ok().or_else(|| self.users.iter().position(|u| *u == user))
    }

    pub fn col_of(&self, question: QuestionId) -> Option<usize> {
        self.questions
            .binary_search(&question)
            .ok()
            .or_else(|| self.questions.iter().position(|q| *q == question))
    }

    pub fn filled(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Keeps only the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> AnswerMatrix {
        let p = self.questions.len();
        let mut cells = Vec::with_capacity(rows.len() * p);
        for &r in rows {
            cells.extend_from_slice(&self.cells[r * p..(r + 1) * p]);
        }
        AnswerMatrix {
            users: rows.iter().map(|&r| self.users[r]).collect(),
            questions: self.questions.clone(),
            cells,
        }
    }

    /// Rows restricted to `users` (in that order); unknown users are skipped.
    pub fn select_users(&self, users: &[UserId]) -> AnswerMatrix {
        let rows: Vec<usize> = users.iter().filter_map(|u| self.row_of(*u)).collect();
        self.select_rows(&rows)
    }

    pub(crate) fn cells_mut(&mut self) -> &mut [Option<AnswerValue>] {
        &mut self.cells
    }
}

/// An answer that could not be placed into the matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedAnswer {
    pub index: usize,
    pub user: UserId,
    pub question: QuestionId,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct MatrixBuild {
    pub matrix: AnswerMatrix,
    pub rejected: Vec<RejectedAnswer>,
}

/// Places answers into a users × questions matrix.
///
/// Rows follow participant id order; columns follow question id order. A
/// repeated (user, question) pair keeps the answer with the latest
/// timestamp, later log position winning exact ties.
pub fn build_matrix(
    participants: &[Participant],
    questions: &[Question],
    answers: &[Answer],
    scope: MatrixScope,
) -> MatrixBuild {
    let mut users: Vec<UserId> = participants.iter().map(|p| p.id).collect();
    users.sort_unstable();
    users.dedup();

    let by_id: HashMap<QuestionId, &Question> = questions.iter().map(|q| (q.id, q)).collect();
    let mut cols: Vec<QuestionId> = questions
        .iter()
        .filter(|q| scope == MatrixScope::Raw || q.is_approved())
        .map(|q| q.id)
        .collect();
    cols.sort_unstable();
    cols.dedup();

    let row_index: HashMap<UserId, usize> = users.iter().enumerate().map(|(i, u)| (*u, i)).collect();
    let col_index: HashMap<QuestionId, usize> = cols.iter().enumerate().map(|(i, q)| (*q, i)).collect();

    let mut latest: BTreeMap<(usize, usize), (DateTime<Utc>, usize)> = BTreeMap::new();
    let mut rejected = Vec::new();
    for (idx, a) in answers.iter().enumerate() {
        let reject = |reason: &str| RejectedAnswer {
            index: idx,
            user: a.user,
            question: a.question,
            reason: reason.to_string(),
        };
        let Some(q) = by_id.get(&a.question) else {
            rejected.push(reject("unknown question"));
            continue;
        };
        if !q.is_approved() {
            rejected.push(reject("question not approved"));
            continue;
        }
        if a.value.qtype() != q.qtype {
            rejected.push(reject("answer kind does not match question type"));
            continue;
        }
        let Some(&row) = row_index.get(&a.user) else {
            rejected.push(reject("unknown participant"));
            continue;
        };
        let col = col_index[&a.question];
        let entry = latest.entry((row, col)).or_insert((a.timestamp, idx));
        if a.timestamp >= entry.0 {
            *entry = (a.timestamp, idx);
        }
    }

    let p = cols.len();
    let mut cells = vec![None; users.len() * p];
    for ((row, col), (_, idx)) in latest {
        cells[row * p + col] = Some(answers[idx].value);
    }
    MatrixBuild {
        matrix: AnswerMatrix { users, questions: cols, cells },
        rejected,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityStats {
    /// Missing fraction per column, in column order.
    pub column_missing: Vec<f64>,
    pub min_missing: f64,
    pub max_missing: f64,
    /// Answered cells per row, in row order.
    pub user_answer_counts: Vec<usize>,
    pub filled: usize,
    pub fill_fraction: f64,
}

impl SparsityStats {
    pub fn median_answers_per_user(&self) -> f64 {
        let mut c: Vec<usize> = self.user_answer_counts.clone();
        c.sort_unstable();
        let n = c.len();
        if n == 0 {
            return 0.0;
        }
        if n % 2 == 1 {
            c[n / 2] as f64
        } else {
            (c[n / 2 - 1] + c[n / 2]) as f64 / 2.0
        }
    }

    /// Histogram of answers per user with fixed-width bins starting at 0.
    pub fn answer_count_histogram(&self, bin_width: usize) -> Vec<(usize, usize)> {
        let bin_width = bin_width.max(1);
        let max = self.user_answer_counts.iter().copied().max().unwrap_or(0);
        let mut bins = vec![0usize; max / bin_width + 1];
        for &c in &self.user_answer_counts {
            bins[c / bin_width] += 1;
        }
        bins.into_iter().enumerate().map(|(i, n)| (i * bin_width, n)).collect()
    }
}

pub fn sparsity_stats(m: &AnswerMatrix) -> Result<SparsityStats> {
    let (n, p) = (m.n_users(), m.n_questions());
    if n == 0 || p == 0 {
        return Err(Error::EmptyMatrix);
    }
    let mut col_filled = vec![0usize; p];
    let mut user_answer_counts = vec![0usize; n];
    for (r, count) in user_answer_counts.iter_mut().enumerate() {
        for (c, filled) in col_filled.iter_mut().enumerate() {
            if m.get(r, c).is_some() {
                *filled += 1;
                *count += 1;
            }
        }
    }
    let column_missing: Vec<f64> = col_filled.iter().map(|&f| 1.0 - f as f64 / n as f64).collect();
    let min_missing = column_missing.iter().copied().fold(f64::INFINITY, f64::min);
    let max_missing = column_missing.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let filled: usize = col_filled.iter().sum();
    Ok(SparsityStats {
        column_missing,
        min_missing,
        max_missing,
        user_answer_counts,
        filled,
        fill_fraction: filled as f64 / (n * p) as f64,
    })
}
