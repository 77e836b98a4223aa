//! Embedded, file-backed store: one append-only JSON-lines log replayed into
//! memory on open, with atomic compaction.
//!
//! Writes go through a single writer and are fsynced before they become
//! visible; reads copy out of the in-memory image under a short read lock.

mod error;
mod record;
mod snapshot;
mod state;

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, NaiveDate, Utc};
use crowdkwh_core::domain::{
    build_matrix, seed_questions, sparsity_stats, Answer, AnswerValue, Author, MatrixScope, ModerationStatus,
    Participant, Question, QuestionId, QuestionType, UserId,
};
use crowdkwh_core::formats::{self, RowError};
use crowdkwh_core::meter::{DailyUsage, MeterReading};
use crowdkwh_core::sim::participants_from_answers;
use serde::Serialize;

pub use error::{StoreError, StoreResult};
pub use record::{Decision, ModerationDecision, Record};
pub use snapshot::Snapshot;
use state::State;

pub const LOG_FILE: &str = "log.jsonl";
const TMP_FILE: &str = "log.jsonl.tmp";
/// Auto-compact once superseded lines exceed this many and half the log.
const COMPACT_MIN_DEAD: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: Vec<RowError>,
    /// Distinct (user, interval) readings held after the ingest.
    pub stored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionCounts {
    pub approved: usize,
    pub pending: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoreStats {
    pub users: usize,
    pub questions: QuestionCounts,
    pub answers: usize,
    /// Over the approved-question matrix of users who answered anything;
    /// `None` until it has a row and a column.
    pub min_column_missing_fraction: Option<f64>,
}

pub struct Store {
    dir: PathBuf,
    writer: Mutex<BufWriter<File>>,
    state: RwLock<State>,
}

fn open_append(path: &Path) -> StoreResult<BufWriter<File>> {
    Ok(BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?))
}

fn write_records(w: &mut BufWriter<File>, records: &[Record]) -> StoreResult<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    w.get_ref().sync_data()?;
    Ok(())
}

/// Replays the log. A torn final line (no trailing newline) is cut off;
/// any other unreadable line is an error.
fn replay(path: &Path) -> StoreResult<State> {
    let mut state = State::default();
    if !path.exists() {
        return Ok(state);
    }
    let mut reader = BufReader::new(File::open(path)?);
    let mut line = String::new();
    let mut offset = 0u64;
    let mut n = 0;
    loop {
        line.clear();
        let read = reader.read_line(&mut line)?;
        if read == 0 {
            break;
        }
        n += 1;
        if !line.ends_with('\n') {
            OpenOptions::new().write(true).open(path)?.set_len(offset)?;
            break;
        }
        let text = line.trim();
        if !text.is_empty() {
            let r = serde_json::from_str::<Record>(text)
                .map_err(|e| StoreError::Corrupt { line: n, message: e.to_string() })?;
            state.apply(r);
        }
        offset += read as u64;
    }
    Ok(state)
}

impl Store {
    /// Opens (creating if needed) the store in `dir`.
    pub fn open(dir: impl AsRef<Path>) -> StoreResult<Store> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let path = dir.join(LOG_FILE);
        let state = replay(&path)?;
        let writer = open_append(&path)?;
        Ok(Store { dir, writer: Mutex::new(writer), state: RwLock::new(state) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, State> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    /// Runs `build` under the writer lock against the current state, then
    /// persists and applies whatever records it returns.
    fn write<T>(&self, build: impl FnOnce(&State) -> StoreResult<(Vec<Record>, T)>) -> StoreResult<T> {
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let (records, out) = build(&self.read())?;
        if records.is_empty() {
            return Ok(out);
        }
        write_records(&mut w, &records)?;
        let mut st = self.state.write().unwrap_or_else(|e| e.into_inner());
        for r in records {
            st.apply(r);
        }
        let dead = st.log_lines - st.live_records();
        if dead > COMPACT_MIN_DEAD && dead * 2 > st.log_lines {
            let compacted = st.compacted();
            drop(st);
            self.rewrite(&mut w, compacted)?;
        }
        Ok(out)
    }

    fn rewrite(&self, w: &mut BufWriter<File>, records: Vec<Record>) -> StoreResult<()> {
        let tmp = self.dir.join(TMP_FILE);
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            write_records(&mut out, &records)?;
        }
        fs::rename(&tmp, self.dir.join(LOG_FILE))?;
        if let Ok(d) = File::open(&self.dir) {
            let _ = d.sync_all();
        }
        *w = open_append(&self.dir.join(LOG_FILE))?;
        let mut st = self.state.write().unwrap_or_else(|e| e.into_inner());
        st.log_lines = records.len();
        Ok(())
    }

    /// Rewrites the log with one line per live record (superseded meter
    /// readings dropped). Atomic: a crash leaves either the old or new log.
    pub fn compact(&self) -> StoreResult<()> {
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let records = self.read().compacted();
        self.rewrite(&mut w, records)
    }

    pub fn log_lines(&self) -> usize {
        self.read().log_lines
    }

    /// Adds the expert seed questions when the store has no questions.
    /// Returns whether anything was written.
    pub fn seed_if_empty(&self, at: DateTime<Utc>) -> StoreResult<bool> {
        self.write(|st| {
            if !st.questions.is_empty() {
                return Ok((Vec::new(), false));
            }
            Ok((seed_questions(at).into_iter().map(Record::Question).collect(), true))
        })
    }

    pub fn register_participant(&self, at: DateTime<Utc>) -> StoreResult<Participant> {
        self.write(|st| {
            let id = UserId(st.participants.keys().next_back().map_or(1, |u| u.0 + 1));
            let p = Participant { id, joined_at: at };
            Ok((vec![Record::Participant(p)], p))
        })
    }

    /// Stores a participant-authored question as pending.
    pub fn submit_question(&self, author: UserId, text: &str, qtype: QuestionType, at: DateTime<Utc>) -> StoreResult<Question> {
        self.write(|st| {
            if !st.participants.contains_key(&author) {
                return Err(StoreError::NotFound(format!("unknown user {author}")));
            }
            let id = QuestionId(st.questions.keys().next_back().map_or(1, |q| q.0 + 1));
            let q = Question::new(id, text.trim(), qtype, ModerationStatus::Pending, Author::Participant(author), at)
                .map_err(|e| StoreError::Validation(e.to_string()))?;
            Ok((vec![Record::Question(q.clone())], q))
        })
    }

    /// Decides a pending question. A second decision is a conflict.
    pub fn moderate(&self, id: QuestionId, decision: Decision, reason: Option<String>, at: DateTime<Utc>) -> StoreResult<Question> {
        self.write(|st| {
            let status = st.status(id).ok_or_else(|| StoreError::NotFound(format!("unknown question {id}")))?;
            if status != ModerationStatus::Pending {
                return Err(StoreError::Conflict(format!("question {id} is already {}", status.as_str())));
            }
            let d = ModerationDecision { question: id, decision, reason, decided_at: at };
            let mut q = st.question(id).expect("status found");
            q.status = match decision {
                Decision::Approve => ModerationStatus::Approved,
                Decision::Reject => ModerationStatus::Rejected,
            };
            Ok((vec![Record::Decision(d)], q))
        })
    }

    /// Appends an answer; `raw` is parsed against the question's type.
    pub fn post_answer(&self, user: UserId, question: QuestionId, raw: &str, at: DateTime<Utc>) -> StoreResult<Answer> {
        self.write(|st| {
            if !st.participants.contains_key(&user) {
                return Err(StoreError::NotFound(format!("unknown user {user}")));
            }
            let q = st.question(question).ok_or_else(|| StoreError::NotFound(format!("unknown question {question}")))?;
            if q.status != ModerationStatus::Approved {
                return Err(StoreError::Forbidden(format!("question {question} is {}", q.status.as_str())));
            }
            let value = AnswerValue::parse(q.qtype, raw).map_err(|e| StoreError::Validation(e.to_string()))?;
            let a = Answer { user, question, value, timestamp: at };
            Ok((vec![Record::Answer(a.clone())], a))
        })
    }

    /// Upserts readings keyed by (user, interval_start).
    pub fn ingest_meter(&self, readings: &[MeterReading]) -> StoreResult<usize> {
        for r in readings {
            MeterReading::new(r.user, r.interval_start, r.kwh).map_err(|e| StoreError::Validation(e.to_string()))?;
        }
        let records = readings.iter().copied().map(Record::Meter).collect();
        self.write(|_| Ok((records, ())))?;
        Ok(self.read().meter.len())
    }

    /// Reads a meter.csv file. Bad rows are reported with their line and
    /// skipped; the rest are stored.
    pub fn ingest_meter_csv(&self, path: &Path) -> StoreResult<IngestReport> {
        let outcome = formats::read_meter(File::open(path)?)?;
        let stored = self.ingest_meter(&outcome.records)?;
        Ok(IngestReport { accepted: outcome.records.len(), rejected: outcome.errors, stored })
    }

    /// Loads a complete dataset into an empty store. Participants without
    /// an explicit record join at their first answer.
    pub fn import(&self, questions: &[Question], answers: &[Answer], readings: &[MeterReading]) -> StoreResult<()> {
        self.write(|st| {
            if !st.questions.is_empty() || !st.participants.is_empty() {
                return Err(StoreError::Conflict("import needs an empty store".into()));
            }
            let mut records: Vec<Record> = participants_from_answers(answers)
                .into_iter()
                .map(Record::Participant)
                .collect();
            records.extend(questions.iter().cloned().map(Record::Question));
            records.extend(answers.iter().cloned().map(Record::Answer));
            records.extend(readings.iter().copied().map(Record::Meter));
            Ok((records, ()))
        })
    }

    pub fn snapshot(&self, as_of: DateTime<Utc>) -> Snapshot {
        self.read().snapshot(as_of)
    }

    pub fn participant(&self, user: UserId) -> Option<Participant> {
        self.read().participants.get(&user).cloned()
    }

    pub fn question(&self, id: QuestionId) -> Option<Question> {
        self.read().question(id)
    }

    /// Current questions, optionally filtered by status, in id order.
    pub fn questions(&self, status: Option<ModerationStatus>) -> Vec<Question> {
        let st = self.read();
        st.questions.keys().filter_map(|id| st.question(*id)).filter(|q| status.is_none_or(|s| q.status == s)).collect()
    }

    /// Approved questions the user has not answered, in id order.
    pub fn unanswered(&self, user: UserId) -> StoreResult<Vec<Question>> {
        let st = self.read();
        if !st.participants.contains_key(&user) {
            return Err(StoreError::NotFound(format!("unknown user {user}")));
        }
        let empty = HashSet::new();
        let done = st.answered.get(&user).unwrap_or(&empty);
        Ok(st
            .questions
            .keys()
            .filter(|id| !done.contains(id))
            .filter_map(|id| st.question(*id))
            .filter(Question::is_approved)
            .collect())
    }

    /// Latest answer per question for one user.
    pub fn latest_answers(&self, user: UserId) -> BTreeMap<QuestionId, AnswerValue> {
        let st = self.read();
        let mut out: BTreeMap<QuestionId, (DateTime<Utc>, AnswerValue)> = BTreeMap::new();
        for a in st.answers.iter().filter(|a| a.user == user) {
            match out.get(&a.question) {
                Some((t, _)) if *t > a.timestamp => {}
                _ => {
                    out.insert(a.question, (a.timestamp, a.value));
                }
            }
        }
        out.into_iter().map(|(q, (_, v))| (q, v)).collect()
    }

    /// Daily totals for every user over `[start, end)`.
    pub fn daily_usage(&self, start: NaiveDate, end: NaiveDate) -> DailyUsage {
        let st = self.read();
        let mut d = DailyUsage::default();
        for (&(user, t), &kwh) in &st.meter {
            let day = t.date_naive();
            if day >= start && day < end {
                d.insert(user, day, kwh);
            }
        }
        d
    }

    /// Last day with any meter data.
    pub fn last_meter_day(&self) -> Option<NaiveDate> {
        self.read().meter.keys().map(|(_, t)| t.date_naive()).max()
    }

    pub fn stats(&self) -> StoreStats {
        let st = self.read();
        let mut counts = QuestionCounts { approved: 0, pending: 0, rejected: 0 };
        let mut questions = Vec::with_capacity(st.questions.len());
        for id in st.questions.keys() {
            let q = st.question(*id).expect("present");
            match q.status {
                ModerationStatus::Approved => counts.approved += 1,
                ModerationStatus::Pending => counts.pending += 1,
                ModerationStatus::Rejected => counts.rejected += 1,
            }
            questions.push(q);
        }
        let participants = participants_from_answers(&st.answers);
        let m = build_matrix(&participants, &questions, &st.answers, MatrixScope::Modeling).matrix;
        StoreStats {
            users: st.participants.len(),
            questions: counts,
            answers: st.answers.len(),
            min_column_missing_fraction: sparsity_stats(&m).ok().map(|s| s.min_missing),
        }
    }
}
