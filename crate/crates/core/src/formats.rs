//! CSV exchange formats: `questions.csv`, `answers.csv`, `meter.csv` and the
//! `matrix.csv` export.
//!
//! Readers never stop at the first bad row. They return every good record
//! plus a list of row errors; callers that need all-or-nothing semantics use
//! [`ReadOutcome::strict`].

use std::collections::HashMap;
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use serde::Serialize;

use crate::domain::{
    Answer, AnswerMatrix, AnswerValue, Author, Question, QuestionId, QuestionType, UserId,
};
use crate::error::{Error, Result};
use crate::meter::MeterReading;
use crate::preprocess::StandardizedMatrix;

pub const QUESTIONS_HEADER: [&str; 6] = ["id", "author", "qtype", "status", "created_at", "text"];
pub const ANSWERS_HEADER: [&str; 4] = ["user_id", "question_id", "value", "timestamp"];
pub const METER_HEADER: [&str; 3] = ["user_id", "interval_start", "kwh"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ReadOutcome<T> {
    pub records: Vec<T>,
    pub errors: Vec<RowError>,
}

impl<T> ReadOutcome<T> {
    /// Fails on the first row error, naming `file` and the line.
    pub fn strict(self, file: &str) -> Result<Vec<T>> {
        match self.errors.into_iter().next() {
            Some(e) => Err(Error::Parse { file: file.to_string(), line: e.line, message: e.message }),
            None => Ok(self.records),
        }
    }
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Accepts RFC 3339 timestamps or bare `YYYY-MM-DD` dates (midnight UTC).
pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc())
        .map_err(|_| Error::InvalidAnswer(format!("bad timestamp {s:?}")))
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::Parse {
            file: String::new(),
            line: 1,
            message: format!("expected header {}, got {}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn for_each_row<R: Read, T>(
    r: R,
    header: &[&str],
    mut parse: impl FnMut(&csv::StringRecord) -> Result<T>,
) -> Result<ReadOutcome<T>> {
    let mut rdr = reader(r);
    check_header(&mut rdr, header)?;
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for rec in rdr.records() {
        match rec {
            Ok(rec) => {
                let line = rec.position().map_or(0, |p| p.line());
                if rec.len() != header.len() {
                    errors.push(RowError { line, message: format!("expected {} fields, got {}", header.len(), rec.len()) });
                    continue;
                }
                match parse(&rec) {
                    Ok(v) => records.push(v),
                    Err(e) => errors.push(RowError { line, message: e.to_string() }),
                }
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                errors.push(RowError { line, message: e.to_string() });
            }
        }
    }
    Ok(ReadOutcome { records, errors })
}

pub fn read_questions<R: Read>(r: R) -> Result<ReadOutcome<Question>> {
    for_each_row(r, &QUESTIONS_HEADER, |rec| {
        Question::new(
            rec[0].parse()?,
            rec[5].to_string(),
            rec[2].parse()?,
            rec[3].parse()?,
            rec[1].parse::<Author>()?,
            parse_timestamp(&rec[4])?,
        )
    })
}

pub fn write_questions<W: Write>(w: W, questions: &[Question]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(QUESTIONS_HEADER)?;
    for q in questions {
        wtr.write_record([
            q.id.to_string(),
            q.author.to_string(),
            q.qtype.as_str().to_string(),
            q.status.as_str().to_string(),
            format_timestamp(&q.created_at),
            q.text.clone(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Answer values are typed by their question, so the question list is needed
/// to decode them. Answers to unknown questions become row errors.
pub fn read_answers<R: Read>(r: R, questions: &[Question]) -> Result<ReadOutcome<Answer>> {
    let types: HashMap<QuestionId, QuestionType> = questions.iter().map(|q| (q.id, q.qtype)).collect();
    for_each_row(r, &ANSWERS_HEADER, |rec| {
        let user: UserId = rec[0].parse()?;
        let question: QuestionId = rec[1].parse()?;
        let qtype = *types.get(&question).ok_or(Error::UnknownQuestion(question))?;
        Ok(Answer { user, question, value: AnswerValue::parse(qtype, &rec[2])?, timestamp: parse_timestamp(&rec[3])? })
    })
}

pub fn write_answers<W: Write>(w: W, answers: &[Answer]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(ANSWERS_HEADER)?;
    for a in answers {
        wtr.write_record([a.user.to_string(), a.question.to_string(), a.value.render(), format_timestamp(&a.timestamp)])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_meter<R: Read>(r: R) -> Result<ReadOutcome<MeterReading>> {
    for_each_row(r, &METER_HEADER, |rec| {
        let kwh: f64 = rec[2]
            .parse()
            .map_err(|_| Error::InvalidParams(format!("kwh {:?} is not a number", &rec[2])))?;
        MeterReading::new(rec[0].parse()?, parse_timestamp(&rec[1])?, kwh)
    })
}

pub fn write_meter<W: Write>(w: W, readings: &[MeterReading]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(METER_HEADER)?;
    for r in readings {
        // Daily data is written as a date; sub-daily keeps the full timestamp.
        let t = if r.interval_start.time() == chrono::NaiveTime::MIN {
            r.interval_start.date_naive().to_string()
        } else {
            format_timestamp(&r.interval_start)
        };
        wtr.write_record([r.user.to_string(), t, format!("{:.4}", r.kwh)])?;
    }
    wtr.flush()?;
    Ok(())
}

/// `matrix.csv`: a `user_id` column then one column per question id; empty
/// field means missing.
pub fn write_answer_matrix<W: Write>(w: W, m: &AnswerMatrix) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["user_id".to_string()];
    header.extend(m.questions().iter().map(ToString::to_string));
    wtr.write_record(&header)?;
    for (r, u) in m.users().iter().enumerate() {
        let mut row = vec![u.to_string()];
        row.extend((0..m.n_questions()).map(|c| m.get(r, c).map(AnswerValue::render).unwrap_or_default()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Standardized export; imputed cells are written empty so the file keeps
/// the missingness pattern. Use [`ColumnStats`] for the sidecar.
pub fn write_standardized_matrix<W: Write>(w: W, s: &StandardizedMatrix) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["user_id".to_string()];
    header.extend(s.questions.iter().map(ToString::to_string));
    wtr.write_record(&header)?;
    for (r, u) in s.users.iter().enumerate() {
        let mut row = vec![u.to_string()];
        row.extend((0..s.questions.len()).map(|c| {
            if s.is_imputed(r, c) {
                String::new()
            } else {
                format!("{:.6}", s.z[[r, c]])
            }
        }));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// One entry of the `stats.json` sidecar.
#[derive(Debug, Clone, Serialize)]
pub struct ColumnStats {
    pub question_id: QuestionId,
    pub mean: f64,
    pub sd: f64,
    pub missing_fraction: f64,
    pub outliers_removed: usize,
}

pub fn column_stats(s: &StandardizedMatrix) -> Vec<ColumnStats> {
    (0..s.questions.len())
        .map(|c| ColumnStats {
            question_id: s.questions[c],
            mean: s.col_means[c],
            sd: s.col_sds[c],
            missing_fraction: s.missing_fraction[c],
            outliers_removed: s.outliers_removed[c],
        })
        .collect()
}
