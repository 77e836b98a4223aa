use std::fs;
use std::io::BufWriter;
use std::path::Path;

use chrono::{DateTime, Utc};
use crowdkwh_core::domain::{Answer, Participant, Question};
use crowdkwh_core::formats;
use crowdkwh_core::meter::MeterReading;
use crowdkwh_core::pipeline::Dataset;
use crowdkwh_core::sim::{ANSWERS_FILE, METER_FILE, QUESTIONS_FILE};
use serde::Serialize;

use crate::error::StoreResult;

/// Frozen view of every record stamped at or before `as_of`, with each
/// question's moderation status as it stood then.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub as_of: DateTime<Utc>,
    pub participants: Vec<Participant>,
    pub questions: Vec<Question>,
    pub answers: Vec<Answer>,
    pub readings: Vec<MeterReading>,
}

impl Snapshot {
    pub fn to_dataset(&self) -> Dataset {
        Dataset {
            questions: self.questions.clone(),
            answers: self.answers.clone(),
            readings: self.readings.clone(),
            ground_truth: None,
        }
    }

    /// Writes questions.csv, answers.csv and meter.csv.
    pub fn write_dir(&self, dir: &Path) -> StoreResult<()> {
        fs::create_dir_all(dir)?;
        let file = |name: &str| -> StoreResult<BufWriter<fs::File>> { Ok(BufWriter::new(fs::File::create(dir.join(name))?)) };
        formats::write_questions(file(QUESTIONS_FILE)?, &self.questions)?;
        formats::write_answers(file(ANSWERS_FILE)?, &self.answers)?;
        formats::write_meter(file(METER_FILE)?, &self.readings)?;
        Ok(())
    }

}
