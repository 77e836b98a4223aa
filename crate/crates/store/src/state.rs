use std::collections::{BTreeMap, HashSet};

use chrono::{DateTime, Utc};
use crowdkwh_core::domain::{Answer, ModerationStatus, Participant, Question, QuestionId, UserId};
use crowdkwh_core::meter::MeterReading;

use crate::record::{Decision, ModerationDecision, Record};
use crate::snapshot::Snapshot;

/// In-memory image of the log.
#[derive(Debug, Default, Clone)]
pub(crate) struct State {
    pub participants: BTreeMap<UserId, Participant>,
    /// Questions as submitted; the decision map holds the moderation outcome.
    pub questions: BTreeMap<QuestionId, Question>,
    pub decisions: BTreeMap<QuestionId, ModerationDecision>,
    pub answers: Vec<Answer>,
    pub answered: BTreeMap<UserId, HashSet<QuestionId>>,
    pub meter: BTreeMap<(UserId, DateTime<Utc>), f64>,
    /// Lines in the log file, including superseded meter rows.
    pub log_lines: usize,
}

pub(crate) fn status_at(q: &Question, d: Option<&ModerationDecision>, as_of: DateTime<Utc>) -> ModerationStatus {
    match d {
        Some(d) if d.decided_at <= as_of => match d.decision {
            Decision::Approve => ModerationStatus::Approved,
            Decision::Reject => ModerationStatus::Rejected,
        },
        Some(_) => ModerationStatus::Pending,
        None => q.status,
    }
}

impl State {
    pub fn apply(&mut self, r: Record) {
        self.log_lines += 1;
        match r {
            Record::Participant(p) => {
                self.participants.insert(p.id, p);
            }
            Record::Question(q) => {
                self.questions.insert(q.id, q);
            }
            Record::Decision(d) => {
                self.decisions.insert(d.question, d);
            }
            Record::Answer(a) => {
                self.answered.entry(a.user).or_default().insert(a.question);
                self.answers.push(a);
            }
            Record::Meter(m) => {
                self.meter.insert((m.user, m.interval_start), m.kwh);
            }
        }
    }

    pub fn live_records(&self) -> usize {
        self.participants.len() + self.questions.len() + self.decisions.len() + self.answers.len() + self.meter.len()
    }

    /// Current moderation status.
    pub fn status(&self, id: QuestionId) -> Option<ModerationStatus> {
        let q = self.questions.get(&id)?;
        Some(match self.decisions.get(&id) {
            Some(d) if d.decision == Decision::Approve => ModerationStatus::Approved,
            Some(_) => ModerationStatus::Rejected,
            None => q.status,
        })
    }

    pub fn question(&self, id: QuestionId) -> Option<Question> {
        let mut q = self.questions.get(&id)?.clone();
        q.status = self.status(id)?;
        Some(q)
    }

    /// Records that reproduce this state, one per live item.
    pub fn compacted(&self) -> Vec<Record> {
        let mut out = Vec::with_capacity(self.live_records());
        out.extend(self.participants.values().cloned().map(Record::Participant));
        out.extend(self.questions.values().cloned().map(Record::Question));
        out.extend(self.decisions.values().cloned().map(Record::Decision));
        out.extend(self.answers.iter().cloned().map(Record::Answer));
        out.extend(
            self.meter
                .iter()
                .map(|(&(user, interval_start), &kwh)| Record::Meter(MeterReading { user, interval_start, kwh })),
        );
        out
    }

    pub fn snapshot(&self, as_of: DateTime<Utc>) -> Snapshot {
        let questions = self
            .questions
            .values()
            .filter(|q| q.created_at <= as_of)
            .map(|q| {
                let mut q = q.clone();
                q.status = status_at(&q, self.decisions.get(&q.id), as_of);
                q
            })
            .collect();
        Snapshot {
            as_of,
            participants: self.participants.values().filter(|p| p.joined_at <= as_of).cloned().collect(),
            questions,
            answers: self.answers.iter().filter(|a| a.timestamp <= as_of).cloned().collect(),
            readings: self
                .meter
                .iter()
                .filter(|((_, t), _)| *t <= as_of)
                .map(|(&(user, interval_start), &kwh)| MeterReading { user, interval_start, kwh })
                .collect(),
        }
    }
}
