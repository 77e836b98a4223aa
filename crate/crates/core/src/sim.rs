//! Synthetic collaborative-crowdsourcing datasets with planted ground truth.
//!
//! Participants arrive over the horizon and visit the site one or more
//! times. On each visit they consider every approved question they have not
//! seen yet and answer it with their personal engagement probability; some
//! visits also pose a new question, mostly during a winter campaign. Each
//! answer is a noisy quantization of a latent per-user trait, and a handful
//! of planted traits shift the user's log-normal monthly usage.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    seed_questions, Answer, AnswerValue, Author, ModerationStatus, Participant, Question, QuestionId, QuestionType,
    UserId,
};
use crate::error::{Error, Result};
use crate::formats;
use crate::meter::MeterReading;

/// Moment-matched log-normal for 514 ± 316 kWh/month.
pub const USAGE_MU: f64 = 6.0819;
pub const USAGE_SIGMA: f64 = 0.5662;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectForm {
    Linear,
    Threshold,
    Quadratic,
}

impl EffectForm {
    /// Standardized response to a N(0,1) trait: mean 0, variance 1.
    pub fn apply(self, t: f64) -> f64 {
        match self {
            EffectForm::Linear => t,
            EffectForm::Threshold => {
                if t > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            EffectForm::Quadratic => (t * t - 1.0) / std::f64::consts::SQRT_2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub form: EffectForm,
    /// Relative magnitude; the sign is drawn at simulation time.
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub start_day: u32,
    pub end_day: u32,
    /// Relative rate of question posing inside the campaign.
    pub pose_intensity: f64,
    /// Relative rate of new participants joining inside the campaign.
    pub join_intensity: f64,
    /// Relative join rate after the campaign ends.
    pub late_join_intensity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QtypeMix {
    pub yes_no: f64,
    pub likert5: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_users: usize,
    pub start_date: NaiveDate,
    pub horizon_days: u32,
    pub seed_question_count: usize,
    /// Questions posed by participants over the whole horizon.
    pub posed_questions: usize,
    pub campaign: Campaign,
    /// Beta(α, β) engagement: the chance a user answers a question they see.
    pub engagement_alpha: f64,
    pub engagement_beta: f64,
    /// Chance of coming back after each visit.
    pub return_visit: f64,
    pub return_gap_mean_days: f64,
    pub rejection: f64,
    pub moderation_delay_hours: i64,
    pub qtype_mix: QtypeMix,
    pub planted: Vec<PlantedSpec>,
    /// Planted questions are drawn from the first this-many posed questions.
    pub planted_pool: usize,
    pub positive_fraction: f64,
    /// Share of log-usage variance explained by the planted traits.
    pub signal_share: f64,
    pub answer_noise_sd: f64,
    pub usage_mu: f64,
    pub usage_sigma: f64,
    pub daily_noise_sd: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_users: 627,
            start_date: NaiveDate::from_ymd_opt(2013, 6, 25).expect("valid date"),
            horizon_days: 456,
            seed_question_count: 6,
            posed_questions: 626,
            campaign: Campaign {
                start_day: 159,
                end_day: 221,
                pose_intensity: 10.0,
                join_intensity: 3.0,
                late_join_intensity: 0.1,
            },
            engagement_alpha: 12.4,
            engagement_beta: 7.6,
            return_visit: 0.3,
            return_gap_mean_days: 45.0,
            rejection: 0.05,
            moderation_delay_hours: 24,
            qtype_mix: QtypeMix { yes_no: 0.45, likert5: 0.35, numeric: 0.20 },
            planted: default_planted(),
            planted_pool: 30,
            positive_fraction: 0.84,
            signal_share: 0.85,
            answer_noise_sd: 0.3,
            usage_mu: USAGE_MU,
            usage_sigma: USAGE_SIGMA,
            daily_noise_sd: 0.15,
        }
    }
}

fn default_planted() -> Vec<PlantedSpec> {
    use EffectForm::*;
    [Linear, Linear, Linear, Linear, Threshold, Threshold, Threshold, Quadratic, Quadratic, Quadratic]
        .into_iter()
        .map(|form| PlantedSpec { form, magnitude: if form == Quadratic { 1.5 } else { 1.0 } })
        .collect()
}

impl SimConfig {
    /// Preset calibrated to the deployment's scale: roughly 600 users by 600
    /// questions, 10 planted signal questions.
    pub fn paper_regime() -> Self {
        SimConfig::default()
    }

    /// Same participation process with no planted effects.
    pub fn without_signal(mut self) -> Self {
        self.planted.clear();
        self.signal_share = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("return_visit", self.return_visit),
            ("rejection", self.rejection),
            ("positive_fraction", self.positive_fraction),
            ("signal_share", self.signal_share),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParams(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.n_users == 0 || self.horizon_days == 0 {
            return Err(Error::InvalidParams("n_users and horizon_days must be positive".into()));
        }
        if self.seed_question_count > 6 {
            return Err(Error::InvalidParams("at most 6 seed questions exist".into()));
        }
        let positive = [
            self.engagement_alpha,
            self.engagement_beta,
            self.return_gap_mean_days,
            self.usage_sigma,
            self.campaign.pose_intensity,
            self.campaign.join_intensity,
            self.campaign.late_join_intensity,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParams("rates, shapes and sigma must be positive".into()));
        }
        if self.answer_noise_sd < 0.0 || self.daily_noise_sd < 0.0 {
            return Err(Error::InvalidParams("noise sd must be non-negative".into()));
        }
        let mix = self.qtype_mix;
        if [mix.yes_no, mix.likert5, mix.numeric].iter().any(|w| *w < 0.0) || mix.yes_no + mix.likert5 + mix.numeric <= 0.0
        {
            return Err(Error::InvalidParams("question type mix needs non-negative weights".into()));
        }
        if self.planted.iter().any(|p| !(p.magnitude.is_finite() && p.magnitude > 0.0)) {
            return Err(Error::InvalidParams("planted magnitudes must be positive".into()));
        }
        if self.campaign.start_day >= self.campaign.end_day {
            return Err(Error::InvalidParams("campaign must start before it ends".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEffect {
    pub question: QuestionId,
    pub form: EffectForm,
    /// Signed weight before normalization.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub planted: Vec<PlantedEffect>,
    pub signal_share: f64,
    /// Latent trait of every user for each planted question, in user order.
    pub traits: BTreeMap<QuestionId, Vec<f64>>,
    /// Standardized planted signal per user.
    pub signal: Vec<f64>,
    pub users: Vec<UserId>,
}

impl GroundTruth {
    pub fn planted_ids(&self) -> Vec<QuestionId> {
        self.planted.iter().map(|p| p.question).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub questions: Vec<Question>,
    pub answers: Vec<Answer>,
    pub readings: Vec<MeterReading>,
    pub participants: Vec<Participant>,
    pub ground_truth: GroundTruth,
    pub warnings: Vec<String>,
}

struct Visit {
    user: usize,
    at: DateTime<Utc>,
}

fn day_weight(day: u32, c: &Campaign, intensity: f64) -> f64 {
    if day >= c.start_day && day < c.end_day {
        intensity
    } else {
        1.0
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn quantize(qtype: QuestionType, x: f64) -> AnswerValue {
    match qtype {
        QuestionType::YesNo => AnswerValue::YesNo(x > 0.0),
        QuestionType::Likert5 => {
            let level = [-1.2, -0.4, 0.4, 1.2].iter().filter(|&&c| x > c).count() as u8 + 1;
            AnswerValue::likert(level).expect("level in 1..=5")
        }
        QuestionType::Numeric => AnswerValue::Numeric((3.0 + 2.0 * x).round().max(0.0)),
    }
}

const TOPICS: [&str; 16] = [
    "How many hours a day is your TV on?",
    "Do you dry clothes on a line?",
    "How many computers are usually running in your home?",
    "I keep my thermostat low in winter",
    "Do you have an electric stove?",
    "How many people work from home in your household?",
    "Do you use a space heater?",
    "I turn off lights when I leave a room",
    "How many refrigerators or freezers do you run?",
    "Do you own an electric vehicle?",
    "How many showers are taken in your home each day?",
    "I run the dishwasher only when it is full",
    "Do you have a well pump?",
    "How many aquariums or terrariums do you keep?",
    "I know most of my neighbors on a first name basis",
    "Do you use heat tape on your pipes in winter?",
];

/// Generates one dataset; identical `(config, seed)` gives identical output.
pub fn simulate(config: &SimConfig, seed: u64) -> Result<SimOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut warnings = Vec::new();
    let start = config.start_date.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
    let horizon = config.horizon_days;
    let c = &config.campaign;

    // Arrivals: day weights shaped by the campaign, sorted so ids follow join time.
    let join_weights: Vec<f64> = (0..horizon)
        .map(|d| if d >= c.end_day { c.late_join_intensity } else { day_weight(d, c, c.join_intensity) })
        .collect();
    let join_dist = WeightedIndex::new(&join_weights).expect("positive weights");
    let mut join_secs: Vec<i64> = (0..config.n_users)
        .map(|_| join_dist.sample(&mut rng) as i64 * 86_400 + rng.random_range(8 * 3600..22 * 3600))
        .collect();
    join_secs.sort_unstable();
    let users: Vec<UserId> = (1..=config.n_users as u32).map(UserId).collect();

    let engagement_dist = Beta::new(config.engagement_alpha, config.engagement_beta)
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let engagement: Vec<f64> = (0..config.n_users).map(|_| engagement_dist.sample(&mut rng)).collect();

    let gap = Exp::new(1.0 / config.return_gap_mean_days).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let end_secs = i64::from(horizon) * 86_400;
    let mut visits = Vec::new();
    for (u, &j) in join_secs.iter().enumerate() {
        let mut t = j;
        visits.push(Visit { user: u, at: start + Duration::seconds(t) });
        while rng.random::<f64>() < config.return_visit {
            t += (gap.sample(&mut rng) * 86_400.0).ceil() as i64 + 60;
            if t >= end_secs {
                break;
            }
            visits.push(Visit { user: u, at: start + Duration::seconds(t) });
        }
    }
    visits.sort_by_key(|v| (v.at, v.user));

    // Posing visits, weighted toward the campaign.
    let mut posing_visits: Vec<usize> = Vec::with_capacity(config.posed_questions);
    if config.posed_questions > 0 {
        let w: Vec<f64> = visits
            .iter()
            .map(|v| day_weight(((v.at - start).num_seconds() / 86_400) as u32, c, c.pose_intensity))
            .collect();
        let dist = WeightedIndex::new(&w).expect("positive weights");
        posing_visits = (0..config.posed_questions).map(|_| dist.sample(&mut rng)).collect();
        posing_visits.sort_unstable();
    }

    // Questions in creation order; approval times gate availability.
    let mut questions = seed_questions(start);
    questions.truncate(config.seed_question_count);
    let mut available_at: Vec<Option<DateTime<Utc>>> = questions.iter().map(|_| Some(start)).collect();
    let mix = config.qtype_mix;
    let qtype_dist = WeightedIndex::new([mix.yes_no, mix.likert5, mix.numeric]).expect("validated weights");
    let delay = Duration::hours(config.moderation_delay_hours);
    let horizon_end = start + Duration::seconds(end_secs);
    for (k, &vi) in posing_visits.iter().enumerate() {
        let v = &visits[vi];
        let id = QuestionId((questions.len() + 1) as u32);
        let qtype = [QuestionType::YesNo, QuestionType::Likert5, QuestionType::Numeric][qtype_dist.sample(&mut rng)];
        let rejected = rng.random::<f64>() < config.rejection;
        let decided = v.at + delay;
        let status = if decided >= horizon_end {
            ModerationStatus::Pending
        } else if rejected {
            ModerationStatus::Rejected
        } else {
            ModerationStatus::Approved
        };
        let text = format!("{} (#{})", TOPICS[k % TOPICS.len()], id.0);
        questions.push(Question {
            id,
            text,
            qtype,
            status,
            author: Author::Participant(users[v.user]),
            created_at: v.at,
        });
        available_at.push((status == ModerationStatus::Approved).then_some(decided));
    }

    // Planted questions among the earliest posed ones, forced approved.
    let first_posed = config.seed_question_count;
    let pool_end = (first_posed + config.planted_pool).min(questions.len());
    let pool: Vec<usize> = (first_posed..pool_end)
        .filter(|&i| questions[i].status != ModerationStatus::Pending)
        .collect();
    let mut planted_specs = config.planted.clone();
    if planted_specs.len() > pool.len() {
        warnings.push(format!(
            "only {} candidate questions for {} planted effects; clamped",
            pool.len(),
            planted_specs.len()
        ));
        planted_specs.truncate(pool.len());
    }
    let chosen: Vec<usize> =
        sample(&mut rng, pool.len(), planted_specs.len()).into_iter().map(|i| pool[i]).collect();
    let mut planted = Vec::with_capacity(chosen.len());
    for (spec, &qi) in planted_specs.iter().zip(&chosen) {
        let q = &mut questions[qi];
        q.status = ModerationStatus::Approved;
        q.qtype = match spec.form {
            EffectForm::Threshold => QuestionType::YesNo,
            EffectForm::Linear | EffectForm::Quadratic if q.qtype == QuestionType::YesNo => QuestionType::Likert5,
            _ => q.qtype,
        };
        available_at[qi] = Some(q.created_at + delay);
        let sign = if rng.random::<f64>() < config.positive_fraction { 1.0 } else { -1.0 };
        planted.push(PlantedEffect { question: q.id, form: spec.form, weight: sign * spec.magnitude });
    }
    planted.sort_by_key(|p| p.question);

    // Latent traits for every (user, question).
    let nq = questions.len();
    let traits: Vec<f64> = (0..config.n_users * nq).map(|_| normal(&mut rng)).collect();

    // Answers, visit by visit.
    let mut order: Vec<usize> = (0..nq).filter(|&i| available_at[i].is_some()).collect();
    order.sort_by_key(|&i| (available_at[i], i));
    let mut next_unseen = vec![0usize; config.n_users];
    let mut answers = Vec::new();
    for v in &visits {
        let u = v.user;
        let mut offset = 0i64;
        while next_unseen[u] < order.len() && available_at[order[next_unseen[u]]].expect("approved") <= v.at {
            let qi = order[next_unseen[u]];
            next_unseen[u] += 1;
            if rng.random::<f64>() < engagement[u] {
                let x = traits[u * nq + qi] + config.answer_noise_sd * normal(&mut rng);
                offset += 5;
                answers.push(Answer {
                    user: users[u],
                    question: questions[qi].id,
                    value: quantize(questions[qi].qtype, x),
                    timestamp: v.at + Duration::seconds(offset),
                });
            }
        }
    }

    // Planted signal, standardized to unit variance over users.
    let index_of: BTreeMap<QuestionId, usize> = questions.iter().enumerate().map(|(i, q)| (q.id, i)).collect();
    let mut signal = vec![0.0; config.n_users];
    let norm = planted.iter().map(|p| p.weight * p.weight).sum::<f64>().sqrt();
    let mut trait_map = BTreeMap::new();
    for p in &planted {
        let qi = index_of[&p.question];
        let column: Vec<f64> = (0..config.n_users).map(|u| traits[u * nq + qi]).collect();
        for (s, t) in signal.iter_mut().zip(&column) {
            *s += p.weight * p.form.apply(*t) / norm;
        }
        trait_map.insert(p.question, column);
    }

    // Meter: daily kWh for every user over the full horizon.
    let rho = if planted.is_empty() { 0.0 } else { config.signal_share };
    let mut readings = Vec::with_capacity(config.n_users * horizon as usize);
    let tau = config.daily_noise_sd;
    for u in 0..config.n_users {
        let eps = normal(&mut rng);
        let log_monthly = config.usage_mu + config.usage_sigma * (rho.sqrt() * signal[u] + (1.0 - rho).sqrt() * eps);
        let daily_mean = log_monthly.exp() / 30.0;
        for d in 0..horizon {
            let noise = (tau * normal(&mut rng) - tau * tau / 2.0).exp();
            readings.push(MeterReading {
                user: users[u],
                interval_start: start + Duration::days(i64::from(d)),
                kwh: daily_mean * noise,
            });
        }
    }

    let participants = participants_from_answers(&answers);
    Ok(SimOutput {
        questions,
        answers,
        readings,
        participants,
        ground_truth: GroundTruth { seed, planted, signal_share: rho, traits: trait_map, signal, users },
        warnings,
    })
}

/// Everyone who answered at least once, joined at their first answer.
pub fn participants_from_answers(answers: &[Answer]) -> Vec<Participant> {
    let mut first: BTreeMap<UserId, DateTime<Utc>> = BTreeMap::new();
    for a in answers {
        first.entry(a.user).and_modify(|t| *t = (*t).min(a.timestamp)).or_insert(a.timestamp);
    }
    first.into_iter().map(|(id, joined_at)| Participant { id, joined_at }).collect()
}

/// The calibrated preset.
pub fn paper_regime(seed: u64) -> Result<SimOutput> {
    simulate(&SimConfig::paper_regime(), seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub k: usize,
    pub hits: usize,
    pub recall: f64,
    pub precision: f64,
}

/// Share of planted questions inside the top `k` of `ranking` (best first),
/// and share of the top `k` that is planted.
pub fn evaluate_recovery(truth: &GroundTruth, ranking: &[QuestionId], k: usize) -> Recovery {
    let k = k.min(ranking.len());
    let planted = truth.planted_ids();
    let hits = ranking[..k].iter().filter(|q| planted.contains(q)).count();
    Recovery {
        k,
        hits,
        recall: if planted.is_empty() { 0.0 } else { hits as f64 / planted.len() as f64 },
        precision: if k == 0 { 0.0 } else { hits as f64 / k as f64 },
    }
}

pub const QUESTIONS_FILE: &str = "questions.csv";
pub const ANSWERS_FILE: &str = "answers.csv";
pub const METER_FILE: &str = "meter.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

impl SimOutput {
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        formats::write_questions(BufWriter::new(fs::File::create(dir.join(QUESTIONS_FILE))?), &self.questions)?;
        formats::write_answers(BufWriter::new(fs::File::create(dir.join(ANSWERS_FILE))?), &self.answers)?;
        formats::write_meter(BufWriter::new(fs::File::create(dir.join(METER_FILE))?), &self.readings)?;
        let gt = serde_json::to_vec_pretty(&self.ground_truth)?;
        fs::write(dir.join(GROUND_TRUTH_FILE), gt)?;
        Ok(())
    }
}

pub fn read_ground_truth(dir: &Path) -> Result<Option<GroundTruth>> {
    let path = dir.join(GROUND_TRUTH_FILE);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_slice(&fs::read(path)?)?))
}
