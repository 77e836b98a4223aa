//! JSON-over-HTTP service: participants answer and pose questions,
//! moderators approve them, and a background refit serves the linear audit
//! model behind each participant's virtual energy audit.

mod error;
mod model;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration as StdDuration;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{Duration, NaiveDate, Utc};
use crowdkwh_core::audit::{audit_from_row, AuditReport};
use crowdkwh_core::domain::{encode_answer, Answer, ModerationStatus, Participant, Question, QuestionId, QuestionType, UserId};
use crowdkwh_core::seeds::derive_seed;
use crowdkwh_store::{Decision, Store, StoreStats};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use error::ApiError;
pub use model::{default_fitter, fit_snapshot, Fitter, ModelSlot, RefreshStatus, RefreshTicket, ServedModel};

pub const DEFAULT_NEXT_LIMIT: usize = 10;
pub const MAX_NEXT_LIMIT: usize = 100;
pub const DEFAULT_USAGE_DAYS: i64 = 30;

pub struct AppState {
    pub store: Arc<Store>,
    pub model: ModelSlot,
    fitter: Arc<Fitter>,
    requests: AtomicU64,
}

impl AppState {
    pub fn new(store: Arc<Store>) -> Arc<Self> {
        AppState::with_fitter(store, default_fitter())
    }

    pub fn with_fitter(store: Arc<Store>, fitter: Arc<Fitter>) -> Arc<Self> {
        Arc::new(AppState { store, model: ModelSlot::default(), fitter, requests: AtomicU64::new(0) })
    }

    /// Starts a background refit on a fresh snapshot, or joins the one
    /// already running.
    pub fn start_refresh(self: &Arc<Self>) -> RefreshTicket {
        match self.model.begin() {
            Err(job) => RefreshTicket { job, coalesced: true },
            Ok(job) => {
                let state = Arc::clone(self);
                tokio::task::spawn_blocking(move || {
                    let snapshot = state.store.snapshot(Utc::now());
                    let result = (state.fitter)(&snapshot);
                    state.model.finish(job, result, Utc::now());
                });
                RefreshTicket { job, coalesced: false }
            }
        }
    }

    /// Runs a refit on the calling thread and waits for it.
    pub fn refresh_now(&self) -> Result<Arc<ServedModel>, String> {
        let job = self.model.begin().map_err(|j| format!("refresh {j} already running"))?;
        let result = (self.fitter)(&self.store.snapshot(Utc::now()));
        let err = result.as_ref().err().cloned();
        self.model.finish(job, result, Utc::now());
        match err {
            Some(e) => Err(e),
            None => Ok(self.model.current().expect("just served")),
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/users", post(create_user))
        .route("/api/users/{id}/audit", get(user_audit))
        .route("/api/users/{id}/usage", get(user_usage))
        .route("/api/questions", get(list_questions).post(submit_question))
        .route("/api/questions/next", get(next_questions))
        .route("/api/questions/{id}/moderate", post(moderate))
        .route("/api/answers", post(post_answer))
        .route("/api/model", get(model_info))
        .route("/api/model/refresh", post(refresh))
        .route("/api/stats", get(stats))
        .with_state(state)
}

/// Serves until ctrl-c, refitting every `refresh_every` when given.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    refresh_every: Option<StdDuration>,
) -> std::io::Result<()> {
    if let Some(every) = refresh_every {
        let s = Arc::clone(&state);
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(every);
            loop {
                tick.tick().await;
                s.start_refresh();
            }
        });
    }
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

type ApiResult<T> = Result<T, ApiError>;

fn body<T>(b: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    b.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    q.map(|Query(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

fn user_id(raw: &str) -> ApiResult<UserId> {
    raw.parse().map_err(|_| ApiError::bad_request(format!("bad user id {raw:?}")))
}

fn require_user(state: &AppState, id: UserId) -> ApiResult<Participant> {
    state.store.participant(id).ok_or_else(|| ApiError::not_found(format!("unknown user {id}")))
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    refreshing: bool,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health { status: "ok", refreshing: state.model.status().running })
}

async fn create_user(State(state): State<Arc<AppState>>) -> ApiResult<(StatusCode, Json<Participant>)> {
    Ok((StatusCode::CREATED, Json(state.store.register_participant(Utc::now())?)))
}

#[derive(Deserialize)]
struct ListQuery {
    status: Option<String>,
}

async fn list_questions(
    State(state): State<Arc<AppState>>,
    q: Result<Query<ListQuery>, QueryRejection>,
) -> ApiResult<Json<Vec<Question>>> {
    let status = match query(q)?.status {
        Some(s) => Some(s.parse::<ModerationStatus>().map_err(|e| ApiError::bad_request(e.to_string()))?),
        None => None,
    };
    Ok(Json(state.store.questions(status)))
}

#[derive(Deserialize)]
struct NewQuestion {
    author: u32,
    text: String,
    qtype: QuestionType,
}

async fn submit_question(
    State(state): State<Arc<AppState>>,
    b: Result<Json<NewQuestion>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Question>)> {
    let b = body(b)?;
    let q = state.store.submit_question(UserId(b.author), &b.text, b.qtype, Utc::now())?;
    Ok((StatusCode::CREATED, Json(q)))
}

#[derive(Deserialize)]
struct ModerateBody {
    decision: Decision,
    reason: Option<String>,
}

async fn moderate(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    b: Result<Json<ModerateBody>, JsonRejection>,
) -> ApiResult<Json<Question>> {
    let id: QuestionId = id.parse().map_err(|_| ApiError::bad_request(format!("bad question id {id:?}")))?;
    let b = body(b)?;
    Ok(Json(state.store.moderate(id, b.decision, b.reason, Utc::now())?))
}

#[derive(Deserialize)]
struct NextQuery {
    user: String,
    limit: Option<usize>,
    request_id: Option<u64>,
}

#[derive(Serialize)]
struct NextQuestions {
    request_id: u64,
    questions: Vec<Question>,
}

/// Uniform sample without replacement of the approved questions the user
/// has not answered, seeded by (user, request id).
async fn next_questions(
    State(state): State<Arc<AppState>>,
    q: Result<Query<NextQuery>, QueryRejection>,
) -> ApiResult<Json<NextQuestions>> {
    let q = query(q)?;
    let user = user_id(&q.user)?;
    let pool = state.store.unanswered(user)?;
    let limit = q.limit.unwrap_or(DEFAULT_NEXT_LIMIT).min(MAX_NEXT_LIMIT).min(pool.len());
    let request_id = q.request_id.unwrap_or_else(|| state.requests.fetch_add(1, Ordering::Relaxed));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(u64::from(user.0), request_id));
    let questions = sample(&mut rng, pool.len(), limit).into_iter().map(|i| pool[i].clone()).collect();
    Ok(Json(NextQuestions { request_id, questions }))
}

#[derive(Deserialize)]
struct AnswerBody {
    user_id: u32,
    question_id: String,
    value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerView {
    pub user_id: UserId,
    pub question_id: QuestionId,
    pub value: String,
    pub answered_at: chrono::DateTime<Utc>,
}

impl From<Answer> for AnswerView {
    fn from(a: Answer) -> Self {
        AnswerView { user_id: a.user, question_id: a.question, value: a.value.render(), answered_at: a.timestamp }
    }
}

async fn post_answer(
    State(state): State<Arc<AppState>>,
    b: Result<Json<AnswerBody>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<AnswerView>)> {
    let b = body(b)?;
    let question: QuestionId =
        b.question_id.parse().map_err(|_| ApiError::bad_request(format!("bad question id {:?}", b.question_id)))?;
    let raw = match &b.value {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(v) => if *v { "yes" } else { "no" }.to_string(),
        other => return Err(ApiError::new(StatusCode::BAD_REQUEST, "validation", format!("unsupported value {other}"))),
    };
    let a = state.store.post_answer(UserId(b.user_id), question, &raw, Utc::now())?;
    Ok((StatusCode::CREATED, Json(a.into())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageDay {
    pub date: NaiveDate,
    pub user_kwh: Option<f64>,
    /// Mean over users with a reading that day.
    pub group_mean_kwh: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageComparison {
    pub user_id: UserId,
    pub days: Vec<UsageDay>,
}

/// The user's daily kWh beside the group mean over the `days` days ending
/// at the last metered day. `None` when the user has no readings there.
fn usage_comparison(store: &Store, user: UserId, days: i64) -> Option<UsageComparison> {
    let last = store.last_meter_day()?;
    let end = last + Duration::days(1);
    let start = end - Duration::days(days);
    let daily = store.daily_usage(start, end);
    if daily.window(user, start, end).0 == 0 {
        return None;
    }
    let users: Vec<UserId> = daily.users().collect();
    let out = (0..days)
        .map(|i| {
            let date = start + Duration::days(i);
            let vals: Vec<f64> = users.iter().filter_map(|u| daily.get(*u, date)).collect();
            UsageDay {
                date,
                user_kwh: daily.get(user, date),
                group_mean_kwh: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
            }
        })
        .collect();
    Some(UsageComparison { user_id: user, days: out })
}

#[derive(Deserialize)]
struct UsageQuery {
    days: Option<i64>,
}

async fn user_usage(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    q: Result<Query<UsageQuery>, QueryRejection>,
) -> ApiResult<Json<UsageComparison>> {
    let user = user_id(&id)?;
    let days = query(q)?.days.unwrap_or(DEFAULT_USAGE_DAYS);
    if !(1..=366).contains(&days) {
        return Err(ApiError::bad_request("days must be in 1..=366"));
    }
    require_user(&state, user)?;
    usage_comparison(&state.store, user, days)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no_meter_data", format!("no meter data for user {user}")))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AuditResponse {
    /// `ready` or `model_pending`.
    pub status: String,
    pub model_job: Option<u64>,
    pub audit: Option<AuditReport>,
    pub usage: Option<UsageComparison>,
}

/// Audit of the user's latest answers under the served model.
pub fn audit_for(store: &Store, served: &ServedModel, user: UserId) -> AuditReport {
    let answers: HashMap<QuestionId, f64> =
        store.latest_answers(user).into_iter().map(|(q, v)| (q, encode_answer(&v))).collect();
    let texts: HashMap<QuestionId, String> = served
        .model
        .selected
        .iter()
        .filter_map(|q| store.question(*q).map(|x| (*q, x.text)))
        .collect();
    audit_from_row(&served.model, user, &served.model.z_row(&answers), &texts)
}

async fn user_audit(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<AuditResponse>> {
    let user = user_id(&id)?;
    require_user(&state, user)?;
    let usage = usage_comparison(&state.store, user, DEFAULT_USAGE_DAYS);
    let served = state.model.current();
    Ok(Json(match served {
        None => AuditResponse { status: "model_pending".into(), model_job: None, audit: None, usage },
        Some(m) => AuditResponse {
            status: "ready".into(),
            model_job: Some(m.job),
            audit: Some(audit_for(&state.store, &m, user)),
            usage,
        },
    }))
}

#[derive(Serialize)]
struct ModelTerm {
    question_id: QuestionId,
    beta: f64,
}

#[derive(Serialize)]
struct ModelSummary {
    job: u64,
    fitted_at: chrono::DateTime<Utc>,
    outcome_as_of: NaiveDate,
    n_users: usize,
    intercept: f64,
    terms: Vec<ModelTerm>,
}

#[derive(Serialize)]
struct ModelInfo {
    status: &'static str,
    refresh: RefreshStatus,
    model: Option<ModelSummary>,
}

async fn model_info(State(state): State<Arc<AppState>>) -> Json<ModelInfo> {
    let model = state.model.current().map(|m| ModelSummary {
        job: m.job,
        fitted_at: m.fitted_at,
        outcome_as_of: m.outcome_as_of,
        n_users: m.n_users,
        intercept: m.model.intercept,
        terms: m
            .model
            .selected
            .iter()
            .zip(&m.model.beta)
            .map(|(q, b)| ModelTerm { question_id: *q, beta: *b })
            .collect(),
    });
    Json(ModelInfo {
        status: if model.is_some() { "ready" } else { "model_pending" },
        refresh: state.model.status(),
        model,
    })
}

async fn refresh(State(state): State<Arc<AppState>>) -> (StatusCode, Json<RefreshTicket>) {
    (StatusCode::ACCEPTED, Json(state.start_refresh()))
}

async fn stats(State(state): State<Arc<AppState>>) -> Json<StoreStats> {
    Json(state.store.stats())
}
