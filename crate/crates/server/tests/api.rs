use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Barrier};
use std::time::Duration as StdDuration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{Duration, TimeZone, Utc};
use crowdkwh_core::domain::QuestionId;
use crowdkwh_core::meter::MeterReading;
use crowdkwh_server::{fit_snapshot, router, AppState, Fitter};
use crowdkwh_store::{Snapshot, Store};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const LAUNDRY: &str = "q4";
const USERS: u32 = 12;

fn empty_store() -> (tempfile::TempDir, Arc<Store>) {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    store.seed_if_empty(Utc.with_ymd_and_hms(2014, 1, 1, 0, 0, 0).unwrap()).unwrap();
    (dir, Arc::new(store))
}

/// Users whose daily usage grows with laundry loads, 28 days of readings.
fn populated_store() -> (tempfile::TempDir, Arc<Store>) {
    let (dir, store) = empty_store();
    let at = Utc.with_ymd_and_hms(2014, 1, 10, 0, 0, 0).unwrap();
    let mut readings = Vec::new();
    for _ in 0..USERS {
        let p = store.register_participant(at).unwrap();
        let loads = f64::from(p.id.0 % 5 + 1);
        store.post_answer(p.id, QuestionId(4), &loads.to_string(), at).unwrap();
        store.post_answer(p.id, QuestionId(2), if p.id.0 % 2 == 0 { "yes" } else { "no" }, at).unwrap();
        for d in 0..28 {
            let day = Utc.with_ymd_and_hms(2014, 2, 1, 0, 0, 0).unwrap() + Duration::days(d);
            let wobble = f64::from((p.id.0 * 7 + d as u32) % 3) * 0.1;
            readings.push(MeterReading { user: p.id, interval_start: day, kwh: 10.0 + 3.0 * loads + wobble });
        }
    }
    store.ingest_meter(&readings).unwrap();
    (dir, store)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

async fn wait_idle(state: &AppState) {
    for _ in 0..500 {
        if !state.model.status().running {
            return;
        }
        tokio::time::sleep(StdDuration::from_millis(10)).await;
    }
    panic!("refresh did not finish");
}

#[tokio::test]
async fn fresh_store_exposes_six_expert_questions() {
    let (_d, store) = empty_store();
    let app = router(AppState::new(store));
    let (s, v) = call(&app, "GET", "/api/stats", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["questions"]["approved"], 6);
    assert_eq!(v["users"], 0);
    let (_, v) = call(&app, "GET", "/api/questions?status=approved", None).await;
    let qs = v.as_array().unwrap();
    assert_eq!(qs.len(), 6);
    assert!(qs.iter().all(|q| q["author"] == "expert"));
    let (s, v) = call(&app, "GET", "/api/health", None).await;
    assert_eq!((s, v), (StatusCode::OK, json!({"status": "ok", "refreshing": false})));
}

#[tokio::test]
async fn question_lifecycle_through_moderation() {
    let (_d, store) = empty_store();
    let app = router(AppState::new(store));
    let (s, u) = call(&app, "POST", "/api/users", None).await;
    assert_eq!(s, StatusCode::CREATED);
    let uid = u["id"].as_u64().unwrap();

    let (s, q) = call(
        &app,
        "POST",
        "/api/questions",
        Some(json!({"author": uid, "text": "Do you own an electric car?", "qtype": "yes_no"})),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(q["status"], "pending");
    let qid = q["id"].as_str().unwrap().to_string();

    let (s, v) = call(&app, "POST", "/api/answers", Some(json!({"user_id": uid, "question_id": qid, "value": "yes"}))).await;
    assert_eq!(s, StatusCode::FORBIDDEN, "{v}");

    let (_, v) = call(&app, "GET", &format!("/api/questions/next?user={uid}&limit=100"), None).await;
    assert!(v["questions"].as_array().unwrap().iter().all(|q| q["id"] != qid.as_str()));

    let uri = format!("/api/questions/{qid}/moderate");
    let (s, v) = call(&app, "POST", &uri, Some(json!({"decision": "approve"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "approved");
    let (s, v) = call(&app, "POST", &uri, Some(json!({"decision": "reject", "reason": "dup"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"]["code"], "conflict");

    let (s, v) = call(&app, "POST", "/api/answers", Some(json!({"user_id": uid, "question_id": qid, "value": true}))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    let (_, v) = call(&app, "GET", "/api/questions?status=pending", None).await;
    assert!(v.as_array().unwrap().is_empty());
}

#[tokio::test]
async fn answers_are_validated_against_the_question_type() {
    let (_d, store) = empty_store();
    let app = router(AppState::new(store));
    let (_, u) = call(&app, "POST", "/api/users", None).await;
    let uid = u["id"].as_u64().unwrap();
    let post = |q: &str, v: Value| json!({"user_id": uid, "question_id": q, "value": v});

    let (s, v) = call(&app, "POST", "/api/answers", Some(post("q1", json!(7)))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "validation");
    let (s, _) = call(&app, "POST", "/api/answers", Some(post(LAUNDRY, json!("yes")))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/api/answers", Some(post(LAUNDRY, json!([1])))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/api/answers", Some(json!({"user_id": 999, "question_id": "q1", "value": 3}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/api/answers", Some(post("q99", json!(3)))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, v) = call(&app, "POST", "/api/answers", Some(json!({"user_id": uid}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"]["message"].is_string());

    let (s, a) = call(&app, "POST", "/api/answers", Some(post(LAUNDRY, json!(4)))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(a["question_id"], LAUNDRY);
    assert_eq!(a["value"], "4");
    let (s, _) = call(&app, "POST", "/api/answers", Some(post("q1", json!("5")))).await;
    assert_eq!(s, StatusCode::CREATED);
}

#[tokio::test]
async fn next_questions_sample_is_seeded_and_excludes_answered() {
    let (_d, store) = empty_store();
    let app = router(AppState::new(store));
    let (_, u) = call(&app, "POST", "/api/users", None).await;
    let uid = u["id"].as_u64().unwrap();

    let uri = format!("/api/questions/next?user={uid}&limit=3&request_id=42");
    let (s, a) = call(&app, "GET", &uri, None).await;
    assert_eq!(s, StatusCode::OK);
    let (_, b) = call(&app, "GET", &uri, None).await;
    assert_eq!(a, b);
    assert_eq!(a["request_id"], 42);
    let ids: Vec<&str> = a["questions"].as_array().unwrap().iter().map(|q| q["id"].as_str().unwrap()).collect();
    assert_eq!(ids.len(), 3);
    let distinct: std::collections::HashSet<_> = ids.iter().collect();
    assert_eq!(distinct.len(), 3);

    let (_, v) = call(&app, "GET", &format!("/api/questions/next?user={uid}&limit=0"), None).await;
    assert!(v["questions"].as_array().unwrap().is_empty());

    for (q, val) in [("q1", json!(3)), ("q2", json!("no")), ("q3", json!(0)), ("q4", json!(2)), ("q5", json!(false)), ("q6", json!(1))] {
        let (s, v) = call(&app, "POST", "/api/answers", Some(json!({"user_id": uid, "question_id": q, "value": val}))).await;
        assert_eq!(s, StatusCode::CREATED, "{q}: {v}");
    }
    let (_, v) = call(&app, "GET", &format!("/api/questions/next?user={uid}"), None).await;
    assert!(v["questions"].as_array().unwrap().is_empty());

    let (s, _) = call(&app, "GET", "/api/questions/next?user=404", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "GET", "/api/questions/next?user=abc", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn next_questions_cover_every_unanswered_question() {
    let (_d, store) = empty_store();
    let app = router(AppState::new(store));
    let (_, u) = call(&app, "POST", "/api/users", None).await;
    let uid = u["id"].as_u64().unwrap();
    let mut seen = std::collections::HashSet::new();
    for r in 0..200 {
        let (_, v) = call(&app, "GET", &format!("/api/questions/next?user={uid}&limit=1&request_id={r}"), None).await;
        seen.insert(v["questions"][0]["id"].as_str().unwrap().to_string());
    }
    assert_eq!(seen.len(), 6);
}

#[tokio::test]
async fn audit_waits_for_a_model_then_explains_usage() {
    let (_d, store) = populated_store();
    let state = AppState::new(Arc::clone(&store));
    let app = router(Arc::clone(&state));

    let (s, v) = call(&app, "GET", "/api/users/1/audit", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "model_pending");
    assert!(v["audit"].is_null());
    assert_eq!(v["usage"]["days"].as_array().unwrap().len(), 30);

    let (s, t) = call(&app, "POST", "/api/model/refresh", None).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(t["coalesced"], false);
    wait_idle(&state).await;

    let (_, m) = call(&app, "GET", "/api/model", None).await;
    assert_eq!(m["status"], "ready", "{m}");
    assert_eq!(m["model"]["n_users"], USERS);
    assert_eq!(m["model"]["terms"][0]["question_id"], LAUNDRY);

    let (_, v) = call(&app, "GET", "/api/users/1/audit", None).await;
    assert_eq!(v["status"], "ready");
    let entries = v["audit"]["entries"].as_array().unwrap();
    assert!(!entries.is_empty() && entries.len() <= 10);
    assert_eq!(entries[0]["question_id"], LAUNDRY);
    assert_eq!(entries[0]["text"], "How many loads of laundry do you do per week?");
    // Two loads is below the mean of 3.
    assert!(v["audit"]["predicted_deviation"].as_f64().unwrap() < 0.0);

    let (_, fresh) = call(&app, "POST", "/api/users", None).await;
    let (_, v) = call(&app, "GET", &format!("/api/users/{}/audit", fresh["id"]), None).await;
    assert_eq!(v["status"], "ready");
    let intercept = m["model"]["intercept"].as_f64().unwrap();
    assert!((v["audit"]["predicted_deviation"].as_f64().unwrap() - intercept).abs() < 1e-12);
    assert!(v["usage"].is_null());

    let (s, _) = call(&app, "GET", "/api/users/999/audit", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn usage_compares_user_to_group() {
    let (_d, store) = populated_store();
    let app = router(AppState::new(store));
    let (s, v) = call(&app, "GET", "/api/users/3/usage?days=7", None).await;
    assert_eq!(s, StatusCode::OK);
    let days = v["days"].as_array().unwrap();
    assert_eq!(days.len(), 7);
    assert_eq!(days[6]["date"], "2014-02-28");
    let d = &days[0];
    assert!((d["user_kwh"].as_f64().unwrap() - (22.0 + 0.1 * f64::from((3 * 7 + 21) % 3))).abs() < 1e-9);
    let mean = d["group_mean_kwh"].as_f64().unwrap();
    assert!(mean > 10.0 + 3.0 && mean < 10.0 + 15.0 + 0.3);
    let (s, _) = call(&app, "GET", "/api/users/3/usage?days=0", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (_, fresh) = call(&app, "POST", "/api/users", None).await;
    let (s, v) = call(&app, "GET", &format!("/api/users/{}/usage", fresh["id"]), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "no_meter_data");
}

#[tokio::test]
async fn refresh_is_deterministic_for_a_fixed_store() {
    let (_d, store) = populated_store();
    let state = AppState::new(store);
    let a = state.refresh_now().unwrap();
    let b = state.refresh_now().unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.outcome_as_of, b.outcome_as_of);
    assert_eq!(b.job, a.job + 1);
}

#[tokio::test]
async fn failed_refresh_keeps_serving_the_previous_model() {
    let (_d, store) = populated_store();
    let calls = Arc::new(AtomicUsize::new(0));
    let c = Arc::clone(&calls);
    let fitter: Arc<Fitter> = Arc::new(move |s: &Snapshot| {
        if c.fetch_add(1, Ordering::SeqCst) == 0 {
            fit_snapshot(s, 10)
        } else {
            Err("boom".to_string())
        }
    });
    let state = AppState::with_fitter(store, fitter);
    let app = router(Arc::clone(&state));
    let first = state.refresh_now().unwrap();
    assert!(state.refresh_now().is_err());
    let served = state.model.current().unwrap();
    assert_eq!(served.job, first.job);
    let (_, m) = call(&app, "GET", "/api/model", None).await;
    assert_eq!(m["status"], "ready");
    assert_eq!(m["refresh"]["last_error"], "boom");
    assert_eq!(m["model"]["job"], first.job);
    let (_, v) = call(&app, "GET", "/api/users/1/audit", None).await;
    assert_eq!(v["status"], "ready");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_refresh_requests_coalesce() {
    let (_d, store) = populated_store();
    let calls = Arc::new(AtomicUsize::new(0));
    let gate = Arc::new(Barrier::new(2));
    let (c, g) = (Arc::clone(&calls), Arc::clone(&gate));
    let fitter: Arc<Fitter> = Arc::new(move |s: &Snapshot| {
        c.fetch_add(1, Ordering::SeqCst);
        g.wait();
        fit_snapshot(s, 10)
    });
    let state = AppState::with_fitter(store, fitter);
    let app = router(Arc::clone(&state));

    let (_, t1) = call(&app, "POST", "/api/model/refresh", None).await;
    let (_, t2) = call(&app, "POST", "/api/model/refresh", None).await;
    let (_, h) = call(&app, "GET", "/api/health", None).await;
    assert_eq!(h["refreshing"], true);
    let (_, v) = call(&app, "GET", "/api/users/1/audit", None).await;
    assert_eq!(v["status"], "model_pending");
    assert_eq!(t1["coalesced"], false);
    assert_eq!(t2["coalesced"], true);
    assert_eq!(t1["job"], t2["job"]);
    let g = Arc::clone(&gate);
    tokio::task::spawn_blocking(move || g.wait()).await.unwrap();
    wait_idle(&state).await;
    assert_eq!(calls.load(Ordering::SeqCst), 1);
    assert_eq!(state.model.current().unwrap().job, t1["job"].as_u64().unwrap());
}

#[tokio::test]
async fn refresh_without_meter_data_reports_an_error() {
    let (_d, store) = empty_store();
    let state = AppState::new(store);
    assert!(state.refresh_now().unwrap_err().contains("meter"));
    assert!(state.model.current().is_none());
}

#[tokio::test]
async fn malformed_requests_get_json_errors() {
    let (_d, store) = empty_store();
    let app = router(AppState::new(store));
    let (s, v) = call(&app, "GET", "/api/questions?status=maybe", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "bad_request");
    let (s, _) = call(&app, "POST", "/api/questions/qx/moderate", Some(json!({"decision": "approve"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/api/questions/q1/moderate", Some(json!({"decision": "approve"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call(&app, "POST", "/api/questions", Some(json!({"author": 1, "text": "x", "qtype": "essay"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/api/questions", Some(json!({"author": 77, "text": "Any pets?", "qtype": "yes_no"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}
