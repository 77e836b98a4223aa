use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::sync::Arc;

use chrono::{DateTime, Duration, TimeZone, Utc};
use crowdkwh_core::domain::{Author, ModerationStatus, QuestionId, QuestionType, UserId};
use crowdkwh_core::meter::MeterReading;
use crowdkwh_store::{Decision, Snapshot, Store, StoreError, LOG_FILE};
use proptest::prelude::*;

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2014, 1, 1, 0, 0, 0).unwrap()
}

fn seeded() -> (tempfile::TempDir, Store) {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    assert!(store.seed_if_empty(t0()).unwrap());
    (dir, store)
}

fn write_meter(dir: &std::path::Path, rows: &[(u32, &str, &str)]) -> std::path::PathBuf {
    let path = dir.join("meter.csv");
    let mut f = fs::File::create(&path).unwrap();
    writeln!(f, "user_id,interval_start,kwh").unwrap();
    for (u, t, k) in rows {
        writeln!(f, "{u},{t},{k}").unwrap();
    }
    path
}

#[test]
fn first_boot_seeds_six_expert_questions() {
    let (_d, store) = seeded();
    let qs = store.questions(None);
    assert_eq!(qs.len(), 6);
    assert!(qs.iter().all(|q| q.author == Author::Expert && q.is_approved()));
    assert!(!store.seed_if_empty(t0()).unwrap());
    assert_eq!(store.questions(None).len(), 6);
}

#[test]
fn meter_ingest_upserts_and_rejects_bad_rows() {
    let (d, store) = seeded();
    let days: Vec<String> = (1..=28).map(|i| format!("2014-02-{i:02}")).collect();
    let rows: Vec<(u32, &str, &str)> = days.iter().map(|d| (1, d.as_str(), "12.5")).collect();
    let path = write_meter(d.path(), &rows);
    let r = store.ingest_meter_csv(&path).unwrap();
    assert_eq!((r.accepted, r.stored), (28, 28));
    let again = store.ingest_meter_csv(&path).unwrap();
    assert_eq!(again.stored, 28);

    let path = write_meter(d.path(), &[(2, "2014-02-01", "3"), (2, "2014-02-02", "-1"), (2, "2014-02-03", "x")]);
    let r = store.ingest_meter_csv(&path).unwrap();
    assert_eq!(r.accepted, 1);
    assert_eq!(r.rejected.iter().map(|e| e.line).collect::<Vec<_>>(), vec![3, 4]);
    assert_eq!(r.stored, 29);
}

#[test]
fn duplicate_meter_key_keeps_latest_value() {
    let (_d, store) = seeded();
    let at = t0();
    store.ingest_meter(&[MeterReading::new(UserId(1), at, 5.0).unwrap()]).unwrap();
    store.ingest_meter(&[MeterReading::new(UserId(1), at, 7.0).unwrap()]).unwrap();
    let snap = store.snapshot(at);
    assert_eq!(snap.readings, vec![MeterReading::new(UserId(1), at, 7.0).unwrap()]);
    assert!(store.ingest_meter(&[MeterReading { user: UserId(1), interval_start: at, kwh: -2.0 }]).is_err());
}

#[test]
fn question_lifecycle() {
    let (_d, store) = seeded();
    let u = store.register_participant(t0()).unwrap();
    let q = store.submit_question(u.id, "Do you own an electric car?", QuestionType::YesNo, t0()).unwrap();
    assert_eq!(q.id, QuestionId(7));
    assert_eq!(q.status, ModerationStatus::Pending);
    assert!(!store.unanswered(u.id).unwrap().iter().any(|x| x.id == q.id));
    assert!(matches!(store.post_answer(u.id, q.id, "yes", t0()), Err(StoreError::Forbidden(_))));

    let approved = store.moderate(q.id, Decision::Approve, None, t0()).unwrap();
    assert_eq!(approved.status, ModerationStatus::Approved);
    assert!(store.unanswered(u.id).unwrap().iter().any(|x| x.id == q.id));
    assert!(matches!(store.moderate(q.id, Decision::Approve, None, t0()), Err(StoreError::Conflict(_))));

    let r = store.submit_question(u.id, "How warm is your thermostat?", QuestionType::Numeric, t0()).unwrap();
    store.moderate(r.id, Decision::Reject, Some("duplicate".into()), t0()).unwrap();
    assert!(matches!(store.moderate(r.id, Decision::Approve, None, t0()), Err(StoreError::Conflict(_))));
    assert!(matches!(store.post_answer(u.id, r.id, "68", t0()), Err(StoreError::Forbidden(_))));
    assert!(!store.unanswered(u.id).unwrap().iter().any(|x| x.id == r.id));

    assert!(matches!(store.submit_question(u.id, "   ", QuestionType::YesNo, t0()), Err(StoreError::Validation(_))));
    assert!(matches!(store.submit_question(UserId(99), "x?", QuestionType::YesNo, t0()), Err(StoreError::NotFound(_))));
    assert!(matches!(store.moderate(QuestionId(99), Decision::Reject, None, t0()), Err(StoreError::NotFound(_))));
}

#[test]
fn answers_are_typed_by_question() {
    let (_d, store) = seeded();
    let u = store.register_participant(t0()).unwrap().id;
    // q1 is likert, q2 yes/no, q3 numeric.
    assert!(store.post_answer(u, QuestionId(1), "3", t0()).is_ok());
    assert!(matches!(store.post_answer(u, QuestionId(1), "7", t0()), Err(StoreError::Validation(_))));
    assert!(matches!(store.post_answer(u, QuestionId(3), "yes", t0()), Err(StoreError::Validation(_))));
    assert!(store.post_answer(u, QuestionId(2), "no", t0()).is_ok());
    assert!(matches!(store.post_answer(UserId(50), QuestionId(2), "no", t0()), Err(StoreError::NotFound(_))));
    let left: Vec<QuestionId> = store.unanswered(u).unwrap().iter().map(|q| q.id).collect();
    assert_eq!(left, (3..=6).map(QuestionId).collect::<Vec<_>>());
}

#[test]
fn snapshots_are_repeatable_and_time_filtered() {
    let (_d, store) = seeded();
    let u = store.register_participant(t0() + Duration::hours(1)).unwrap().id;
    store.post_answer(u, QuestionId(1), "4", t0() + Duration::hours(2)).unwrap();
    let before = store.snapshot(t0() - Duration::days(1));
    assert!(before.questions.is_empty() && before.answers.is_empty() && before.participants.is_empty());

    let as_of = t0() + Duration::hours(3);
    let a = store.snapshot(as_of);
    store.post_answer(u, QuestionId(2), "yes", t0() + Duration::hours(4)).unwrap();
    let b = store.snapshot(as_of);
    assert_eq!(a, b);
    assert_eq!(a.answers.len(), 1);
    assert_eq!(store.snapshot(t0() + Duration::days(1)).answers.len(), 2);
}

#[test]
fn moderation_status_is_as_of_the_snapshot() {
    let (_d, store) = seeded();
    let u = store.register_participant(t0()).unwrap().id;
    let q = store.submit_question(u, "Do you heat with gas?", QuestionType::YesNo, t0()).unwrap();
    store.moderate(q.id, Decision::Approve, None, t0() + Duration::hours(5)).unwrap();
    let early = store.snapshot(t0() + Duration::hours(1));
    assert_eq!(early.questions.iter().find(|x| x.id == q.id).unwrap().status, ModerationStatus::Pending);
    let late = store.snapshot(t0() + Duration::hours(6));
    assert_eq!(late.questions.iter().find(|x| x.id == q.id).unwrap().status, ModerationStatus::Approved);
}

#[test]
fn state_survives_reopen_and_compaction() {
    let dir = tempfile::tempdir().unwrap();
    let later = t0() + Duration::days(10);
    let before = {
        let store = Store::open(dir.path()).unwrap();
        store.seed_if_empty(t0()).unwrap();
        let u = store.register_participant(t0()).unwrap().id;
        store.post_answer(u, QuestionId(1), "2", t0()).unwrap();
        let q = store.submit_question(u, "Do you have a pool pump?", QuestionType::YesNo, t0()).unwrap();
        store.moderate(q.id, Decision::Reject, None, t0()).unwrap();
        for k in [1.0, 2.0, 3.0] {
            store.ingest_meter(&[MeterReading::new(u, t0(), k).unwrap()]).unwrap();
        }
        store.snapshot(later)
    };
    let store = Store::open(dir.path()).unwrap();
    assert_eq!(store.snapshot(later), before);
    let lines = store.log_lines();
    store.compact().unwrap();
    assert_eq!(store.log_lines(), lines - 2);
    assert!(!dir.path().join("log.jsonl.tmp").exists());
    drop(store);
    let store = Store::open(dir.path()).unwrap();
    assert_eq!(store.snapshot(later), before);
    assert_eq!(fs::read_to_string(dir.path().join(LOG_FILE)).unwrap().lines().count(), lines - 2);
}

#[test]
fn torn_tail_is_dropped_but_corruption_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    {
        let store = Store::open(dir.path()).unwrap();
        store.seed_if_empty(t0()).unwrap();
    }
    let path = dir.path().join(LOG_FILE);
    let intact = fs::read_to_string(&path).unwrap();
    fs::write(&path, format!("{intact}{{\"kind\":\"answer\",\"us")).unwrap();
    let store = Store::open(dir.path()).unwrap();
    assert_eq!(store.questions(None).len(), 6);
    drop(store);
    assert_eq!(fs::read_to_string(&path).unwrap(), intact);

    fs::write(&path, format!("not json\n{intact}")).unwrap();
    match Store::open(dir.path()) {
        Err(StoreError::Corrupt { line, .. }) => assert_eq!(line, 1),
        other => panic!("expected corruption error, got {:?}", other.err()),
    }
}

#[test]
fn concurrent_writers_are_serialized() {
    let (dir, store) = seeded();
    let store = Arc::new(store);
    let users: Vec<UserId> = (0..4).map(|_| store.register_participant(t0()).unwrap().id).collect();
    let handles: Vec<_> = users
        .iter()
        .map(|&u| {
            let s = Arc::clone(&store);
            std::thread::spawn(move || {
                for k in 0..50 {
                    s.post_answer(u, QuestionId(3), &k.to_string(), t0() + Duration::seconds(k)).unwrap();
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let far = t0() + Duration::days(1);
    assert_eq!(store.snapshot(far).answers.len(), 200);
    let reopened = Store::open(dir.path()).unwrap();
    assert_eq!(reopened.snapshot(far), store.snapshot(far));
}

#[test]
fn stats_count_users_questions_and_missingness() {
    let (_d, store) = seeded();
    let a = store.register_participant(t0()).unwrap().id;
    let b = store.register_participant(t0()).unwrap().id;
    for q in 1..=6 {
        store.post_answer(a, QuestionId(q), if q == 2 || q == 5 { "yes" } else { "1" }, t0()).unwrap();
    }
    store.post_answer(b, QuestionId(1), "5", t0()).unwrap();
    store.submit_question(a, "Is your home over 2000 square feet?", QuestionType::YesNo, t0()).unwrap();
    let s = store.stats();
    assert_eq!(s.users, 2);
    assert_eq!((s.questions.approved, s.questions.pending, s.questions.rejected), (6, 1, 0));
    assert_eq!(s.answers, 7);
    assert_eq!(s.min_column_missing_fraction, Some(0.0));
}

#[test]
fn import_requires_an_empty_store() {
    let out = crowdkwh_core::sim::simulate(
        &crowdkwh_core::sim::SimConfig { n_users: 40, horizon_days: 60, posed_questions: 20, ..Default::default() },
        1,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    store.import(&out.questions, &out.answers, &out.readings).unwrap();
    let far = t0() + Duration::days(3650);
    let snap = store.snapshot(far);
    assert_eq!(snap.answers, out.answers);
    assert_eq!(snap.questions, out.questions);
    assert_eq!(snap.readings.len(), out.readings.len());
    assert!(matches!(store.import(&out.questions, &[], &[]), Err(StoreError::Conflict(_))));

    let export = tempfile::tempdir().unwrap();
    snap.write_dir(export.path()).unwrap();
    let loaded = crowdkwh_core::pipeline::Dataset::load(export.path()).unwrap();
    assert_eq!(loaded.answers, out.answers);
    assert_eq!(loaded.questions, out.questions);
}

fn contained(small: &Snapshot, big: &Snapshot) -> bool {
    let q: HashSet<_> = big.questions.iter().map(|q| q.id).collect();
    let p: HashSet<_> = big.participants.iter().map(|p| p.id).collect();
    small.questions.iter().all(|x| q.contains(&x.id))
        && small.participants.iter().all(|x| p.contains(&x.id))
        && small.answers.iter().all(|a| big.answers.contains(a))
        && small.readings.iter().all(|r| big.readings.contains(r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn views_grow_with_as_of(ops in prop::collection::vec((0u8..4, 0i64..48, 1u32..7), 1..40), a in 0i64..50, b in 0i64..50) {
        let (_d, store) = seeded();
        let u = store.register_participant(t0()).unwrap().id;
        for (op, hour, q) in ops {
            let at = t0() + Duration::hours(hour);
            match op {
                0 => { let _ = store.post_answer(u, QuestionId(q), if q == 2 || q == 5 { "yes" } else { "3" }, at); }
                1 => { store.ingest_meter(&[MeterReading::new(u, at, f64::from(q)).unwrap()]).unwrap(); }
                2 => { let _ = store.submit_question(u, "Do you dry clothes outside?", QuestionType::YesNo, at); }
                _ => { let _ = store.register_participant(at); }
            }
        }
        let (lo, hi) = (a.min(b), a.max(b));
        let small = store.snapshot(t0() + Duration::hours(lo));
        let big = store.snapshot(t0() + Duration::hours(hi));
        prop_assert!(contained(&small, &big));
    }
}
