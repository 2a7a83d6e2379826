mod common;

use std::sync::Arc;

use tactvest_analytics::log::{trial_sessions, LogRecord};
use tactvest_analytics::metrics::report;
use tactvest_analytics::sim::Latency;
use tactvest_core::{CodingStrategy, PatternLibrary};
use tactvest_gateway::engine::{Engine, EngineConfig};
use tactvest_gateway::export::export_metrics;
use tactvest_gateway::headless::{run_headless, HeadlessConfig, ResponderKind};
use tactvest_gateway::replay::{replay, replay_records, verify, CsvSink, NullSink, ReplayError};
use tactvest_gateway::store::{SessionStore, StoreError, FRAMES_FILE};

fn lib() -> Arc<PatternLibrary> {
    Arc::new(PatternLibrary::builtin().clone())
}

fn short(strategy: CodingStrategy, seed: u64, responder: ResponderKind) -> HeadlessConfig {
    HeadlessConfig {
        strategy,
        seed,
        trials: 2,
        stimuli: 4,
        trial_ms: 30_000,
        responder,
        ..HeadlessConfig::default()
    }
}

fn engine_emitted(r: &LogRecord) -> bool {
    matches!(r, LogRecord::Stimulus { .. } | LogRecord::TrialStop { completed: true, .. })
}

fn record_time(r: &LogRecord, tick_ms: u64) -> u64 {
    match r {
        LogRecord::TrialStart { t, .. }
        | LogRecord::Stimulus { t, .. }
        | LogRecord::Response { t, .. }
        | LogRecord::Load { t, .. }
        | LogRecord::TrialStop { t, .. }
        | LogRecord::Training { t, .. }
        | LogRecord::Path { t, .. }
        | LogRecord::End { t, .. } => *t,
        LogRecord::Trigger { tick, .. } | LogRecord::Odometry { tick, .. } | LogRecord::Calibrate { tick, .. } => tick * tick_ms,
        LogRecord::Session { .. } | LogRecord::Unknown => 0,
    }
}

/// The log with every engine-emitted record swapped for the replay's.
fn rebuild(records: &[LogRecord], emitted: &[LogRecord], tick_ms: u64) -> Vec<LogRecord> {
    let mut out = Vec::new();
    let mut pending = emitted.iter().peekable();
    for r in records.iter().filter(|r| !engine_emitted(r)) {
        let t = record_time(r, tick_ms);
        while let Some(e) = pending.next_if(|e| record_time(e, tick_ms) < t || matches!(r, LogRecord::End { .. })) {
            out.push(e.clone());
        }
        out.push(r.clone());
    }
    out
}

#[test]
fn replay_matches_archived_dump_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let store = SessionStore::open(tmp.path()).unwrap();
    let odo = common::rectangle_drive(5_000, 4, 6);
    let id = run_headless(&store, lib(), &short(CodingStrategy::Semantic, 3, ResponderKind::Accuracy(0.8)), &odo, None).unwrap();
    let mut sink = CsvSink::new(Vec::new());
    let summary = replay(&store, &id, &mut sink).unwrap();
    let archived = store.read_file(&id, FRAMES_FILE).unwrap();
    assert_eq!(sink.into_inner(), archived);
    assert_eq!(summary.frames as usize + 1, archived.split(|b| *b == b'\n').filter(|l| !l.is_empty()).count());
    assert!(verify(&store, &id).unwrap());
}

#[test]
fn replay_to_null_sink_completes() {
    let tmp = tempfile::tempdir().unwrap();
    let store = SessionStore::open(tmp.path()).unwrap();
    let id = run_headless(&store, lib(), &short(CodingStrategy::Positional, 4, ResponderKind::Perfect), &[], None).unwrap();
    let s = replay(&store, &id, &mut NullSink).unwrap();
    assert!(s.frames > 0);
}

#[test]
fn unknown_session_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let store = SessionStore::open(tmp.path()).unwrap();
    assert!(matches!(
        replay(&store, "missing", &mut NullSink),
        Err(ReplayError::Store(StoreError::UnknownSession(_)))
    ));
    assert!(matches!(export_metrics(&store, &["missing".into()]), Err(StoreError::UnknownSession(_))));
}

#[test]
fn incomplete_session_is_not_replayed() {
    let tmp = tempfile::tempdir().unwrap();
    let store = SessionStore::open(tmp.path()).unwrap();
    let w = store.create(Some("open"), EngineConfig::default(), PatternLibrary::builtin(), None).unwrap();
    drop(w);
    assert!(matches!(
        replay(&store, "open", &mut NullSink),
        Err(ReplayError::Store(StoreError::Incomplete(_)))
    ));
}

#[test]
fn seed_seven_log_replays_to_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let store = SessionStore::open(tmp.path()).unwrap();
    let odo = common::rectangle_drive(0, 3, 5);
    let id = run_headless(&store, lib(), &short(CodingStrategy::Semantic, 7, ResponderKind::Accuracy(0.7)), &odo, Some("seed7")).unwrap();
    let s = store.load_complete(&id).unwrap();
    let tick_ms = u64::from(s.config.engine.tick_ms);

    let mut engine = Engine::new(s.config.engine, Arc::new(s.library.clone()));
    let summary = replay_records(&mut engine, &s.records, &mut NullSink).unwrap();
    let original: Vec<LogRecord> = s.records.iter().filter(|r| engine_emitted(r)).cloned().collect();
    assert_eq!(summary.emitted, original);

    let rebuilt = rebuild(&s.records, &summary.emitted, tick_ms);
    let a = report(&trial_sessions(&s.records));
    let b = report(&trial_sessions(&rebuilt));
    assert_eq!(a, b);
    assert!(a.groups[0].stimuli == 8);

    let exported = export_metrics(&store, &[id]).unwrap();
    assert_eq!(exported.trials, a);
}

#[test]
fn perfect_responder_scores_one() {
    let tmp = tempfile::tempdir().unwrap();
    let store = SessionStore::open(tmp.path()).unwrap();
    let id = run_headless(&store, lib(), &short(CodingStrategy::Semantic, 11, ResponderKind::Perfect), &[], None).unwrap();
    let r = export_metrics(&store, &[id]).unwrap();
    let g = r.trials.group(CodingStrategy::Semantic, None).unwrap();
    assert_eq!(g.mean_accuracy, Some(1.0));
    assert_eq!(g.correct, g.stimuli);
}

#[test]
fn constant_latency_is_measured_from_realized_onsets() {
    let tmp = tempfile::tempdir().unwrap();
    let store = SessionStore::open(tmp.path()).unwrap();
    let cfg = HeadlessConfig {
        latency: Latency::Constant(1790),
        ..short(CodingStrategy::Positional, 5, ResponderKind::Perfect)
    };
    let id = run_headless(&store, lib(), &cfg, &[], None).unwrap();
    let r = export_metrics(&store, &[id]).unwrap();
    // responses carry their own time, not the tick they are applied on
    let d = r.trials.group(CodingStrategy::Positional, None).unwrap().mean_delay_ms.unwrap();
    assert_eq!(d, 1790.0);
}

#[test]
fn mixed_strategies_are_partitioned() {
    let tmp = tempfile::tempdir().unwrap();
    let store = SessionStore::open(tmp.path()).unwrap();
    let a = run_headless(&store, lib(), &short(CodingStrategy::Semantic, 1, ResponderKind::Perfect), &[], None).unwrap();
    let b = run_headless(&store, lib(), &short(CodingStrategy::Positional, 2, ResponderKind::Silent), &[], None).unwrap();
    let r = export_metrics(&store, &[a, b]).unwrap();
    let sem = r.trials.group(CodingStrategy::Semantic, None).unwrap();
    let pos = r.trials.group(CodingStrategy::Positional, None).unwrap();
    assert_eq!((sem.sessions, sem.mean_accuracy), (2, Some(1.0)));
    assert_eq!((pos.sessions, pos.mean_accuracy, pos.misses), (2, Some(0.0), 8));
    assert!(r.to_table().contains("positional"));
}

#[test]
fn empty_id_list_gives_empty_report() {
    let tmp = tempfile::tempdir().unwrap();
    let store = SessionStore::open(tmp.path()).unwrap();
    let r = export_metrics(&store, &[]).unwrap();
    assert!(r.trials.groups.is_empty() && r.paths.is_empty());
}

#[test]
fn same_inputs_same_dump() {
    let odo = common::rectangle_drive(100, 2, 8);
    let dumps: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let tmp = tempfile::tempdir().unwrap();
            let store = SessionStore::open(tmp.path()).unwrap();
            let id = run_headless(&store, lib(), &short(CodingStrategy::Semantic, 9, ResponderKind::Accuracy(0.5)), &odo, Some("x")).unwrap();
            store.read_file(&id, FRAMES_FILE).unwrap()
        })
        .collect();
    assert_eq!(dumps[0], dumps[1]);
}
