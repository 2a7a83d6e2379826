//! Acceptance suite: one PASS/FAIL line per criterion with its runtime
//! limit. Run with `cargo test -p tactvest-gateway --test acceptance`.

mod common;

use std::collections::BTreeSet;
use std::net::{IpAddr, Ipv4Addr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tactvest_analytics::log::{parse_log, sessions_to_log, trial_sessions, LogRecord, MentalLoad};
use tactvest_analytics::metrics::{confusion, report};
use tactvest_analytics::path::{align, extract_turns, score, summarize, synthetic_batch, turtle, Frame, PathScore, ScoreConfig};
use tactvest_analytics::schedule::{make_schedule, JobDurations};
use tactvest_analytics::sim::{generate_cohort, simulate_session, CohortSpec, ConfusionResponder, CorrectRate, Latency, SessionMeta};
use tactvest_analytics::TrialSession;
use tactvest_core::direction::{direction_frame_at, quantize_heading, sector_to_pair, DirectionState, Motion, PulseConfig};
use tactvest_core::mixer::Mixer;
use tactvest_core::{band_ring, compile, validate, CodingStrategy, EventKind, PatternLibrary};
use tactvest_gateway::headless::{run_headless, HeadlessConfig, ResponderKind};
use tactvest_gateway::server::{start, ServeConfig};
use tactvest_gateway::store::{SessionStore, FRAMES_FILE};

const TICK_MS: u32 = 20;
/// Band motor indices in ring order: front row 4 left to right, then back
/// row 4 right to left (back panel starts at 20).
const RING: [usize; 8] = [16, 17, 18, 19, 39, 38, 37, 36];
const CHEST: [usize; 4] = [5, 6, 9, 10];

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, Check); 6] = [
        ("pattern corpus", Duration::from_secs(1), pattern_corpus),
        ("direction sweep", Duration::from_secs(1), direction_sweep),
        ("mixer determinism", Duration::from_secs(10), mixer_determinism),
        ("metrics oracle", Duration::from_secs(30), metrics_oracle),
        ("path scorer", Duration::from_secs(10), path_scorer),
        ("protocol robustness", Duration::from_secs(30), protocol_robustness),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let t0 = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let took = t0.elapsed();
        let ok = res.is_ok() && took <= limit;
        if !ok {
            failed += 1;
        }
        let detail = match res {
            Ok(d) if took <= limit => d,
            Ok(d) => format!("over time limit; {d}"),
            Err(e) => e,
        };
        println!(
            "{} {:<20} {:>8.3} s (limit {} s)  {}",
            if ok { "PASS" } else { "FAIL" },
            name,
            took.as_secs_f64(),
            limit.as_secs(),
            detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn active(frame: &tactvest_core::MotorFrame) -> BTreeSet<usize> {
    frame.values().iter().enumerate().filter(|(_, v)| **v > 0).map(|(i, _)| i).collect()
}

fn pattern_corpus() -> Result<String, String> {
    let lib = PatternLibrary::builtin();
    let specs: Vec<_> = lib.all().collect();
    ensure!(specs.len() == 17, "expected 17 specs, found {}", specs.len());
    for spec in &specs {
        let v = validate(spec);
        ensure!(v.is_empty(), "{}: {v:?}", spec.name);
        let seq = compile(spec, TICK_MS).map_err(|e| format!("{}: {e}", spec.name))?;
        ensure!(seq.len() == spec.frame_count(TICK_MS), "{}: frame count", spec.name);
        let referenced: BTreeSet<usize> = spec.motors_referenced().iter().map(|m| m.index()).collect();
        let levels: BTreeSet<u8> = spec.primitives.iter().map(|p| p.intensity).collect();
        for f in &seq.frames {
            ensure!(active(f).is_subset(&referenced), "{}: motor outside its targets", spec.name);
            ensure!(
                f.values().iter().all(|v| *v == 0 || (levels.contains(v) && *v <= 100)),
                "{}: intensity outside its primitives",
                spec.name
            );
        }
    }

    let uninjured = compile(lib.pattern(EventKind::UninjuredPerson, CodingStrategy::Semantic), TICK_MS).unwrap();
    let touched: BTreeSet<usize> = uninjured.frames.iter().flat_map(active).collect();
    ensure!(touched == BTreeSet::from(CHEST), "uninjured touches {touched:?}");

    let lost = compile(lib.pattern(EventKind::ConnectionLost, CodingStrategy::Semantic), TICK_MS).unwrap();
    let mut onsets = Vec::new();
    let mut prev = BTreeSet::new();
    for (k, f) in lost.frames.iter().enumerate() {
        let now = active(f);
        for m in now.difference(&prev) {
            onsets.push((k, *m));
        }
        prev = now;
    }
    let order: Vec<usize> = onsets.iter().map(|(_, m)| *m).collect();
    let twice: Vec<usize> = RING.iter().chain(RING.iter()).copied().collect();
    ensure!(order == twice, "connection_lost onsets {order:?}");

    let oxygen = lib.pattern(EventKind::LowOxygen, CodingStrategy::Semantic);
    let mut once = oxygen.clone();
    once.repeat = 1;
    let one = compile(&once, TICK_MS).unwrap().frames;
    let both = compile(oxygen, TICK_MS).unwrap().frames;
    ensure!(oxygen.repeat == 2 && both.len() == 2 * one.len(), "low_oxygen repeat");
    ensure!(both[..one.len()] == one[..] && both[one.len()..] == one[..], "low_oxygen halves differ");
    Ok(format!("{} specs valid; chest {:?}; band wrapped 2x; low_oxygen 2x{} frames", specs.len(), CHEST, one.len()))
}

fn direction_sweep() -> Result<String, String> {
    let ring = band_ring();
    let ring_idx: Vec<usize> = ring.motors.iter().map(|m| m.index()).collect();
    ensure!(ring_idx == RING, "band ring {ring_idx:?}");
    let pulse = PulseConfig::default();
    let mut arcs = [0u32; 8];
    let mut changes = 0;
    let mut mixed = BTreeSet::new();
    let mut last = None;
    for tenth in 0..3600u32 {
        let phi = f64::from(tenth) / 10.0;
        let sector = quantize_heading(phi);
        let want = ((tenth + 225) / 450 % 8) as u8;
        ensure!(sector == want, "phi {phi}: sector {sector}, oracle {want}");
        arcs[sector as usize] += 1;
        if last.is_some_and(|l| l != sector) {
            changes += 1;
        }
        last = Some(sector);

        let (a, b) = sector_to_pair(sector, &ring);
        let (ia, ib) = (a.index(), b.index());
        let pa = RING.iter().position(|m| *m == ia).ok_or("pair motor off the band")?;
        let pb = RING.iter().position(|m| *m == ib).ok_or("pair motor off the band")?;
        ensure!((pa + 1) % 8 == pb || (pb + 1) % 8 == pa, "sector {sector}: {ia},{ib} not adjacent");
        let frame = direction_frame_at(&DirectionState::new(sector, Motion::Static), &pulse, 0);
        ensure!(active(&frame) == BTreeSet::from([ia, ib]), "sector {sector}: frame {:?}", active(&frame));
        if (ia < 20) != (ib < 20) {
            mixed.insert(sector);
        }
    }
    // starts and ends in sector 0, so one contiguous arc each means 8 changes
    ensure!(changes == 8 && last == Some(0), "{changes} sector changes");
    ensure!(arcs.iter().all(|n| *n == 450), "arcs {arcs:?}");
    ensure!(mixed == BTreeSet::from([2, 6]), "mixed sectors {mixed:?}");
    Ok("8 arcs of 45.0 deg; all pairs adjacent; front+back only at sectors 2 and 6".into())
}

fn mixer_determinism() -> Result<String, String> {
    let lib = Arc::new(PatternLibrary::builtin().clone());
    let odo = common::rectangle_drive(10_000, 8, 45);
    let cfg = HeadlessConfig {
        strategy: CodingStrategy::Semantic,
        seed: 42,
        responder: ResponderKind::Accuracy(0.8),
        ..HeadlessConfig::default()
    };
    let mut dumps = Vec::new();
    let mut records = Vec::new();
    for _ in 0..3 {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let store = SessionStore::open(tmp.path()).map_err(|e| e.to_string())?;
        let id = run_headless(&store, lib.clone(), &cfg, &odo, Some("det")).map_err(|e| e.to_string())?;
        dumps.push(store.read_file(&id, FRAMES_FILE).map_err(|e| e.to_string())?);
        records = store.load_complete(&id).map_err(|e| e.to_string())?.records;
    }
    ensure!(dumps[0] == dumps[1] && dumps[1] == dumps[2], "frame dumps differ between runs");

    let text = String::from_utf8(dumps[0].clone()).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<u8>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    let mixer = Mixer::new(cfg.engine.mixer, lib.clone());
    let alert = compile(lib.alert(), TICK_MS).unwrap().frames;
    let mut checked = 0;
    for r in &records {
        if let LogRecord::Stimulus { t, event, strategy, .. } = r {
            let k = (*t / u64::from(TICK_MS)) as usize;
            let job = mixer.compile_job_frames(*event, *strategy).unwrap().frames;
            ensure!(rows.len() >= k + job.len(), "dump ends inside a job at tick {k}");
            for (j, f) in job.iter().enumerate() {
                ensure!(rows[k + j][..] == f.values()[..], "tick {}: dump differs from the {event:?} job", k + j);
            }
            for (j, f) in alert.iter().enumerate() {
                ensure!(rows[k + j][..] == f.values()[..], "tick {}: alert missing before {event:?}", k + j);
            }
            checked += 1;
        }
    }
    let expected = (cfg.trials as usize) * cfg.stimuli;
    ensure!(checked == expected, "{checked} stimuli logged, {expected} scheduled");
    Ok(format!("3 identical dumps of {} frames; alert leads all {checked} events", rows.len()))
}

fn semantic_durations() -> JobDurations {
    let mixer = Mixer::new(Default::default(), Arc::new(PatternLibrary::builtin().clone()));
    JobDurations::for_mixer(&mixer, CodingStrategy::Semantic)
}

fn metrics_oracle() -> Result<String, String> {
    let durations = semantic_durations();
    let mut rows = [[0.0; 9]; 8];
    for (r, row) in rows.iter_mut().enumerate() {
        row[r] = 0.6;
        row[(r + 1) % 8] = 0.15;
        row[(r + 6) % 8] = 0.15;
        row[8] = 0.1;
    }
    let mut responder = ConfusionResponder::new(rows, Latency::Uniform { lo: 800, hi: 2500 }).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    let sessions: Vec<TrialSession> = (0..1250u64)
        .map(|i| {
            let meta = SessionMeta {
                participant: format!("p{}", i / 6),
                strategy: CodingStrategy::Semantic,
                load: MentalLoad::None,
                trial_index: (i % 6) as u32 + 1,
            };
            simulate_session(make_schedule(i, 8, 60_000, 2000, &durations).unwrap(), meta, &mut responder, &mut rng)
        })
        .collect();
    let m = confusion(&sessions).map_err(|e| e.to_string())?;
    ensure!(m.total() == 10_000, "{} stimuli", m.total());
    // oracle: first response inside each stimulus's window
    let mut counts = [[0u64; 9]; 8];
    for s in &sessions {
        let st = &s.schedule.stimuli;
        for (i, x) in st.iter().enumerate() {
            let until = st.get(i + 1).map_or(u64::MAX, |n| n.onset_ms);
            let col = s.responses.iter().find(|r| r.t >= x.onset_ms && r.t < until).map_or(8, |r| r.chosen.ordinal());
            counts[x.event.ordinal()][col] += 1;
        }
    }
    ensure!(m.counts == counts, "matcher disagrees with the oracle");
    let mut worst: f64 = 0.0;
    for (r, want) in rows.iter().enumerate() {
        let n: u64 = counts[r].iter().sum();
        let tv = 0.5 * counts[r].iter().zip(want).map(|(c, w)| (*c as f64 / n as f64 - w).abs()).sum::<f64>();
        worst = worst.max(tv);
    }
    ensure!(worst < 0.05, "total variation {worst}");

    let cohort = |rate, latency| CohortSpec {
        seed: 19,
        strategy: CodingStrategy::Semantic,
        participants: 25,
        sessions_per_participant: 25,
        stimuli_per_session: 8,
        trial_ms: 60_000,
        min_gap_ms: 2000,
        durations,
        rate,
        latency,
    };
    let spec = cohort(CorrectRate::Exact(0.7918), Latency::Uniform { lo: 700, hi: 2600 });
    let generated = generate_cohort(&spec).map_err(|e| e.to_string())?;
    let text = sessions_to_log("cohort", &generated);
    let parsed = trial_sessions(&parse_log(&text, "cohort").map_err(|e| e.to_string())?);
    let acc = report(&parsed).group(CodingStrategy::Semantic, None).and_then(|g| g.mean_accuracy).ok_or("no accuracy")?;
    ensure!((acc - 0.7918).abs() <= 1e-4, "cohort accuracy {acc}");

    let constant = generate_cohort(&cohort(CorrectRate::Exact(0.5), Latency::Constant(1790))).map_err(|e| e.to_string())?;
    let delay = report(&constant).group(CodingStrategy::Semantic, None).and_then(|g| g.mean_delay_ms).ok_or("no delay")?;
    ensure!(delay == 1790.0, "mean delay {delay}");
    Ok(format!("TV max {worst:.4} over 10000; cohort {:.2}%; delay {delay} ms", acc * 100.0))
}

fn path_scorer() -> Result<String, String> {
    let truth = turtle(&[8.0, 6.0, 7.0], &[75.0, -110.0], Frame::Odometry).map_err(|e| e.to_string())?.resample(200).map_err(|e| e.to_string())?;
    let (rot, scale, tx, ty) = (-42.0f64, 37.5, 512.0, 300.0);
    let (s, c) = rot.to_radians().sin_cos();
    let drawn = truth
        .map(|p| [scale * (c * p[0] - s * p[1]) + tx, scale * (s * p[0] + c * p[1]) + ty], Frame::Tablet)
        .map_err(|e| e.to_string())?;
    let a = align(&drawn, &truth).map_err(|e| e.to_string())?;
    ensure!((a.rotation_deg - rot).abs() < 1e-6 && (a.scale - scale).abs() < 1e-6, "recovered {a:?}");

    let shapes: [(&str, Vec<f64>, Vec<f64>); 3] = [
        ("L", vec![10.0, 10.0], vec![90.0]),
        ("U", vec![10.0, 6.0, 10.0], vec![-90.0, -90.0]),
        ("S", vec![8.0, 8.0, 8.0], vec![90.0, -90.0]),
    ];
    let mut worst: f64 = 0.0;
    for (name, segs, turns) in shapes {
        let p = turtle(&segs, &turns, Frame::Odometry).unwrap().resample(200).unwrap();
        let got = extract_turns(&p, 30.0).map_err(|e| e.to_string())?;
        ensure!(got.turns.len() == turns.len(), "{name}: {} turns", got.turns.len());
        for (g, want) in got.turns.iter().zip(&turns) {
            worst = worst.max((g.angle_deg - want).abs());
        }
    }
    ensure!(worst < 1.0, "turn angle error {worst}");

    let batch = synthetic_batch(41, 41, 31);
    let mut scores: Vec<PathScore> = Vec::new();
    for (r, constructed) in &batch {
        let s = score(&r.drawn, &r.truth, &ScoreConfig::default()).map_err(|e| e.to_string())?;
        ensure!(s.all_turns_matched == *constructed, "{} scored against its construction", r.id);
        scores.push(s);
    }
    let sum = summarize(&scores);
    let pct = (sum.turn_pass_rate * 100.0).round();
    ensure!(sum.turn_passes == 31 && pct == 76.0, "{} passes ({pct}%)", sum.turn_passes);
    Ok(format!("similarity exact; L/U/S within {worst:.3} deg; batch 31/41 ({pct}%)"))
}

fn protocol_robustness() -> Result<String, String> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let srv = start(ServeConfig {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 0,
            tick_ms: TICK_MS,
            patterns_dir: None,
            sessions_dir: tmp.path().to_path_buf(),
            north: Default::default(),
        })
        .await
        .map_err(|e| e.to_string())?;
        let base = format!("http://{}", srv.addr);
        let http = reqwest::Client::new();

        let mut rng = ChaCha8Rng::seed_from_u64(31337);
        let (mut last, mut injected, mut valid) = (0u64, 0u64, 0u64);
        let (mut accepted, mut rejected) = (0u64, 0u64);
        for _ in 0..10 {
            let mut body = String::new();
            for _ in 0..200 {
                let roll = rng.random_range(0..10);
                if roll < 6 || valid == 0 {
                    last += rng.random_range(1..80);
                    valid += 1;
                    body += &format!("{{\"t\":{last},\"x\":{},\"y\":0,\"theta\":{}}}\n", rng.random_range(-9.0..9.0), rng.random_range(0.0..360.0));
                } else {
                    injected += 1;
                    body += &match roll {
                        6 => format!("{{\"t\":{},\"x\":0,\"y\":0,\"theta\":0}}\n", last - rng.random_range(0..=last.min(300))),
                        7 => "{\"t\":\n".to_string(),
                        8 => "null\n".to_string(),
                        _ => "{\"t\":1,\"x\":\"north\",\"y\":0,\"theta\":0}\n".to_string(),
                    };
                }
            }
            let r = http.post(format!("{base}/odometry")).body(body).send().await.map_err(|e| e.to_string())?;
            ensure!(r.status() == 200, "ingest status {}", r.status());
            let v: serde_json::Value = r.json().await.map_err(|e| e.to_string())?;
            accepted += v["accepted"].as_u64().unwrap_or(0);
            rejected += v["rejected"].as_u64().unwrap_or(0);
        }
        let stats: serde_json::Value = http.get(format!("{base}/stats")).send().await.map_err(|e| e.to_string())?.json().await.map_err(|e| e.to_string())?;
        ensure!(rejected == injected && stats["rejected_lines"] == injected, "rejected {rejected}/{} vs injected {injected}", stats["rejected_lines"]);
        ensure!(accepted == valid, "accepted {accepted} of {valid}");
        let before = stats["ticks"].as_u64().unwrap_or(0);
        tokio::time::sleep(Duration::from_millis(100)).await;
        let r = http
            .post(format!("{base}/trigger"))
            .json(&serde_json::json!({"event": "fire", "strategy": "semantic"}))
            .send()
            .await
            .map_err(|e| e.to_string())?;
        ensure!(r.status() == 200, "trigger after fuzzing: {}", r.status());
        let stats: serde_json::Value = http.get(format!("{base}/stats")).send().await.map_err(|e| e.to_string())?.json().await.map_err(|e| e.to_string())?;
        ensure!(stats["ticks"].as_u64().unwrap_or(0) > before, "mixer loop stalled");
        srv.stop().await.map_err(|e| e.to_string())?;
        Ok(format!("{injected} faults injected, {rejected} rejected, {accepted} accepted; stream alive"))
    })
}
