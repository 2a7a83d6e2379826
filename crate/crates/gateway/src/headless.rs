//! Headless trial runs: the six-test protocol driven by a simulated
//! responder, recorded into the session store without a server.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use tactvest_analytics::log::{LogRecord, MentalLoad, StimulusSource};
use tactvest_analytics::schedule::{make_schedule, ScheduleError, DEFAULT_MIN_GAP_MS, DEFAULT_STIMULI, DEFAULT_TRIAL_MS};
use tactvest_analytics::sim::{ConfusionResponder, Latency, PerfectResponder, Responder};
use tactvest_analytics::Stimulus;
use tactvest_core::direction::OdometrySample;
use tactvest_core::{CodingStrategy, PatternLibrary};

use crate::engine::{Engine, EngineConfig, EngineError, Input};
use crate::store::{SessionStore, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponderKind {
    Perfect,
    /// Correct with the given probability, otherwise a uniform wrong label.
    Accuracy(f64),
    Silent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadlessConfig {
    pub strategy: CodingStrategy,
    pub seed: u64,
    pub participant: String,
    pub trials: u32,
    pub stimuli: usize,
    pub trial_ms: u64,
    pub min_gap_ms: u64,
    /// Silence between consecutive trials.
    pub pause_ms: u64,
    pub responder: ResponderKind,
    pub latency: Latency,
    pub engine: EngineConfig,
}

impl Default for HeadlessConfig {
    fn default() -> Self {
        Self {
            strategy: CodingStrategy::Semantic,
            seed: 1,
            participant: "sim".into(),
            trials: 6,
            stimuli: DEFAULT_STIMULI,
            trial_ms: DEFAULT_TRIAL_MS,
            min_gap_ms: DEFAULT_MIN_GAP_MS,
            pause_ms: 3000,
            responder: ResponderKind::Accuracy(0.8),
            latency: Latency::Uniform { lo: 900, hi: 2500 },
            engine: EngineConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum HeadlessError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid config: {0}")]
    Config(String),
}

fn responder(kind: ResponderKind, latency: Latency) -> Option<Box<dyn Responder>> {
    match kind {
        ResponderKind::Perfect => Some(Box::new(PerfectResponder(latency))),
        ResponderKind::Accuracy(p) => Some(Box::new(ConfusionResponder::uniform_errors(p, latency))),
        ResponderKind::Silent => None,
    }
}

/// Run the protocol into a new stored session and return its id.
///
/// Odometry samples are placed on the session clock relative to the first
/// sample's timestamp. Responses are drawn when a trial stimulus actually
/// starts, so delays are measured from realized onsets.
pub fn run_headless(
    store: &SessionStore,
    library: Arc<PatternLibrary>,
    cfg: &HeadlessConfig,
    odometry: &[OdometrySample],
    id: Option<&str>,
) -> Result<String, HeadlessError> {
    cfg.engine.validate().map_err(HeadlessError::Config)?;
    let tick_ms = u64::from(cfg.engine.tick_ms);
    let mut engine = Engine::new(cfg.engine, library.clone());
    let durations = engine.job_durations(cfg.strategy);

    let mut pending: BTreeMap<u64, Vec<Input>> = BTreeMap::new();
    let mut at = |tick: u64, input: Input| pending.entry(tick).or_default().push(input);

    if let Some(first) = odometry.first() {
        for s in odometry {
            at(s.t.saturating_sub(first.t) / tick_ms, Input::Odometry(*s));
        }
    }
    let trial_ticks = cfg.trial_ms.div_ceil(tick_ms) + cfg.pause_ms.div_ceil(tick_ms) + 1;
    for k in 0..cfg.trials {
        let schedule = make_schedule(cfg.seed.wrapping_add(u64::from(k)), cfg.stimuli, cfg.trial_ms, cfg.min_gap_ms, &durations)?;
        let trial_index = k + 1;
        at(
            u64::from(k) * trial_ticks,
            Input::TrialStart {
                trial_index,
                strategy: cfg.strategy,
                load: MentalLoad::for_trial_index(trial_index),
                participant: cfg.participant.clone(),
                schedule,
            },
        );
    }
    let odo_end = odometry
        .first()
        .zip(odometry.last())
        .map_or(0, |(a, b)| (b.t - a.t) / tick_ms + 1);
    let end_tick = (u64::from(cfg.trials) * trial_ticks).max(odo_end);

    let mut writer = store.create(id, cfg.engine, &library, Some(cfg.participant.clone()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut who = responder(cfg.responder, cfg.latency);
    // responses waiting for their time: (t, input)
    let mut answers: BTreeMap<u64, Vec<Input>> = BTreeMap::new();

    while engine.tick() < end_tick {
        let now = engine.now_ms();
        let due: Vec<u64> = answers.range(..=now).map(|(t, _)| *t).collect();
        for t in due {
            for input in answers.remove(&t).unwrap_or_default() {
                writer.record(&engine.apply(input)?.record)?;
            }
        }
        if let Some(inputs) = pending.remove(&engine.tick()) {
            for input in inputs {
                writer.record(&engine.apply(input)?.record)?;
            }
        }
        let step = engine.step();
        writer.frame(step.tick, &step.frame)?;
        for rec in &step.records {
            writer.record(rec)?;
            if let (
                LogRecord::Stimulus {
                    t,
                    event,
                    source: StimulusSource::Trial,
                    ..
                },
                Some(r),
            ) = (rec, who.as_mut())
            {
                let stim = Stimulus { event: *event, onset_ms: *t };
                if let Some((chosen, latency)) = r.respond(&stim, &mut rng) {
                    let rt = t + latency;
                    answers.entry(rt).or_default().push(Input::Response {
                        t: rt,
                        chosen,
                        client_t: None,
                    });
                }
            }
        }
    }
    let id = writer.id().to_string();
    writer.close(&engine.end_record())?;
    Ok(id)
}
