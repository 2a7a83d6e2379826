//! Simulated responders and synthetic cohorts for validating the metrics
//! pipeline against known ground truth.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use tactvest_core::{CodingStrategy, EventKind};

use crate::log::{MentalLoad, ResponseEvent, TrialSession};
use crate::schedule::{make_schedule, JobDurations, ScheduleError, Stimulus, TrialSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Latency {
    Constant(u64),
    Uniform { lo: u64, hi: u64 },
}

impl Latency {
    pub fn sample(&self, rng: &mut impl Rng) -> u64 {
        match *self {
            Latency::Constant(ms) => ms,
            Latency::Uniform { lo, hi } => rng.random_range(lo..=hi),
        }
    }
}

/// Answer for one stimulus: `None` is no response.
pub trait Responder {
    fn respond(&mut self, stimulus: &Stimulus, rng: &mut ChaCha8Rng) -> Option<(EventKind, u64)>;
}

#[derive(Debug, Clone, Copy)]
pub struct PerfectResponder(pub Latency);

impl Responder for PerfectResponder {
    fn respond(&mut self, stimulus: &Stimulus, rng: &mut ChaCha8Rng) -> Option<(EventKind, u64)> {
        Some((stimulus.event, self.0.sample(rng)))
    }
}

/// Draws each answer from a per-event distribution over the 8 labels plus
/// a trailing "no response" column.
#[derive(Debug, Clone)]
pub struct ConfusionResponder {
    pub rows: [[f64; 9]; 8],
    pub latency: Latency,
    dists: Vec<WeightedIndex<f64>>,
}

impl ConfusionResponder {
    pub fn new(rows: [[f64; 9]; 8], latency: Latency) -> Result<Self, String> {
        let dists = rows
            .iter()
            .map(|r| WeightedIndex::new(r.iter().copied()).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        Ok(Self { rows, latency, dists })
    }

    /// Correct with probability `p_correct`, otherwise uniform over the
    /// other seven labels.
    pub fn uniform_errors(p_correct: f64, latency: Latency) -> Self {
        let mut rows = [[0.0; 9]; 8];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().take(8).enumerate() {
                *v = if r == c { p_correct } else { (1.0 - p_correct) / 7.0 };
            }
        }
        Self::new(rows, latency).expect("valid weights")
    }
}

impl Responder for ConfusionResponder {
    fn respond(&mut self, stimulus: &Stimulus, rng: &mut ChaCha8Rng) -> Option<(EventKind, u64)> {
        let col = self.dists[stimulus.event.ordinal()].sample(rng);
        (col < 8).then(|| (EventKind::ALL[col], self.latency.sample(rng)))
    }
}

/// Replays a fixed answer key, one entry per stimulus in order.
#[derive(Debug, Clone)]
pub struct ScriptedResponder {
    pub answers: std::collections::VecDeque<Option<EventKind>>,
    pub latency: Latency,
}

impl Responder for ScriptedResponder {
    fn respond(&mut self, _stimulus: &Stimulus, rng: &mut ChaCha8Rng) -> Option<(EventKind, u64)> {
        let answer = self.answers.pop_front().flatten()?;
        Some((answer, self.latency.sample(rng)))
    }
}

#[derive(Debug, Clone)]
pub struct SessionMeta {
    pub participant: String,
    pub strategy: CodingStrategy,
    pub load: MentalLoad,
    pub trial_index: u32,
}

/// Responses land at onset + latency; latencies longer than the gap to the
/// next stimulus get attributed to that stimulus, as they would for a person.
pub fn simulate_session(
    schedule: TrialSchedule,
    meta: SessionMeta,
    responder: &mut dyn Responder,
    rng: &mut ChaCha8Rng,
) -> TrialSession {
    let mut responses: Vec<ResponseEvent> = schedule
        .stimuli
        .iter()
        .filter_map(|s| {
            responder.respond(s, rng).map(|(chosen, latency)| ResponseEvent {
                t: s.onset_ms + latency,
                chosen,
            })
        })
        .collect();
    responses.sort_by_key(|r| r.t);
    TrialSession {
        participant: meta.participant,
        strategy: meta.strategy,
        load: meta.load,
        trial_index: meta.trial_index,
        schedule,
        responses,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectRate {
    /// Exactly `round(p * total)` correct answers, positions shuffled.
    Exact(f64),
    /// Each answer independently correct with probability `p`.
    Bernoulli(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortSpec {
    pub seed: u64,
    pub strategy: CodingStrategy,
    pub participants: usize,
    pub sessions_per_participant: usize,
    pub stimuli_per_session: usize,
    pub trial_ms: u64,
    pub min_gap_ms: u64,
    pub durations: JobDurations,
    pub rate: CorrectRate,
    pub latency: Latency,
}

impl CohortSpec {
    pub fn total_stimuli(&self) -> usize {
        self.participants * self.sessions_per_participant * self.stimuli_per_session
    }
}

/// Sessions for a synthetic cohort. Trial indices cycle 1..=6 so the load
/// tags follow the six-test protocol.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Vec<TrialSession>, ScheduleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.total_stimuli();
    let key: Vec<bool> = match spec.rate {
        CorrectRate::Exact(p) => {
            let correct = (p * total as f64).round() as usize;
            let mut k: Vec<bool> = (0..total).map(|i| i < correct).collect();
            k.shuffle(&mut rng);
            k
        }
        CorrectRate::Bernoulli(p) => (0..total).map(|_| rng.random_bool(p)).collect(),
    };
    let mut key = key.into_iter();

    let mut out = Vec::with_capacity(spec.participants * spec.sessions_per_participant);
    for p in 0..spec.participants {
        for s in 0..spec.sessions_per_participant {
            let schedule = make_schedule(
                rng.random(),
                spec.stimuli_per_session,
                spec.trial_ms,
                spec.min_gap_ms,
                &spec.durations,
            )?;
            let answers = schedule
                .stimuli
                .iter()
                .map(|st| {
                    if key.next().unwrap_or(false) {
                        Some(st.event)
                    } else {
                        let wrong: Vec<EventKind> = EventKind::ALL.into_iter().filter(|e| *e != st.event).collect();
                        Some(wrong[rng.random_range(0..wrong.len())])
                    }
                })
                .collect();
            let trial_index = (s % 6) as u32 + 1;
            let meta = SessionMeta {
                participant: format!("p{:02}", p + 1),
                strategy: spec.strategy,
                load: MentalLoad::for_trial_index(trial_index),
                trial_index,
            };
            let mut responder = ScriptedResponder { answers, latency: spec.latency };
            out.push(simulate_session(schedule, meta, &mut responder, &mut rng));
        }
    }
    Ok(out)
}
