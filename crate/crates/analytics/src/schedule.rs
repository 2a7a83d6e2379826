//! Randomized stimulus schedules for the event identification test.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use tactvest_core::mixer::Mixer;
use tactvest_core::{CodingStrategy, EventKind};

pub const DEFAULT_TRIAL_MS: u64 = 60_000;
pub const DEFAULT_MIN_GAP_MS: u64 = 2_000;
pub const DEFAULT_STIMULI: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("{n} stimuli of up to {max_job_ms} ms plus {min_gap_ms} ms gaps do not fit in {duration_ms} ms")]
    Infeasible {
        n: usize,
        max_job_ms: u64,
        min_gap_ms: u64,
        duration_ms: u64,
    },
}

/// Playback length (alert included) of each event's job, indexed by
/// [`EventKind::ordinal`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobDurations(pub [u64; 8]);

impl JobDurations {
    pub fn uniform(ms: u64) -> Self {
        Self([ms; 8])
    }

    pub fn for_mixer(mixer: &Mixer, strategy: CodingStrategy) -> Self {
        let mut out = [0; 8];
        for e in EventKind::ALL {
            out[e.ordinal()] = mixer
                .compile_job_frames(e, strategy)
                .expect("library patterns compile")
                .duration_ms();
        }
        Self(out)
    }

    pub fn get(&self, e: EventKind) -> u64 {
        self.0[e.ordinal()]
    }

    pub fn max(&self) -> u64 {
        self.0.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stimulus {
    pub event: EventKind,
    pub onset_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSchedule {
    pub seed: u64,
    pub duration_ms: u64,
    pub min_gap_ms: u64,
    pub stimuli: Vec<Stimulus>,
}

impl TrialSchedule {
    /// Check ordering, spacing and fit against the given job lengths.
    pub fn check(&self, durations: &JobDurations) -> Result<(), String> {
        for w in self.stimuli.windows(2) {
            let need = w[0].onset_ms + durations.get(w[0].event) + self.min_gap_ms;
            if w[1].onset_ms < need {
                return Err(format!("onset {} before {need}", w[1].onset_ms));
            }
        }
        if let Some(last) = self.stimuli.last() {
            if last.onset_ms + durations.get(last.event) > self.duration_ms {
                return Err("last stimulus overruns the trial".into());
            }
        }
        Ok(())
    }
}

/// Balanced random order at random intervals.
///
/// Every event appears `n / 8` or `n / 8 + 1` times. The slack left after
/// packing jobs and minimum gaps back to back is split at uniformly drawn
/// cut points, so onsets are uniform over the feasible placements.
pub fn make_schedule(
    seed: u64,
    n: usize,
    duration_ms: u64,
    min_gap_ms: u64,
    durations: &JobDurations,
) -> Result<TrialSchedule, ScheduleError> {
    let infeasible = || ScheduleError::Infeasible {
        n,
        max_job_ms: durations.max(),
        min_gap_ms,
        duration_ms,
    };
    if (n as u64) * (durations.max() + min_gap_ms) > duration_ms {
        return Err(infeasible());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut events = Vec::with_capacity(n);
    for _ in 0..n / 8 {
        events.extend(EventKind::ALL);
    }
    let mut rest = EventKind::ALL.to_vec();
    rest.shuffle(&mut rng);
    events.extend(rest.into_iter().take(n % 8));
    events.shuffle(&mut rng);

    let packed: u64 = events.iter().map(|e| durations.get(*e)).sum::<u64>()
        + min_gap_ms * n.saturating_sub(1) as u64;
    let slack = duration_ms.checked_sub(packed).ok_or_else(infeasible)?;
    let mut cuts: Vec<u64> = (0..n).map(|_| rng.random_range(0..=slack)).collect();
    cuts.sort_unstable();

    let mut base = 0;
    let stimuli = events
        .iter()
        .zip(cuts)
        .map(|(e, cut)| {
            let s = Stimulus {
                event: *e,
                onset_ms: base + cut,
            };
            base += durations.get(*e) + min_gap_ms;
            s
        })
        .collect();

    Ok(TrialSchedule {
        seed,
        duration_ms,
        min_gap_ms,
        stimuli,
    })
}
