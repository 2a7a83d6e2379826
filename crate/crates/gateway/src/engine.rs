//! Deterministic session engine: mixer, direction channel and trial runner
//! advanced one tick at a time.
//!
//! Inputs are applied at the current tick and produce the log record that
//! lets a replay re-apply them at the same tick. Everything the engine emits
//! on its own (stimulus onsets, automatic trial stops) is regenerated on
//! replay and is never fed back in.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use tactvest_analytics::log::{LogRecord, MentalLoad, StimulusSource};
use tactvest_analytics::schedule::{JobDurations, TrialSchedule};
use tactvest_core::direction::{DirectionChannel, DirectionConfig, DirectionError, OdometrySample};
use tactvest_core::mixer::{Mixer, MixerConfig, MixerError};
use tactvest_core::pattern::{MAX_TICK_MS, MIN_TICK_MS};
use tactvest_core::{CodingStrategy, EventKind, MotorFrame, PatternLibrary};

/// How the north offset is fixed for a session.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NorthMode {
    /// Odometry zero heading is north until a calibrate input arrives.
    #[default]
    OdometryZero,
    Fixed(f64),
    /// Pin north to the heading of the first odometry sample.
    FirstSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub tick_ms: u32,
    pub mixer: MixerConfig,
    pub direction: DirectionConfig,
    #[serde(default)]
    pub north: NorthMode,
}

impl EngineConfig {
    pub fn new(tick_ms: u32) -> Self {
        Self {
            tick_ms,
            mixer: MixerConfig {
                tick_ms,
                ..MixerConfig::default()
            },
            direction: DirectionConfig::default(),
            north: NorthMode::default(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(MIN_TICK_MS..=MAX_TICK_MS).contains(&self.tick_ms) {
            return Err(format!("tick {} ms outside {MIN_TICK_MS}..={MAX_TICK_MS}", self.tick_ms));
        }
        if self.mixer.tick_ms != self.tick_ms {
            return Err("mixer tick differs from engine tick".into());
        }
        Ok(())
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self::new(tactvest_core::pattern::DEFAULT_TICK_MS)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Input {
    Trigger {
        event: EventKind,
        strategy: CodingStrategy,
        source: StimulusSource,
    },
    Odometry(OdometrySample),
    Calibrate {
        north: Option<f64>,
    },
    TrialStart {
        trial_index: u32,
        strategy: CodingStrategy,
        load: MentalLoad,
        participant: String,
        schedule: TrialSchedule,
    },
    TrialStop,
    Load(MentalLoad),
    Training {
        active: bool,
        cap_ms: u64,
    },
    /// Participant answer stamped with server session time.
    Response {
        t: u64,
        chosen: EventKind,
        client_t: Option<u64>,
    },
    Path {
        file: String,
    },
}

impl Input {
    /// The input a log record replays as, if it drives frame output.
    pub fn from_record(rec: &LogRecord) -> Option<(u64, Input)> {
        Some(match rec.clone() {
            LogRecord::Trigger { tick, event, strategy, source } => (tick, Input::Trigger { event, strategy, source }),
            LogRecord::Odometry { tick, sample } => (tick, Input::Odometry(sample)),
            LogRecord::Calibrate { tick, north } => (tick, Input::Calibrate { north }),
            LogRecord::TrialStart {
                tick,
                trial_index,
                strategy,
                load,
                participant,
                schedule,
                ..
            } => (
                tick,
                Input::TrialStart {
                    trial_index,
                    strategy,
                    load,
                    participant,
                    schedule,
                },
            ),
            LogRecord::TrialStop { tick, completed: false, .. } => (tick, Input::TrialStop),
            _ => return None,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Mixer(#[from] MixerError),
    #[error(transparent)]
    Direction(#[from] DirectionError),
    #[error("a trial is already running")]
    TrialActive,
    #[error("no trial is running")]
    NoTrial,
    #[error("cannot calibrate before any odometry sample")]
    NoOdometry,
    #[error("schedule does not fit: {0}")]
    BadSchedule(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub record: LogRecord,
    pub job_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub tick: u64,
    pub t: u64,
    pub frame: MotorFrame,
    pub records: Vec<LogRecord>,
}

#[derive(Debug, Clone)]
struct ActiveTrial {
    start_t: u64,
    strategy: CodingStrategy,
    schedule: TrialSchedule,
    next: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainingStatus {
    pub started_t: u64,
    pub cap_ms: u64,
}

#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    tick: u64,
    mixer: Mixer,
    direction: DirectionChannel,
    trial: Option<ActiveTrial>,
    training: Option<TrainingStatus>,
    sources: HashMap<u64, StimulusSource>,
    north_pinned: bool,
}

impl Engine {
    pub fn new(config: EngineConfig, library: Arc<PatternLibrary>) -> Self {
        let mut direction = DirectionChannel::new(config.direction);
        if let NorthMode::Fixed(n) = config.north {
            direction.set_north(n);
        }
        Self {
            config,
            tick: 0,
            mixer: Mixer::new(config.mixer, library),
            direction,
            trial: None,
            training: None,
            sources: HashMap::new(),
            north_pinned: !matches!(config.north, NorthMode::FirstSample),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Session time of the next frame.
    pub fn now_ms(&self) -> u64 {
        self.tick * u64::from(self.config.tick_ms)
    }

    pub fn mixer(&self) -> &Mixer {
        &self.mixer
    }

    pub fn north(&self) -> f64 {
        self.direction.north()
    }

    pub fn trial_running(&self) -> bool {
        self.trial.is_some()
    }

    pub fn training(&self) -> Option<TrainingStatus> {
        self.training
    }

    pub fn job_durations(&self, strategy: CodingStrategy) -> JobDurations {
        JobDurations::for_mixer(&self.mixer, strategy)
    }

    pub fn apply(&mut self, input: Input) -> Result<Applied, EngineError> {
        let tick = self.tick;
        let t = self.now_ms();
        let mut job_id = None;
        let record = match input {
            Input::Trigger { event, strategy, source } => {
                let job = self.mixer.enqueue(event, strategy, t)?;
                self.sources.insert(job.id, source);
                job_id = Some(job.id);
                LogRecord::Trigger { tick, event, strategy, source }
            }
            Input::Odometry(sample) => {
                let state = self.direction.ingest(sample)?;
                let state = if self.north_pinned {
                    state
                } else {
                    self.north_pinned = true;
                    self.direction.calibrate();
                    self.direction.state().expect("sample ingested")
                };
                self.mixer.set_direction(Some(state));
                LogRecord::Odometry { tick, sample }
            }
            Input::Calibrate { north } => {
                let resolved = match north {
                    Some(n) => {
                        self.direction.set_north(n);
                        self.direction.north()
                    }
                    None => self.direction.calibrate().ok_or(EngineError::NoOdometry)?,
                };
                self.north_pinned = true;
                self.mixer.set_direction(self.direction.state());
                LogRecord::Calibrate {
                    tick,
                    north: Some(resolved),
                }
            }
            Input::TrialStart {
                trial_index,
                strategy,
                load,
                participant,
                schedule,
            } => {
                if self.trial.is_some() {
                    return Err(EngineError::TrialActive);
                }
                schedule
                    .check(&self.job_durations(strategy))
                    .map_err(EngineError::BadSchedule)?;
                self.trial = Some(ActiveTrial {
                    start_t: t,
                    strategy,
                    schedule: schedule.clone(),
                    next: 0,
                });
                LogRecord::TrialStart {
                    tick,
                    t,
                    trial_index,
                    strategy,
                    load,
                    participant,
                    schedule,
                }
            }
            Input::TrialStop => {
                self.trial.take().ok_or(EngineError::NoTrial)?;
                LogRecord::TrialStop { tick, t, completed: false }
            }
            Input::Load(load) => LogRecord::Load { t, load },
            Input::Training { active, cap_ms } => {
                self.training = active.then_some(TrainingStatus { started_t: t, cap_ms });
                LogRecord::Training { tick, t, active, cap_ms }
            }
            Input::Response { t, chosen, client_t } => LogRecord::Response { t, chosen, client_t },
            Input::Path { file } => LogRecord::Path { t, file },
        };
        Ok(Applied { record, job_id })
    }

    /// Produce the frame for the current tick and advance.
    pub fn step(&mut self) -> Step {
        let tick = self.tick;
        let now = self.now_ms();
        let mut records = Vec::new();

        let mut stop = false;
        if let Some(trial) = self.trial.as_mut() {
            while let Some(s) = trial.schedule.stimuli.get(trial.next) {
                if trial.start_t + s.onset_ms > now {
                    break;
                }
                match self.mixer.enqueue(s.event, trial.strategy, now) {
                    Ok(job) => {
                        self.sources.insert(job.id, StimulusSource::Trial);
                    }
                    Err(e) => tracing::warn!("trial stimulus dropped: {e}"),
                }
                trial.next += 1;
            }
            stop = now >= trial.start_t + trial.schedule.duration_ms;
        }

        let out = self.mixer.tick_report(now);
        if let Some(e) = out.started {
            records.push(LogRecord::Stimulus {
                tick,
                t: e.start_t,
                job_id: e.job_id,
                event: e.event,
                strategy: e.strategy,
                source: self.sources.remove(&e.job_id).unwrap_or(StimulusSource::Manual),
            });
        }
        if stop {
            self.trial = None;
            records.push(LogRecord::TrialStop { tick, t: now, completed: true });
        }

        self.tick += 1;
        Step {
            tick,
            t: now,
            frame: out.frame,
            records,
        }
    }

    /// Record closing the session after the last produced frame.
    pub fn end_record(&self) -> LogRecord {
        LogRecord::End {
            tick: self.tick,
            t: self.now_ms(),
        }
    }
}
