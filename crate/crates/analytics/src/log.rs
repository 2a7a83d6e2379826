//! Session log records (JSON lines) and their grouping into trial sessions.
//!
//! Times `t` are milliseconds since session start on the server clock.
//! Records that drive frame output also carry the mixer `tick` they were
//! applied at, which is what makes a log replayable.

use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use tactvest_core::direction::OdometrySample;
use tactvest_core::{CodingStrategy, EventKind};

use crate::schedule::{Stimulus, TrialSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentalLoad {
    None,
    Arithmetic,
    VisualTracking,
}

impl MentalLoad {
    pub const ALL: [MentalLoad; 3] = [MentalLoad::None, MentalLoad::Arithmetic, MentalLoad::VisualTracking];

    /// Load for a 1-based trial index in the six-test protocol.
    pub fn for_trial_index(index: u32) -> Self {
        match index {
            4 | 5 => MentalLoad::Arithmetic,
            6 => MentalLoad::VisualTracking,
            _ => MentalLoad::None,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            MentalLoad::None => "none",
            MentalLoad::Arithmetic => "arithmetic",
            MentalLoad::VisualTracking => "visual_tracking",
        }
    }
}

impl fmt::Display for MentalLoad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for MentalLoad {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MentalLoad::ALL
            .into_iter()
            .find(|l| l.code() == s)
            .ok_or_else(|| format!("unknown load {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StimulusSource {
    Trial,
    Manual,
    Training,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseEvent {
    pub t: u64,
    pub chosen: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Session {
        id: String,
        tick_ms: u32,
        #[serde(default)]
        participant: Option<String>,
    },
    TrialStart {
        tick: u64,
        t: u64,
        trial_index: u32,
        strategy: CodingStrategy,
        load: MentalLoad,
        participant: String,
        schedule: TrialSchedule,
    },
    /// A job the mixer actually started; `t` is the realized onset.
    Stimulus {
        tick: u64,
        t: u64,
        job_id: u64,
        event: EventKind,
        strategy: CodingStrategy,
        source: StimulusSource,
    },
    Response {
        t: u64,
        chosen: EventKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        client_t: Option<u64>,
    },
    Load {
        t: u64,
        load: MentalLoad,
    },
    TrialStop {
        tick: u64,
        t: u64,
        completed: bool,
    },
    Trigger {
        tick: u64,
        event: EventKind,
        strategy: CodingStrategy,
        source: StimulusSource,
    },
    Odometry {
        tick: u64,
        sample: OdometrySample,
    },
    Calibrate {
        tick: u64,
        #[serde(default)]
        north: Option<f64>,
    },
    Training {
        tick: u64,
        t: u64,
        active: bool,
        cap_ms: u64,
    },
    Path {
        t: u64,
        file: String,
    },
    End {
        tick: u64,
        t: u64,
    },
    #[serde(other)]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSession {
    pub participant: String,
    pub strategy: CodingStrategy,
    pub load: MentalLoad,
    #[serde(default)]
    pub trial_index: u32,
    pub schedule: TrialSchedule,
    pub responses: Vec<ResponseEvent>,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}:{line}: {source}")]
    Parse {
        origin: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

pub fn parse_log(text: &str, origin: &str) -> Result<Vec<LogRecord>, LogError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| LogError::Parse {
                origin: origin.to_string(),
                line: i + 1,
                source,
            })
        })
        .collect()
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>, LogError> {
    let io = |source| LogError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| LogError::Parse {
            origin: path.display().to_string(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

/// Cut a session log into its trials.
///
/// Stimuli count from a `trial_start` up to its `trial_stop`; responses keep
/// counting until the next `trial_start` or the end of the session, so an
/// answer to the last stimulus is not lost when the trial clock runs out.
/// Stimulus onsets are the realized ones, relative to trial start, and only
/// trial-sourced stimuli count.
pub fn trial_sessions(records: &[LogRecord]) -> Vec<TrialSession> {
    let mut out = Vec::new();
    let mut current: Option<(u64, TrialSession)> = None;
    let mut stopped = false;

    let close = |cur: Option<(u64, TrialSession)>, out: &mut Vec<TrialSession>| {
        if let Some((_, s)) = cur {
            out.push(s);
        }
    };

    for rec in records {
        match rec {
            LogRecord::TrialStart {
                t,
                trial_index,
                strategy,
                load,
                participant,
                schedule,
                ..
            } => {
                close(current.take(), &mut out);
                stopped = false;
                let schedule = TrialSchedule {
                    stimuli: Vec::new(),
                    ..schedule.clone()
                };
                current = Some((
                    *t,
                    TrialSession {
                        participant: participant.clone(),
                        strategy: *strategy,
                        load: *load,
                        trial_index: *trial_index,
                        schedule,
                        responses: Vec::new(),
                    },
                ));
            }
            LogRecord::Stimulus {
                t,
                event,
                source: StimulusSource::Trial,
                ..
            } => {
                if let (Some((t0, s)), false) = (current.as_mut(), stopped) {
                    s.schedule.stimuli.push(Stimulus {
                        event: *event,
                        onset_ms: t.saturating_sub(*t0),
                    });
                }
            }
            LogRecord::Response { t, chosen, .. } => {
                if let Some((t0, s)) = current.as_mut() {
                    if *t >= *t0 {
                        s.responses.push(ResponseEvent {
                            t: t - *t0,
                            chosen: *chosen,
                        });
                    }
                }
            }
            LogRecord::Load { load, .. } => {
                if let (Some((_, s)), false) = (current.as_mut(), stopped) {
                    s.load = *load;
                }
            }
            LogRecord::TrialStop { .. } => stopped = true,
            LogRecord::End { .. } => {
                close(current.take(), &mut out);
                stopped = false;
            }
            _ => {}
        }
    }
    close(current, &mut out);
    out
}

/// Serialize trial sessions as a standalone log, one trial after another.
pub fn sessions_to_log(id: &str, sessions: &[TrialSession]) -> String {
    let mut recs = vec![LogRecord::Session {
        id: id.to_string(),
        tick_ms: tactvest_core::pattern::DEFAULT_TICK_MS,
        participant: sessions.first().map(|s| s.participant.clone()),
    }];
    let mut base = 0u64;
    let mut job_id = 0u64;
    for s in sessions {
        recs.push(LogRecord::TrialStart {
            tick: 0,
            t: base,
            trial_index: s.trial_index,
            strategy: s.strategy,
            load: s.load,
            participant: s.participant.clone(),
            schedule: s.schedule.clone(),
        });
        let mut timed: Vec<(u64, LogRecord)> = Vec::new();
        for st in &s.schedule.stimuli {
            timed.push((
                st.onset_ms,
                LogRecord::Stimulus {
                    tick: 0,
                    t: base + st.onset_ms,
                    job_id,
                    event: st.event,
                    strategy: s.strategy,
                    source: StimulusSource::Trial,
                },
            ));
            job_id += 1;
        }
        for r in &s.responses {
            timed.push((
                r.t,
                LogRecord::Response {
                    t: base + r.t,
                    chosen: r.chosen,
                    client_t: None,
                },
            ));
        }
        timed.sort_by_key(|(t, _)| *t);
        recs.extend(timed.into_iter().map(|(_, r)| r));
        let end = s
            .schedule
            .duration_ms
            .max(s.responses.iter().map(|r| r.t).max().unwrap_or(0));
        recs.push(LogRecord::TrialStop {
            tick: 0,
            t: base + end,
            completed: true,
        });
        base += end + 1;
    }
    let mut text = String::new();
    for r in recs {
        text.push_str(&serde_json::to_string(&r).expect("log records serialize"));
        text.push('\n');
    }
    text
}
