//! Frame mixer: serial playback of queued event jobs merged with the
//! continuous direction display, one frame per tick.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::direction::{direction_frame_at, DirectionState, PulseConfig};
use crate::frame::{FrameSequence, MotorFrame};
use crate::library::{CodingStrategy, EventKind, PatternLibrary};
use crate::pattern::{compile, CompileError, DEFAULT_TICK_MS};

pub const DEFAULT_QUEUE_CAPACITY: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixerConfig {
    pub tick_ms: u32,
    pub direction_enabled: bool,
    /// Mute the direction band while an event job is playing.
    pub duck_direction_during_event: bool,
    pub queue_capacity: usize,
    /// Silence between the alert prefix and the event pattern.
    pub alert_gap_ms: u32,
    pub pulse: PulseConfig,
}

impl Default for MixerConfig {
    fn default() -> Self {
        Self {
            tick_ms: DEFAULT_TICK_MS,
            direction_enabled: true,
            duck_direction_during_event: true,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            alert_gap_ms: 200,
            pulse: PulseConfig::default(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MixerError {
    #[error("event queue full ({capacity} jobs pending)")]
    QueueFull { capacity: usize },
    #[error(transparent)]
    Compile(#[from] CompileError),
}

/// A compiled event message waiting for or undergoing playback.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventJob {
    pub id: u64,
    pub event: EventKind,
    pub strategy: CodingStrategy,
    pub enqueued_at: u64,
    /// Alert prefix, gap, then the event pattern.
    pub frames: Arc<FrameSequence>,
    /// Number of leading frames belonging to the alert prefix.
    pub alert_frames: usize,
}

impl EventJob {
    pub fn duration_ms(&self) -> u64 {
        self.frames.duration_ms()
    }
}

/// Realized playback interval of one job, `[start_t, end_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub job_id: u64,
    pub event: EventKind,
    pub strategy: CodingStrategy,
    pub enqueued_at: u64,
    pub start_t: u64,
    pub end_t: u64,
}

/// Frame plus the job transitions that happened on this tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub frame: MotorFrame,
    pub started: Option<TimelineEntry>,
    pub finished: Option<TimelineEntry>,
}

#[derive(Debug, Clone)]
struct Playing {
    job: EventJob,
    next_frame: usize,
    entry: TimelineEntry,
}

#[derive(Debug, Clone)]
pub struct Mixer {
    config: MixerConfig,
    library: Arc<PatternLibrary>,
    queue: VecDeque<EventJob>,
    playing: Option<Playing>,
    direction: Option<DirectionState>,
    timeline: Vec<TimelineEntry>,
    next_id: u64,
}

impl Mixer {
    pub fn new(config: MixerConfig, library: Arc<PatternLibrary>) -> Self {
        Self {
            config,
            library,
            queue: VecDeque::new(),
            playing: None,
            direction: None,
            timeline: Vec::new(),
            next_id: 0,
        }
    }

    pub fn config(&self) -> &MixerConfig {
        &self.config
    }

    pub fn library(&self) -> &PatternLibrary {
        &self.library
    }

    /// Compile the full job sequence (alert, gap, pattern) for an event.
    pub fn compile_job_frames(&self, event: EventKind, strategy: CodingStrategy) -> Result<FrameSequence, CompileError> {
        let tick = self.config.tick_ms;
        let mut frames = compile(self.library.alert(), tick)?;
        frames.pad_zero(self.config.alert_gap_ms.div_ceil(tick) as usize);
        frames.concat(&compile(self.library.pattern(event, strategy), tick)?);
        Ok(frames)
    }

    pub fn enqueue(&mut self, event: EventKind, strategy: CodingStrategy, now: u64) -> Result<EventJob, MixerError> {
        if self.queue.len() >= self.config.queue_capacity {
            return Err(MixerError::QueueFull {
                capacity: self.config.queue_capacity,
            });
        }
        let alert_frames = compile(self.library.alert(), self.config.tick_ms)?.len();
        let job = EventJob {
            id: self.next_id,
            event,
            strategy,
            enqueued_at: now,
            frames: Arc::new(self.compile_job_frames(event, strategy)?),
            alert_frames,
        };
        self.next_id += 1;
        self.queue.push_back(job.clone());
        Ok(job)
    }

    pub fn set_direction(&mut self, state: Option<DirectionState>) {
        self.direction = state;
    }

    pub fn direction(&self) -> Option<DirectionState> {
        self.direction
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// No job playing and none queued.
    pub fn is_idle(&self) -> bool {
        self.playing.is_none() && self.queue.is_empty()
    }

    pub fn tick(&mut self, now: u64) -> MotorFrame {
        self.tick_report(now).frame
    }

    pub fn tick_report(&mut self, now: u64) -> TickOutput {
        let mut started = None;
        if self.playing.is_none() {
            if let Some(job) = self.queue.pop_front() {
                let entry = TimelineEntry {
                    job_id: job.id,
                    event: job.event,
                    strategy: job.strategy,
                    enqueued_at: job.enqueued_at,
                    start_t: now,
                    end_t: now + job.duration_ms(),
                };
                self.timeline.push(entry);
                started = Some(entry);
                self.playing = Some(Playing {
                    job,
                    next_frame: 0,
                    entry,
                });
            }
        }

        let mut finished = None;
        let event_frame = match self.playing.as_mut() {
            Some(p) => {
                let f = p.job.frames.frames[p.next_frame];
                p.next_frame += 1;
                if p.next_frame >= p.job.frames.len() {
                    finished = Some(p.entry);
                    self.playing = None;
                }
                Some(f)
            }
            None => None,
        };

        let direction_frame = match self.direction {
            Some(state) if self.config.direction_enabled => {
                if event_frame.is_some() && self.config.duck_direction_during_event {
                    MotorFrame::zero()
                } else {
                    direction_frame_at(&state, &self.config.pulse, now)
                }
            }
            _ => MotorFrame::zero(),
        };

        let frame = match event_frame {
            Some(e) => direction_frame.max_combine(&e),
            None => direction_frame,
        };
        TickOutput {
            frame,
            started,
            finished,
        }
    }

    /// Jobs whose playback interval overlaps `[from, to)`, in play order.
    pub fn active_timeline(&self, from: u64, to: u64) -> Vec<TimelineEntry> {
        self.timeline
            .iter()
            .filter(|e| e.start_t < to && e.end_t > from)
            .copied()
            .collect()
    }

    pub fn timeline(&self) -> &[TimelineEntry] {
        &self.timeline
    }
}
