//! Frame sinks and deterministic replay of stored sessions.

use std::io::Write;
use std::sync::Arc;

use thiserror::Error;

use tactvest_analytics::log::LogRecord;
use tactvest_core::frame::{csv_header, push_csv_row};
use tactvest_core::MotorFrame;

use crate::engine::{Engine, EngineError, Input};
use crate::store::{SessionStore, StoreError, FRAMES_FILE};

pub trait FrameSink {
    fn frame(&mut self, tick: u64, frame: &MotorFrame) -> std::io::Result<()>;

    fn finish(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// Discards frames.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl FrameSink for NullSink {
    fn frame(&mut self, _tick: u64, _frame: &MotorFrame) -> std::io::Result<()> {
        Ok(())
    }
}

/// Frame dump in the same CSV layout as the archived `frames.csv`.
pub struct CsvSink<W: Write> {
    out: W,
    row: String,
    header_written: bool,
}

impl<W: Write> CsvSink<W> {
    pub fn new(out: W) -> Self {
        Self {
            out,
            row: String::new(),
            header_written: false,
        }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> FrameSink for CsvSink<W> {
    fn frame(&mut self, tick: u64, frame: &MotorFrame) -> std::io::Result<()> {
        if !self.header_written {
            self.out.write_all(csv_header().as_bytes())?;
            self.header_written = true;
        }
        self.row.clear();
        push_csv_row(&mut self.row, tick, frame);
        self.out.write_all(self.row.as_bytes())
    }

    fn finish(&mut self) -> std::io::Result<()> {
        if !self.header_written {
            self.out.write_all(csv_header().as_bytes())?;
            self.header_written = true;
        }
        self.out.flush()
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("log input at tick {tick} was rejected on replay: {source}")]
    Diverged {
        tick: u64,
        #[source]
        source: EngineError,
    },
    #[error("log inputs are not in tick order at tick {0}")]
    OutOfOrder(u64),
    #[error("sink: {0}")]
    Sink(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplaySummary {
    pub frames: u64,
    pub inputs: usize,
    /// Stimulus and trial-stop records regenerated by the engine.
    pub emitted: Vec<LogRecord>,
}

/// Re-run the engine over the frame-driving inputs of a log.
pub fn replay_records(engine: &mut Engine, records: &[LogRecord], sink: &mut dyn FrameSink) -> Result<ReplaySummary, ReplayError> {
    let end_tick = records
        .iter()
        .rev()
        .find_map(|r| match r {
            LogRecord::End { tick, .. } => Some(*tick),
            _ => None,
        })
        .unwrap_or(0);
    let inputs: Vec<(u64, Input)> = records.iter().filter_map(Input::from_record).collect();
    let mut summary = ReplaySummary {
        inputs: inputs.len(),
        ..ReplaySummary::default()
    };
    let mut next = inputs.into_iter().peekable();
    while engine.tick() < end_tick {
        while let Some((tick, _)) = next.peek() {
            if *tick > engine.tick() {
                break;
            }
            let (tick, input) = next.next().expect("peeked");
            if tick < engine.tick() {
                return Err(ReplayError::OutOfOrder(tick));
            }
            engine.apply(input).map_err(|source| ReplayError::Diverged { tick, source })?;
        }
        let step = engine.step();
        sink.frame(step.tick, &step.frame)?;
        summary.emitted.extend(step.records);
        summary.frames += 1;
    }
    sink.finish()?;
    Ok(summary)
}

/// Replay a completed stored session into `sink`.
pub fn replay(store: &SessionStore, id: &str, sink: &mut dyn FrameSink) -> Result<ReplaySummary, ReplayError> {
    let s = store.load_complete(id)?;
    let mut engine = Engine::new(s.config.engine, Arc::new(s.library));
    replay_records(&mut engine, &s.records, sink)
}

/// Replay and compare with the archived frame dump byte for byte.
pub fn verify(store: &SessionStore, id: &str) -> Result<bool, ReplayError> {
    let mut sink = CsvSink::new(Vec::new());
    replay(store, id, &mut sink)?;
    Ok(sink.into_inner() == store.read_file(id, FRAMES_FILE)?)
}
