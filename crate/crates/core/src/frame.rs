use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::vest::{MotorId, MOTOR_COUNT};

pub const MAX_INTENSITY: u8 = 100;

/// Intensity command (0..=100) for every motor during one tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MotorFrame(#[serde(with = "intensities")] [u8; MOTOR_COUNT]);

impl Default for MotorFrame {
    fn default() -> Self {
        Self([0; MOTOR_COUNT])
    }
}

impl MotorFrame {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Build a frame from raw values, clamping each to 100.
    pub fn from_values(values: [u8; MOTOR_COUNT]) -> Self {
        Self(values.map(|v| v.min(MAX_INTENSITY)))
    }

    pub fn get(&self, id: MotorId) -> u8 {
        self.0[id.index()]
    }

    pub fn set(&mut self, id: MotorId, value: u8) {
        self.0[id.index()] = value.min(MAX_INTENSITY);
    }

    /// Raise a motor to `value` if it is currently lower.
    pub fn raise(&mut self, id: MotorId, value: u8) {
        let slot = &mut self.0[id.index()];
        *slot = (*slot).max(value.min(MAX_INTENSITY));
    }

    /// Elementwise max of two frames.
    pub fn max_combine(&self, other: &MotorFrame) -> MotorFrame {
        let mut out = *self;
        for (o, v) in out.0.iter_mut().zip(other.0.iter()) {
            *o = (*o).max(*v).min(MAX_INTENSITY);
        }
        out
    }

    pub fn values(&self) -> &[u8; MOTOR_COUNT] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0)
    }

    /// Motors with a non-zero command.
    pub fn active(&self) -> impl Iterator<Item = MotorId> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0)
            .map(|(i, _)| MotorId::from_index(i).expect("index in range"))
    }

    pub fn active_count(&self) -> usize {
        self.0.iter().filter(|v| **v > 0).count()
    }
}

mod intensities {
    use super::MOTOR_COUNT;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; MOTOR_COUNT], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; MOTOR_COUNT], D::Error> {
        let v = Vec::<u8>::deserialize(d)?;
        let len = v.len();
        let arr: [u8; MOTOR_COUNT] = v
            .try_into()
            .map_err(|_| D::Error::custom(format!("expected {MOTOR_COUNT} intensities, got {len}")))?;
        if arr.iter().any(|x| *x > super::MAX_INTENSITY) {
            return Err(D::Error::custom("intensity above 100"));
        }
        Ok(arr)
    }
}

/// Fixed-rate sequence of frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSequence {
    pub tick_ms: u32,
    pub frames: Vec<MotorFrame>,
}

impl FrameSequence {
    pub fn new(tick_ms: u32) -> Self {
        Self {
            tick_ms,
            frames: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration_ms(&self) -> u64 {
        self.frames.len() as u64 * self.tick_ms as u64
    }

    /// Append `other` after this sequence. Both must share a tick.
    pub fn concat(&mut self, other: &FrameSequence) {
        debug_assert_eq!(self.tick_ms, other.tick_ms);
        self.frames.extend_from_slice(&other.frames);
    }

    pub fn pad_zero(&mut self, frames: usize) {
        self.frames.extend(std::iter::repeat_n(MotorFrame::zero(), frames));
    }

    /// Every motor that is non-zero in at least one frame.
    pub fn motors_used(&self) -> std::collections::BTreeSet<MotorId> {
        self.frames.iter().flat_map(|f| f.active().collect::<Vec<_>>()).collect()
    }

    /// Maximal runs of frames where `pred` holds, as `(start, len)`.
    pub fn runs_where(&self, pred: impl Fn(&MotorFrame) -> bool) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, f) in self.frames.iter().enumerate() {
            match (pred(f), start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push((s, i - s));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, self.frames.len() - s));
        }
        runs
    }

    /// Maximal runs of non-zero frames.
    pub fn active_spans(&self) -> Vec<(usize, usize)> {
        self.runs_where(|f| !f.is_zero())
    }

    pub fn to_csv(&self) -> String {
        let mut out = csv_header();
        for (i, f) in self.frames.iter().enumerate() {
            push_csv_row(&mut out, i as u64, f);
        }
        out
    }
}

/// Header line of the frame dump: `tick,m0,...,m39`.
pub fn csv_header() -> String {
    let mut s = String::from("tick");
    for i in 0..MOTOR_COUNT {
        let _ = write!(s, ",m{i}");
    }
    s.push('\n');
    s
}

pub fn push_csv_row(out: &mut String, tick: u64, frame: &MotorFrame) {
    let _ = write!(out, "{tick}");
    for v in frame.values() {
        let _ = write!(out, ",{v}");
    }
    out.push('\n');
}

pub fn csv_row(tick: u64, frame: &MotorFrame) -> String {
    let mut s = String::with_capacity(4 * MOTOR_COUNT + 8);
    push_csv_row(&mut s, tick, frame);
    s
}
