//! Declarative pattern specifications and their compilation to frames.
//!
//! A [`PatternSpec`] is an ordered list of [`Primitive`]s played back to
//! back, the whole list repeated `repeat` times. Every primitive plays its
//! unit `count` times with `gap_ms` of silence in between, so its span is
//! `count * duration_ms + (count - 1) * gap_ms`.
//!
//! Time is sampled at frame starts: frame `k` covers `t = k * tick_ms` and a
//! motor is on in that frame when `t` falls inside one of its activation
//! windows `[start, end)`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{FrameSequence, MotorFrame, MAX_INTENSITY};
use crate::vest::{self, band_ring, MotorId, Region};

pub const DEFAULT_TICK_MS: u32 = 20;
pub const MIN_TICK_MS: u32 = 5;
pub const MAX_TICK_MS: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    /// All target motors on together, `count` times.
    Pulse,
    /// One step at a time along the target path.
    Sweep,
    /// A sweep over the target in spiral order.
    Spiral,
    /// Concentric shells outward, then (optionally) back inward.
    ExpandContract,
    /// All target motors on, constant.
    StaticShape,
    /// A sweep around the stomach band in ring order.
    BandWrap,
}

/// What a primitive acts on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// A catalogue region by name.
    Region(String),
    /// Ordered motors, one per step.
    Path(Vec<MotorId>),
    /// Ordered groups of motors, one group per step (row wavefronts, shells).
    Steps(Vec<Vec<MotorId>>),
}

fn one() -> u32 {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub target: Target,
    pub duration_ms: u32,
    pub intensity: u8,
    #[serde(default = "one")]
    pub count: u32,
    #[serde(default)]
    pub gap_ms: u32,
    /// ExpandContract only: play the inward phase after the outward one.
    #[serde(default = "yes")]
    pub contract: bool,
}

impl Primitive {
    pub fn new(kind: PrimitiveKind, target: Target, duration_ms: u32, intensity: u8) -> Self {
        Self {
            kind,
            target,
            duration_ms,
            intensity,
            count: 1,
            gap_ms: 0,
            contract: true,
        }
    }

    pub fn pulse(region: &str, count: u32, duration_ms: u32, gap_ms: u32, intensity: u8) -> Self {
        Self {
            count,
            gap_ms,
            ..Self::new(PrimitiveKind::Pulse, Target::Region(region.into()), duration_ms, intensity)
        }
    }

    /// Total milliseconds this primitive occupies.
    pub fn span_ms(&self) -> u64 {
        let count = self.count.max(1) as u64;
        count * self.duration_ms as u64 + (count - 1) * self.gap_ms as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub name: String,
    pub primitives: Vec<Primitive>,
    #[serde(default = "one")]
    pub repeat: u32,
}

impl PatternSpec {
    pub fn total_span_ms(&self) -> u64 {
        self.primitives.iter().map(Primitive::span_ms).sum::<u64>() * self.repeat as u64
    }

    /// Frames `compile` will produce at `tick_ms`.
    pub fn frame_count(&self, tick_ms: u32) -> usize {
        self.total_span_ms().div_ceil(tick_ms as u64) as usize
    }

    /// Every motor referenced by any primitive target.
    pub fn motors_referenced(&self) -> BTreeSet<MotorId> {
        self.primitives
            .iter()
            .filter_map(|p| resolve_flat(&p.target).ok())
            .flatten()
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    NonEmptyPrimitives,
    RepeatPositive,
    IntensityRange,
    DurationPositive,
    CountPositive,
    UnknownRegion,
    EmptyTarget,
    BandWrapOffRing,
    TickTooCoarse,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A broken rule, located at a primitive index or at the spec itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Violation {
    pub primitive: Option<usize>,
    pub rule: Rule,
}

impl Violation {
    fn spec(rule: Rule) -> Self {
        Self {
            primitive: None,
            rule,
        }
    }

    fn at(index: usize, rule: Rule) -> Self {
        Self {
            primitive: Some(index),
            rule,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.primitive {
            Some(i) => write!(f, "{}@{}", self.rule, i),
            None => write!(f, "{}@spec", self.rule),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompileError {
    #[error("invalid pattern spec: {}", join(.0))]
    InvalidSpec(Vec<Violation>),
    #[error("primitive {primitive} is shorter than one {tick_ms} ms tick")]
    TickTooCoarse { primitive: usize, tick_ms: u32 },
    #[error("tick {0} ms outside {MIN_TICK_MS}..={MAX_TICK_MS}")]
    TickOutOfRange(u32),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileOptions {
    pub tick_ms: u32,
    /// Ticks during which consecutive sweep steps are both on.
    pub sweep_overlap_ticks: u32,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            tick_ms: DEFAULT_TICK_MS,
            sweep_overlap_ticks: 1,
        }
    }
}

impl CompileOptions {
    pub fn with_tick(tick_ms: u32) -> Self {
        Self {
            tick_ms,
            ..Self::default()
        }
    }
}

fn resolve_flat(target: &Target) -> Result<Vec<MotorId>, vest::VestError> {
    Ok(match target {
        Target::Region(name) => vest::region(name)?.motors,
        Target::Path(p) => p.clone(),
        Target::Steps(s) => s.iter().flatten().copied().collect(),
    })
}

fn target_is_empty(target: &Target) -> bool {
    match target {
        Target::Region(_) => false,
        Target::Path(p) => p.is_empty(),
        Target::Steps(s) => s.is_empty() || s.iter().any(Vec::is_empty),
    }
}

/// Clockwise, outside-in traversal of each panel's bounding box, keeping
/// only the region's motors. Front panel first.
pub fn spiral_order(region: &Region) -> Vec<MotorId> {
    let mut out = Vec::with_capacity(region.motors.len());
    for panel in [vest::Panel::Front, vest::Panel::Back] {
        let on_panel: BTreeSet<MotorId> = region
            .motors
            .iter()
            .filter(|m| m.panel() == panel)
            .copied()
            .collect();
        if on_panel.is_empty() {
            continue;
        }
        let (mut top, mut bottom) = (u8::MAX, 0u8);
        let (mut left, mut right) = (u8::MAX, 0u8);
        for m in &on_panel {
            top = top.min(m.row());
            bottom = bottom.max(m.row());
            left = left.min(m.col());
            right = right.max(m.col());
        }
        let (mut top, mut bottom, mut left, mut right) =
            (top as i32, bottom as i32, left as i32, right as i32);
        let mut cells = Vec::new();
        while top <= bottom && left <= right {
            for c in left..=right {
                cells.push((top, c));
            }
            for r in top + 1..=bottom {
                cells.push((r, right));
            }
            if top < bottom {
                for c in (left..right).rev() {
                    cells.push((bottom, c));
                }
            }
            if left < right {
                for r in (top + 1..bottom).rev() {
                    cells.push((r, left));
                }
            }
            top += 1;
            bottom -= 1;
            left += 1;
            right -= 1;
        }
        for (r, c) in cells {
            let id = MotorId::new(panel, r as u8, c as u8).expect("inside bounding box");
            if on_panel.contains(&id) {
                out.push(id);
            }
        }
    }
    out
}

/// Groups a region's motors into shells of equal Chebyshev distance from
/// the region's centroid, innermost first.
pub fn concentric_shells(region: &Region) -> Vec<Vec<MotorId>> {
    let n = region.motors.len() as f64;
    let cr = region.motors.iter().map(|m| m.row() as f64).sum::<f64>() / n;
    let cc = region.motors.iter().map(|m| m.col() as f64).sum::<f64>() / n;
    // Distances are multiples of 0.5 on this grid once doubled, so key on
    // the doubled, rounded value.
    let key = |m: &MotorId| {
        let d = (m.row() as f64 - cr).abs().max((m.col() as f64 - cc).abs());
        (d * 2.0).round() as i64
    };
    let mut keyed: Vec<(i64, MotorId)> = region.motors.iter().map(|m| (key(m), *m)).collect();
    keyed.sort();
    let mut shells: Vec<Vec<MotorId>> = Vec::new();
    let mut last = None;
    for (k, m) in keyed {
        if last != Some(k) {
            shells.push(Vec::new());
            last = Some(k);
        }
        shells.last_mut().expect("pushed above").push(m);
    }
    shells
}

/// Steps played by a travelling primitive, in order.
fn travel_steps(p: &Primitive) -> Result<Vec<Vec<MotorId>>, vest::VestError> {
    let singletons = |v: Vec<MotorId>| v.into_iter().map(|m| vec![m]).collect::<Vec<_>>();
    Ok(match (p.kind, &p.target) {
        (_, Target::Steps(s)) if p.kind != PrimitiveKind::BandWrap => {
            if p.kind == PrimitiveKind::ExpandContract {
                expand_contract(s.clone(), p.contract)
            } else {
                s.clone()
            }
        }
        (PrimitiveKind::Sweep, t) => singletons(resolve_flat(t)?),
        (PrimitiveKind::Spiral, Target::Region(name)) => singletons(spiral_order(&vest::region(name)?)),
        (PrimitiveKind::Spiral, t) => singletons(resolve_flat(t)?),
        (PrimitiveKind::ExpandContract, Target::Region(name)) => {
            expand_contract(concentric_shells(&vest::region(name)?), p.contract)
        }
        (PrimitiveKind::ExpandContract, t) => expand_contract(singletons(resolve_flat(t)?), p.contract),
        (PrimitiveKind::BandWrap, t) => {
            let ring = band_ring();
            let mut motors = resolve_flat(t)?;
            motors.sort_by_key(|m| ring.position(*m).unwrap_or(usize::MAX));
            motors.dedup();
            singletons(motors)
        }
        (PrimitiveKind::Pulse | PrimitiveKind::StaticShape, t) => vec![resolve_flat(t)?],
    })
}

fn expand_contract(shells: Vec<Vec<MotorId>>, contract: bool) -> Vec<Vec<MotorId>> {
    let mut steps = shells.clone();
    if contract && shells.len() > 1 {
        steps.extend(shells.into_iter().rev().skip(1));
    }
    steps
}

fn is_travelling(kind: PrimitiveKind) -> bool {
    !matches!(kind, PrimitiveKind::Pulse | PrimitiveKind::StaticShape)
}

/// Check a spec against the default tick.
pub fn validate(spec: &PatternSpec) -> Vec<Violation> {
    validate_with(spec, &CompileOptions::default())
}

pub fn validate_with(spec: &PatternSpec, opts: &CompileOptions) -> Vec<Violation> {
    let mut out = Vec::new();
    if spec.primitives.is_empty() {
        out.push(Violation::spec(Rule::NonEmptyPrimitives));
    }
    if spec.repeat == 0 {
        out.push(Violation::spec(Rule::RepeatPositive));
    }
    let ring = band_ring();
    for (i, p) in spec.primitives.iter().enumerate() {
        if p.intensity == 0 || p.intensity > MAX_INTENSITY {
            out.push(Violation::at(i, Rule::IntensityRange));
        }
        if p.duration_ms == 0 {
            out.push(Violation::at(i, Rule::DurationPositive));
        }
        if p.count == 0 {
            out.push(Violation::at(i, Rule::CountPositive));
        }
        if target_is_empty(&p.target) {
            out.push(Violation::at(i, Rule::EmptyTarget));
            continue;
        }
        let steps = match travel_steps(p) {
            Ok(s) => s,
            Err(_) => {
                out.push(Violation::at(i, Rule::UnknownRegion));
                continue;
            }
        };
        if p.kind == PrimitiveKind::BandWrap
            && resolve_flat(&p.target)
                .map(|m| m.iter().any(|id| ring.position(*id).is_none()))
                .unwrap_or(true)
        {
            out.push(Violation::at(i, Rule::BandWrapOffRing));
        }
        if p.duration_ms == 0 {
            continue;
        }
        let tick = opts.tick_ms;
        let unit = if is_travelling(p.kind) {
            p.duration_ms / steps.len().max(1) as u32
        } else {
            p.duration_ms
        };
        // Repeated units need a silent gap of at least one tick to stay distinct.
        let gap_too_short = p.count > 1 && p.kind == PrimitiveKind::Pulse && p.gap_ms < tick;
        if unit < tick || gap_too_short {
            out.push(Violation::at(i, Rule::TickTooCoarse));
        }
    }
    out
}

/// One motor group held on over `[start, end)` milliseconds.
struct Activation {
    motors: Vec<MotorId>,
    start: u64,
    end: u64,
    intensity: u8,
}

fn activations(p: &Primitive, offset: u64, opts: &CompileOptions) -> Vec<Activation> {
    let steps = travel_steps(p).expect("validated");
    let overlap = (opts.sweep_overlap_ticks * opts.tick_ms) as u64;
    let duration = p.duration_ms as u64;
    let mut out = Vec::new();
    for rep in 0..p.count as u64 {
        let unit_start = offset + rep * (duration + p.gap_ms as u64);
        let unit_end = unit_start + duration;
        if is_travelling(p.kind) {
            let n = steps.len() as u64;
            for (i, step) in steps.iter().enumerate() {
                let i = i as u64;
                let start = unit_start + i * duration / n;
                let end = (unit_start + (i + 1) * duration / n + overlap).min(unit_end);
                out.push(Activation {
                    motors: step.clone(),
                    start,
                    end,
                    intensity: p.intensity,
                });
            }
        } else {
            out.push(Activation {
                motors: steps[0].clone(),
                start: unit_start,
                end: unit_end,
                intensity: p.intensity,
            });
        }
    }
    out
}

/// Compile at `tick_ms` with one tick of sweep overlap.
pub fn compile(spec: &PatternSpec, tick_ms: u32) -> Result<FrameSequence, CompileError> {
    compile_with(spec, &CompileOptions::with_tick(tick_ms))
}

pub fn compile_with(spec: &PatternSpec, opts: &CompileOptions) -> Result<FrameSequence, CompileError> {
    let tick = opts.tick_ms;
    if !(MIN_TICK_MS..=MAX_TICK_MS).contains(&tick) {
        return Err(CompileError::TickOutOfRange(tick));
    }
    let violations = validate_with(spec, opts);
    if violations.iter().any(|v| v.rule != Rule::TickTooCoarse) {
        return Err(CompileError::InvalidSpec(violations));
    }
    if let Some(v) = violations.first() {
        return Err(CompileError::TickTooCoarse {
            primitive: v.primitive.unwrap_or(0),
            tick_ms: tick,
        });
    }

    let mut acts = Vec::new();
    let mut offset = 0u64;
    for _ in 0..spec.repeat {
        for p in &spec.primitives {
            acts.extend(activations(p, offset, opts));
            offset += p.span_ms();
        }
    }

    let tick = tick as u64;
    let mut frames = vec![MotorFrame::zero(); offset.div_ceil(tick) as usize];
    for a in &acts {
        let first = a.start.div_ceil(tick) as usize;
        let last = (a.end.div_ceil(tick) as usize).min(frames.len());
        for frame in frames.iter_mut().take(last).skip(first) {
            for m in &a.motors {
                frame.raise(*m, a.intensity);
            }
        }
    }
    Ok(FrameSequence {
        tick_ms: opts.tick_ms,
        frames,
    })
}
