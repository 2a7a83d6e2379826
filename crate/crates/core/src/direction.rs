//! Direction and movement display driven by robot odometry.
//!
//! The robot heading is shown relative to a calibrated north on the
//! stomach band: the heading is quantized to one of eight 45° sectors and
//! the two band motors straddling that sector pulse together, slowly when
//! the robot is moving and rapidly when it is static.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{FrameSequence, MotorFrame};
use crate::vest::{band_ring, BandRing, MotorId};

pub const SECTORS: u8 = 8;
pub const SECTOR_WIDTH_DEG: f64 = 45.0;

/// Wrap an angle into `[0, 360)`.
pub fn normalize_deg(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Smallest absolute difference between two angles, in `[0, 180]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = normalize_deg(a - b);
    d.min(360.0 - d)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DirectionError {
    #[error("need at least 2 samples spanning {horizon_ms} ms, got {samples} spanning {span_ms} ms")]
    InsufficientSamples {
        samples: usize,
        span_ms: u64,
        horizon_ms: u64,
    },
    #[error("odometry timestamp {t} does not follow {last}")]
    NonMonotonic { last: u64, t: u64 },
    #[error("odometry sample has a non-finite field")]
    NonFinite,
}

/// Timestamped robot pose in the odometry frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdometrySample {
    /// Milliseconds, robot clock.
    pub t: u64,
    pub x: f64,
    pub y: f64,
    /// Heading in degrees, `[0, 360)`.
    pub theta: f64,
}

impl OdometrySample {
    pub fn new(t: u64, x: f64, y: f64, theta: f64) -> Self {
        Self {
            t,
            x,
            y,
            theta: normalize_deg(theta),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

/// North offset to use for subsequent headings: the sample's own heading.
pub fn calibrate_north(sample: &OdometrySample) -> f64 {
    normalize_deg(sample.theta)
}

/// Perceived direction `phi` in `[0, 360)` relative to calibrated north.
pub fn heading(theta: f64, north_offset: f64) -> f64 {
    normalize_deg(theta - north_offset)
}

/// `round(phi / 45) mod 8`, ties rounding to the higher sector.
pub fn quantize_heading(phi: f64) -> u8 {
    let s = (normalize_deg(phi) / SECTOR_WIDTH_DEG + 0.5).floor() as i64;
    s.rem_euclid(SECTORS as i64) as u8
}

/// The two ring-adjacent band motors whose azimuths straddle the sector
/// centre, counter-clockwise one first.
pub fn sector_to_pair(sector: u8, ring: &BandRing) -> (MotorId, MotorId) {
    let centre = (sector % SECTORS) as f64 * SECTOR_WIDTH_DEG;
    let find = |az: f64| {
        let i = ring
            .azimuths
            .iter()
            .position(|a| angular_distance(*a, az) < 1e-9)
            .expect("band azimuths are the odd multiples of 22.5");
        ring.motors[i]
    };
    (find(centre - 22.5), find(centre + 22.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    Moving,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionConfig {
    pub horizon_ms: u64,
    /// Mean planar speed above which the robot counts as moving, m/s.
    pub speed_threshold: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            horizon_ms: 500,
            speed_threshold: 0.05,
        }
    }
}

/// Classify a window of samples by mean planar speed (path length over
/// elapsed time).
pub fn classify_motion(window: &[OdometrySample], cfg: &MotionConfig) -> Result<Motion, DirectionError> {
    let span_ms = match (window.first(), window.last()) {
        (Some(a), Some(b)) if window.len() >= 2 => b.t.saturating_sub(a.t),
        _ => 0,
    };
    if window.len() < 2 || span_ms < cfg.horizon_ms || span_ms == 0 {
        return Err(DirectionError::InsufficientSamples {
            samples: window.len(),
            span_ms,
            horizon_ms: cfg.horizon_ms,
        });
    }
    let path: f64 = window
        .windows(2)
        .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
        .sum();
    let speed = path / (span_ms as f64 / 1000.0);
    Ok(if speed > cfg.speed_threshold {
        Motion::Moving
    } else {
        Motion::Static
    })
}

/// What the band is currently displaying.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionState {
    pub sector: u8,
    pub motion: Motion,
    pub pair: (MotorId, MotorId),
}

impl DirectionState {
    pub fn new(sector: u8, motion: Motion) -> Self {
        Self {
            sector: sector % SECTORS,
            motion,
            pair: sector_to_pair(sector % SECTORS, &band_ring()),
        }
    }
}

/// Pulse timing for the two motion states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseConfig {
    pub moving_period_ms: u64,
    pub moving_on_ms: u64,
    pub static_period_ms: u64,
    pub static_on_ms: u64,
    pub intensity: u8,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self {
            moving_period_ms: 1000,
            moving_on_ms: 300,
            static_period_ms: 250,
            static_on_ms: 125,
            intensity: 60,
        }
    }
}

/// Band frame at absolute time `t_ms`. Both pair motors pulse in phase.
pub fn direction_frame_at(state: &DirectionState, cfg: &PulseConfig, t_ms: u64) -> MotorFrame {
    let (period, on) = match state.motion {
        Motion::Moving => (cfg.moving_period_ms, cfg.moving_on_ms),
        Motion::Static => (cfg.static_period_ms, cfg.static_on_ms),
    };
    let mut f = MotorFrame::zero();
    if period > 0 && t_ms % period < on {
        f.set(state.pair.0, cfg.intensity);
        f.set(state.pair.1, cfg.intensity);
    }
    f
}

/// `span_ms` worth of direction frames starting at t = 0.
pub fn direction_frames(state: &DirectionState, tick_ms: u32, span_ms: u64, cfg: &PulseConfig) -> FrameSequence {
    let n = span_ms.div_ceil(tick_ms as u64);
    FrameSequence {
        tick_ms,
        frames: (0..n)
            .map(|k| direction_frame_at(state, cfg, k * tick_ms as u64))
            .collect(),
    }
}

/// Sector quantizer that holds the current sector until the heading moves
/// more than `hysteresis_deg` past its boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorTracker {
    pub hysteresis_deg: f64,
    current: Option<u8>,
}

impl Default for SectorTracker {
    fn default() -> Self {
        Self::new(2.0)
    }
}

impl SectorTracker {
    pub fn new(hysteresis_deg: f64) -> Self {
        Self {
            hysteresis_deg,
            current: None,
        }
    }

    pub fn current(&self) -> Option<u8> {
        self.current
    }

    pub fn update(&mut self, phi: f64) -> u8 {
        let next = match self.current {
            Some(s)
                if angular_distance(phi, s as f64 * SECTOR_WIDTH_DEG)
                    <= SECTOR_WIDTH_DEG / 2.0 + self.hysteresis_deg =>
            {
                s
            }
            _ => quantize_heading(phi),
        };
        self.current = Some(next);
        next
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionConfig {
    pub motion: MotionConfig,
    pub pulse: PulseConfig,
    pub hysteresis_deg: f64,
}

impl Default for DirectionConfig {
    fn default() -> Self {
        Self {
            motion: MotionConfig::default(),
            pulse: PulseConfig::default(),
            hysteresis_deg: 2.0,
        }
    }
}

/// Stream processor for one odometry source.
///
/// Until [`DirectionChannel::calibrate`] or [`DirectionChannel::set_north`]
/// is called the odometry frame's own zero heading is north. Motion is
/// reported as static until the window covers the motion horizon.
#[derive(Debug, Clone)]
pub struct DirectionChannel {
    config: DirectionConfig,
    ring: BandRing,
    north: f64,
    tracker: SectorTracker,
    window: VecDeque<OdometrySample>,
    motion: Motion,
    state: Option<DirectionState>,
}

impl DirectionChannel {
    pub fn new(config: DirectionConfig) -> Self {
        Self {
            config,
            ring: band_ring(),
            north: 0.0,
            tracker: SectorTracker::new(config.hysteresis_deg),
            window: VecDeque::new(),
            motion: Motion::Static,
            state: None,
        }
    }

    pub fn config(&self) -> &DirectionConfig {
        &self.config
    }

    pub fn north(&self) -> f64 {
        self.north
    }

    pub fn set_north(&mut self, offset_deg: f64) {
        self.north = normalize_deg(offset_deg);
        self.refresh();
    }

    /// Pin north to the most recent sample's heading. Returns the offset,
    /// or `None` before any sample has arrived.
    pub fn calibrate(&mut self) -> Option<f64> {
        let last = *self.window.back()?;
        self.set_north(calibrate_north(&last));
        Some(self.north)
    }

    pub fn last_sample(&self) -> Option<&OdometrySample> {
        self.window.back()
    }

    pub fn ingest(&mut self, sample: OdometrySample) -> Result<DirectionState, DirectionError> {
        if !sample.is_finite() {
            return Err(DirectionError::NonFinite);
        }
        if let Some(last) = self.window.back() {
            if sample.t <= last.t {
                return Err(DirectionError::NonMonotonic { last: last.t, t: sample.t });
            }
        }
        let sample = OdometrySample::new(sample.t, sample.x, sample.y, sample.theta);
        self.window.push_back(sample);
        let horizon = self.config.motion.horizon_ms;
        // keep the newest sample at least `horizon` old so the window spans it
        while self.window.len() > 2 && self.window[1].t + horizon <= sample.t {
            self.window.pop_front();
        }
        let samples: Vec<OdometrySample> = self.window.iter().copied().collect();
        if let Ok(m) = classify_motion(&samples, &self.config.motion) {
            self.motion = m;
        }
        self.refresh();
        Ok(self.state.expect("set by refresh"))
    }

    fn refresh(&mut self) {
        if let Some(last) = self.window.back() {
            let phi = heading(last.theta, self.north);
            let sector = self.tracker.update(phi);
            self.state = Some(DirectionState {
                sector,
                motion: self.motion,
                pair: sector_to_pair(sector, &self.ring),
            });
        }
    }

    pub fn state(&self) -> Option<DirectionState> {
        self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vest::Panel;
    use proptest::prelude::*;

    #[test]
    fn calibration_examples() {
        let n = calibrate_north(&OdometrySample::new(0, 0.0, 0.0, 90.0));
        assert_eq!(n, 90.0);
        assert_eq!(heading(90.0, n), 0.0);
        assert_eq!(heading(135.0, n), 45.0);
        let n = calibrate_north(&OdometrySample::new(0, 0.0, 0.0, 10.0));
        assert_eq!(heading(350.0, n), 340.0);
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_heading(0.0), 0);
        assert_eq!(quantize_heading(90.0), 2);
        assert_eq!(quantize_heading(22.5), 1);
        assert_eq!(quantize_heading(22.4), 0);
        assert_eq!(quantize_heading(337.5), 0);
        assert_eq!(quantize_heading(337.4), 7);
    }

    #[test]
    fn sweep_gives_eight_contiguous_sectors() {
        // 0.1 degree grid, integer tenths so boundaries are exact
        let sectors: Vec<u8> = (0..3600).map(|k| quantize_heading(k as f64 / 10.0)).collect();
        let mut counts = [0usize; 8];
        for s in &sectors {
            counts[*s as usize] += 1;
        }
        assert!(counts.iter().all(|c| *c == 450), "{counts:?}");
        // number of changes around the circle equals number of sectors
        let changes = (0..3600).filter(|&k| sectors[k] != sectors[(k + 1) % 3600]).count();
        assert_eq!(changes, 8);
    }

    #[test]
    fn pair_examples() {
        let ring = band_ring();
        assert_eq!(sector_to_pair(0, &ring), (MotorId::front(4, 1), MotorId::front(4, 2)));
        let (a, b) = sector_to_pair(2, &ring);
        assert_eq!((a, b), (MotorId::front(4, 3), MotorId::back(4, 3)));
        assert_eq!(ring.azimuth(a), Some(67.5));
        assert_eq!(ring.azimuth(b), Some(112.5));
        let (a, b) = sector_to_pair(4, &ring);
        let mut pair = [a, b];
        pair.sort();
        assert_eq!(pair, [MotorId::back(4, 1), MotorId::back(4, 2)]);
        for s in 0..8 {
            let (a, b) = sector_to_pair(s, &ring);
            assert!(ring.adjacent(a, b));
            let mixed = a.panel() != b.panel();
            assert_eq!(mixed, s == 2 || s == 6, "sector {s}");
        }
        let (a, b) = sector_to_pair(6, &ring);
        assert_eq!((a.panel(), b.panel()), (Panel::Back, Panel::Front));
    }

    fn line(speed: f64) -> Vec<OdometrySample> {
        (0..=10)
            .map(|k| OdometrySample::new(k * 100, speed * k as f64 * 0.1, 0.0, 0.0))
            .collect()
    }

    #[test]
    fn motion_examples() {
        let cfg = MotionConfig::default();
        assert_eq!(classify_motion(&line(0.0), &cfg), Ok(Motion::Static));
        assert_eq!(classify_motion(&line(0.5), &cfg), Ok(Motion::Moving));
        // 0.04 m/s * 1.0 s = 0.04 m over 1.0 s -> 0.04 m/s <= 0.05
        assert_eq!(classify_motion(&line(0.04), &cfg), Ok(Motion::Static));
        assert!(matches!(
            classify_motion(&line(0.5)[..3], &cfg),
            Err(DirectionError::InsufficientSamples { .. })
        ));
        assert!(classify_motion(&[], &cfg).is_err());
    }

    #[test]
    fn burst_counts() {
        let cfg = PulseConfig::default();
        let st = DirectionState::new(0, Motion::Static);
        let seq = direction_frames(&st, 20, 1000, &cfg);
        assert_eq!(seq.len(), 50);
        assert_eq!(seq.active_spans().len(), 4);
        let mv = DirectionState::new(0, Motion::Moving);
        assert_eq!(direction_frames(&mv, 20, 1000, &cfg).active_spans().len(), 1);
        for s in 0..8 {
            for m in [Motion::Moving, Motion::Static] {
                let st = DirectionState::new(s, m);
                let used = direction_frames(&st, 20, 3000, &cfg).motors_used();
                assert!(used.len() <= 2);
                assert!(used.iter().all(|u| *u == st.pair.0 || *u == st.pair.1));
            }
        }
    }

    #[test]
    fn channel_rejects_non_monotonic() {
        let mut ch = DirectionChannel::new(DirectionConfig::default());
        ch.ingest(OdometrySample::new(100, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(
            ch.ingest(OdometrySample::new(100, 0.0, 0.0, 0.0)),
            Err(DirectionError::NonMonotonic { last: 100, t: 100 })
        );
        assert!(ch.ingest(OdometrySample::new(50, 0.0, 0.0, 0.0)).is_err());
        assert_eq!(ch.ingest(OdometrySample::new(200, f64::NAN, 0.0, 0.0)), Err(DirectionError::NonFinite));
    }

    #[test]
    fn channel_tracks_heading_and_motion() {
        let mut ch = DirectionChannel::new(DirectionConfig::default());
        ch.ingest(OdometrySample::new(0, 0.0, 0.0, 90.0)).unwrap();
        assert_eq!(ch.state().unwrap().sector, 2);
        assert_eq!(ch.calibrate(), Some(90.0));
        assert_eq!(ch.state().unwrap().sector, 0);
        let mut st = None;
        for k in 1..=20 {
            st = Some(ch.ingest(OdometrySample::new(k * 100, k as f64 * 0.05, 0.0, 0.0)).unwrap());
        }
        let st = st.unwrap();
        assert_eq!(st.sector, 6);
        assert_eq!(st.motion, Motion::Moving);
        for k in 21..=40 {
            ch.ingest(OdometrySample::new(k * 100, 1.0, 0.0, 0.0)).unwrap();
        }
        assert_eq!(ch.state().unwrap().motion, Motion::Static);
    }

    #[test]
    fn hysteresis_single_toggle() {
        let mut tr = SectorTracker::default();
        let mut shown = vec![tr.update(20.0)];
        for k in 0..200 {
            let phi = 22.5 + if k % 2 == 0 { 1.9 } else { -1.9 };
            shown.push(tr.update(phi));
        }
        let toggles = shown.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(toggles, 0);
        assert_eq!(tr.update(25.0), 1);
    }

    proptest! {
        #[test]
        fn north_invariance(thetas in prop::collection::vec(0.0f64..360.0, 1..50), north in 0.0f64..360.0, shift in -720.0f64..720.0) {
            for th in thetas {
                let a = quantize_heading(heading(th, north));
                let b = quantize_heading(heading(th + shift, north + shift));
                // floating error can only matter on an exact boundary
                let phi = heading(th, north);
                let near_boundary = ((phi - 22.5).rem_euclid(45.0)).min(45.0 - (phi - 22.5).rem_euclid(45.0)) < 1e-6;
                prop_assert!(a == b || near_boundary);
            }
        }

        #[test]
        fn hysteresis_oscillation_toggles_at_most_once(boundary in 0u8..8, start in -2.0f64..2.0, offsets in prop::collection::vec(-2.0f64..=2.0, 1..100)) {
            let b = 22.5 + 45.0 * boundary as f64;
            let mut tr = SectorTracker::default();
            let mut prev = tr.update(b + start);
            let mut toggles = 0;
            for o in offsets {
                let s = tr.update(b + o);
                if s != prev { toggles += 1; }
                prev = s;
            }
            prop_assert!(toggles <= 1);
        }
    }
}
