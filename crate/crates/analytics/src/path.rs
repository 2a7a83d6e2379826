//! Drawn-path scoring: arc-length resampling, least-squares similarity
//! alignment, turn extraction and turn/endpoint agreement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use tactvest_core::direction::OdometrySample;

pub const DEFAULT_TURN_THRESHOLD_DEG: f64 = 30.0;
pub const DEFAULT_TURN_TOL_DEG: f64 = 20.0;
pub const DEFAULT_ENDPOINT_TOL_M: f64 = 1.0;
pub const SCORE_RESAMPLE_N: usize = 200;
/// Turn detection window, as a fraction of path length.
pub const TURN_WINDOW_FRACTION: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("degenerate path: {0}")]
    DegeneratePath(&'static str),
    #[error("paths have {0} and {1} points; resample both to the same count")]
    LengthMismatch(usize, usize),
    #[error("resample count must be at least 2, got {0}")]
    TooFewPoints(usize),
    #[error("non-finite coordinate")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    #[default]
    Odometry,
    Tablet,
}

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolyline")]
pub struct Polyline {
    points: Vec<Point>,
    #[serde(default)]
    frame: Frame,
}

#[derive(Deserialize)]
struct RawPolyline {
    points: Vec<Point>,
    #[serde(default)]
    frame: Frame,
}

impl TryFrom<RawPolyline> for Polyline {
    type Error = PathError;

    fn try_from(raw: RawPolyline) -> Result<Self, PathError> {
        Polyline::new(raw.points, raw.frame)
    }
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl Polyline {
    /// Drops consecutive duplicate points; at least two distinct points must
    /// remain.
    pub fn new(points: Vec<Point>, frame: Frame) -> Result<Self, PathError> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PathError::NonFinite);
        }
        let mut cleaned: Vec<Point> = Vec::with_capacity(points.len());
        for p in points {
            if cleaned.last() != Some(&p) {
                cleaned.push(p);
            }
        }
        if cleaned.len() < 2 {
            return Err(PathError::DegeneratePath("fewer than two distinct points"));
        }
        Ok(Self { points: cleaned, frame })
    }

    pub fn from_odometry(samples: &[OdometrySample]) -> Result<Self, PathError> {
        Self::new(samples.iter().map(|s| [s.x, s.y]).collect(), Frame::Odometry)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| dist(w[0], w[1])).sum()
    }

    pub fn start(&self) -> Point {
        self.points[0]
    }

    pub fn end(&self) -> Point {
        self.points[self.points.len() - 1]
    }

    /// `n` points equally spaced by arc length, endpoints kept exactly.
    pub fn resample(&self, n: usize) -> Result<Polyline, PathError> {
        if n < 2 {
            return Err(PathError::TooFewPoints(n));
        }
        let total = self.length();
        if total <= 0.0 {
            return Err(PathError::DegeneratePath("zero length"));
        }
        let mut out = Vec::with_capacity(n);
        out.push(self.start());
        let mut seg = 0;
        let mut seg_start = 0.0;
        for k in 1..n - 1 {
            let target = total * k as f64 / (n - 1) as f64;
            loop {
                let l = dist(self.points[seg], self.points[seg + 1]);
                if seg_start + l >= target || seg + 2 == self.points.len() {
                    let u = ((target - seg_start) / l).clamp(0.0, 1.0);
                    let (a, b) = (self.points[seg], self.points[seg + 1]);
                    out.push([a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])]);
                    break;
                }
                seg_start += l;
                seg += 1;
            }
        }
        out.push(self.end());
        // interior samples can coincide only for zero-length input, excluded above
        Ok(Polyline { points: out, frame: self.frame })
    }

    pub fn map(&self, f: impl Fn(Point) -> Point, frame: Frame) -> Result<Polyline, PathError> {
        Polyline::new(self.points.iter().map(|p| f(*p)).collect(), frame)
    }
}

/// Similarity taking the truth frame to the drawn frame:
/// `drawn = scale * R(rotation) * truth + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub rotation_deg: f64,
    pub scale: f64,
    pub translation: [f64; 2],
    /// RMS distance, in truth units, between aligned drawn and truth points.
    pub residual: f64,
}

impl Alignment {
    /// Map a drawn-frame point into the truth frame.
    pub fn to_truth(&self, p: Point) -> Point {
        let (s, c) = (-self.rotation_deg).to_radians().sin_cos();
        let x = (p[0] - self.translation[0]) / self.scale;
        let y = (p[1] - self.translation[1]) / self.scale;
        [c * x - s * y, s * x + c * y]
    }

    pub fn to_drawn(&self, p: Point) -> Point {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        [
            self.scale * (c * p[0] - s * p[1]) + self.translation[0],
            self.scale * (s * p[0] + c * p[1]) + self.translation[1],
        ]
    }
}

fn centroid(p: &[Point]) -> Point {
    let n = p.len() as f64;
    let (sx, sy) = p.iter().fold((0.0, 0.0), |(x, y), q| (x + q[0], y + q[1]));
    [sx / n, sy / n]
}

/// Least-squares similarity fit of `drawn` onto `truth`, point for point.
pub fn align(drawn: &Polyline, truth: &Polyline) -> Result<Alignment, PathError> {
    if drawn.len() != truth.len() {
        return Err(PathError::LengthMismatch(drawn.len(), truth.len()));
    }
    let (cd, ct) = (centroid(&drawn.points), centroid(&truth.points));
    // complex least squares: truth - ct ~ z * (drawn - cd)
    let (mut re, mut im, mut norm) = (0.0, 0.0, 0.0);
    for (d, t) in drawn.points.iter().zip(&truth.points) {
        let (ax, ay) = (d[0] - cd[0], d[1] - cd[1]);
        let (bx, by) = (t[0] - ct[0], t[1] - ct[1]);
        re += ax * bx + ay * by;
        im += ax * by - ay * bx;
        norm += ax * ax + ay * ay;
    }
    if norm <= 0.0 || re.hypot(im) <= 0.0 {
        return Err(PathError::DegeneratePath("no spatial extent"));
    }
    let (zr, zi) = (re / norm, im / norm);
    let fwd = |p: Point| -> Point {
        let (x, y) = (p[0] - cd[0], p[1] - cd[1]);
        [zr * x - zi * y + ct[0], zi * x + zr * y + ct[1]]
    };
    let sq: f64 = drawn
        .points
        .iter()
        .zip(&truth.points)
        .map(|(d, t)| {
            let q = fwd(*d);
            (q[0] - t[0]).powi(2) + (q[1] - t[1]).powi(2)
        })
        .sum();
    let residual = (sq / drawn.len() as f64).sqrt();

    // invert z for the truth -> drawn parameters
    let zabs = zr.hypot(zi);
    let scale = 1.0 / zabs;
    let rotation = -zi.atan2(zr);
    let (s, c) = rotation.sin_cos();
    let rotated_ct = [scale * (c * ct[0] - s * ct[1]), scale * (s * ct[0] + c * ct[1])];
    Ok(Alignment {
        rotation_deg: rotation.to_degrees(),
        scale,
        translation: [cd[0] - rotated_ct[0], cd[1] - rotated_ct[1]],
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    /// Vertex index of the sharpest heading change inside the turn.
    pub arc_index: usize,
    /// Signed angle, positive counter-clockwise.
    pub angle_deg: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnList {
    pub turns: Vec<Turn>,
}

fn wrap180(a: f64) -> f64 {
    let r = (a + 180.0).rem_euclid(360.0) - 180.0;
    if r == -180.0 { 180.0 } else { r }
}

/// Heading changes summed over a sliding window one tenth of the path long.
/// Consecutive same-sign windows at or above the threshold form one turn,
/// whose angle is the total heading change across those windows. Expects an
/// arc-length resampled path.
pub fn extract_turns(p: &Polyline, threshold_deg: f64) -> Result<TurnList, PathError> {
    if p.length() <= 0.0 {
        return Err(PathError::DegeneratePath("zero length"));
    }
    let pts = &p.points;
    if pts.len() < 3 {
        return Ok(TurnList::default());
    }
    let headings: Vec<f64> = pts
        .windows(2)
        .map(|w| (w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0]).to_degrees())
        .collect();
    // deltas[i] is the heading change at vertex i + 1
    let deltas: Vec<f64> = headings.windows(2).map(|w| wrap180(w[1] - w[0])).collect();
    let w = ((TURN_WINDOW_FRACTION * (pts.len() - 1) as f64).round() as usize).clamp(1, deltas.len());

    let mut sum: f64 = deltas[..w].iter().sum();
    let mut sums = vec![sum];
    for j in 1..=deltas.len() - w {
        sum += deltas[j + w - 1] - deltas[j - 1];
        sums.push(sum);
    }

    let mut turns = Vec::new();
    let mut j = 0;
    while j < sums.len() {
        if sums[j].abs() < threshold_deg {
            j += 1;
            continue;
        }
        let sign = sums[j].signum();
        let start = j;
        while j < sums.len() && sums[j].abs() >= threshold_deg && sums[j].signum() == sign {
            j += 1;
        }
        let range = start..(j - 1 + w);
        // recompute from raw deltas to avoid drift in the running sum
        let angle: f64 = deltas[range.clone()].iter().sum();
        let peak = range
            .clone()
            .max_by(|a, b| deltas[*a].abs().total_cmp(&deltas[*b].abs()))
            .expect("non-empty range");
        if angle.abs() >= threshold_deg {
            turns.push(Turn {
                arc_index: peak + 1,
                angle_deg: angle,
            });
        }
    }
    Ok(TurnList { turns })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub turn_tol_deg: f64,
    pub endpoint_tol_m: f64,
    pub turn_threshold_deg: f64,
    pub resample_n: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            turn_tol_deg: DEFAULT_TURN_TOL_DEG,
            endpoint_tol_m: DEFAULT_ENDPOINT_TOL_M,
            turn_threshold_deg: DEFAULT_TURN_THRESHOLD_DEG,
            resample_n: SCORE_RESAMPLE_N,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathScore {
    pub all_turns_matched: bool,
    pub endpoint_ok: bool,
    pub residual: f64,
    pub endpoint_error_m: f64,
    pub alignment: Alignment,
    pub truth_turns: TurnList,
    pub drawn_turns: TurnList,
}

/// Each truth turn, in order, must find a later drawn turn within tolerance.
fn turns_matched(truth: &TurnList, drawn: &TurnList, tol: f64) -> bool {
    let mut next = 0;
    for t in &truth.turns {
        match drawn.turns[next..]
            .iter()
            .position(|d| (d.angle_deg - t.angle_deg).abs() <= tol)
        {
            Some(i) => next += i + 1,
            None => return false,
        }
    }
    true
}

pub fn score(drawn: &Polyline, truth: &Polyline, cfg: &ScoreConfig) -> Result<PathScore, PathError> {
    let d = drawn.resample(cfg.resample_n)?;
    let t = truth.resample(cfg.resample_n)?;
    let alignment = align(&d, &t)?;
    let aligned = d.map(|p| alignment.to_truth(p), Frame::Odometry)?;
    let truth_turns = extract_turns(&t, cfg.turn_threshold_deg)?;
    let drawn_turns = extract_turns(&aligned, cfg.turn_threshold_deg)?;
    let endpoint_error_m = dist(aligned.end(), t.end());
    Ok(PathScore {
        all_turns_matched: turns_matched(&truth_turns, &drawn_turns, cfg.turn_tol_deg),
        endpoint_ok: endpoint_error_m <= cfg.endpoint_tol_m,
        residual: alignment.residual,
        endpoint_error_m,
        alignment,
        truth_turns,
        drawn_turns,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub id: String,
    pub truth: Polyline,
    pub drawn: Polyline,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub records: usize,
    pub turn_passes: usize,
    pub endpoint_passes: usize,
    pub turn_pass_rate: f64,
    pub endpoint_pass_rate: f64,
}

pub fn summarize(scores: &[PathScore]) -> BatchSummary {
    let n = scores.len();
    let turn_passes = scores.iter().filter(|s| s.all_turns_matched).count();
    let endpoint_passes = scores.iter().filter(|s| s.endpoint_ok).count();
    let rate = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    BatchSummary {
        records: n,
        turn_passes,
        endpoint_passes,
        turn_pass_rate: rate(turn_passes),
        endpoint_pass_rate: rate(endpoint_passes),
    }
}

/// Polyline walking `segments` metres, turning by `turns_deg[i]` after
/// segment `i`, starting at the origin heading along +x.
pub fn turtle(segments: &[f64], turns_deg: &[f64], frame: Frame) -> Result<Polyline, PathError> {
    let mut pts = vec![[0.0, 0.0]];
    let mut heading: f64 = 0.0;
    for (i, len) in segments.iter().enumerate() {
        let last = pts[pts.len() - 1];
        let (s, c) = heading.to_radians().sin_cos();
        pts.push([last[0] + len * c, last[1] + len * s]);
        if let Some(t) = turns_deg.get(i) {
            heading += t;
        }
    }
    Polyline::new(pts, frame)
}

/// Random similarity into tablet units.
fn to_tablet(p: &Polyline, rng: &mut ChaCha8Rng) -> Result<Polyline, PathError> {
    let rot = rng.random_range(-180.0..180.0f64).to_radians();
    let scale = rng.random_range(20.0..80.0);
    let (tx, ty) = (rng.random_range(0.0..800.0), rng.random_range(0.0..600.0));
    let (s, c) = rot.sin_cos();
    p.map(
        |q| [scale * (c * q[0] - s * q[1]) + tx, scale * (s * q[0] + c * q[1]) + ty],
        Frame::Tablet,
    )
}

/// A scripted batch with a known number of turn-agreement passes.
///
/// Truth paths have 2 to 4 turns of 60 to 120 degrees joined by 6 to 9 m
/// segments. Passing drawings perturb every turn by at most 10 degrees;
/// failing ones push one turn 30 to 45 degrees off. Drawings are then mapped
/// into tablet units by a random similarity. Returns each record with its
/// constructed label.
pub fn synthetic_batch(seed: u64, total: usize, passes: usize) -> Vec<(PathRecord, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<bool> = (0..total).map(|i| i < passes).collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, pass)| {
            let k = rng.random_range(2..=4);
            let segs: Vec<f64> = (0..=k).map(|_| rng.random_range(6.0..9.0)).collect();
            let turns: Vec<f64> = (0..k)
                .map(|_| {
                    let a = rng.random_range(60.0..120.0);
                    if rng.random_bool(0.5) { a } else { -a }
                })
                .collect();
            let mut drawn_turns: Vec<f64> = turns.iter().map(|t| t + rng.random_range(-10.0..10.0)).collect();
            if !pass {
                let j = rng.random_range(0..k);
                let off = rng.random_range(30.0..45.0);
                drawn_turns[j] = turns[j] + if rng.random_bool(0.5) { off } else { -off };
            }
            let drawn_segs: Vec<f64> = segs.iter().map(|s| s * rng.random_range(0.9..1.1)).collect();
            let truth = turtle(&segs, &turns, Frame::Odometry).expect("non-degenerate");
            let drawn = turtle(&drawn_segs, &drawn_turns, Frame::Tablet).expect("non-degenerate");
            let drawn = to_tablet(&drawn, &mut rng).expect("similarity keeps points distinct");
            (
                PathRecord {
                    id: format!("r{:02}", i + 1),
                    truth,
                    drawn,
                },
                pass,
            )
        })
        .collect()
}
