#![allow(dead_code)]

use tactvest_core::direction::OdometrySample;

/// A drive around a rectangle: straight legs at 1 m/s joined by in-place
/// turns, sampled every 50 ms on a robot clock starting at `t0`.
pub fn rectangle_drive(t0: u64, legs: usize, leg_s: u64) -> Vec<OdometrySample> {
    let dt = 50;
    let mut out = Vec::new();
    let (mut x, mut y, mut heading) = (0.0f64, 0.0f64, 0.0f64);
    let mut t = t0;
    for _ in 0..legs {
        for _ in 0..leg_s * 1000 / dt {
            let r = heading.to_radians();
            x += r.cos() * dt as f64 / 1000.0;
            y += r.sin() * dt as f64 / 1000.0;
            out.push(OdometrySample::new(t, x, y, heading));
            t += dt;
        }
        for _ in 0..30 {
            heading += 3.0;
            out.push(OdometrySample::new(t, x, y, heading));
            t += dt;
        }
    }
    out
}

pub fn to_jsonl(samples: &[OdometrySample]) -> String {
    samples.iter().map(|s| serde_json::to_string(s).unwrap() + "\n").collect()
}
