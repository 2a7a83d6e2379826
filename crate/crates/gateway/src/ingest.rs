//! Line-level validation of the odometry JSON-lines stream.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use tactvest_core::direction::OdometrySample;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("malformed line: {0}")]
    Malformed(String),
    #[error("non-finite pose")]
    NonFinite,
    #[error("timestamp {t} not after {last}")]
    NonMonotonic { last: u64, t: u64 },
}

/// Validates odometry lines and counts the rejects. Accepted timestamps are
/// strictly increasing across all requests of a session.
#[derive(Debug, Clone)]
pub struct OdometryIngest {
    last_t: Option<u64>,
    accepted: Arc<AtomicU64>,
    rejected: Arc<AtomicU64>,
}

impl OdometryIngest {
    pub fn new(accepted: Arc<AtomicU64>, rejected: Arc<AtomicU64>) -> Self {
        Self {
            last_t: None,
            accepted,
            rejected,
        }
    }

    pub fn reset(&mut self) {
        self.last_t = None;
    }

    pub fn rejected(&self) -> u64 {
        self.rejected.load(Ordering::Relaxed)
    }

    pub fn accepted(&self) -> u64 {
        self.accepted.load(Ordering::Relaxed)
    }

    /// Blank lines are skipped and return `None`.
    pub fn line(&mut self, line: &[u8]) -> Option<Result<OdometrySample, IngestError>> {
        let text = match std::str::from_utf8(line) {
            Ok(t) => t.trim(),
            Err(e) => return Some(self.reject(IngestError::Malformed(e.to_string()))),
        };
        if text.is_empty() {
            return None;
        }
        let sample: OdometrySample = match serde_json::from_str(text) {
            Ok(s) => s,
            Err(e) => return Some(self.reject(IngestError::Malformed(e.to_string()))),
        };
        if !sample.is_finite() || !sample.theta.is_finite() {
            return Some(self.reject(IngestError::NonFinite));
        }
        if let Some(last) = self.last_t {
            if sample.t <= last {
                return Some(self.reject(IngestError::NonMonotonic { last, t: sample.t }));
            }
        }
        self.last_t = Some(sample.t);
        self.accepted.fetch_add(1, Ordering::Relaxed);
        Some(Ok(OdometrySample::new(sample.t, sample.x, sample.y, sample.theta)))
    }

    fn reject(&mut self, e: IngestError) -> Result<OdometrySample, IngestError> {
        self.rejected.fetch_add(1, Ordering::Relaxed);
        tracing::warn!("odometry line rejected: {e}");
        Err(e)
    }
}

/// Splits a byte stream into lines across chunk boundaries.
#[derive(Debug, Default)]
pub struct LineSplitter {
    buf: Vec<u8>,
}

impl LineSplitter {
    pub fn push(&mut self, chunk: &[u8], mut each: impl FnMut(&[u8])) {
        self.buf.extend_from_slice(chunk);
        let mut start = 0;
        while let Some(pos) = self.buf[start..].iter().position(|b| *b == b'\n') {
            each(&self.buf[start..start + pos]);
            start += pos + 1;
        }
        self.buf.drain(..start);
    }

    pub fn finish(&mut self, mut each: impl FnMut(&[u8])) {
        if !self.buf.is_empty() {
            each(&self.buf);
            self.buf.clear();
        }
    }
}
