//! Aggregate trial and path metrics over stored sessions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use tactvest_analytics::log::{trial_sessions, LogRecord};
use tactvest_analytics::metrics::{report, MetricsReport};
use tactvest_analytics::path::{score, summarize, BatchSummary, PathScore, Polyline, ScoreConfig};

use crate::store::{SessionStore, StoreError};

/// Body accepted by the path endpoint. Without `truth` the session's
/// odometry up to submission time is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSubmission {
    pub drawn: Polyline,
    #[serde(default)]
    pub truth: Option<Polyline>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEntry {
    pub session: String,
    pub file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<PathScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportReport {
    pub sessions: Vec<String>,
    pub trials: MetricsReport,
    pub paths: Vec<PathEntry>,
    pub path_summary: BatchSummary,
}

impl ExportReport {
    pub fn to_table(&self) -> String {
        let mut out = format!("sessions: {}\n\n", self.sessions.join(", "));
        out.push_str(&self.trials.to_table());
        if !self.paths.is_empty() {
            let s = &self.path_summary;
            let _ = writeln!(
                out,
                "\npaths: {}  turns ok: {} ({:.0}%)  endpoint ok: {} ({:.0}%)",
                s.records,
                s.turn_passes,
                100.0 * s.turn_pass_rate,
                s.endpoint_passes,
                100.0 * s.endpoint_pass_rate
            );
        }
        out
    }
}

fn score_path(store: &SessionStore, id: &str, records: &[LogRecord], tick_ms: u32, t: u64, file: &str) -> Result<PathScore, String> {
    let bytes = store.read_file(id, file).map_err(|e| e.to_string())?;
    let sub: PathSubmission = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
    let truth = match sub.truth {
        Some(t) => t,
        None => {
            let samples: Vec<_> = records
                .iter()
                .filter_map(|r| match r {
                    LogRecord::Odometry { tick, sample } if tick * u64::from(tick_ms) <= t => Some(*sample),
                    _ => None,
                })
                .collect();
            Polyline::from_odometry(&samples).map_err(|e| format!("odometry truth: {e}"))?
        }
    };
    score(&sub.drawn, &truth, &ScoreConfig::default()).map_err(|e| e.to_string())
}

/// Metrics over the given sessions, partitioned by strategy and load.
pub fn export_metrics(store: &SessionStore, ids: &[String]) -> Result<ExportReport, StoreError> {
    let mut trials = Vec::new();
    let mut paths = Vec::new();
    for id in ids {
        let s = store.load_complete(id)?;
        trials.extend(trial_sessions(&s.records));
        for r in &s.records {
            if let LogRecord::Path { t, file } = r {
                let res = score_path(store, id, &s.records, s.config.engine.tick_ms, *t, file);
                paths.push(PathEntry {
                    session: id.clone(),
                    file: file.clone(),
                    error: res.as_ref().err().cloned(),
                    score: res.ok(),
                });
            }
        }
    }
    let scored: Vec<PathScore> = paths.iter().filter_map(|p| p.score.clone()).collect();
    Ok(ExportReport {
        sessions: ids.to_vec(),
        trials: report(&trials),
        path_summary: summarize(&scored),
        paths,
    })
}
