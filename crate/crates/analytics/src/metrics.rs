//! Response matching, identification accuracy, selection delay and
//! confusion matrices.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use tactvest_core::{CodingStrategy, EventKind};

use crate::log::{MentalLoad, ResponseEvent, TrialSession};
use crate::schedule::Stimulus;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("session has no stimuli")]
    EmptySession,
    #[error("no answered stimuli")]
    NoMatches,
    #[error("sessions mix strategies {0} and {1}")]
    MixedStrategies(CodingStrategy, CodingStrategy),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Answered { response: ResponseEvent, delay_ms: u64 },
    Miss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedStimulus {
    pub stimulus: Stimulus,
    pub outcome: Outcome,
}

impl MatchedStimulus {
    pub fn is_correct(&self) -> bool {
        matches!(self.outcome, Outcome::Answered { response, .. } if response.chosen == self.stimulus.event)
    }

    pub fn response(&self) -> Option<EventKind> {
        match self.outcome {
            Outcome::Answered { response, .. } => Some(response.chosen),
            Outcome::Miss => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    pub stimuli: Vec<MatchedStimulus>,
    pub spurious: Vec<ResponseEvent>,
}

impl Matching {
    pub fn correct(&self) -> usize {
        self.stimuli.iter().filter(|m| m.is_correct()).count()
    }
}

/// Attribute each response to the most recent stimulus with onset at or
/// before it. A stimulus takes only its first response; later ones, and
/// responses before any stimulus, are spurious.
pub fn match_responses(session: &TrialSession) -> Matching {
    let mut stimuli = session.schedule.stimuli.clone();
    stimuli.sort_by_key(|s| s.onset_ms);
    let mut responses = session.responses.clone();
    responses.sort_by_key(|r| r.t);

    let mut outcomes = vec![Outcome::Miss; stimuli.len()];
    let mut spurious = Vec::new();
    for r in responses {
        let idx = stimuli.partition_point(|s| s.onset_ms <= r.t);
        if idx == 0 {
            spurious.push(r);
            continue;
        }
        let slot = &mut outcomes[idx - 1];
        match slot {
            Outcome::Miss => {
                *slot = Outcome::Answered {
                    response: r,
                    delay_ms: r.t - stimuli[idx - 1].onset_ms,
                }
            }
            Outcome::Answered { .. } => spurious.push(r),
        }
    }

    Matching {
        stimuli: stimuli
            .into_iter()
            .zip(outcomes)
            .map(|(stimulus, outcome)| MatchedStimulus { stimulus, outcome })
            .collect(),
        spurious,
    }
}

pub fn identification_accuracy(matched: &Matching) -> Result<f64, MetricsError> {
    if matched.stimuli.is_empty() {
        return Err(MetricsError::EmptySession);
    }
    Ok(matched.correct() as f64 / matched.stimuli.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayStats {
    pub delays_ms: Vec<u64>,
    pub mean_ms: f64,
}

pub fn selection_delay(matched: &Matching) -> Result<DelayStats, MetricsError> {
    let delays_ms: Vec<u64> = matched
        .stimuli
        .iter()
        .filter_map(|m| match m.outcome {
            Outcome::Answered { delay_ms, .. } => Some(delay_ms),
            Outcome::Miss => None,
        })
        .collect();
    if delays_ms.is_empty() {
        return Err(MetricsError::NoMatches);
    }
    let mean_ms = delays_ms.iter().sum::<u64>() as f64 / delays_ms.len() as f64;
    Ok(DelayStats { delays_ms, mean_ms })
}

/// Rows are stimuli in [`EventKind::ALL`] order; columns are responses, with
/// a final column for misses.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 9]; 8],
}

pub const MISS_COLUMN: usize = 8;

impl ConfusionMatrix {
    pub fn record(&mut self, m: &MatchedStimulus) {
        let col = m.response().map_or(MISS_COLUMN, |e| e.ordinal());
        self.counts[m.stimulus.event.ordinal()][col] += 1;
    }

    pub fn row_total(&self, row: usize) -> u64 {
        self.counts[row].iter().sum()
    }

    pub fn total(&self) -> u64 {
        (0..8).map(|r| self.row_total(r)).sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..8).map(|r| self.counts[r][r]).sum()
    }

    pub fn row_distribution(&self, row: usize) -> Option<[f64; 9]> {
        let n = self.row_total(row);
        (n > 0).then(|| self.counts[row].map(|c| c as f64 / n as f64))
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for r in 0..8 {
            for c in 0..9 {
                self.counts[r][c] += other.counts[r][c];
            }
        }
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("stimulus \\ response");
        for e in EventKind::ALL {
            let _ = write!(out, "\t{}", e.code());
        }
        out.push_str("\tmiss\n");
        for e in EventKind::ALL {
            out.push_str(e.code());
            for c in self.counts[e.ordinal()] {
                let _ = write!(out, "\t{c}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion(sessions: &[TrialSession]) -> Result<ConfusionMatrix, MetricsError> {
    if let Some(first) = sessions.first() {
        if let Some(other) = sessions.iter().find(|s| s.strategy != first.strategy) {
            return Err(MetricsError::MixedStrategies(first.strategy, other.strategy));
        }
    }
    let mut m = ConfusionMatrix::default();
    for s in sessions {
        for ms in &match_responses(s).stimuli {
            m.record(ms);
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub strategy: CodingStrategy,
    pub load: Option<MentalLoad>,
    pub sessions: usize,
    pub stimuli: usize,
    pub correct: usize,
    pub misses: usize,
    pub spurious: usize,
    /// Mean of per-session accuracies.
    pub mean_accuracy: Option<f64>,
    pub pooled_accuracy: Option<f64>,
    /// Mean over all answered stimuli in the group.
    pub mean_delay_ms: Option<f64>,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// One entry per strategy over all loads, then one per (strategy, load).
    pub groups: Vec<GroupMetrics>,
}

impl MetricsReport {
    pub fn group(&self, strategy: CodingStrategy, load: Option<MentalLoad>) -> Option<&GroupMetrics> {
        self.groups.iter().find(|g| g.strategy == strategy && g.load == load)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from(
            "strategy    load             sessions  stimuli  correct  misses  accuracy  delay_ms\n",
        );
        for g in &self.groups {
            let load = g.load.map_or("all", MentalLoad::code);
            let acc = g.mean_accuracy.map_or("-".to_string(), |a| format!("{:.4}", a));
            let delay = g.mean_delay_ms.map_or("-".to_string(), |d| format!("{:.1}", d));
            let _ = writeln!(
                out,
                "{:<11} {:<16} {:>8} {:>8} {:>8} {:>7} {:>9} {:>9}",
                g.strategy.code(),
                load,
                g.sessions,
                g.stimuli,
                g.correct,
                g.misses,
                acc,
                delay
            );
        }
        out
    }
}

fn group_metrics(strategy: CodingStrategy, load: Option<MentalLoad>, sessions: &[&TrialSession]) -> GroupMetrics {
    let mut g = GroupMetrics {
        strategy,
        load,
        sessions: sessions.len(),
        stimuli: 0,
        correct: 0,
        misses: 0,
        spurious: 0,
        mean_accuracy: None,
        pooled_accuracy: None,
        mean_delay_ms: None,
        confusion: ConfusionMatrix::default(),
    };
    let mut acc_sum = 0.0;
    let mut acc_n = 0usize;
    let mut delay_sum = 0u64;
    let mut delay_n = 0usize;
    for s in sessions {
        let m = match_responses(s);
        g.stimuli += m.stimuli.len();
        g.correct += m.correct();
        g.spurious += m.spurious.len();
        for ms in &m.stimuli {
            g.confusion.record(ms);
            match ms.outcome {
                Outcome::Miss => g.misses += 1,
                Outcome::Answered { delay_ms, .. } => {
                    delay_sum += delay_ms;
                    delay_n += 1;
                }
            }
        }
        if let Ok(a) = identification_accuracy(&m) {
            acc_sum += a;
            acc_n += 1;
        }
    }
    if acc_n > 0 {
        g.mean_accuracy = Some(acc_sum / acc_n as f64);
        g.pooled_accuracy = Some(g.correct as f64 / g.stimuli as f64);
    }
    if delay_n > 0 {
        g.mean_delay_ms = Some(delay_sum as f64 / delay_n as f64);
    }
    g
}

/// Metrics partitioned by strategy, and within each strategy by load.
pub fn report(sessions: &[TrialSession]) -> MetricsReport {
    let mut by_strategy: BTreeMap<CodingStrategy, Vec<&TrialSession>> = BTreeMap::new();
    for s in sessions {
        by_strategy.entry(s.strategy).or_default().push(s);
    }
    let mut groups = Vec::new();
    for (strategy, list) in by_strategy {
        groups.push(group_metrics(strategy, None, &list));
        let mut by_load: BTreeMap<MentalLoad, Vec<&TrialSession>> = BTreeMap::new();
        for s in &list {
            by_load.entry(s.load).or_default().push(s);
        }
        for (load, l) in by_load {
            groups.push(group_metrics(strategy, Some(load), &l));
        }
    }
    MetricsReport { groups }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::TrialSchedule;
    use proptest::prelude::*;

    fn session(stimuli: &[(EventKind, u64)], responses: &[(u64, EventKind)]) -> TrialSession {
        TrialSession {
            participant: "p".into(),
            strategy: CodingStrategy::Semantic,
            load: MentalLoad::None,
            trial_index: 1,
            schedule: TrialSchedule {
                seed: 0,
                duration_ms: 60_000,
                min_gap_ms: 2000,
                stimuli: stimuli
                    .iter()
                    .map(|(event, onset_ms)| Stimulus { event: *event, onset_ms: *onset_ms })
                    .collect(),
            },
            responses: responses.iter().map(|(t, chosen)| ResponseEvent { t: *t, chosen: *chosen }).collect(),
        }
    }

    #[test]
    fn single_pair() {
        let m = match_responses(&session(&[(EventKind::Fire, 5000)], &[(6800, EventKind::Fire)]));
        assert_eq!(
            m.stimuli[0].outcome,
            Outcome::Answered { response: ResponseEvent { t: 6800, chosen: EventKind::Fire }, delay_ms: 1800 }
        );
        assert!(m.spurious.is_empty());
    }

    #[test]
    fn unanswered_is_miss() {
        let m = match_responses(&session(&[(EventKind::Fire, 5000)], &[]));
        assert_eq!(m.stimuli[0].outcome, Outcome::Miss);
    }

    #[test]
    fn second_response_is_spurious() {
        let m = match_responses(&session(
            &[(EventKind::Fire, 5000)],
            &[(6000, EventKind::Fire), (6200, EventKind::Biohazard)],
        ));
        assert_eq!(m.spurious, vec![ResponseEvent { t: 6200, chosen: EventKind::Biohazard }]);
    }

    #[test]
    fn response_before_first_stimulus_is_spurious() {
        let m = match_responses(&session(&[(EventKind::Fire, 5000)], &[(100, EventKind::Fire)]));
        assert_eq!(m.spurious.len(), 1);
        assert_eq!(m.stimuli[0].outcome, Outcome::Miss);
    }

    #[test]
    fn late_response_goes_to_latest_stimulus() {
        let m = match_responses(&session(
            &[(EventKind::Fire, 5000), (EventKind::Biohazard, 9000)],
            &[(9500, EventKind::Fire)],
        ));
        assert_eq!(m.stimuli[0].outcome, Outcome::Miss);
        assert!(!m.stimuli[1].is_correct());
        assert_eq!(m.stimuli[1].response(), Some(EventKind::Fire));
    }

    #[test]
    fn accuracy_examples() {
        let stimuli: Vec<(EventKind, u64)> = EventKind::ALL.iter().enumerate().map(|(i, e)| (*e, i as u64 * 7000)).collect();
        let mut responses: Vec<(u64, EventKind)> = stimuli.iter().map(|(e, t)| (t + 1500, *e)).collect();
        let all = session(&stimuli, &responses);
        assert_eq!(identification_accuracy(&match_responses(&all)).unwrap(), 1.0);
        responses[2].1 = EventKind::Fire;
        responses.pop();
        let six = session(&stimuli, &responses);
        assert_eq!(identification_accuracy(&match_responses(&six)).unwrap(), 0.75);
        assert_eq!(identification_accuracy(&Matching::default()), Err(MetricsError::EmptySession));
    }

    #[test]
    fn delay_examples() {
        let s = session(
            &[(EventKind::Fire, 1000), (EventKind::Biohazard, 10_000)],
            &[(2700, EventKind::Fire), (11_900, EventKind::Fire)],
        );
        assert_eq!(selection_delay(&match_responses(&s)).unwrap().mean_ms, 1800.0);
        let one = session(&[(EventKind::Fire, 1000)], &[(2710, EventKind::Fire)]);
        assert_eq!(selection_delay(&match_responses(&one)).unwrap().mean_ms, 1710.0);
        let none = session(&[(EventKind::Fire, 1000)], &[]);
        assert_eq!(selection_delay(&match_responses(&none)), Err(MetricsError::NoMatches));
    }

    #[test]
    fn confusion_examples() {
        let stimuli: Vec<(EventKind, u64)> = EventKind::ALL.iter().enumerate().map(|(i, e)| (*e, i as u64 * 7000)).collect();
        let perfect: Vec<(u64, EventKind)> = stimuli.iter().map(|(e, t)| (t + 1000, *e)).collect();
        let m = confusion(&[session(&stimuli, &perfect)]).unwrap();
        for r in 0..8 {
            for c in 0..9 {
                assert_eq!(m.counts[r][c], u64::from(r == c));
            }
        }

        let swap = |e: EventKind| match e {
            EventKind::RobotError => EventKind::ConnectionLost,
            EventKind::ConnectionLost => EventKind::RobotError,
            other => other,
        };
        let confused: Vec<(u64, EventKind)> = stimuli.iter().map(|(e, t)| (t + 1000, swap(*e))).collect();
        let m = confusion(&[session(&stimuli, &confused)]).unwrap();
        let re = EventKind::RobotError.ordinal();
        let cl = EventKind::ConnectionLost.ordinal();
        for r in 0..8 {
            for c in 0..9 {
                let off = r != c && m.counts[r][c] > 0;
                assert_eq!(off, (r, c) == (re, cl) || (r, c) == (cl, re));
            }
        }

        assert_eq!(confusion(&[]).unwrap(), ConfusionMatrix::default());
        let mut other = session(&stimuli, &perfect);
        other.strategy = CodingStrategy::Positional;
        assert!(matches!(
            confusion(&[session(&stimuli, &perfect), other]),
            Err(MetricsError::MixedStrategies(..))
        ));
    }

    #[test]
    fn report_partitions_by_strategy_and_load() {
        let a = session(&[(EventKind::Fire, 1000)], &[(2000, EventKind::Fire)]);
        let mut b = session(&[(EventKind::Fire, 1000)], &[]);
        b.strategy = CodingStrategy::Positional;
        b.load = MentalLoad::Arithmetic;
        let r = report(&[a, b]);
        assert_eq!(r.groups.len(), 4);
        assert_eq!(r.group(CodingStrategy::Semantic, None).unwrap().mean_accuracy, Some(1.0));
        let p = r.group(CodingStrategy::Positional, Some(MentalLoad::Arithmetic)).unwrap();
        assert_eq!((p.misses, p.mean_accuracy, p.mean_delay_ms), (1, Some(0.0), None));
        assert!(report(&[]).groups.is_empty());
        assert!(r.to_table().contains("positional  arithmetic"));
    }

    fn arb_session() -> impl Strategy<Value = TrialSession> {
        let stim = prop::collection::vec((0usize..8, 0u64..60_000), 0..12);
        let resp = prop::collection::vec((0u64..62_000, 0usize..8), 0..16);
        (stim, resp).prop_map(|(s, r)| {
            let s: Vec<(EventKind, u64)> = s.into_iter().map(|(e, t)| (EventKind::ALL[e], t)).collect();
            let r: Vec<(u64, EventKind)> = r.into_iter().map(|(t, e)| (t, EventKind::ALL[e])).collect();
            session(&s, &r)
        })
    }

    proptest! {
        #[test]
        fn matching_conserves_stimuli_and_responses(s in arb_session()) {
            let m = match_responses(&s);
            prop_assert_eq!(m.stimuli.len(), s.schedule.stimuli.len());
            let answered = m.stimuli.iter().filter(|x| x.response().is_some()).count();
            prop_assert_eq!(answered + m.spurious.len(), s.responses.len());
            for x in &m.stimuli {
                if let Outcome::Answered { response, delay_ms } = x.outcome {
                    prop_assert_eq!(delay_ms, response.t - x.stimulus.onset_ms);
                }
            }
        }

        #[test]
        fn accuracy_bounded_and_miss_lowers_it(s in arb_session()) {
            let m = match_responses(&s);
            if let Ok(a) = identification_accuracy(&m) {
                prop_assert!((0.0..=1.0).contains(&a));
                let mut extra = s.clone();
                // a stimulus after every response can only be missed
                extra.schedule.stimuli.push(Stimulus { event: EventKind::Fire, onset_ms: 100_000 });
                let b = identification_accuracy(&match_responses(&extra)).unwrap();
                if a > 0.0 { prop_assert!(b < a); } else { prop_assert_eq!(b, 0.0); }
            }
        }
    }
}
