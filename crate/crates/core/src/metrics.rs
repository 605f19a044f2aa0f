//! Trace analysis: message accounting, redundant and stalled elections,
//! intervals with more than one coordinator, and closed-form message counts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::protocol::Algorithm;
use crate::trace::{Trace, TraceEvent};
use crate::types::{correctness_predicate, MessageKind, ProcessId, Status, SystemView, Time};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("message {id} delivered at t={time} was never sent")]
    DeliveredWithoutSent { id: u64, time: Time },
    #[error("trace time goes backwards at record {index}")]
    TimeRegression { index: usize },
}

/// A span of quiescent points at which live processes disagree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiCoordinatorInterval {
    pub start: Time,
    pub end: Time,
    pub coordinators: BTreeSet<ProcessId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetricsReport {
    /// Sent messages per kind. A probe that timed out is charged its
    /// missing reply, so every probe exchange costs two.
    pub messages_sent_by_kind: BTreeMap<MessageKind, u64>,
    pub total_messages: u64,
    /// Plain count of `Sent` records.
    pub raw_sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub lost_to_crash: u64,
    pub elections_started: u64,
    pub redundant_elections: u64,
    /// Redundant elections won by the coordinator they replaced.
    pub rewin_elections: u64,
    /// Elections with no announcement anywhere after them.
    pub stalled_elections: u64,
    pub multi_coordinator_intervals: Vec<MultiCoordinatorInterval>,
    pub final_view_correct: bool,
    pub violations: u64,
    pub system_dead: bool,
    pub liveness_failure: bool,
}

impl MetricsReport {
    pub fn count(&self, kind: MessageKind) -> u64 {
        self.messages_sent_by_kind.get(&kind).copied().unwrap_or(0)
    }

    /// Value of a named metric, as used by scenario assertions.
    pub fn metric(&self, name: &str) -> Option<u64> {
        let v = match name {
            "total_messages" => self.total_messages,
            "raw_sent" => self.raw_sent,
            "delivered" => self.delivered,
            "dropped" => self.dropped,
            "lost_to_crash" => self.lost_to_crash,
            "elections_started" => self.elections_started,
            "redundant_elections" => self.redundant_elections,
            "rewin_elections" => self.rewin_elections,
            "stalled_elections" => self.stalled_elections,
            "multi_coordinator_intervals" => self.multi_coordinator_intervals.len() as u64,
            "final_view_correct" => self.final_view_correct as u64,
            "violations" => self.violations,
            "system_dead" => self.system_dead as u64,
            "liveness_failure" => self.liveness_failure as u64,
            other => {
                let kind = other
                    .strip_prefix("messages.")?
                    .parse::<MessageKind>()
                    .ok()?;
                self.count(kind)
            }
        };
        Some(v)
    }

    pub const METRIC_NAMES: [&'static str; 14] = [
        "total_messages",
        "raw_sent",
        "delivered",
        "dropped",
        "lost_to_crash",
        "elections_started",
        "redundant_elections",
        "rewin_elections",
        "stalled_elections",
        "multi_coordinator_intervals",
        "final_view_correct",
        "violations",
        "system_dead",
        "liveness_failure",
    ];
}

struct OpenElection {
    prior: ProcessId,
    prior_alive: bool,
    verified: bool,
}

/// Replays `trace` and reports the metrics. `view` is the final system view.
pub fn analyze(trace: &Trace, view: &SystemView) -> Result<MetricsReport, AnalysisError> {
    let mut r = MetricsReport::default();
    let mut sent_ids = BTreeSet::new();
    let mut status: BTreeMap<ProcessId, Status> = BTreeMap::new();
    let mut belief: BTreeMap<ProcessId, Option<ProcessId>> = BTreeMap::new();
    let mut prior = view.ids().last().unwrap_or(ProcessId(0));
    let mut open: Vec<OpenElection> = Vec::new();
    let mut conflict: Option<MultiCoordinatorInterval> = None;
    let mut last_time = 0;

    for (index, rec) in trace.records().iter().enumerate() {
        if rec.time < last_time {
            return Err(AnalysisError::TimeRegression { index });
        }
        last_time = rec.time;
        match &rec.event {
            TraceEvent::Sent(m) => {
                sent_ids.insert(m.id);
                r.raw_sent += 1;
                *r.messages_sent_by_kind.entry(m.kind).or_default() += 1;
            }
            TraceEvent::Delivered(m) => {
                if !sent_ids.contains(&m.id) {
                    return Err(AnalysisError::DeliveredWithoutSent {
                        id: m.id,
                        time: rec.time,
                    });
                }
                r.delivered += 1;
            }
            TraceEvent::Dropped(..) => r.dropped += 1,
            TraceEvent::LostToCrash(_) => r.lost_to_crash += 1,
            TraceEvent::StateChange { pid, status: s } => {
                status.insert(*pid, *s);
            }
            TraceEvent::CoordinatorAdopted { pid, coordinator } => {
                belief.insert(*pid, *coordinator);
            }
            TraceEvent::ElectionStarted { verified, .. } => {
                r.elections_started += 1;
                let prior_alive = status.get(&prior).is_some_and(|s| s.is_alive());
                open.push(OpenElection {
                    prior,
                    prior_alive,
                    verified: *verified,
                });
            }
            TraceEvent::ElectionEnded { winner, .. } => {
                for e in open.drain(..) {
                    let unverified_alive = !e.verified && e.prior_alive;
                    let rewin = *winner == e.prior;
                    if unverified_alive || rewin {
                        r.redundant_elections += 1;
                    }
                    if rewin {
                        r.rewin_elections += 1;
                    }
                }
                prior = *winner;
            }
            TraceEvent::ProbeTimeout { kind, .. } => {
                if let Some(reply) = kind.reply() {
                    *r.messages_sent_by_kind.entry(reply).or_default() += 1;
                }
            }
            TraceEvent::Quiescent => {
                let held: BTreeSet<ProcessId> = belief
                    .iter()
                    .filter(|(p, _)| status.get(p) == Some(&Status::Up))
                    .filter_map(|(_, c)| *c)
                    .collect();
                if held.len() >= 2 {
                    let iv = conflict.get_or_insert_with(|| MultiCoordinatorInterval {
                        start: rec.time,
                        end: rec.time,
                        coordinators: BTreeSet::new(),
                    });
                    iv.end = rec.time;
                    iv.coordinators.extend(held);
                } else if let Some(mut iv) = conflict.take() {
                    iv.end = rec.time;
                    r.multi_coordinator_intervals.push(iv);
                }
            }
            TraceEvent::Violation { .. } => r.violations += 1,
            TraceEvent::SystemDead => r.system_dead = true,
            TraceEvent::TimerFired { .. } | TraceEvent::Note { .. } => {}
        }
    }
    if let Some(mut iv) = conflict.take() {
        iv.end = trace.end_time();
        r.multi_coordinator_intervals.push(iv);
    }
    r.stalled_elections = open.len() as u64;
    r.total_messages = r.messages_sent_by_kind.values().sum();
    r.final_view_correct = correctness_predicate(view);
    r.liveness_failure = !r.final_view_correct || r.stalled_elections > 0 || r.system_dead;
    Ok(r)
}

/// Sent records with `t0 <= time <= t1`.
pub fn messages_between(trace: &Trace, t0: Time, t1: Time) -> u64 {
    trace.sent().filter(|(t, _)| (t0..=t1).contains(t)).count() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    /// Lowest id detects the crash of the highest.
    WorstDetect,
    /// Process `p` detects the crash of the highest.
    BestDetect,
    /// Process `p` recovers into an otherwise healthy system.
    RecoveryQuery,
    EcBestWinnerIsNMinus1,
    EcReporterIsHighest,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::WorstDetect,
        ScenarioKind::BestDetect,
        ScenarioKind::RecoveryQuery,
        ScenarioKind::EcBestWinnerIsNMinus1,
        ScenarioKind::EcReporterIsHighest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::WorstDetect => "worst-detect",
            ScenarioKind::BestDetect => "best-detect",
            ScenarioKind::RecoveryQuery => "recovery-query",
            ScenarioKind::EcBestWinnerIsNMinus1 => "ec-best-winner-is-n-1",
            ScenarioKind::EcReporterIsHighest => "ec-reporter-is-highest",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown scenario kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expected {
    Exact(u64),
    /// Inclusive bounds.
    Between(u64, u64),
}

impl Expected {
    pub fn contains(self, v: u64) -> bool {
        match self {
            Expected::Exact(e) => v == e,
            Expected::Between(lo, hi) => (lo..=hi).contains(&v),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormulaError {
    #[error("need n >= 2 and 1 <= p <= n, got n={n} p={p}")]
    OutOfRange { n: u64, p: u64 },
    #[error("no closed form for {algorithm} in scenario {kind}")]
    NoFormula {
        algorithm: Algorithm,
        kind: ScenarioKind,
    },
}

/// Closed-form message counts. The Bully entry is a bracket: elections plus
/// the announcement at the low end, every answer added at the high end.
pub fn expected_messages(
    algorithm: Algorithm,
    n: u64,
    p: u64,
    kind: ScenarioKind,
) -> Result<Expected, FormulaError> {
    if n < 2 || p < 1 || p > n {
        return Err(FormulaError::OutOfRange { n, p });
    }
    use Algorithm::*;
    use ScenarioKind::*;
    let e = match (algorithm, kind) {
        (Kordafshari | Mamun, WorstDetect) => Expected::Exact(3 * n - 1),
        (Kordafshari | Mamun, BestDetect) => Expected::Exact((n - p) + n),
        (Mamun, RecoveryQuery) => Expected::Exact(2 * (n - p)),
        (Ec, RecoveryQuery) => Expected::Exact(2),
        (Ec, EcBestWinnerIsNMinus1) => Expected::Exact(1 + 2 + 2 + n),
        (Ec, EcReporterIsHighest) => Expected::Exact(1 + 2 + n),
        (Bully, WorstDetect | BestDetect) => {
            let p = if kind == WorstDetect { 1 } else { p };
            let k = n - p;
            Expected::Between(k * (k + 1) / 2 + n, k * k + n)
        }
        _ => return Err(FormulaError::NoFormula { algorithm, kind }),
    };
    Ok(e)
}

/// Least-squares fit `y = a*x^2 + b*x + c`. Returns `(a, b, c, r_squared)`,
/// or `None` with fewer than three distinct x values.
pub fn quadratic_fit(points: &[(f64, f64)]) -> Option<(f64, f64, f64, f64)> {
    let distinct: BTreeSet<u64> = points.iter().map(|(x, _)| x.to_bits()).collect();
    if distinct.len() < 3 {
        return None;
    }
    let mut s = [0.0f64; 5];
    let mut t = [0.0f64; 3];
    for &(x, y) in points {
        let mut xp = 1.0;
        for (i, si) in s.iter_mut().enumerate() {
            *si += xp;
            if i < 3 {
                t[i] += xp * y;
            }
            xp *= x;
        }
    }
    // Normal equations in the unknowns (c, b, a).
    let mut m = [
        [s[0], s[1], s[2], t[0]],
        [s[1], s[2], s[3], t[1]],
        [s[2], s[3], s[4], t[2]],
    ];
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        m.swap(col, pivot);
        if m[col][col].abs() < 1e-12 {
            return None;
        }
        for row in 0..3 {
            if row != col {
                let f = m[row][col] / m[col][col];
                let pivot_row = m[col];
                for (x, p) in m[row].iter_mut().zip(pivot_row).skip(col) {
                    *x -= f * p;
                }
            }
        }
    }
    let c = m[0][3] / m[0][0];
    let b = m[1][3] / m[1][1];
    let a = m[2][3] / m[2][2];
    let mean = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean).powi(2)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|&(x, y)| (y - (a * x * x + b * x + c)).powi(2))
        .sum();
    let r2 = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Some((a, b, c, r2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Endpoint, Message};

    fn msg(id: u64, kind: MessageKind) -> Message {
        Message {
            id,
            kind,
            from: ProcessId(1).into(),
            to: Endpoint::Commission,
            coordinator: None,
            epoch: 0,
            send_time: 0,
        }
    }

    fn stable(n: u32) -> SystemView {
        SystemView::stable((1..=n).map(ProcessId))
    }

    fn seeded(n: u32) -> Trace {
        let mut t = Trace::new();
        for p in 1..=n {
            t.push(
                0,
                TraceEvent::StateChange {
                    pid: ProcessId(p),
                    status: Status::Up,
                },
            );
            t.push(
                0,
                TraceEvent::CoordinatorAdopted {
                    pid: ProcessId(p),
                    coordinator: Some(ProcessId(n)),
                },
            );
        }
        t
    }

    #[test]
    fn fault_free_is_all_zero() {
        let mut t = seeded(4);
        t.push(0, TraceEvent::Quiescent);
        let r = analyze(&t, &stable(4)).unwrap();
        assert_eq!(r.total_messages, 0);
        assert_eq!(r.elections_started, 0);
        assert!(r.final_view_correct);
        assert!(r.multi_coordinator_intervals.is_empty());
    }

    #[test]
    fn delivery_without_send_is_rejected() {
        let mut t = Trace::new();
        t.push(3, TraceEvent::Delivered(msg(7, MessageKind::Election)));
        assert_eq!(
            analyze(&t, &stable(2)),
            Err(AnalysisError::DeliveredWithoutSent { id: 7, time: 3 })
        );
    }

    #[test]
    fn election_with_live_coordinator_is_redundant() {
        let mut t = seeded(3);
        t.push(
            5,
            TraceEvent::ElectionStarted {
                by: ProcessId(1).into(),
                verified: false,
            },
        );
        t.push(
            9,
            TraceEvent::ElectionEnded {
                by: ProcessId(3).into(),
                winner: ProcessId(3),
            },
        );
        let r = analyze(&t, &stable(3)).unwrap();
        assert_eq!((r.elections_started, r.redundant_elections), (1, 1));
    }

    #[test]
    fn verified_election_is_not_redundant() {
        let mut t = seeded(3);
        t.push(
            5,
            TraceEvent::StateChange {
                pid: ProcessId(3),
                status: Status::Slow,
            },
        );
        t.push(
            6,
            TraceEvent::ElectionStarted {
                by: Endpoint::Commission,
                verified: true,
            },
        );
        t.push(
            9,
            TraceEvent::ElectionEnded {
                by: Endpoint::Commission,
                winner: ProcessId(2),
            },
        );
        let r = analyze(&t, &stable(3)).unwrap();
        assert_eq!(r.redundant_elections, 0);
    }

    #[test]
    fn unfinished_election_is_stalled() {
        let mut t = seeded(3);
        t.push(
            5,
            TraceEvent::ElectionStarted {
                by: ProcessId(1).into(),
                verified: false,
            },
        );
        let r = analyze(&t, &stable(3)).unwrap();
        assert_eq!(r.stalled_elections, 1);
        assert!(r.liveness_failure);
    }

    #[test]
    fn disagreement_at_quiescence_opens_an_interval() {
        let mut t = seeded(3);
        t.push(
            4,
            TraceEvent::CoordinatorAdopted {
                pid: ProcessId(1),
                coordinator: Some(ProcessId(2)),
            },
        );
        t.push(4, TraceEvent::Quiescent);
        t.push(8, TraceEvent::Quiescent);
        t.push(
            9,
            TraceEvent::CoordinatorAdopted {
                pid: ProcessId(1),
                coordinator: Some(ProcessId(3)),
            },
        );
        t.push(9, TraceEvent::Quiescent);
        let r = analyze(&t, &stable(3)).unwrap();
        assert_eq!(r.multi_coordinator_intervals.len(), 1);
        let iv = &r.multi_coordinator_intervals[0];
        assert_eq!((iv.start, iv.end), (4, 9));
        assert_eq!(iv.coordinators, [ProcessId(2), ProcessId(3)].into());
    }

    #[test]
    fn timed_out_probes_are_charged_a_reply() {
        let mut t = Trace::new();
        t.push(1, TraceEvent::Sent(msg(1, MessageKind::Verify)));
        t.push(
            25,
            TraceEvent::ProbeTimeout {
                target: ProcessId(2),
                kind: MessageKind::Verify,
            },
        );
        t.push(26, TraceEvent::Sent(msg(2, MessageKind::Alive)));
        t.push(
            50,
            TraceEvent::ProbeTimeout {
                target: ProcessId(1),
                kind: MessageKind::Alive,
            },
        );
        let r = analyze(&t, &stable(2)).unwrap();
        assert_eq!(r.raw_sent, 2);
        assert_eq!(r.total_messages, 4);
        assert_eq!(r.count(MessageKind::AliveReply), 1);
    }

    #[test]
    fn formula_examples() {
        use Algorithm::*;
        use ScenarioKind::*;
        assert_eq!(
            expected_messages(Kordafshari, 6, 1, WorstDetect),
            Ok(Expected::Exact(17))
        );
        assert_eq!(
            expected_messages(Ec, 6, 1, EcBestWinnerIsNMinus1),
            Ok(Expected::Exact(11))
        );
        assert_eq!(
            expected_messages(Ec, 6, 1, RecoveryQuery),
            Ok(Expected::Exact(2))
        );
        assert!(expected_messages(Kordafshari, 6, 1, RecoveryQuery).is_err());
        assert!(expected_messages(Ec, 1, 1, RecoveryQuery).is_err());
    }

    #[test]
    fn fit_recovers_exact_quadratic() {
        let pts: Vec<_> = (3..10)
            .map(|x| (x as f64, 2.0 * (x * x) as f64 - 3.0 * x as f64 + 1.0))
            .collect();
        let (a, b, c, r2) = quadratic_fit(&pts).unwrap();
        assert!((a - 2.0).abs() < 1e-6 && (b + 3.0).abs() < 1e-6 && (c - 1.0).abs() < 1e-6);
        assert!(r2 > 0.999_999);
    }
}
