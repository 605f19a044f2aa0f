//! Append-only run log.
//!
//! Rendered as one record per line with six tab-separated fields:
//! `time kind from to message-kind payload`. Unused fields hold `-`.

use std::fmt::Write as _;

use crate::types::{Endpoint, Message, MessageKind, ProcessId, Status, Time, TimerId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    Random,
    LinkBroken,
    Targeted,
}

impl DropReason {
    fn as_str(self) -> &'static str {
        match self {
            DropReason::Random => "random",
            DropReason::LinkBroken => "link-broken",
            DropReason::Targeted => "targeted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    Sent(Message),
    Delivered(Message),
    Dropped(Message, DropReason),
    /// The target was crashed on arrival, or crashed while it was in flight.
    LostToCrash(Message),
    TimerFired {
        node: Endpoint,
        timer: TimerId,
    },
    StateChange {
        pid: ProcessId,
        status: Status,
    },
    ElectionStarted {
        by: Endpoint,
        verified: bool,
    },
    ElectionEnded {
        by: Endpoint,
        winner: ProcessId,
    },
    CoordinatorAdopted {
        pid: ProcessId,
        coordinator: Option<ProcessId>,
    },
    ProbeTimeout {
        target: ProcessId,
        kind: MessageKind,
    },
    /// No message in flight and no protocol timer pending.
    Quiescent,
    Violation {
        node: Endpoint,
        detail: String,
    },
    Note {
        node: Endpoint,
        detail: String,
    },
    SystemDead,
}

impl TraceEvent {
    pub fn kind_str(&self) -> &'static str {
        match self {
            TraceEvent::Sent(_) => "sent",
            TraceEvent::Delivered(_) => "delivered",
            TraceEvent::Dropped(..) => "dropped",
            TraceEvent::LostToCrash(_) => "lost-to-crash",
            TraceEvent::TimerFired { .. } => "timer-fired",
            TraceEvent::StateChange { .. } => "state-change",
            TraceEvent::ElectionStarted { .. } => "election-started",
            TraceEvent::ElectionEnded { .. } => "election-ended",
            TraceEvent::CoordinatorAdopted { .. } => "coordinator-adopted",
            TraceEvent::ProbeTimeout { .. } => "probe-timeout",
            TraceEvent::Quiescent => "quiescent",
            TraceEvent::Violation { .. } => "violation",
            TraceEvent::Note { .. } => "note",
            TraceEvent::SystemDead => "system-dead",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub time: Time,
    pub event: TraceEvent,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    records: Vec<Record>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record. Times must be non-decreasing.
    pub fn push(&mut self, time: Time, event: TraceEvent) {
        debug_assert!(self.records.last().is_none_or(|r| r.time <= time));
        self.records.push(Record { time, event });
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn end_time(&self) -> Time {
        self.records.last().map_or(0, |r| r.time)
    }

    pub fn sent(&self) -> impl Iterator<Item = (Time, &Message)> {
        self.records.iter().filter_map(|r| match &r.event {
            TraceEvent::Sent(m) => Some((r.time, m)),
            _ => None,
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            write_record(&mut out, r);
            out.push('\n');
        }
        out
    }
}

fn message_payload(m: &Message) -> String {
    let mut s = format!("id={}", m.id);
    if let Some(c) = m.coordinator {
        let _ = write!(s, " coordinator={c}");
    }
    if m.epoch != 0 {
        let _ = write!(s, " epoch={}", m.epoch);
    }
    s
}

fn sanitize(s: &str) -> String {
    s.replace(['\t', '\n'], " ")
}

fn write_record(out: &mut String, r: &Record) {
    let kind = r.event.kind_str();
    let (from, to, mk, payload): (String, String, String, String) = match &r.event {
        TraceEvent::Sent(m) | TraceEvent::Delivered(m) | TraceEvent::LostToCrash(m) => (
            m.from.to_string(),
            m.to.to_string(),
            m.kind.to_string(),
            message_payload(m),
        ),
        TraceEvent::Dropped(m, why) => (
            m.from.to_string(),
            m.to.to_string(),
            m.kind.to_string(),
            format!("{} reason={}", message_payload(m), why.as_str()),
        ),
        TraceEvent::TimerFired { node, timer } => (
            node.to_string(),
            "-".into(),
            "-".into(),
            timer.as_str().into(),
        ),
        TraceEvent::StateChange { pid, status } => (
            pid.to_string(),
            "-".into(),
            "-".into(),
            status.as_str().into(),
        ),
        TraceEvent::ElectionStarted { by, verified } => (
            by.to_string(),
            "-".into(),
            "-".into(),
            format!("verified={verified}"),
        ),
        TraceEvent::ElectionEnded { by, winner } => (
            by.to_string(),
            "-".into(),
            "-".into(),
            format!("winner={winner}"),
        ),
        TraceEvent::CoordinatorAdopted { pid, coordinator } => (
            pid.to_string(),
            "-".into(),
            "-".into(),
            match coordinator {
                Some(c) => format!("coordinator={c}"),
                None => "coordinator=-".into(),
            },
        ),
        TraceEvent::ProbeTimeout { target, kind } => (
            "EC".into(),
            target.to_string(),
            kind.to_string(),
            "-".into(),
        ),
        TraceEvent::Quiescent | TraceEvent::SystemDead => {
            ("-".into(), "-".into(), "-".into(), "-".into())
        }
        TraceEvent::Violation { node, detail } | TraceEvent::Note { node, detail } => {
            (node.to_string(), "-".into(), "-".into(), sanitize(detail))
        }
    };
    let _ = write!(out, "{}\t{kind}\t{from}\t{to}\t{mk}\t{payload}", r.time);
}
