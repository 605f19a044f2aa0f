//! Algorithm-agnostic domain types shared by the simulator, the protocols and
//! the metrics layer.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

/// Simulated time, in abstract units.
pub type Time = u64;

/// Number of members inside the election commission (one chief plus four
/// commissioners). The commission is addressed as a single group endpoint, so
/// this value is informational only.
pub const COMMISSION_SIZE: usize = 5;

/// A process identity. The id doubles as the election priority: a larger id
/// always wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcessId(pub u32);

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for ProcessId {
    fn from(id: u32) -> Self {
        ProcessId(id)
    }
}

/// Where a message comes from or goes to: an ordinary process, or the
/// election commission's group address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    Process(ProcessId),
    Commission,
}

impl Endpoint {
    pub fn process(self) -> Option<ProcessId> {
        match self {
            Endpoint::Process(pid) => Some(pid),
            Endpoint::Commission => None,
        }
    }
}

impl From<ProcessId> for Endpoint {
    fn from(pid: ProcessId) -> Self {
        Endpoint::Process(pid)
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Process(pid) => write!(f, "{pid}"),
            Endpoint::Commission => f.write_str("EC"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    Election,
    Answer,
    Coordinator,
    Grant,
    Query,
    QueryAnswer,
    Alive,
    AliveReply,
    Verify,
    VerifyReply,
    Stop,
}

impl MessageKind {
    pub const ALL: [MessageKind; 11] = [
        MessageKind::Election,
        MessageKind::Answer,
        MessageKind::Coordinator,
        MessageKind::Grant,
        MessageKind::Query,
        MessageKind::QueryAnswer,
        MessageKind::Alive,
        MessageKind::AliveReply,
        MessageKind::Verify,
        MessageKind::VerifyReply,
        MessageKind::Stop,
    ];

    /// Kinds that must carry a coordinator id.
    pub fn carries_coordinator(self) -> bool {
        matches!(self, MessageKind::Coordinator | MessageKind::QueryAnswer)
    }

    /// Reply kind for the two EC probes.
    pub fn reply(self) -> Option<MessageKind> {
        match self {
            MessageKind::Alive => Some(MessageKind::AliveReply),
            MessageKind::Verify => Some(MessageKind::VerifyReply),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Election => "election",
            MessageKind::Answer => "answer",
            MessageKind::Coordinator => "coordinator",
            MessageKind::Grant => "grant",
            MessageKind::Query => "query",
            MessageKind::QueryAnswer => "query-answer",
            MessageKind::Alive => "alive",
            MessageKind::AliveReply => "alive-reply",
            MessageKind::Verify => "verify",
            MessageKind::VerifyReply => "verify-reply",
            MessageKind::Stop => "stop",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MessageKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MessageKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown message kind `{s}`"))
    }
}

/// A message travelling through the simulated network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    /// Unique per run; pairs `Sent` and `Delivered` trace records.
    pub id: u64,
    pub kind: MessageKind,
    pub from: Endpoint,
    pub to: Endpoint,
    /// Present iff `kind` is `Coordinator` or `QueryAnswer`.
    pub coordinator: Option<ProcessId>,
    /// Announcement epoch stamped by the commission; zero elsewhere.
    pub epoch: u64,
    pub send_time: Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Status {
    Up,
    Crashed,
    /// Receives messages but acts on none of them until marked normal again.
    Slow,
}

impl Status {
    /// Not crashed. A slow process is still alive, only unresponsive.
    pub fn is_alive(self) -> bool {
        !matches!(self, Status::Crashed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Up => "up",
            Status::Crashed => "crashed",
            Status::Slow => "slow",
        }
    }
}

/// Named timers. Each endpoint holds at most one live instance of each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimerId {
    /// The process's coordinator-failure detector. Fault schedules fire it
    /// directly to model "process p notices the coordinator is down".
    FailureCheck,
    AnswerWait,
    CoordinatorWait,
    Collect,
    Suppress,
    GrantWait,
    BroadcastWait,
    QueryWait,
    Probe,
}

impl TimerId {
    pub fn as_str(self) -> &'static str {
        match self {
            TimerId::FailureCheck => "failure-check",
            TimerId::AnswerWait => "answer-wait",
            TimerId::CoordinatorWait => "coordinator-wait",
            TimerId::Collect => "collect",
            TimerId::Suppress => "suppress",
            TimerId::GrantWait => "grant-wait",
            TimerId::BroadcastWait => "broadcast-wait",
            TimerId::QueryWait => "query-wait",
            TimerId::Probe => "probe",
        }
    }
}

/// Per-process state tracked by the simulator. Protocol-specific state lives
/// inside each protocol implementation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeState {
    pub pid: ProcessId,
    pub status: Status,
    pub believed_coordinator: Option<ProcessId>,
    pub pending_timers: BTreeSet<(TimerId, Time)>,
}

impl NodeState {
    pub fn new(pid: ProcessId, believed: Option<ProcessId>) -> Self {
        Self {
            pid,
            status: Status::Up,
            believed_coordinator: believed,
            pending_timers: BTreeSet::new(),
        }
    }
}

/// Snapshot of the commission as seen from outside.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommissionView {
    pub current_coordinator: Option<ProcessId>,
    pub busy: bool,
}

/// The whole system at one instant. Membership never changes during a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemView {
    pub processes: BTreeMap<ProcessId, NodeState>,
    pub ec: Option<CommissionView>,
    pub now: Time,
}

impl SystemView {
    /// All processes up, each believing the highest id is coordinator.
    pub fn stable(ids: impl IntoIterator<Item = ProcessId>) -> Self {
        let ids: BTreeSet<ProcessId> = ids.into_iter().collect();
        let top = ids.iter().next_back().copied();
        Self {
            processes: ids.iter().map(|&p| (p, NodeState::new(p, top))).collect(),
            ec: None,
            now: 0,
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ProcessId> + '_ {
        self.processes.keys().copied()
    }

    pub fn status(&self, pid: ProcessId) -> Option<Status> {
        self.processes.get(&pid).map(|n| n.status)
    }

    pub fn set_status(&mut self, pid: ProcessId, status: Status) {
        if let Some(node) = self.processes.get_mut(&pid) {
            node.status = status;
        }
    }

    pub fn set_believed(&mut self, pid: ProcessId, coordinator: Option<ProcessId>) {
        if let Some(node) = self.processes.get_mut(&pid) {
            node.believed_coordinator = coordinator;
        }
    }
}

/// The highest id whose status is `Up` and which is not excluded.
pub fn highest_alive(view: &SystemView, exclude: &BTreeSet<ProcessId>) -> Option<ProcessId> {
    view.processes
        .values()
        .rev()
        .find(|n| n.status == Status::Up && !exclude.contains(&n.pid))
        .map(|n| n.pid)
}

/// True iff every up process believes in the same coordinator and that
/// coordinator is the highest up process.
pub fn correctness_predicate(view: &SystemView) -> bool {
    let expected = highest_alive(view, &BTreeSet::new());
    view.processes
        .values()
        .filter(|n| n.status == Status::Up)
        .all(|n| n.believed_coordinator == expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(r: std::ops::RangeInclusive<u32>) -> Vec<ProcessId> {
        r.map(ProcessId).collect()
    }

    #[test]
    fn highest_alive_examples() {
        let mut view = SystemView::stable(ids(1..=6));
        assert_eq!(highest_alive(&view, &BTreeSet::new()), Some(ProcessId(6)));
        view.set_status(ProcessId(6), Status::Crashed);
        assert_eq!(highest_alive(&view, &BTreeSet::new()), Some(ProcessId(5)));
        for p in 1..=6 {
            view.set_status(ProcessId(p), Status::Crashed);
        }
        assert_eq!(highest_alive(&view, &BTreeSet::new()), None);
    }

    #[test]
    fn highest_alive_respects_exclusions_and_slowness() {
        let mut view = SystemView::stable(ids(1..=6));
        let ex: BTreeSet<_> = [ProcessId(6)].into();
        assert_eq!(highest_alive(&view, &ex), Some(ProcessId(5)));
        view.set_status(ProcessId(5), Status::Slow);
        assert_eq!(highest_alive(&view, &ex), Some(ProcessId(4)));
    }

    #[test]
    fn correctness_examples() {
        let mut view = SystemView::stable(ids(1..=6));
        assert!(correctness_predicate(&view));

        view.set_status(ProcessId(6), Status::Crashed);
        for p in 1..=5 {
            view.set_believed(ProcessId(p), Some(ProcessId(5)));
        }
        assert!(correctness_predicate(&view));

        let mut split = SystemView::stable(ids(1..=6));
        split.set_believed(ProcessId(4), Some(ProcessId(4)));
        assert!(!correctness_predicate(&split));
    }

    #[test]
    fn stale_belief_in_crashed_coordinator_is_incorrect() {
        let mut view = SystemView::stable(ids(1..=6));
        view.set_status(ProcessId(6), Status::Crashed);
        assert!(!correctness_predicate(&view));
    }

    #[test]
    fn message_kind_names_round_trip() {
        for k in MessageKind::ALL {
            assert_eq!(k.as_str().parse::<MessageKind>().unwrap(), k);
        }
        assert!("ping".parse::<MessageKind>().is_err());
    }
}
