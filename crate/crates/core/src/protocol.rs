//! The interface between the simulator and the election protocols.
//!
//! A protocol is a pure state machine: the simulator hands it one input at a
//! time together with a read-only [`Context`], and applies the returned
//! [`Action`]s on behalf of the endpoint named in the context.

use std::fmt;
use std::str::FromStr;

use crate::types::{CommissionView, Endpoint, Message, MessageKind, ProcessId, Time, TimerId};

/// Delay bounds shared by every protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    /// Maximum one-way transmission delay.
    pub t_msg: Time,
    /// Maximum processing delay.
    pub t_pos: Time,
    /// Propagation delay unit used by the Kordafshari waits.
    pub d: Time,
}

impl Timing {
    /// Longest time a reply to a request can take: `2 * t_msg + t_pos`.
    pub fn fd_timeout(&self) -> Time {
        2 * self.t_msg + self.t_pos
    }
}

pub struct Context<'a> {
    pub me: Endpoint,
    pub now: Time,
    /// Every process id in the system, ascending.
    pub members: &'a [ProcessId],
    pub timing: Timing,
    /// The handling process's current belief; `None` for the commission.
    pub believed: Option<ProcessId>,
}

impl Context<'_> {
    /// The handling process. Panics when called on behalf of the commission.
    pub fn pid(&self) -> ProcessId {
        self.me
            .process()
            .expect("context does not belong to a process")
    }

    /// Ids strictly above `pid`, ascending.
    pub fn higher_than(&self, pid: ProcessId) -> impl DoubleEndedIterator<Item = ProcessId> + '_ {
        self.members.iter().copied().filter(move |&p| p > pid)
    }

    pub fn max_id(&self) -> Option<ProcessId> {
        self.members.last().copied()
    }

    /// One `Coordinator(winner)` to every member, including the sender.
    pub fn broadcast_coordinator(&self, winner: ProcessId, epoch: u64) -> Vec<Action> {
        self.members
            .iter()
            .map(|&p| Action::Send {
                to: p.into(),
                kind: MessageKind::Coordinator,
                coordinator: Some(winner),
                epoch,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    Message(&'a Message),
    Timeout(TimerId),
    /// The process has just come back from a crash.
    Recovered,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Send {
        to: Endpoint,
        kind: MessageKind,
        coordinator: Option<ProcessId>,
        epoch: u64,
    },
    SetTimer {
        timer: TimerId,
        after: Time,
    },
    CancelTimer(TimerId),
    /// Update the handling process's believed coordinator.
    Adopt(ProcessId),
    ElectionStarted {
        /// Set when a reliable failure detector confirmed the old coordinator
        /// unresponsive before the election began.
        verified: bool,
    },
    ElectionEnded {
        winner: ProcessId,
    },
    /// A probe (verify or alive) went unanswered for a full timeout window.
    ProbeTimedOut {
        target: ProcessId,
        kind: MessageKind,
    },
    Violation(String),
    Note(String),
    /// Every candidate failed to answer; nobody was elected.
    SystemDead,
}

impl Action {
    pub fn send(to: impl Into<Endpoint>, kind: MessageKind) -> Self {
        Action::Send {
            to: to.into(),
            kind,
            coordinator: None,
            epoch: 0,
        }
    }

    pub fn send_coordinator(
        to: impl Into<Endpoint>,
        kind: MessageKind,
        coordinator: ProcessId,
    ) -> Self {
        Action::Send {
            to: to.into(),
            kind,
            coordinator: Some(coordinator),
            epoch: 0,
        }
    }

    pub fn timer(timer: TimerId, after: Time) -> Self {
        Action::SetTimer { timer, after }
    }
}

pub trait Protocol {
    fn algorithm(&self) -> Algorithm;

    /// Called once before the run with the full membership.
    fn init(&mut self, members: &[ProcessId]);

    fn handle(&mut self, ctx: &Context<'_>, input: Input<'_>) -> Vec<Action>;

    /// Forget all volatile state of a crashed process.
    fn on_crash(&mut self, pid: ProcessId);

    fn commission(&self) -> Option<CommissionView> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algorithm {
    Bully,
    Kordafshari,
    Mamun,
    Ec,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Bully,
        Algorithm::Kordafshari,
        Algorithm::Mamun,
        Algorithm::Ec,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Bully => "bully",
            Algorithm::Kordafshari => "kordafshari",
            Algorithm::Mamun => "mamun",
            Algorithm::Ec => "ec",
        }
    }

    pub fn build(self) -> Box<dyn Protocol> {
        match self {
            Algorithm::Bully => Box::new(crate::bully::Bully::default()),
            Algorithm::Kordafshari => Box::new(crate::kordafshari::Kordafshari::default()),
            Algorithm::Mamun => Box::new(crate::mamun::Mamun::default()),
            Algorithm::Ec => Box::new(crate::commission::ElectionCommission::default()),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}
