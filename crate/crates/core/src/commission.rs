//! Election-commission leader election.
//!
//! Processes never elect among themselves. A process that suspects the
//! coordinator reports to the commission, a single always-available endpoint
//! with a failure detector and a helper. The detector verifies the report; the
//! helper scans downward for the highest live process; the commission then
//! announces the winner with an increasing epoch.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::protocol::{Action, Algorithm, Context, Input, Protocol};
use crate::types::{CommissionView, Endpoint, Message, MessageKind, ProcessId, TimerId};

/// The request that drives an election when several reporters coalesce:
/// the highest initiator, since it leaves the fewest ids to probe.
pub fn coalesce(pending: &BTreeSet<ProcessId>) -> Option<ProcessId> {
    pending.iter().next_back().copied()
}

/// Next id for the helper to probe: the highest member strictly between
/// `floor` and `below`, skipping `skip`.
pub fn next_candidate(
    members: &[ProcessId],
    below: Option<ProcessId>,
    floor: Option<ProcessId>,
    skip: Option<ProcessId>,
) -> Option<ProcessId> {
    members
        .iter()
        .rev()
        .copied()
        .filter(|&p| below.is_none_or(|b| p < b))
        .filter(|&p| floor.is_none_or(|f| p > f))
        .find(|&p| Some(p) != skip)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum EcPhase {
    #[default]
    Idle,
    Verifying(ProcessId),
    Probing(ProcessId),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EcState {
    pub current_coordinator: Option<ProcessId>,
    pub epoch: u64,
    pub phase: EcPhase,
    /// Coordinator confirmed down in the running election.
    pub failed: Option<ProcessId>,
    pub reporters: BTreeSet<ProcessId>,
    pub queued_queries: VecDeque<ProcessId>,
}

impl EcState {
    pub fn busy(&self) -> bool {
        self.phase != EcPhase::Idle
    }

    pub fn on_election(
        &mut self,
        ctx: &Context<'_>,
        from: ProcessId,
        suspect: Option<ProcessId>,
    ) -> Vec<Action> {
        if self.busy() {
            self.reporters.insert(from);
            return Vec::new();
        }
        if let (Some(current), Some(s)) = (self.current_coordinator, suspect) {
            if s != current {
                return vec![self.coordinator_to(from, current)];
            }
        }
        self.reporters.clear();
        self.reporters.insert(from);
        match self.current_coordinator {
            Some(c) => {
                self.phase = EcPhase::Verifying(c);
                vec![
                    Action::send(c, MessageKind::Verify),
                    Action::timer(TimerId::Probe, ctx.timing.fd_timeout()),
                ]
            }
            None => {
                let mut out = vec![Action::ElectionStarted { verified: true }];
                out.extend(self.probe_below(ctx, None));
                out
            }
        }
    }

    fn coordinator_to(&self, to: ProcessId, c: ProcessId) -> Action {
        Action::Send {
            to: to.into(),
            kind: MessageKind::Coordinator,
            coordinator: Some(c),
            epoch: self.epoch,
        }
    }

    fn probe_below(&mut self, ctx: &Context<'_>, below: Option<ProcessId>) -> Vec<Action> {
        let chosen = coalesce(&self.reporters);
        match next_candidate(ctx.members, below, chosen, self.failed) {
            Some(p) => {
                self.phase = EcPhase::Probing(p);
                vec![
                    Action::send(p, MessageKind::Alive),
                    Action::timer(TimerId::Probe, ctx.timing.fd_timeout()),
                ]
            }
            None => match chosen {
                Some(winner) => self.finish(ctx, winner),
                None => {
                    self.phase = EcPhase::Idle;
                    self.failed = None;
                    let mut out = vec![Action::SystemDead];
                    out.extend(self.drain(ctx));
                    out
                }
            },
        }
    }

    fn finish(&mut self, ctx: &Context<'_>, winner: ProcessId) -> Vec<Action> {
        self.epoch += 1;
        self.current_coordinator = Some(winner);
        self.phase = EcPhase::Idle;
        self.failed = None;
        self.reporters.clear();
        let mut out = vec![Action::ElectionEnded { winner }];
        out.extend(ctx.broadcast_coordinator(winner, self.epoch));
        out.extend(self.drain(ctx));
        out
    }

    fn drain(&mut self, ctx: &Context<'_>) -> Vec<Action> {
        let mut out = Vec::new();
        while !self.busy() {
            let Some(q) = self.queued_queries.pop_front() else {
                break;
            };
            out.extend(self.on_query(ctx, q));
        }
        out
    }

    pub fn on_query(&mut self, ctx: &Context<'_>, from: ProcessId) -> Vec<Action> {
        if self.busy() {
            self.queued_queries.push_back(from);
            return Vec::new();
        }
        match self.current_coordinator {
            Some(c) if from <= c => vec![self.coordinator_to(from, c)],
            _ => {
                self.epoch += 1;
                self.current_coordinator = Some(from);
                let mut out = vec![
                    Action::ElectionStarted { verified: true },
                    Action::ElectionEnded { winner: from },
                ];
                out.extend(ctx.broadcast_coordinator(from, self.epoch));
                out
            }
        }
    }

    pub fn on_reply(
        &mut self,
        ctx: &Context<'_>,
        from: ProcessId,
        kind: MessageKind,
    ) -> Vec<Action> {
        match (self.phase, kind) {
            (EcPhase::Verifying(c), MessageKind::VerifyReply) if c == from => {
                self.phase = EcPhase::Idle;
                let mut out = vec![Action::CancelTimer(TimerId::Probe)];
                let reporters = std::mem::take(&mut self.reporters);
                out.extend(reporters.into_iter().map(|r| self.coordinator_to(r, c)));
                out.extend(self.drain(ctx));
                out
            }
            (EcPhase::Probing(p), MessageKind::AliveReply) if p == from => {
                let mut out = vec![Action::CancelTimer(TimerId::Probe)];
                out.extend(self.finish(ctx, p));
                out
            }
            _ => vec![Action::Note(format!("stale {kind} from {from}"))],
        }
    }

    pub fn on_probe_timeout(&mut self, ctx: &Context<'_>) -> Vec<Action> {
        match self.phase {
            EcPhase::Verifying(c) => {
                self.failed = Some(c);
                let mut out = vec![
                    Action::ProbeTimedOut {
                        target: c,
                        kind: MessageKind::Verify,
                    },
                    Action::ElectionStarted { verified: true },
                ];
                out.extend(self.probe_below(ctx, None));
                out
            }
            EcPhase::Probing(p) => {
                let mut out = vec![Action::ProbeTimedOut {
                    target: p,
                    kind: MessageKind::Alive,
                }];
                out.extend(self.probe_below(ctx, Some(p)));
                out
            }
            EcPhase::Idle => Vec::new(),
        }
    }

    fn handle(&mut self, ctx: &Context<'_>, input: Input<'_>) -> Vec<Action> {
        match input {
            Input::Message(m) => {
                let Endpoint::Process(from) = m.from else {
                    return Vec::new();
                };
                match m.kind {
                    MessageKind::Election => self.on_election(ctx, from, m.coordinator),
                    MessageKind::Query => self.on_query(ctx, from),
                    MessageKind::VerifyReply | MessageKind::AliveReply => {
                        self.on_reply(ctx, from, m.kind)
                    }
                    other => vec![Action::Violation(format!(
                        "commission got {other} from {from}"
                    ))],
                }
            }
            Input::Timeout(TimerId::Probe) => self.on_probe_timeout(ctx),
            Input::Timeout(_) | Input::Recovered => Vec::new(),
        }
    }
}

/// Per-process side of the commission protocol.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EcProcess {
    pub last_epoch: u64,
    /// Reported a failure and has not yet heard back.
    pub reported: bool,
}

impl EcProcess {
    pub fn on_failure_detect(&mut self, ctx: &Context<'_>) -> Vec<Action> {
        // With no belief the process is still waiting on its recovery query.
        if self.reported || ctx.believed.is_none() || ctx.believed == Some(ctx.pid()) {
            return Vec::new();
        }
        self.reported = true;
        vec![Action::Send {
            to: Endpoint::Commission,
            kind: MessageKind::Election,
            coordinator: ctx.believed,
            epoch: self.last_epoch,
        }]
    }

    pub fn on_recovery(&mut self) -> Vec<Action> {
        *self = EcProcess::default();
        vec![Action::send(Endpoint::Commission, MessageKind::Query)]
    }

    pub fn on_message(&mut self, msg: &Message) -> Vec<Action> {
        match msg.kind {
            MessageKind::Coordinator => {
                let Some(c) = msg.coordinator else {
                    return vec![Action::Violation("coordinator message without id".into())];
                };
                if msg.epoch < self.last_epoch {
                    return vec![Action::Note(format!(
                        "ignored coordinator {c} from epoch {}",
                        msg.epoch
                    ))];
                }
                self.last_epoch = msg.epoch;
                self.reported = false;
                vec![Action::Adopt(c)]
            }
            MessageKind::Verify => {
                vec![Action::send(Endpoint::Commission, MessageKind::VerifyReply)]
            }
            MessageKind::Alive => vec![Action::send(Endpoint::Commission, MessageKind::AliveReply)],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Default)]
pub struct ElectionCommission {
    ec: EcState,
    nodes: BTreeMap<ProcessId, EcProcess>,
}

impl ElectionCommission {
    pub fn state(&self) -> &EcState {
        &self.ec
    }
}

impl Protocol for ElectionCommission {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Ec
    }

    fn init(&mut self, members: &[ProcessId]) {
        self.ec = EcState {
            current_coordinator: members.last().copied(),
            ..EcState::default()
        };
        self.nodes = members.iter().map(|&p| (p, EcProcess::default())).collect();
    }

    fn handle(&mut self, ctx: &Context<'_>, input: Input<'_>) -> Vec<Action> {
        let pid = match ctx.me {
            Endpoint::Commission => return self.ec.handle(ctx, input),
            Endpoint::Process(p) => p,
        };
        let node = self.nodes.entry(pid).or_default();
        match input {
            Input::Message(m) => node.on_message(m),
            Input::Timeout(TimerId::FailureCheck) => node.on_failure_detect(ctx),
            Input::Timeout(_) => Vec::new(),
            Input::Recovered => node.on_recovery(),
        }
    }

    fn on_crash(&mut self, pid: ProcessId) {
        self.nodes.insert(pid, EcProcess::default());
    }

    fn commission(&self) -> Option<CommissionView> {
        Some(CommissionView {
            current_coordinator: self.ec.current_coordinator,
            busy: self.ec.busy(),
        })
    }
}
