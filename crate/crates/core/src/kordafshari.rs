//! Kordafshari et al.'s modified Bully.
//!
//! The detecting process collects answers (each carrying the responder's id),
//! picks the highest responder and hands it a GRANT; the grantee announces
//! itself. A higher process that was itself collecting when a lower ELECTION
//! arrives waits `d`, sends STOP to every lower initiator except the lowest,
//! and abandons its own run. Processes that answered wait `3d` for an
//! announcement and re-run the algorithm when none arrives.

use std::collections::{BTreeMap, BTreeSet};

use crate::protocol::{Action, Algorithm, Context, Input, Protocol};
use crate::types::{Endpoint, Message, MessageKind, ProcessId, TimerId};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum KordPhase {
    #[default]
    Idle,
    Collecting,
    /// Saw a lower initiator while collecting; about to stop.
    Yielding,
    AwaitingCoordinatorBroadcast,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KordState {
    pub phase: KordPhase,
    pub responders: BTreeSet<ProcessId>,
    /// Equals `max(responders)` once set.
    pub grant_target: Option<ProcessId>,
    pub lower_initiators: BTreeSet<ProcessId>,
    /// Initiators this process has answered, so a GRANT can be checked.
    pub answered: BTreeSet<ProcessId>,
}

const ELECTION_TIMERS: [TimerId; 3] = [TimerId::Collect, TimerId::Suppress, TimerId::GrantWait];

impl KordState {
    pub fn on_failure_detect(&mut self, ctx: &Context<'_>) -> Vec<Action> {
        if self.phase != KordPhase::Idle || ctx.believed == Some(ctx.pid()) {
            return Vec::new();
        }
        self.initiate(ctx)
    }

    pub fn on_recovery(&mut self, ctx: &Context<'_>) -> Vec<Action> {
        *self = KordState::default();
        self.initiate(ctx)
    }

    fn initiate(&mut self, ctx: &Context<'_>) -> Vec<Action> {
        let me = ctx.pid();
        self.responders.clear();
        self.grant_target = None;
        self.lower_initiators.clear();
        let mut out = vec![Action::ElectionStarted { verified: false }];
        let higher: Vec<_> = ctx.higher_than(me).collect();
        if higher.is_empty() {
            out.extend(self.announce(ctx));
            return out;
        }
        out.extend(
            higher
                .into_iter()
                .map(|p| Action::send(p, MessageKind::Election)),
        );
        out.push(Action::timer(TimerId::Collect, ctx.timing.fd_timeout()));
        self.phase = KordPhase::Collecting;
        out
    }

    fn announce(&mut self, ctx: &Context<'_>) -> Vec<Action> {
        let me = ctx.pid();
        *self = KordState::default();
        let mut out = vec![Action::Adopt(me), Action::ElectionEnded { winner: me }];
        out.extend(ELECTION_TIMERS.map(Action::CancelTimer));
        out.push(Action::CancelTimer(TimerId::BroadcastWait));
        out.extend(ctx.broadcast_coordinator(me, 0));
        out
    }

    pub fn on_message(&mut self, ctx: &Context<'_>, msg: &Message) -> Vec<Action> {
        let me = ctx.pid();
        let Endpoint::Process(from) = msg.from else {
            return Vec::new();
        };
        match msg.kind {
            MessageKind::Election => {
                if from > me {
                    return vec![Action::Violation(format!("election from higher id {from}"))];
                }
                self.answered.insert(from);
                let mut out = vec![
                    Action::send(from, MessageKind::Answer),
                    Action::timer(TimerId::BroadcastWait, 3 * ctx.timing.d),
                ];
                match self.phase {
                    KordPhase::Collecting => {
                        self.phase = KordPhase::Yielding;
                        self.lower_initiators.insert(from);
                        out.push(Action::CancelTimer(TimerId::Collect));
                        out.push(Action::timer(TimerId::Suppress, ctx.timing.d));
                    }
                    KordPhase::Yielding => {
                        self.lower_initiators.insert(from);
                    }
                    _ => {}
                }
                out
            }
            MessageKind::Answer if self.phase == KordPhase::Collecting => {
                self.responders.insert(from);
                Vec::new()
            }
            MessageKind::Grant => {
                if !self.answered.contains(&from) {
                    return vec![Action::Violation(format!(
                        "grant from {from} which was never answered"
                    ))];
                }
                self.announce(ctx)
            }
            MessageKind::Stop => {
                if self.phase == KordPhase::Idle {
                    return Vec::new();
                }
                self.phase = KordPhase::Idle;
                self.responders.clear();
                self.grant_target = None;
                self.lower_initiators.clear();
                ELECTION_TIMERS.map(Action::CancelTimer).to_vec()
            }
            MessageKind::Coordinator => {
                let Some(c) = msg.coordinator else {
                    return vec![Action::Violation("coordinator message without id".into())];
                };
                if c < me {
                    return vec![Action::Note(format!(
                        "ignored coordinator {c} below own id"
                    ))];
                }
                *self = KordState::default();
                let mut out = vec![Action::Adopt(c)];
                out.extend(ELECTION_TIMERS.map(Action::CancelTimer));
                out.push(Action::CancelTimer(TimerId::BroadcastWait));
                out
            }
            _ => Vec::new(),
        }
    }

    pub fn on_timeout(&mut self, ctx: &Context<'_>, timer: TimerId) -> Vec<Action> {
        match (timer, self.phase) {
            (TimerId::FailureCheck, _) => self.on_failure_detect(ctx),
            (TimerId::Collect, KordPhase::Collecting) => {
                let Some(&target) = self.responders.iter().next_back() else {
                    return self.announce(ctx);
                };
                self.grant_target = Some(target);
                self.phase = KordPhase::AwaitingCoordinatorBroadcast;
                vec![
                    Action::send(target, MessageKind::Grant),
                    Action::timer(TimerId::GrantWait, ctx.timing.d),
                ]
            }
            (TimerId::Suppress, KordPhase::Yielding) => {
                let lowest = self.lower_initiators.iter().next().copied();
                let mut out: Vec<Action> = self
                    .lower_initiators
                    .iter()
                    .filter(|&&p| Some(p) != lowest)
                    .map(|&p| Action::send(p, MessageKind::Stop))
                    .collect();
                if self.lower_initiators.len() > 2 {
                    out.push(Action::Note(format!(
                        "stop fan-out to {} initiators; one stop per suppressed initiator",
                        self.lower_initiators.len() - 1
                    )));
                }
                self.phase = KordPhase::Idle;
                self.responders.clear();
                self.lower_initiators.clear();
                out
            }
            (TimerId::GrantWait, KordPhase::AwaitingCoordinatorBroadcast) => {
                self.phase = KordPhase::Idle;
                self.initiate(ctx)
            }
            (TimerId::BroadcastWait, KordPhase::Idle) => self.initiate(ctx),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Default)]
pub struct Kordafshari {
    nodes: BTreeMap<ProcessId, KordState>,
}

impl Kordafshari {
    pub fn state(&self, pid: ProcessId) -> Option<&KordState> {
        self.nodes.get(&pid)
    }
}

impl Protocol for Kordafshari {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Kordafshari
    }

    fn init(&mut self, members: &[ProcessId]) {
        self.nodes = members.iter().map(|&p| (p, KordState::default())).collect();
    }

    fn handle(&mut self, ctx: &Context<'_>, input: Input<'_>) -> Vec<Action> {
        let Some(pid) = ctx.me.process() else {
            return Vec::new();
        };
        let node = self.nodes.entry(pid).or_default();
        match input {
            Input::Message(m) => node.on_message(ctx, m),
            Input::Timeout(t) => node.on_timeout(ctx, t),
            Input::Recovered => node.on_recovery(ctx),
        }
    }

    fn on_crash(&mut self, pid: ProcessId) {
        self.nodes.insert(pid, KordState::default());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Timing;

    const TIMING: Timing = Timing {
        t_msg: 10,
        t_pos: 4,
        d: 24,
    };

    fn ctx(members: &[ProcessId], me: u32) -> Context<'_> {
        Context {
            me: Endpoint::Process(ProcessId(me)),
            now: 0,
            members,
            timing: TIMING,
            believed: members.last().copied(),
        }
    }

    fn msg(kind: MessageKind, from: u32, to: u32) -> Message {
        Message {
            id: 0,
            kind,
            from: ProcessId(from).into(),
            to: ProcessId(to).into(),
            coordinator: None,
            epoch: 0,
            send_time: 0,
        }
    }

    fn sends(actions: &[Action], kind: MessageKind) -> Vec<u32> {
        actions
            .iter()
            .filter_map(|a| match a {
                Action::Send {
                    to: Endpoint::Process(p),
                    kind: k,
                    ..
                } if *k == kind => Some(p.0),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn detector_sends_election_to_higher() {
        let members: Vec<_> = (1..=5).map(ProcessId).collect();
        let mut s = KordState::default();
        let out = s.on_failure_detect(&ctx(&members, 2));
        assert_eq!(sends(&out, MessageKind::Election), vec![3, 4, 5]);
        assert_eq!(s.phase, KordPhase::Collecting);
    }

    #[test]
    fn grant_goes_to_highest_responder_only() {
        let members: Vec<_> = (1..=5).map(ProcessId).collect();
        let mut s = KordState::default();
        s.on_failure_detect(&ctx(&members, 2));
        for r in [3, 4, 5] {
            s.on_message(&ctx(&members, 2), &msg(MessageKind::Answer, r, 2));
        }
        let out = s.on_timeout(&ctx(&members, 2), TimerId::Collect);
        assert_eq!(sends(&out, MessageKind::Grant), vec![5]);
        assert_eq!(s.grant_target, Some(ProcessId(5)));
        assert!(out.contains(&Action::timer(TimerId::GrantWait, 24)));
    }

    #[test]
    fn grantee_announces_to_all() {
        let members: Vec<_> = (1..=5).map(ProcessId).collect();
        let mut s = KordState::default();
        s.on_message(&ctx(&members, 5), &msg(MessageKind::Election, 2, 5));
        let out = s.on_message(&ctx(&members, 5), &msg(MessageKind::Grant, 2, 5));
        assert_eq!(sends(&out, MessageKind::Coordinator), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn unsolicited_grant_is_a_violation() {
        let members: Vec<_> = (1..=5).map(ProcessId).collect();
        let mut s = KordState::default();
        let out = s.on_message(&ctx(&members, 5), &msg(MessageKind::Grant, 2, 5));
        assert!(matches!(out.as_slice(), [Action::Violation(_)]));
    }

    #[test]
    fn concurrent_initiator_yields_to_lower() {
        let members: Vec<_> = (1..=5).map(ProcessId).collect();
        let mut three = KordState::default();
        three.on_failure_detect(&ctx(&members, 3));
        let out = three.on_message(&ctx(&members, 3), &msg(MessageKind::Election, 2, 3));
        assert_eq!(sends(&out, MessageKind::Answer), vec![2]);
        assert_eq!(three.phase, KordPhase::Yielding);
        let out = three.on_timeout(&ctx(&members, 3), TimerId::Suppress);
        // 2 is the lowest initiator, so it keeps running and gets no stop.
        assert!(sends(&out, MessageKind::Stop).is_empty());
        assert_eq!(three.phase, KordPhase::Idle);
    }

    #[test]
    fn stop_goes_to_non_lowest_initiators() {
        let members: Vec<_> = (1..=5).map(ProcessId).collect();
        let mut q = KordState::default();
        q.on_failure_detect(&ctx(&members, 4));
        q.on_message(&ctx(&members, 4), &msg(MessageKind::Election, 3, 4));
        q.on_message(&ctx(&members, 4), &msg(MessageKind::Election, 1, 4));
        let out = q.on_timeout(&ctx(&members, 4), TimerId::Suppress);
        assert_eq!(sends(&out, MessageKind::Stop), vec![3]);
    }

    #[test]
    fn stop_halts_a_running_initiator() {
        let members: Vec<_> = (1..=5).map(ProcessId).collect();
        let mut p = KordState::default();
        p.on_failure_detect(&ctx(&members, 3));
        let out = p.on_message(&ctx(&members, 3), &msg(MessageKind::Stop, 4, 3));
        assert_eq!(p.phase, KordPhase::Idle);
        assert!(out.contains(&Action::CancelTimer(TimerId::Collect)));
    }

    #[test]
    fn lonely_collector_announces_itself() {
        let members: Vec<_> = (1..=5).map(ProcessId).collect();
        let mut s = KordState::default();
        s.on_failure_detect(&ctx(&members, 4));
        let out = s.on_timeout(&ctx(&members, 4), TimerId::Collect);
        assert!(out.contains(&Action::Adopt(ProcessId(4))));
        assert_eq!(sends(&out, MessageKind::Coordinator).len(), 5);
    }

    #[test]
    fn grant_timeout_repeats_the_algorithm() {
        let members: Vec<_> = (1..=5).map(ProcessId).collect();
        let mut s = KordState::default();
        s.on_failure_detect(&ctx(&members, 2));
        s.on_message(&ctx(&members, 2), &msg(MessageKind::Answer, 4, 2));
        s.on_timeout(&ctx(&members, 2), TimerId::Collect);
        let out = s.on_timeout(&ctx(&members, 2), TimerId::GrantWait);
        assert!(out.contains(&Action::ElectionStarted { verified: false }));
        assert_eq!(sends(&out, MessageKind::Election), vec![3, 4, 5]);
    }
}
