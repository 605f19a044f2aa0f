//! Mamun et al.'s modified Bully.
//!
//! The initiator collects OK replies from higher processes and announces the
//! highest responder itself. A recovering process asks every higher id who
//! the coordinator is instead of forcing an election. Processes that replied
//! OK do nothing further, so an initiator that crashes mid-election leaves
//! the election stalled.

use std::collections::{BTreeMap, BTreeSet};

use crate::protocol::{Action, Algorithm, Context, Input, Protocol};
use crate::types::{Endpoint, Message, MessageKind, ProcessId, TimerId};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum MamunPhase {
    #[default]
    Idle,
    Collecting,
    /// Recovered and waiting for the first query answer.
    Querying,
    AwaitingNothing,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MamunState {
    pub phase: MamunPhase,
    pub ok_responders: BTreeSet<ProcessId>,
}

impl MamunState {
    pub fn on_failure_detect(&mut self, ctx: &Context<'_>) -> Vec<Action> {
        if matches!(self.phase, MamunPhase::Collecting | MamunPhase::Querying)
            || ctx.believed == Some(ctx.pid())
        {
            return Vec::new();
        }
        let me = ctx.pid();
        let mut out = vec![Action::ElectionStarted { verified: false }];
        let higher: Vec<_> = ctx.higher_than(me).collect();
        if higher.is_empty() {
            out.extend(self.announce(ctx, me));
            return out;
        }
        out.extend(
            higher
                .into_iter()
                .map(|p| Action::send(p, MessageKind::Election)),
        );
        out.push(Action::timer(TimerId::Collect, ctx.timing.fd_timeout()));
        self.phase = MamunPhase::Collecting;
        self.ok_responders.clear();
        out
    }

    pub fn on_recovery(&mut self, ctx: &Context<'_>) -> Vec<Action> {
        *self = MamunState::default();
        let me = ctx.pid();
        let higher: Vec<_> = ctx.higher_than(me).collect();
        if higher.is_empty() {
            let mut out = vec![Action::ElectionStarted { verified: false }];
            out.extend(self.announce(ctx, me));
            return out;
        }
        let mut out: Vec<Action> = higher
            .into_iter()
            .map(|p| Action::send(p, MessageKind::Query))
            .collect();
        out.push(Action::timer(TimerId::QueryWait, ctx.timing.fd_timeout()));
        self.phase = MamunPhase::Querying;
        out
    }

    fn announce(&mut self, ctx: &Context<'_>, winner: ProcessId) -> Vec<Action> {
        let me = ctx.pid();
        self.phase = MamunPhase::AwaitingNothing;
        self.ok_responders.clear();
        let mut out = Vec::new();
        if winner == me {
            out.push(Action::Adopt(me));
        }
        out.push(Action::ElectionEnded { winner });
        out.extend(ctx.broadcast_coordinator(winner, 0));
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
                vec![Action::send(from, MessageKind::Answer)]
            }
            MessageKind::Answer if self.phase == MamunPhase::Collecting => {
                self.ok_responders.insert(from);
                Vec::new()
            }
            MessageKind::Query => match ctx.believed {
                Some(c) => vec![Action::send_coordinator(from, MessageKind::QueryAnswer, c)],
                None => Vec::new(),
            },
            MessageKind::QueryAnswer if self.phase == MamunPhase::Querying => {
                match msg.coordinator {
                    Some(c) if c > me => {
                        self.phase = MamunPhase::Idle;
                        vec![Action::Adopt(c), Action::CancelTimer(TimerId::QueryWait)]
                    }
                    Some(c) => vec![Action::Note(format!("query answer names lower id {c}"))],
                    None => vec![Action::Violation("query answer without id".into())],
                }
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
                let mut out = vec![Action::Adopt(c)];
                if self.phase != MamunPhase::Idle {
                    out.push(Action::CancelTimer(TimerId::Collect));
                    out.push(Action::CancelTimer(TimerId::QueryWait));
                }
                self.phase = MamunPhase::Idle;
                self.ok_responders.clear();
                out
            }
            _ => Vec::new(),
        }
    }

    pub fn on_timeout(&mut self, ctx: &Context<'_>, timer: TimerId) -> Vec<Action> {
        match (timer, self.phase) {
            (TimerId::FailureCheck, _) => self.on_failure_detect(ctx),
            (TimerId::Collect, MamunPhase::Collecting) => {
                let winner = self
                    .ok_responders
                    .iter()
                    .next_back()
                    .copied()
                    .unwrap_or(ctx.pid());
                self.announce(ctx, winner)
            }
            (TimerId::QueryWait, MamunPhase::Querying) => {
                let me = ctx.pid();
                let mut out = vec![Action::ElectionStarted { verified: false }];
                out.extend(self.announce(ctx, me));
                out
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Default)]
pub struct Mamun {
    nodes: BTreeMap<ProcessId, MamunState>,
}

impl Mamun {
    pub fn state(&self, pid: ProcessId) -> Option<&MamunState> {
        self.nodes.get(&pid)
    }
}

impl Protocol for Mamun {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Mamun
    }

    fn init(&mut self, members: &[ProcessId]) {
        self.nodes = members
            .iter()
            .map(|&p| (p, MamunState::default()))
            .collect();
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
        self.nodes.insert(pid, MamunState::default());
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

    fn ctx(members: &[ProcessId], me: u32, believed: Option<u32>) -> Context<'_> {
        Context {
            me: Endpoint::Process(ProcessId(me)),
            now: 0,
            members,
            timing: TIMING,
            believed: believed.map(ProcessId),
        }
    }

    fn msg(kind: MessageKind, from: u32, to: u32, coordinator: Option<u32>) -> Message {
        Message {
            id: 0,
            kind,
            from: ProcessId(from).into(),
            to: ProcessId(to).into(),
            coordinator: coordinator.map(ProcessId),
            epoch: 0,
            send_time: 0,
        }
    }

    fn sends(actions: &[Action], kind: MessageKind) -> Vec<(u32, Option<u32>)> {
        actions
            .iter()
            .filter_map(|a| match a {
                Action::Send {
                    to: Endpoint::Process(p),
                    kind: k,
                    coordinator,
                    ..
                } if *k == kind => Some((p.0, coordinator.map(|c| c.0))),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn initiator_announces_highest_responder() {
        let members: Vec<_> = (1..=6).map(ProcessId).collect();
        let mut s = MamunState::default();
        let out = s.on_failure_detect(&ctx(&members, 2, Some(6)));
        assert_eq!(sends(&out, MessageKind::Election).len(), 4);
        for r in [3, 4, 5] {
            s.on_message(
                &ctx(&members, 2, Some(6)),
                &msg(MessageKind::Answer, r, 2, None),
            );
        }
        let out = s.on_timeout(&ctx(&members, 2, Some(6)), TimerId::Collect);
        let coord = sends(&out, MessageKind::Coordinator);
        assert_eq!(coord.len(), 6);
        assert!(coord.iter().all(|&(_, c)| c == Some(5)));
        assert!(out.contains(&Action::ElectionEnded {
            winner: ProcessId(5)
        }));
    }

    #[test]
    fn every_lower_initiator_gets_ok() {
        let members: Vec<_> = (1..=6).map(ProcessId).collect();
        let mut s = MamunState::default();
        for from in [1, 2, 3] {
            let out = s.on_message(
                &ctx(&members, 4, Some(6)),
                &msg(MessageKind::Election, from, 4, None),
            );
            assert_eq!(sends(&out, MessageKind::Answer), vec![(from, None)]);
        }
        assert_eq!(s.phase, MamunPhase::Idle);
    }

    #[test]
    fn recovery_queries_higher_ids() {
        let members: Vec<_> = (1..=6).map(ProcessId).collect();
        let mut s = MamunState::default();
        let out = s.on_recovery(&ctx(&members, 3, None));
        assert_eq!(sends(&out, MessageKind::Query).len(), 3);
        let out = s.on_message(
            &ctx(&members, 3, None),
            &msg(MessageKind::QueryAnswer, 4, 3, Some(6)),
        );
        assert!(out.contains(&Action::Adopt(ProcessId(6))));
        // Later answers are ignored.
        let out = s.on_message(
            &ctx(&members, 3, Some(6)),
            &msg(MessageKind::QueryAnswer, 5, 3, Some(6)),
        );
        assert!(out.is_empty());
    }

    #[test]
    fn unanswered_query_self_coordinates() {
        let members: Vec<_> = (1..=3).map(ProcessId).collect();
        let mut s = MamunState::default();
        s.on_recovery(&ctx(&members, 1, None));
        let out = s.on_timeout(&ctx(&members, 1, None), TimerId::QueryWait);
        assert!(out.contains(&Action::Adopt(ProcessId(1))));
        assert_eq!(sends(&out, MessageKind::Coordinator).len(), 3);
    }

    #[test]
    fn recovered_max_announces_without_query() {
        let members: Vec<_> = (1..=6).map(ProcessId).collect();
        let mut s = MamunState::default();
        let out = s.on_recovery(&ctx(&members, 6, None));
        assert!(sends(&out, MessageKind::Query).is_empty());
        assert_eq!(sends(&out, MessageKind::Coordinator).len(), 6);
    }
}
