//! Garcia-Molina's Bully election.
//!
//! A process that suspects the coordinator challenges every higher id. Any
//! higher process that is alive answers, then runs its own election, so the
//! highest live process eventually announces itself. Nothing here is
//! optimised: the quadratic message cost and the failure modes under message
//! loss are what the comparison measures.

use std::collections::BTreeMap;

use crate::protocol::{Action, Algorithm, Context, Input, Protocol};
use crate::types::{Endpoint, Message, MessageKind, ProcessId, TimerId};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum BullyPhase {
    #[default]
    Idle,
    AwaitingAnswers,
    AwaitingCoordinator,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BullyState {
    pub phase: BullyPhase,
    pub answers_received: bool,
}

impl BullyState {
    /// The process suspects the coordinator. Ignored while an election is
    /// already running, or when the process believes it is the coordinator.
    pub fn on_failure_detect(&mut self, ctx: &Context<'_>) -> Vec<Action> {
        if self.phase != BullyPhase::Idle || ctx.believed == Some(ctx.pid()) {
            return Vec::new();
        }
        self.hold_election(ctx)
    }

    pub fn on_recovery(&mut self, ctx: &Context<'_>) -> Vec<Action> {
        *self = BullyState::default();
        self.hold_election(ctx)
    }

    fn hold_election(&mut self, ctx: &Context<'_>) -> Vec<Action> {
        let me = ctx.pid();
        let mut out = vec![Action::ElectionStarted { verified: false }];
        let higher: Vec<_> = ctx.higher_than(me).collect();
        if higher.is_empty() {
            out.extend(self.declare(ctx));
            return out;
        }
        out.extend(
            higher
                .into_iter()
                .map(|p| Action::send(p, MessageKind::Election)),
        );
        out.push(Action::timer(TimerId::AnswerWait, ctx.timing.fd_timeout()));
        self.phase = BullyPhase::AwaitingAnswers;
        self.answers_received = false;
        out
    }

    fn declare(&mut self, ctx: &Context<'_>) -> Vec<Action> {
        let me = ctx.pid();
        self.phase = BullyPhase::Idle;
        let mut out = vec![Action::Adopt(me), Action::ElectionEnded { winner: me }];
        out.extend(ctx.broadcast_coordinator(me, 0));
        out
    }

    pub fn on_message(&mut self, ctx: &Context<'_>, msg: &Message) -> Vec<Action> {
        let me = ctx.pid();
        match msg.kind {
            MessageKind::Election => {
                let Endpoint::Process(from) = msg.from else {
                    return Vec::new();
                };
                if from > me {
                    return vec![Action::Violation(format!("election from higher id {from}"))];
                }
                let mut out = vec![Action::send(from, MessageKind::Answer)];
                if self.phase == BullyPhase::Idle {
                    out.extend(self.hold_election(ctx));
                }
                out
            }
            MessageKind::Answer if self.phase == BullyPhase::AwaitingAnswers => {
                self.phase = BullyPhase::AwaitingCoordinator;
                self.answers_received = true;
                // The winner still has to time out on its own higher set, so
                // wait two full reply windows.
                vec![
                    Action::CancelTimer(TimerId::AnswerWait),
                    Action::timer(TimerId::CoordinatorWait, 2 * ctx.timing.fd_timeout()),
                ]
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
                self.phase = BullyPhase::Idle;
                vec![
                    Action::Adopt(c),
                    Action::CancelTimer(TimerId::AnswerWait),
                    Action::CancelTimer(TimerId::CoordinatorWait),
                ]
            }
            _ => Vec::new(),
        }
    }

    pub fn on_timeout(&mut self, ctx: &Context<'_>, timer: TimerId) -> Vec<Action> {
        match timer {
            TimerId::FailureCheck => self.on_failure_detect(ctx),
            TimerId::AnswerWait if self.phase == BullyPhase::AwaitingAnswers => self.declare(ctx),
            TimerId::CoordinatorWait if self.phase == BullyPhase::AwaitingCoordinator => {
                self.phase = BullyPhase::Idle;
                self.hold_election(ctx)
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Default)]
pub struct Bully {
    nodes: BTreeMap<ProcessId, BullyState>,
}

impl Bully {
    pub fn state(&self, pid: ProcessId) -> Option<&BullyState> {
        self.nodes.get(&pid)
    }
}

impl Protocol for Bully {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Bully
    }

    fn init(&mut self, members: &[ProcessId]) {
        self.nodes = members
            .iter()
            .map(|&p| (p, BullyState::default()))
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
        self.nodes.insert(pid, BullyState::default());
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

    fn ctx<'a>(members: &'a [ProcessId], me: u32, believed: Option<u32>) -> Context<'a> {
        Context {
            me: Endpoint::Process(ProcessId(me)),
            now: 0,
            members,
            timing: TIMING,
            believed: believed.map(ProcessId),
        }
    }

    fn election_targets(actions: &[Action]) -> Vec<u32> {
        actions
            .iter()
            .filter_map(|a| match a {
                Action::Send {
                    to: Endpoint::Process(p),
                    kind: MessageKind::Election,
                    ..
                } => Some(p.0),
                _ => None,
            })
            .collect()
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

    #[test]
    fn detector_challenges_all_higher_ids() {
        let members: Vec<_> = (0..=6).map(ProcessId).collect();
        let mut s = BullyState::default();
        let out = s.on_failure_detect(&ctx(&members, 4, Some(6)));
        assert_eq!(election_targets(&out), vec![5, 6]);
        assert_eq!(s.phase, BullyPhase::AwaitingAnswers);
        assert!(out.contains(&Action::timer(TimerId::AnswerWait, 24)));

        let mut low = BullyState::default();
        let out = low.on_failure_detect(&ctx(&members, 0, Some(6)));
        assert_eq!(election_targets(&out).len(), 6);
    }

    #[test]
    fn max_id_announces_immediately() {
        let members: Vec<_> = (1..=6).map(ProcessId).collect();
        let mut s = BullyState::default();
        let out = s.on_recovery(&ctx(&members, 6, None));
        assert!(election_targets(&out).is_empty());
        let announcements = out
            .iter()
            .filter(|a| {
                matches!(
                    a,
                    Action::Send {
                        kind: MessageKind::Coordinator,
                        ..
                    }
                )
            })
            .count();
        assert_eq!(announcements, 6);
        assert!(out.contains(&Action::Adopt(ProcessId(6))));
    }

    #[test]
    fn election_from_lower_is_answered_then_escalated() {
        let members: Vec<_> = (1..=6).map(ProcessId).collect();
        let mut s = BullyState::default();
        let out = s.on_message(
            &ctx(&members, 5, Some(6)),
            &msg(MessageKind::Election, 4, 5, None),
        );
        assert_eq!(out[0], Action::send(ProcessId(4), MessageKind::Answer));
        assert_eq!(election_targets(&out), vec![6]);

        // Already running: answer only.
        let out = s.on_message(
            &ctx(&members, 5, Some(6)),
            &msg(MessageKind::Election, 3, 5, None),
        );
        assert_eq!(out, vec![Action::send(ProcessId(3), MessageKind::Answer)]);
    }

    #[test]
    fn answer_moves_to_awaiting_coordinator() {
        let members: Vec<_> = (1..=6).map(ProcessId).collect();
        let mut s = BullyState::default();
        s.on_failure_detect(&ctx(&members, 4, Some(6)));
        let out = s.on_message(
            &ctx(&members, 4, Some(6)),
            &msg(MessageKind::Answer, 5, 4, None),
        );
        assert_eq!(s.phase, BullyPhase::AwaitingCoordinator);
        assert!(out.contains(&Action::CancelTimer(TimerId::AnswerWait)));
        assert!(out.contains(&Action::timer(TimerId::CoordinatorWait, 48)));
    }

    #[test]
    fn coordinator_is_adopted() {
        let members: Vec<_> = (1..=6).map(ProcessId).collect();
        let mut s = BullyState::default();
        let out = s.on_message(
            &ctx(&members, 1, Some(6)),
            &msg(MessageKind::Coordinator, 6, 1, Some(6)),
        );
        assert!(out.contains(&Action::Adopt(ProcessId(6))));
        assert_eq!(s.phase, BullyPhase::Idle);
    }

    #[test]
    fn election_from_higher_is_flagged() {
        let members: Vec<_> = (1..=6).map(ProcessId).collect();
        let mut s = BullyState::default();
        let out = s.on_message(
            &ctx(&members, 2, Some(6)),
            &msg(MessageKind::Election, 5, 2, None),
        );
        assert!(matches!(out.as_slice(), [Action::Violation(_)]));
    }

    #[test]
    fn answer_timeout_declares_self() {
        let members: Vec<_> = (1..=3).map(ProcessId).collect();
        let mut s = BullyState::default();
        s.on_recovery(&ctx(&members, 1, None));
        let out = s.on_timeout(&ctx(&members, 1, None), TimerId::AnswerWait);
        assert!(out.contains(&Action::Adopt(ProcessId(1))));
        assert!(out.contains(&Action::ElectionEnded {
            winner: ProcessId(1)
        }));
    }
}
