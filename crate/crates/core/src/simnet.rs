//! Deterministic discrete-event network.
//!
//! Events are ordered by `(at, seq)`. Message delays are drawn uniformly from
//! `1..=t_msg` by a ChaCha generator seeded from the config, so a run is a pure
//! function of its config, membership, fault schedule and protocol.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::protocol::{Action, Context, Input, Protocol, Timing};
use crate::trace::{DropReason, Trace, TraceEvent};
use crate::types::{Endpoint, Message, MessageKind, ProcessId, Status, SystemView, Time, TimerId};

pub const DEFAULT_MAX_EVENTS: usize = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid fault schedule: {0}")]
    InvalidSchedule(String),
    #[error("process {pid} tried to send {kind} while crashed")]
    SendFromCrashed { pid: ProcessId, kind: MessageKind },
    #[error("more than {limit} events processed by t={time}; protocol is probably looping")]
    Livelock { limit: usize, time: Time },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub t_msg: Time,
    pub t_pos: Time,
    pub d: Time,
    pub drop_probability: f64,
    pub seed: u64,
    pub max_sim_time: Time,
    pub max_events: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_msg: 10,
            t_pos: 4,
            d: 24,
            drop_probability: 0.0,
            seed: 0,
            max_sim_time: 1_000_000,
            max_events: DEFAULT_MAX_EVENTS,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.t_msg == 0 {
            return Err(SimError::InvalidConfig("t_msg must be positive".into()));
        }
        if self.d == 0 {
            return Err(SimError::InvalidConfig("d must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(SimError::InvalidConfig(format!(
                "drop_probability {} outside [0, 1]",
                self.drop_probability
            )));
        }
        if self.max_events == 0 {
            return Err(SimError::InvalidConfig(
                "max_events must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn timing(&self) -> Timing {
        Timing {
            t_msg: self.t_msg,
            t_pos: self.t_pos,
            d: self.d,
        }
    }

    /// Failure-detector timeout `2 * t_msg + t_pos`.
    pub fn fd_timeout(&self) -> Time {
        self.timing().fd_timeout()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fault {
    Crash(ProcessId),
    Recover(ProcessId),
    MarkSlow(ProcessId),
    MarkNormal(ProcessId),
    /// Breaks the link in both directions.
    BreakLink(ProcessId, ProcessId),
    HealLink(ProcessId, ProcessId),
    /// Fires the process's failure-check timer: it suspects the coordinator.
    Detect(ProcessId),
    /// Drops the next message of `kind` sent from `from` to `to`.
    DropNext {
        from: ProcessId,
        to: ProcessId,
        kind: MessageKind,
    },
}

impl Fault {
    fn pids(&self) -> Vec<ProcessId> {
        match *self {
            Fault::Crash(p)
            | Fault::Recover(p)
            | Fault::MarkSlow(p)
            | Fault::MarkNormal(p)
            | Fault::Detect(p) => vec![p],
            Fault::BreakLink(a, b) | Fault::HealLink(a, b) => vec![a, b],
            Fault::DropNext { from, to, .. } => vec![from, to],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultSchedule {
    pub entries: Vec<(Time, Fault)>,
}

impl FaultSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn at(mut self, time: Time, fault: Fault) -> Self {
        self.entries.push((time, fault));
        self
    }

    pub fn push(&mut self, time: Time, fault: Fault) {
        self.entries.push((time, fault));
    }

    pub fn validate(&self, members: &[ProcessId]) -> Result<(), SimError> {
        let known: BTreeSet<_> = members.iter().copied().collect();
        let mut crashed = BTreeSet::new();
        let mut last = 0;
        for (i, (t, fault)) in self.entries.iter().enumerate() {
            if *t < last {
                return Err(SimError::InvalidSchedule(format!(
                    "entry {i}: time {t} before previous entry at {last}"
                )));
            }
            last = *t;
            if let Some(p) = fault.pids().into_iter().find(|p| !known.contains(p)) {
                return Err(SimError::InvalidSchedule(format!(
                    "entry {i}: unknown process {p}"
                )));
            }
            match *fault {
                Fault::Crash(p) => {
                    crashed.insert(p);
                }
                Fault::Recover(p) => {
                    if !crashed.remove(&p) {
                        return Err(SimError::InvalidSchedule(format!(
                            "entry {i}: recover {p} without a prior crash"
                        )));
                    }
                }
                Fault::BreakLink(a, b) | Fault::HealLink(a, b) if a == b => {
                    return Err(SimError::InvalidSchedule(format!(
                        "entry {i}: link endpoints must differ"
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum EventKind {
    Deliver { msg: Message, incarnation: u32 },
    TimerFire { node: Endpoint, timer: TimerId },
    Fault(Fault),
}

#[derive(Debug)]
struct Queued {
    at: Time,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // Reversed so that `BinaryHeap` pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendOutcome {
    Scheduled { at: Time },
    Dropped(DropReason),
}

#[derive(Debug, Clone)]
enum Deferred {
    Message(Message),
    Timer(TimerId),
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: Trace,
    pub view: SystemView,
    /// The run stopped at `max_sim_time` with events still queued.
    pub truncated: bool,
}

pub struct Simulator {
    config: SimConfig,
    members: Vec<ProcessId>,
    view: SystemView,
    protocol: Box<dyn Protocol>,
    queue: BinaryHeap<Queued>,
    seq: u64,
    next_msg_id: u64,
    in_flight: usize,
    timers: BTreeMap<(Endpoint, TimerId), (u64, Time)>,
    broken: BTreeSet<(ProcessId, ProcessId)>,
    targeted: Vec<(ProcessId, ProcessId, MessageKind)>,
    backlog: BTreeMap<ProcessId, VecDeque<Deferred>>,
    incarnation: BTreeMap<ProcessId, u32>,
    rng: ChaCha8Rng,
    trace: Trace,
}

impl Simulator {
    /// Builds a simulator where every process is up and believes the highest
    /// id is the coordinator.
    pub fn new(
        config: SimConfig,
        members: impl IntoIterator<Item = ProcessId>,
        mut protocol: Box<dyn Protocol>,
    ) -> Result<Self, SimError> {
        config.validate()?;
        let members: Vec<ProcessId> = members
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if members.is_empty() {
            return Err(SimError::InvalidConfig("no processes".into()));
        }
        protocol.init(&members);
        let mut view = SystemView::stable(members.iter().copied());
        view.ec = protocol.commission();
        let mut trace = Trace::new();
        for node in view.processes.values() {
            trace.push(
                0,
                TraceEvent::StateChange {
                    pid: node.pid,
                    status: node.status,
                },
            );
            trace.push(
                0,
                TraceEvent::CoordinatorAdopted {
                    pid: node.pid,
                    coordinator: node.believed_coordinator,
                },
            );
        }
        trace.push(0, TraceEvent::Quiescent);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            incarnation: members.iter().map(|&p| (p, 0)).collect(),
            config,
            members,
            view,
            protocol,
            queue: BinaryHeap::new(),
            seq: 0,
            next_msg_id: 0,
            in_flight: 0,
            timers: BTreeMap::new(),
            broken: BTreeSet::new(),
            targeted: Vec::new(),
            backlog: BTreeMap::new(),
            rng,
            trace,
        })
    }

    pub fn now(&self) -> Time {
        self.view.now
    }

    pub fn view(&self) -> &SystemView {
        &self.view
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    /// Deliveries currently in flight, in dispatch order.
    pub fn pending_deliveries(&self) -> Vec<(Time, Message)> {
        let mut v: Vec<_> = self
            .queue
            .iter()
            .filter_map(|q| match &q.kind {
                EventKind::Deliver { msg, .. } => Some((q.at, q.seq, msg.clone())),
                _ => None,
            })
            .collect();
        v.sort_by_key(|(at, seq, _)| (*at, *seq));
        v.into_iter().map(|(at, _, m)| (at, m)).collect()
    }

    /// Deadline of a live timer, if armed.
    pub fn timer_deadline(&self, node: Endpoint, timer: TimerId) -> Option<Time> {
        self.timers.get(&(node, timer)).map(|&(_, at)| at)
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn enqueue(&mut self, at: Time, kind: EventKind) -> u64 {
        let seq = self.next_seq();
        self.queue.push(Queued { at, seq, kind });
        seq
    }

    fn status_of(&self, node: Endpoint) -> Status {
        match node {
            Endpoint::Commission => Status::Up,
            Endpoint::Process(p) => self.view.status(p).unwrap_or(Status::Crashed),
        }
    }

    /// Puts a message on the wire. The send is always traced; delivery is
    /// scheduled unless the link is broken or a drop fault fires.
    pub fn send(
        &mut self,
        from: Endpoint,
        to: Endpoint,
        kind: MessageKind,
        coordinator: Option<ProcessId>,
        epoch: u64,
    ) -> Result<SendOutcome, SimError> {
        if let Endpoint::Process(pid) = from {
            if self.status_of(from) == Status::Crashed {
                return Err(SimError::SendFromCrashed { pid, kind });
            }
        }
        let now = self.view.now;
        self.next_msg_id += 1;
        let msg = Message {
            id: self.next_msg_id,
            kind,
            from,
            to,
            coordinator,
            epoch,
            send_time: now,
        };
        self.trace.push(now, TraceEvent::Sent(msg.clone()));

        if let (Endpoint::Process(a), Endpoint::Process(b)) = (from, to) {
            if a != b && self.broken.contains(&link(a, b)) {
                self.trace
                    .push(now, TraceEvent::Dropped(msg, DropReason::LinkBroken));
                return Ok(SendOutcome::Dropped(DropReason::LinkBroken));
            }
            if let Some(i) = self
                .targeted
                .iter()
                .position(|&(f, t, k)| f == a && t == b && k == kind)
            {
                self.targeted.remove(i);
                self.trace
                    .push(now, TraceEvent::Dropped(msg, DropReason::Targeted));
                return Ok(SendOutcome::Dropped(DropReason::Targeted));
            }
            if self.config.drop_probability > 0.0 && self.rng.gen_bool(self.config.drop_probability)
            {
                self.trace
                    .push(now, TraceEvent::Dropped(msg, DropReason::Random));
                return Ok(SendOutcome::Dropped(DropReason::Random));
            }
        }

        let delay = self.rng.gen_range(1..=self.config.t_msg);
        let at = now + delay;
        let incarnation = match to {
            Endpoint::Process(p) => self.incarnation.get(&p).copied().unwrap_or(0),
            Endpoint::Commission => 0,
        };
        self.enqueue(at, EventKind::Deliver { msg, incarnation });
        self.in_flight += 1;
        Ok(SendOutcome::Scheduled { at })
    }

    /// Arms (or re-arms) a named timer.
    pub fn set_timer(&mut self, node: Endpoint, timer: TimerId, duration: Time) -> Time {
        let at = self.view.now + duration;
        let seq = self.enqueue(at, EventKind::TimerFire { node, timer });
        self.timers.insert((node, timer), (seq, at));
        at
    }

    pub fn cancel_timer(&mut self, node: Endpoint, timer: TimerId) {
        self.timers.remove(&(node, timer));
    }

    fn dispatch(&mut self, me: Endpoint, input: Input<'_>) -> Result<(), SimError> {
        let believed = me
            .process()
            .and_then(|p| self.view.processes.get(&p))
            .and_then(|n| n.believed_coordinator);
        let ctx = Context {
            me,
            now: self.view.now,
            members: &self.members,
            timing: self.config.timing(),
            believed,
        };
        let actions = self.protocol.handle(&ctx, input);
        for action in actions {
            self.apply(me, action)?;
        }
        self.view.ec = self.protocol.commission();
        Ok(())
    }

    fn apply(&mut self, me: Endpoint, action: Action) -> Result<(), SimError> {
        let now = self.view.now;
        match action {
            Action::Send {
                to,
                kind,
                coordinator,
                epoch,
            } => {
                self.send(me, to, kind, coordinator, epoch)?;
            }
            Action::SetTimer { timer, after } => {
                self.set_timer(me, timer, after);
            }
            Action::CancelTimer(timer) => self.cancel_timer(me, timer),
            Action::Adopt(c) => {
                if let Some(pid) = me.process() {
                    let node = self.view.processes.get_mut(&pid).expect("member");
                    if node.believed_coordinator != Some(c) {
                        node.believed_coordinator = Some(c);
                        self.trace.push(
                            now,
                            TraceEvent::CoordinatorAdopted {
                                pid,
                                coordinator: Some(c),
                            },
                        );
                    }
                }
            }
            Action::ElectionStarted { verified } => self
                .trace
                .push(now, TraceEvent::ElectionStarted { by: me, verified }),
            Action::ElectionEnded { winner } => self
                .trace
                .push(now, TraceEvent::ElectionEnded { by: me, winner }),
            Action::ProbeTimedOut { target, kind } => self
                .trace
                .push(now, TraceEvent::ProbeTimeout { target, kind }),
            Action::Violation(detail) => self
                .trace
                .push(now, TraceEvent::Violation { node: me, detail }),
            Action::Note(detail) => self.trace.push(now, TraceEvent::Note { node: me, detail }),
            Action::SystemDead => self.trace.push(now, TraceEvent::SystemDead),
        }
        Ok(())
    }

    fn handle_fault(&mut self, fault: Fault) -> Result<(), SimError> {
        let now = self.view.now;
        match fault {
            Fault::Crash(p) => {
                if self.view.status(p) == Some(Status::Crashed) {
                    return Ok(());
                }
                self.set_status(p, Status::Crashed);
                *self.incarnation.entry(p).or_default() += 1;
                self.timers
                    .retain(|(node, _), _| *node != Endpoint::Process(p));
                self.backlog.remove(&p);
                self.protocol.on_crash(p);
            }
            Fault::Recover(p) => {
                if self.view.status(p) != Some(Status::Crashed) {
                    return Ok(());
                }
                self.set_status(p, Status::Up);
                self.view.set_believed(p, None);
                self.trace.push(
                    now,
                    TraceEvent::CoordinatorAdopted {
                        pid: p,
                        coordinator: None,
                    },
                );
                self.dispatch(p.into(), Input::Recovered)?;
            }
            Fault::MarkSlow(p) => {
                if self.view.status(p) == Some(Status::Up) {
                    self.set_status(p, Status::Slow);
                }
            }
            Fault::MarkNormal(p) => {
                if self.view.status(p) == Some(Status::Slow) {
                    self.set_status(p, Status::Up);
                    let pending = self.backlog.remove(&p).unwrap_or_default();
                    for item in pending {
                        match item {
                            Deferred::Message(m) => self.dispatch(p.into(), Input::Message(&m))?,
                            Deferred::Timer(t) => self.dispatch(p.into(), Input::Timeout(t))?,
                        }
                    }
                }
            }
            Fault::BreakLink(a, b) => {
                self.broken.insert(link(a, b));
            }
            Fault::HealLink(a, b) => {
                self.broken.remove(&link(a, b));
            }
            Fault::Detect(p) => self.fire_timer(p.into(), TimerId::FailureCheck)?,
            Fault::DropNext { from, to, kind } => self.targeted.push((from, to, kind)),
        }
        Ok(())
    }

    fn set_status(&mut self, pid: ProcessId, status: Status) {
        self.view.set_status(pid, status);
        self.trace
            .push(self.view.now, TraceEvent::StateChange { pid, status });
    }

    fn fire_timer(&mut self, node: Endpoint, timer: TimerId) -> Result<(), SimError> {
        match self.status_of(node) {
            Status::Crashed => Ok(()),
            Status::Slow => {
                let pid = node.process().expect("only processes can be slow");
                self.backlog
                    .entry(pid)
                    .or_default()
                    .push_back(Deferred::Timer(timer));
                Ok(())
            }
            Status::Up => {
                self.trace
                    .push(self.view.now, TraceEvent::TimerFired { node, timer });
                self.dispatch(node, Input::Timeout(timer))
            }
        }
    }

    fn deliver(&mut self, msg: Message, incarnation: u32) -> Result<(), SimError> {
        self.in_flight -= 1;
        let now = self.view.now;
        let pid = match msg.to {
            Endpoint::Commission => {
                self.trace.push(now, TraceEvent::Delivered(msg.clone()));
                return self.dispatch(Endpoint::Commission, Input::Message(&msg));
            }
            Endpoint::Process(p) => p,
        };
        let current = self.incarnation.get(&pid).copied().unwrap_or(0);
        match self.view.status(pid) {
            Some(Status::Crashed) | None => {
                self.trace.push(now, TraceEvent::LostToCrash(msg));
                Ok(())
            }
            _ if current != incarnation => {
                self.trace.push(now, TraceEvent::LostToCrash(msg));
                Ok(())
            }
            Some(Status::Slow) => {
                self.trace.push(now, TraceEvent::Delivered(msg.clone()));
                self.backlog
                    .entry(pid)
                    .or_default()
                    .push_back(Deferred::Message(msg));
                Ok(())
            }
            Some(Status::Up) => {
                self.trace.push(now, TraceEvent::Delivered(msg.clone()));
                self.dispatch(pid.into(), Input::Message(&msg))
            }
        }
    }

    fn quiescent(&self) -> bool {
        self.in_flight == 0 && self.timers.is_empty()
    }

    /// Runs the schedule to completion (empty queue) or to `max_sim_time`.
    pub fn run(mut self, schedule: &FaultSchedule) -> Result<RunOutcome, SimError> {
        schedule.validate(&self.members)?;
        for &(t, fault) in &schedule.entries {
            self.enqueue(t, EventKind::Fault(fault));
        }
        let mut truncated = false;
        let mut processed = 0usize;
        while let Some(ev) = self.queue.pop() {
            if ev.at > self.config.max_sim_time {
                truncated = true;
                break;
            }
            self.view.now = ev.at;
            match ev.kind {
                EventKind::Deliver { msg, incarnation } => self.deliver(msg, incarnation)?,
                EventKind::TimerFire { node, timer } => {
                    if self.timers.get(&(node, timer)).map(|&(s, _)| s) == Some(ev.seq) {
                        self.timers.remove(&(node, timer));
                        self.fire_timer(node, timer)?;
                    }
                }
                EventKind::Fault(f) => self.handle_fault(f)?,
            }
            processed += 1;
            if processed > self.config.max_events {
                return Err(SimError::Livelock {
                    limit: self.config.max_events,
                    time: self.view.now,
                });
            }
            if self.quiescent() {
                self.trace.push(self.view.now, TraceEvent::Quiescent);
            }
        }
        for node in self.view.processes.values_mut() {
            node.pending_timers = self
                .timers
                .iter()
                .filter(|((ep, _), _)| *ep == Endpoint::Process(node.pid))
                .map(|((_, t), &(_, at))| (*t, at))
                .collect();
        }
        self.view.ec = self.protocol.commission();
        Ok(RunOutcome {
            trace: self.trace,
            view: self.view,
            truncated,
        })
    }
}

fn link(a: ProcessId, b: ProcessId) -> (ProcessId, ProcessId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Runs `algorithm` on processes `1..=n`.
pub fn simulate(
    algorithm: crate::protocol::Algorithm,
    n: u32,
    schedule: &FaultSchedule,
    config: &SimConfig,
) -> Result<RunOutcome, SimError> {
    Simulator::new(config.clone(), (1..=n).map(ProcessId), algorithm.build())?.run(schedule)
}
