//! Scenario files and the canonical fault schedules.
//!
//! A scenario file is line oriented:
//!
//! ```text
//! election-scenario v1
//! # comment
//! name = fig4
//! n = 6
//! algorithm = ec            # bully | kordafshari | mamun | ec | all
//! seeds = 0..4              # half-open range, or a list: 1, 2, 7
//! t_msg = 10
//! fault 10 crash 6          # crash | recover | slow | normal | detect <p>
//! fault 20 detect 2         # break | heal <a> <b>;  drop <from> <to> <kind>
//! expect ec:final_coordinator = 5
//! expect redundant_elections <= 0
//! ```
//!
//! Optional keys: `t_pos`, `d`, `drop_probability`, `max_sim_time`,
//! `max_events`. `d` defaults to `2 * t_msg + t_pos`. Unknown keys are errors.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::metrics::{MetricsReport, ScenarioKind};
use crate::protocol::Algorithm;
use crate::simnet::{Fault, FaultSchedule, SimConfig};
use crate::types::{MessageKind, ProcessId, Status, SystemView, Time};

pub const HEADER: &str = "election-scenario v1";

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgorithmSel {
    One(Algorithm),
    All,
}

impl AlgorithmSel {
    pub fn algorithms(self) -> Vec<Algorithm> {
        match self {
            AlgorithmSel::One(a) => vec![a],
            AlgorithmSel::All => Algorithm::ALL.to_vec(),
        }
    }
}

impl fmt::Display for AlgorithmSel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlgorithmSel::One(a) => write!(f, "{a}"),
            AlgorithmSel::All => f.write_str("all"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Seeds {
    /// Half-open.
    Range(u64, u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn values(&self) -> Vec<u64> {
        match self {
            Seeds::Range(a, b) => (*a..*b).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

impl FromStr for Seeds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some((a, b)) = s.split_once("..") {
            let a = a
                .trim()
                .parse()
                .map_err(|_| format!("bad seed range `{s}`"))?;
            let b = b
                .trim()
                .parse()
                .map_err(|_| format!("bad seed range `{s}`"))?;
            if a >= b {
                return Err(format!("empty seed range `{s}`"));
            }
            return Ok(Seeds::Range(a, b));
        }
        let v = s
            .split(',')
            .map(|x| x.trim().parse::<u64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| format!("bad seed list `{s}`"))?;
        Ok(Seeds::List(v))
    }
}

impl fmt::Display for Seeds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Seeds::Range(a, b) => write!(f, "{a}..{b}"),
            Seeds::List(v) => {
                let parts: Vec<String> = v.iter().map(u64::to_string).collect();
                f.write_str(&parts.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Eq,
    Le,
    Ge,
}

impl Cmp {
    fn as_str(self) -> &'static str {
        match self {
            Cmp::Eq => "=",
            Cmp::Le => "<=",
            Cmp::Ge => ">=",
        }
    }

    pub fn holds(self, observed: u64, expected: u64) -> bool {
        match self {
            Cmp::Eq => observed == expected,
            Cmp::Le => observed <= expected,
            Cmp::Ge => observed >= expected,
        }
    }
}

/// `final_coordinator` is accepted on top of the report metrics: the
/// coordinator every up process agrees on.
pub const FINAL_COORDINATOR: &str = "final_coordinator";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assertion {
    pub algorithm: Option<Algorithm>,
    pub metric: String,
    pub cmp: Cmp,
    pub value: u64,
}

impl Assertion {
    pub fn applies_to(&self, algorithm: Algorithm) -> bool {
        self.algorithm.is_none_or(|a| a == algorithm)
    }

    /// `Err` carries the observed value, or a description when there is none.
    pub fn check(&self, report: &MetricsReport, view: &SystemView) -> Result<(), String> {
        let observed = if self.metric == FINAL_COORDINATOR {
            unanimous_coordinator(view)
                .map(|p| u64::from(p.0))
                .ok_or_else(|| "no unanimous coordinator".to_string())?
        } else {
            report
                .metric(&self.metric)
                .ok_or_else(|| format!("unknown metric `{}`", self.metric))?
        };
        if self.cmp.holds(observed, self.value) {
            Ok(())
        } else {
            Err(observed.to_string())
        }
    }
}

impl fmt::Display for Assertion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(a) = self.algorithm {
            write!(f, "{a}:")?;
        }
        write!(f, "{} {} {}", self.metric, self.cmp.as_str(), self.value)
    }
}

/// The coordinator all up processes believe in, if they agree.
pub fn unanimous_coordinator(view: &SystemView) -> Option<ProcessId> {
    let mut beliefs = view
        .processes
        .values()
        .filter(|n| n.status == Status::Up)
        .map(|n| n.believed_coordinator);
    let first = beliefs.next()??;
    beliefs.all(|b| b == Some(first)).then_some(first)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub n: u32,
    pub algorithm: AlgorithmSel,
    /// `seed` is ignored; runs take their seeds from `seeds`.
    pub config: SimConfig,
    pub seeds: Seeds,
    pub faults: FaultSchedule,
    pub assertions: Vec<Assertion>,
}

impl Scenario {
    pub fn members(&self) -> Vec<ProcessId> {
        (1..=self.n).map(ProcessId).collect()
    }

    pub fn config_for(&self, seed: u64) -> SimConfig {
        SimConfig {
            seed,
            ..self.config.clone()
        }
    }

    pub fn parse(text: &str) -> Result<Scenario, ParseError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, strip_comment(l).trim()));
        let header = lines.by_ref().find(|(_, l)| !l.is_empty());
        match header {
            Some((_, l)) if l == HEADER => {}
            Some((no, l)) => return Err(err(no, format!("expected `{HEADER}`, found `{l}`"))),
            None => return Err(err(1, "empty scenario")),
        }

        let mut name = None;
        let mut n = None;
        let mut algorithm = None;
        let mut seeds = Seeds::List(vec![0]);
        let mut config = SimConfig::default();
        let mut d_set = false;
        let mut faults = FaultSchedule::new();
        let mut assertions = Vec::new();

        for (no, line) in lines {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("fault ") {
                let (t, fault) = parse_fault(rest).map_err(|m| err(no, m))?;
                faults.push(t, fault);
                continue;
            }
            if let Some(rest) = line.strip_prefix("expect ") {
                assertions.push(parse_assertion(rest).map_err(|m| err(no, m))?);
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(no, format!("expected `key = value`, found `{line}`")))?;
            let num = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| err(no, format!("`{key}` needs an integer, got `{v}`")))
            };
            match key {
                "name" => name = Some(value.to_string()),
                "n" => {
                    let v = num(value)?;
                    if !(1..=u64::from(u32::MAX)).contains(&v) {
                        return Err(err(no, "n must be at least 1"));
                    }
                    n = Some(v as u32);
                }
                "algorithm" => {
                    algorithm = Some(if value == "all" {
                        AlgorithmSel::All
                    } else {
                        AlgorithmSel::One(value.parse().map_err(|m: String| err(no, m))?)
                    })
                }
                "seeds" => seeds = value.parse().map_err(|m: String| err(no, m))?,
                "t_msg" => config.t_msg = num(value)?,
                "t_pos" => config.t_pos = num(value)?,
                "d" => {
                    config.d = num(value)?;
                    d_set = true;
                }
                "drop_probability" => {
                    config.drop_probability = value
                        .parse()
                        .map_err(|_| err(no, format!("bad probability `{value}`")))?
                }
                "max_sim_time" => config.max_sim_time = num(value)?,
                "max_events" => config.max_events = num(value)? as usize,
                other => return Err(err(no, format!("unknown key `{other}`"))),
            }
        }
        if !d_set {
            config.d = config.fd_timeout();
        }
        let last = text.lines().count().max(1);
        let scenario = Scenario {
            name: name.ok_or_else(|| err(last, "missing `name`"))?,
            n: n.ok_or_else(|| err(last, "missing `n`"))?,
            algorithm: algorithm.ok_or_else(|| err(last, "missing `algorithm`"))?,
            config,
            seeds,
            faults,
            assertions,
        };
        scenario
            .config
            .validate()
            .map_err(|e| err(last, e.to_string()))?;
        scenario
            .faults
            .validate(&scenario.members())
            .map_err(|e| err(last, e.to_string()))?;
        Ok(scenario)
    }

    /// Canonical text; `parse(serialize(s)) == s`.
    pub fn serialize(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "name = {}", self.name);
        let _ = writeln!(out, "n = {}", self.n);
        let _ = writeln!(out, "algorithm = {}", self.algorithm);
        let _ = writeln!(out, "seeds = {}", self.seeds);
        let _ = writeln!(out, "t_msg = {}", c.t_msg);
        let _ = writeln!(out, "t_pos = {}", c.t_pos);
        let _ = writeln!(out, "d = {}", c.d);
        let _ = writeln!(out, "drop_probability = {}", c.drop_probability);
        let _ = writeln!(out, "max_sim_time = {}", c.max_sim_time);
        let _ = writeln!(out, "max_events = {}", c.max_events);
        for (t, f) in &self.faults.entries {
            let _ = writeln!(out, "fault {t} {}", format_fault(f));
        }
        for a in &self.assertions {
            let _ = writeln!(out, "expect {a}");
        }
        out
    }
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(l, _)| l)
}

fn pid(s: &str) -> Result<ProcessId, String> {
    s.parse::<u32>()
        .map(ProcessId)
        .map_err(|_| format!("bad process id `{s}`"))
}

fn parse_fault(s: &str) -> Result<(Time, Fault), String> {
    let w: Vec<&str> = s.split_whitespace().collect();
    let t = w
        .first()
        .and_then(|t| t.parse::<Time>().ok())
        .ok_or_else(|| format!("bad fault time in `{s}`"))?;
    let fault = match &w[1..] {
        ["crash", p] => Fault::Crash(pid(p)?),
        ["recover", p] => Fault::Recover(pid(p)?),
        ["slow", p] => Fault::MarkSlow(pid(p)?),
        ["normal", p] => Fault::MarkNormal(pid(p)?),
        ["detect", p] => Fault::Detect(pid(p)?),
        ["break", a, b] => Fault::BreakLink(pid(a)?, pid(b)?),
        ["heal", a, b] => Fault::HealLink(pid(a)?, pid(b)?),
        ["drop", a, b, k] => Fault::DropNext {
            from: pid(a)?,
            to: pid(b)?,
            kind: k.parse()?,
        },
        _ => return Err(format!("unrecognised fault `{s}`")),
    };
    Ok((t, fault))
}

pub fn format_fault(f: &Fault) -> String {
    match f {
        Fault::Crash(p) => format!("crash {p}"),
        Fault::Recover(p) => format!("recover {p}"),
        Fault::MarkSlow(p) => format!("slow {p}"),
        Fault::MarkNormal(p) => format!("normal {p}"),
        Fault::Detect(p) => format!("detect {p}"),
        Fault::BreakLink(a, b) => format!("break {a} {b}"),
        Fault::HealLink(a, b) => format!("heal {a} {b}"),
        Fault::DropNext { from, to, kind } => format!("drop {from} {to} {kind}"),
    }
}

fn parse_assertion(s: &str) -> Result<Assertion, String> {
    let (lhs, cmp, rhs) = ["<=", ">=", "="]
        .into_iter()
        .find_map(|op| s.split_once(op).map(|(l, r)| (l.trim(), op, r.trim())))
        .ok_or_else(|| format!("assertion needs `=`, `<=` or `>=`: `{s}`"))?;
    let cmp = match cmp {
        "<=" => Cmp::Le,
        ">=" => Cmp::Ge,
        _ => Cmp::Eq,
    };
    let (algorithm, metric) = match lhs.split_once(':') {
        Some((a, m)) => (Some(a.trim().parse::<Algorithm>()?), m.trim()),
        None => (None, lhs),
    };
    let known = metric == FINAL_COORDINATOR || MetricsReport::default().metric(metric).is_some();
    if !known {
        return Err(format!("unknown metric `{metric}`"));
    }
    let value = match rhs {
        "true" => 1,
        "false" => 0,
        v => v.parse().map_err(|_| format!("bad expected value `{v}`"))?,
    };
    Ok(Assertion {
        algorithm,
        metric: metric.to_string(),
        cmp,
        value,
    })
}

/// Time of the first fault in every canonical schedule.
pub const FAULT_AT: Time = 10;
/// Time of the detection that follows it.
pub const DETECT_AT: Time = 20;

fn p(id: u32) -> ProcessId {
    ProcessId(id)
}

/// Process `crashed` fails, then `detector` notices.
pub fn single_crash(crashed: u32, detector: u32) -> FaultSchedule {
    FaultSchedule::new()
        .at(FAULT_AT, Fault::Crash(p(crashed)))
        .at(DETECT_AT, Fault::Detect(p(detector)))
}

/// The highest process turns slow but stays up; process 2 suspects it.
pub fn slow_coordinator(n: u32) -> FaultSchedule {
    FaultSchedule::new()
        .at(FAULT_AT, Fault::MarkSlow(p(n)))
        .at(DETECT_AT, Fault::Detect(p(2.min(n - 1).max(1))))
}

/// Process 1 crashes and comes straight back.
pub fn low_id_recovery() -> FaultSchedule {
    FaultSchedule::new()
        .at(FAULT_AT, Fault::Crash(p(1)))
        .at(DETECT_AT, Fault::Recover(p(1)))
}

/// Process `id` crashes and comes straight back while everyone else is up.
pub fn recovery_of(id: u32) -> FaultSchedule {
    FaultSchedule::new()
        .at(FAULT_AT, Fault::Crash(p(id)))
        .at(DETECT_AT, Fault::Recover(p(id)))
}

/// The initiator crashes right after sending its elections.
pub fn mamun_stall(n: u32, detector: u32) -> FaultSchedule {
    single_crash(n, detector).at(DETECT_AT + 1, Fault::Crash(p(detector)))
}

/// Six processes, all up. Process 5 wrongly suspects 6, and 6's answer and
/// announcement to 5 are both lost.
pub fn lost_answer() -> FaultSchedule {
    let drop = |kind| Fault::DropNext {
        from: p(6),
        to: p(5),
        kind,
    };
    FaultSchedule::new()
        .at(FAULT_AT, drop(MessageKind::Answer))
        .at(FAULT_AT, drop(MessageKind::Coordinator))
        .at(DETECT_AT, Fault::Detect(p(5)))
}

/// Canonical schedule for a closed-form scenario, with the `p` the formula
/// takes.
pub fn canonical(kind: ScenarioKind, n: u32) -> (FaultSchedule, u32) {
    assert!(n >= 2, "canonical schedules need two processes");
    match kind {
        ScenarioKind::WorstDetect => (single_crash(n, 1), 1),
        ScenarioKind::BestDetect | ScenarioKind::EcReporterIsHighest => {
            (single_crash(n, n - 1), n - 1)
        }
        ScenarioKind::RecoveryQuery => (low_id_recovery(), 1),
        ScenarioKind::EcBestWinnerIsNMinus1 => {
            let detector = if n >= 4 { 2 } else { 1 };
            (single_crash(n, detector), detector)
        }
    }
}

/// A random but valid schedule of `len` faults over processes `1..=n`.
/// Drop faults are never generated; links can still be broken.
pub fn random_schedule(n: u32, seed: u64, len: usize) -> FaultSchedule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut status = vec![Status::Up; n as usize + 1];
    let mut broken: Vec<(u32, u32)> = Vec::new();
    let mut schedule = FaultSchedule::new();
    let mut t = 0;
    for _ in 0..len {
        t += rng.gen_range(1..=60);
        let id = rng.gen_range(1..=n);
        let fault = match rng.gen_range(0..7) {
            0 | 1 => match status[id as usize] {
                Status::Crashed => Fault::Recover(p(id)),
                _ => Fault::Crash(p(id)),
            },
            2 | 3 => Fault::Detect(p(id)),
            4 => match status[id as usize] {
                Status::Up => Fault::MarkSlow(p(id)),
                _ => Fault::MarkNormal(p(id)),
            },
            5 if n >= 2 => {
                let mut other = rng.gen_range(1..n);
                if other >= id {
                    other += 1;
                }
                Fault::BreakLink(p(id), p(other))
            }
            _ => match broken.pop() {
                Some((a, b)) => Fault::HealLink(p(a), p(b)),
                None => Fault::Detect(p(id)),
            },
        };
        match fault {
            Fault::Crash(x) => status[x.0 as usize] = Status::Crashed,
            Fault::Recover(x) => status[x.0 as usize] = Status::Up,
            Fault::MarkNormal(x) if status[x.0 as usize] == Status::Slow => {
                status[x.0 as usize] = Status::Up
            }
            Fault::MarkSlow(x) => status[x.0 as usize] = Status::Slow,
            Fault::BreakLink(a, b) => broken.push((a.0, b.0)),
            _ => {}
        }
        schedule.push(t, fault);
    }
    schedule
}
