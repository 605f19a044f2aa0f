//! Deterministic discrete-event simulation of Bully-family leader election
//! and the election-commission variant, with trace analysis.

pub mod bully;
pub mod commission;
pub mod compare;
pub mod kordafshari;
pub mod mamun;
pub mod metrics;
pub mod protocol;
pub mod scenario;
pub mod simnet;
pub mod trace;
pub mod types;

pub use compare::{
    compare, compare_table, run_one, run_scenario, run_table, RunError, RunResult, Table,
};
pub use metrics::{
    analyze, expected_messages, messages_between, quadratic_fit, AnalysisError, Expected,
    MetricsReport, MultiCoordinatorInterval, ScenarioKind,
};
pub use protocol::{Action, Algorithm, Context, Input, Protocol, Timing};
pub use scenario::{AlgorithmSel, Assertion, ParseError, Scenario, Seeds};
pub use simnet::{simulate, Fault, FaultSchedule, RunOutcome, SimConfig, SimError, Simulator};
pub use trace::{DropReason, Record, Trace, TraceEvent};
pub use types::{
    correctness_predicate, highest_alive, CommissionView, Endpoint, Message, MessageKind,
    NodeState, ProcessId, Status, SystemView, Time, TimerId, COMMISSION_SIZE,
};
