//! Running scenarios and comparing algorithms side by side.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::RangeInclusive;

use thiserror::Error;

use crate::metrics::{
    analyze, expected_messages, AnalysisError, Expected, MetricsReport, ScenarioKind,
};
use crate::protocol::Algorithm;
use crate::scenario::{canonical, Scenario};
use crate::simnet::{simulate, FaultSchedule, RunOutcome, SimConfig, SimError};

#[derive(Debug, Error, PartialEq)]
pub enum RunError {
    #[error("{algorithm} seed {seed}: {source}")]
    Sim {
        algorithm: Algorithm,
        seed: u64,
        source: SimError,
    },
    #[error("{algorithm} seed {seed}: {source}")]
    Analysis {
        algorithm: Algorithm,
        seed: u64,
        source: AnalysisError,
    },
}

pub struct RunResult {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub outcome: RunOutcome,
    pub report: MetricsReport,
    /// `expected X, observed Y` lines for failed assertions.
    pub failures: Vec<String>,
}

pub fn run_one(
    algorithm: Algorithm,
    n: u32,
    schedule: &FaultSchedule,
    config: &SimConfig,
) -> Result<(RunOutcome, MetricsReport), RunError> {
    let seed = config.seed;
    let outcome = simulate(algorithm, n, schedule, config).map_err(|source| RunError::Sim {
        algorithm,
        seed,
        source,
    })?;
    let report = analyze(&outcome.trace, &outcome.view).map_err(|source| RunError::Analysis {
        algorithm,
        seed,
        source,
    })?;
    Ok((outcome, report))
}

/// Every (algorithm, seed) pair of the scenario, ordered by algorithm then
/// seed.
pub fn run_scenario(scenario: &Scenario, seeds: &[u64]) -> Result<Vec<RunResult>, RunError> {
    let mut results = Vec::new();
    for algorithm in scenario.algorithm.algorithms() {
        for &seed in seeds {
            let (outcome, report) = run_one(
                algorithm,
                scenario.n,
                &scenario.faults,
                &scenario.config_for(seed),
            )?;
            let failures = scenario
                .assertions
                .iter()
                .filter(|a| a.applies_to(algorithm))
                .filter_map(|a| {
                    a.check(&report, &outcome.view).err().map(|observed| {
                        format!("{algorithm} seed {seed}: expected {a}, observed {observed}")
                    })
                })
                .collect();
            results.push(RunResult {
                algorithm,
                seed,
                outcome,
                report,
                failures,
            });
        }
    }
    Ok(results)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub min: u64,
    pub max: u64,
}

impl Stat {
    pub fn of(values: &[u64]) -> Stat {
        let min = values.iter().copied().min().unwrap_or(0);
        let max = values.iter().copied().max().unwrap_or(0);
        let mean = if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<u64>() as f64 / values.len() as f64
        };
        Stat { mean, min, max }
    }
}

impl std::fmt::Display for Stat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.min == self.max {
            write!(f, "{}", self.min)
        } else {
            write!(f, "{:.1}[{}-{}]", self.mean, self.min, self.max)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub total_messages: Stat,
    pub elections: Stat,
    pub redundant: Stat,
    pub violations: Stat,
    pub expected: Option<Expected>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub n: u32,
    pub cells: BTreeMap<Algorithm, Cell>,
}

/// Runs the canonical schedule of `kind` for each `n` and algorithm.
pub fn compare(
    ns: RangeInclusive<u32>,
    kind: ScenarioKind,
    seeds: &[u64],
    config: &SimConfig,
) -> Result<Vec<CompareRow>, RunError> {
    let mut rows = Vec::new();
    for n in ns {
        let (schedule, p) = canonical(kind, n);
        let mut cells = BTreeMap::new();
        for algorithm in Algorithm::ALL {
            let mut totals = Vec::new();
            let mut elections = Vec::new();
            let mut redundant = Vec::new();
            let mut violations = Vec::new();
            for &seed in seeds {
                let config = SimConfig {
                    seed,
                    ..config.clone()
                };
                let (_, r) = run_one(algorithm, n, &schedule, &config)?;
                totals.push(r.total_messages);
                elections.push(r.elections_started);
                redundant.push(r.redundant_elections);
                violations.push(r.violations);
            }
            cells.insert(
                algorithm,
                Cell {
                    total_messages: Stat::of(&totals),
                    elections: Stat::of(&elections),
                    redundant: Stat::of(&redundant),
                    violations: Stat::of(&violations),
                    expected: expected_messages(algorithm, u64::from(n), u64::from(p), kind).ok(),
                },
            );
        }
        rows.push(CompareRow { n, cells });
    }
    Ok(rows)
}

/// A rectangular table rendered as aligned text or CSV.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn plain(&self) -> String {
        let mut widths: Vec<usize> = self.headers.iter().map(String::len).collect();
        for row in &self.rows {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        for row in std::iter::once(&self.headers).chain(&self.rows) {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }

    pub fn csv(&self) -> String {
        let mut out = String::new();
        for row in std::iter::once(&self.headers).chain(&self.rows) {
            let fields: Vec<String> = row.iter().map(|c| csv_field(c)).collect();
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn expected_str(e: Option<Expected>) -> String {
    match e {
        Some(Expected::Exact(v)) => v.to_string(),
        Some(Expected::Between(lo, hi)) => format!("{lo}..={hi}"),
        None => "-".into(),
    }
}

/// One row per `n`; per algorithm: messages, elections, redundant
/// elections, violations and the closed-form count.
pub fn compare_table(rows: &[CompareRow]) -> Table {
    let mut headers = vec!["n".to_string()];
    for a in Algorithm::ALL {
        for col in ["msgs", "elections", "redundant", "violations", "formula"] {
            headers.push(format!("{a}.{col}"));
        }
    }
    let rows = rows
        .iter()
        .map(|r| {
            let mut line = vec![r.n.to_string()];
            for a in Algorithm::ALL {
                let c = &r.cells[&a];
                line.push(c.total_messages.to_string());
                line.push(c.elections.to_string());
                line.push(c.redundant.to_string());
                line.push(c.violations.to_string());
                line.push(expected_str(c.expected));
            }
            line
        })
        .collect();
    Table { headers, rows }
}

/// One row per run, followed by a summary row per algorithm when there is
/// more than one seed.
pub fn run_table(results: &[RunResult]) -> Table {
    let headers = [
        "algorithm",
        "seed",
        "messages",
        "raw_sent",
        "elections",
        "redundant",
        "stalled",
        "multi_coord",
        "violations",
        "correct",
        "liveness_failure",
    ]
    .map(String::from)
    .to_vec();
    let mut rows = Vec::new();
    let mut by_alg: BTreeMap<Algorithm, Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        by_alg.entry(r.algorithm).or_default().push(r);
        let m = &r.report;
        rows.push(vec![
            r.algorithm.to_string(),
            r.seed.to_string(),
            m.total_messages.to_string(),
            m.raw_sent.to_string(),
            m.elections_started.to_string(),
            m.redundant_elections.to_string(),
            m.stalled_elections.to_string(),
            m.multi_coordinator_intervals.len().to_string(),
            m.violations.to_string(),
            m.final_view_correct.to_string(),
            m.liveness_failure.to_string(),
        ]);
    }
    for (a, runs) in by_alg.iter().filter(|(_, v)| v.len() > 1) {
        let stat = |f: fn(&MetricsReport) -> u64| {
            Stat::of(&runs.iter().map(|r| f(&r.report)).collect::<Vec<_>>()).to_string()
        };
        let correct = runs.iter().filter(|r| r.report.final_view_correct).count();
        let failing = runs.iter().filter(|r| r.report.liveness_failure).count();
        rows.push(vec![
            a.to_string(),
            "all".into(),
            stat(|m| m.total_messages),
            stat(|m| m.raw_sent),
            stat(|m| m.elections_started),
            stat(|m| m.redundant_elections),
            stat(|m| m.stalled_elections),
            stat(|m| m.multi_coordinator_intervals.len() as u64),
            stat(|m| m.violations),
            format!("{correct}/{}", runs.len()),
            format!("{failing}/{}", runs.len()),
        ]);
    }
    Table { headers, rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_formats_constant_and_spread() {
        assert_eq!(Stat::of(&[4, 4]).to_string(), "4");
        assert_eq!(Stat::of(&[2, 4]).to_string(), "3.0[2-4]");
    }

    #[test]
    fn csv_quotes_commas() {
        let t = Table {
            headers: vec!["a".into(), "b".into()],
            rows: vec![vec!["1,2".into(), "x".into()]],
        };
        assert_eq!(t.csv(), "a,b\n\"1,2\",x\n");
        assert_eq!(t.plain(), "a    b\n1,2  x\n");
    }

    #[test]
    fn two_process_sanity_row() {
        let rows = compare(
            2..=2,
            ScenarioKind::WorstDetect,
            &[0],
            &SimConfig::default(),
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].cells.len(), 4);
    }
}
