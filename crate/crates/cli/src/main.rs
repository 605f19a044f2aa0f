//! `leader-sim`: run scenario files and compare election algorithms.
//!
//! Exit status is 0 on success, 1 when a scenario assertion fails and 2 on
//! any configuration or run error.

use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use election_core::metrics::ScenarioKind;
use election_core::scenario::Seeds;
use election_core::{compare, compare_table, run_scenario, run_table, Scenario, SimConfig, Table};

#[derive(Parser)]
#[command(
    name = "leader-sim",
    version,
    about = "Deterministic leader election simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Plain,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, seed) pair of a scenario file.
    Run {
        path: PathBuf,
        /// Run only this seed instead of the file's seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Write one trace file per run into this directory.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "plain")]
        table: TableFormat,
        /// Abort a run after this many events.
        #[arg(long)]
        max_events: Option<usize>,
    },
    /// Tabulate all algorithms over a range of system sizes.
    Compare {
        /// Inclusive range such as `4..16`, or a single size.
        #[arg(long, value_parser = parse_n_range)]
        n: RangeInclusive<u32>,
        /// worst-detect, best-detect, recovery-query, ec-best-winner-is-n-1
        /// or ec-reporter-is-highest.
        #[arg(long)]
        scenario: ScenarioKind,
        /// Half-open range `0..5` or a list `1,2,3`.
        #[arg(long, default_value = "0")]
        seeds: Seeds,
        #[arg(long, value_enum, default_value = "plain")]
        table: TableFormat,
        #[arg(long)]
        max_events: Option<usize>,
    },
}

fn parse_n_range(s: &str) -> Result<RangeInclusive<u32>, String> {
    let bad = || format!("bad size range `{s}`");
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (
            a.parse::<u32>().map_err(|_| bad())?,
            b.trim_start_matches('=')
                .parse::<u32>()
                .map_err(|_| bad())?,
        ),
        None => {
            let v = s.parse::<u32>().map_err(|_| bad())?;
            (v, v)
        }
    };
    if lo < 2 || lo > hi {
        return Err(format!("size range `{s}` must satisfy 2 <= low <= high"));
    }
    Ok(lo..=hi)
}

fn render(table: &Table, format: TableFormat) -> String {
    match format {
        TableFormat::Plain => table.plain(),
        TableFormat::Csv => table.csv(),
    }
}

fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn trace_file_name(scenario: &str, algorithm: &str, seed: u64) -> String {
    let safe: String = scenario
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}-{algorithm}-seed{seed}.tsv")
}

fn run(
    path: &Path,
    seed: Option<u64>,
    trace_out: Option<&Path>,
    table: TableFormat,
    max_events: Option<usize>,
) -> ExitCode {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return config_error(format_args!("{}: {e}", path.display())),
    };
    let mut scenario = match Scenario::parse(&text) {
        Ok(s) => s,
        Err(e) => return config_error(format_args!("{}: {e}", path.display())),
    };
    if let Some(m) = max_events {
        if m == 0 {
            return config_error("--max-events must be positive");
        }
        scenario.config.max_events = m;
    }
    let seeds = seed.map_or_else(|| scenario.seeds.values(), |s| vec![s]);
    let results = match run_scenario(&scenario, &seeds) {
        Ok(r) => r,
        Err(e) => return config_error(e),
    };
    if let Some(dir) = trace_out {
        if let Err(e) = fs::create_dir_all(dir) {
            return config_error(format_args!("{}: {e}", dir.display()));
        }
        for r in &results {
            let file = dir.join(trace_file_name(
                &scenario.name,
                r.algorithm.as_str(),
                r.seed,
            ));
            if let Err(e) = fs::write(&file, r.outcome.trace.to_tsv()) {
                return config_error(format_args!("{}: {e}", file.display()));
            }
        }
    }
    print!("{}", render(&run_table(&results), table));
    let failures: Vec<&String> = results.iter().flat_map(|r| &r.failures).collect();
    for f in &failures {
        eprintln!("assertion failed: {f}");
    }
    if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            path,
            seed,
            trace_out,
            table,
            max_events,
        } => run(&path, seed, trace_out.as_deref(), table, max_events),
        Command::Compare {
            n,
            scenario,
            seeds,
            table,
            max_events,
        } => {
            let mut config = SimConfig::default();
            if let Some(m) = max_events {
                config.max_events = m;
            }
            if let Err(e) = config.validate() {
                return config_error(e);
            }
            match compare(n, scenario, &seeds.values(), &config) {
                Ok(rows) => {
                    print!("{}", render(&compare_table(&rows), table));
                    ExitCode::SUCCESS
                }
                Err(e) => config_error(e),
            }
        }
    }
}
