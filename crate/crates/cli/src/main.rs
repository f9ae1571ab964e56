//! Command-line front end for the `skelet17` simulator.
//!
//! Exit codes: 0 success, 1 verification failure, 2 Halt reached, 3 invalid input.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use skelet17::accel::{n_curve, run_batched};
use skelet17::epoch::{run_epoch_traced, EpochOptions, EpochReport, Tier};
use skelet17::machine::{run_naive, NoTrace, Outcome, RuleCounts, StepEvent, TraceSink};
use skelet17::verify::{run_suite, suite_all, SuiteResult};
use skelet17::{Error, State, StateVars};

const DEFAULT_STEPS: u64 = 1_000_000;
/// Trace lines omit the state for states with more entries than this, unless `--full-states`.
const TRACE_STATE_LIMIT: usize = 32;

#[derive(Parser, Debug)]
#[command(name = "skelet17", version, about = "Simulate and verify the Skelet #17 counter process")]
struct Cli {
    #[arg(long, value_enum, global = true, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run from a state (tiers t0, t1) or through epoch k (any tier).
    Run {
        /// A state such as `0,2,4,0`, or `k=K` for the epoch start S_K.
        #[arg(long)]
        start: Start,
        /// Defaults to t1 for state starts and t3 for epoch starts.
        #[arg(long)]
        tier: Option<Tier>,
        /// Rule applications to perform (state starts only; default 1000000).
        #[arg(long)]
        steps: Option<u64>,
        /// Write one JSON object per rule boundary to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Include the state in every trace line regardless of its size.
        #[arg(long)]
        full_states: bool,
    },
    /// Run property suites.
    Verify {
        /// table, gray, incr, embanked, epoch or all.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 3)]
        k_max: u32,
    },
    /// Run one epoch and write its report as JSON.
    Epoch {
        #[arg(long)]
        k: u32,
        #[arg(long, default_value_t = Tier::T3)]
        tier: Tier,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip the per-step bound checks on tiers t2 and t3.
        #[arg(long)]
        no_check: bool,
    },
    /// Write the n curve of one empty-to-empty transit as CSV.
    Ncurve {
        #[arg(long)]
        state: State,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Debug)]
enum Start {
    State(State),
    Epoch(u32),
}

impl FromStr for Start {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().strip_prefix("k=") {
            Some(k) => match k.parse::<u32>() {
                Ok(k) if k >= 1 => Ok(Start::Epoch(k)),
                _ => Err(format!("expected k=K with K >= 1, got {s:?}")),
            },
            None => s.parse().map(Start::State).map_err(|e: Error| e.to_string()),
        }
    }
}

/// Failure with its exit code.
#[derive(Debug)]
struct Exit {
    code: u8,
    message: String,
}

impl Exit {
    fn invalid(message: impl Into<String>) -> Self {
        Exit { code: 3, message: message.into() }
    }
}

impl From<Error> for Exit {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Halted { .. } => 2,
            Error::InvalidState(_)
            | Error::Parse { .. }
            | Error::Precondition(_)
            | Error::IndexOutOfRange { .. }
            | Error::TooLong(_)
            | Error::ZeroValuation => 3,
            _ => 1,
        };
        Exit { code, message: e.to_string() }
    }
}

impl From<io::Error> for Exit {
    fn from(e: io::Error) -> Self {
        Exit::invalid(e.to_string())
    }
}

impl From<csv::Error> for Exit {
    fn from(e: csv::Error) -> Self {
        Exit::invalid(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    let format = cli.format;
    let result = match cli.command {
        Command::Run { start, tier, steps, trace, full_states } => {
            cmd_run(start, tier, steps, trace.as_deref(), full_states, format)
        }
        Command::Verify { suite, k_max } => cmd_verify(&suite, k_max, format),
        Command::Epoch { k, tier, out, no_check } => cmd_epoch(k, tier, out.as_deref(), !no_check),
        Command::Ncurve { state, out } => cmd_ncurve(&state, out.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(exit) => {
            eprintln!("error: {}", exit.message);
            ExitCode::from(exit.code)
        }
    }
}

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

#[derive(Serialize)]
struct TraceLine<'a> {
    step: u64,
    rule: &'a str,
    count: u64,
    n: u64,
    ell: u32,
    sigma: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    state: Option<String>,
}

struct JsonLines<W: Write> {
    out: W,
    full_states: bool,
}

impl<W: Write> TraceSink for JsonLines<W> {
    fn record(&mut self, step: u64, event: &StepEvent, state: &State) -> skelet17::Result<()> {
        let vars = event.after.unwrap_or(event.before);
        let line = TraceLine {
            step,
            rule: event.rule.name(),
            count: event.count,
            n: vars.n,
            ell: vars.ell,
            sigma: vars.sigma.as_i64(),
            state: (self.full_states || state.indexed().len() <= TRACE_STATE_LIMIT).then(|| state.to_string()),
        };
        let text = serde_json::to_string(&line).expect("trace lines always serialize");
        writeln!(self.out, "{text}").map_err(|e| Error::Precondition(format!("writing trace: {e}")))
    }
}

#[derive(Serialize)]
struct RunSummary {
    state: String,
    #[serde(flatten)]
    vars: StateVars,
    steps: u64,
    halted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    counts: Option<RuleCounts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    overflow_count: Option<u64>,
}

impl RunSummary {
    fn print(&self, format: Format) {
        match format {
            Format::Json => println!("{}", serde_json::to_string(self).expect("summary always serializes")),
            Format::Text => {
                println!("state: {}", self.state);
                println!("n={} ell={} sigma={:+}", self.vars.n, self.vars.ell, self.vars.sigma.as_i64());
                if let Some(c) = &self.counts {
                    println!(
                        "steps={} overflow={} halt={} zero={} halve={} increment={}",
                        self.steps, c.overflow, c.halt, c.zero, c.halve, c.increment
                    );
                }
                if let Some(o) = self.overflow_count {
                    println!("overflow={o}");
                }
                if self.halted {
                    println!("halted");
                }
            }
        }
    }
}

fn cmd_run(
    start: Start,
    tier: Option<Tier>,
    steps: Option<u64>,
    trace: Option<&Path>,
    full_states: bool,
    format: Format,
) -> Result<u8, Exit> {
    let mut sink = match trace {
        Some(p) => Some(JsonLines { out: BufWriter::new(File::create(p)?), full_states }),
        None => None,
    };
    let summary = match start {
        Start::State(state) => {
            let budget = steps.unwrap_or(DEFAULT_STEPS);
            let run = match (tier.unwrap_or(Tier::T1), sink.as_mut()) {
                (Tier::T0, Some(s)) => run_naive(&state, budget, s)?,
                (Tier::T0, None) => run_naive(&state, budget, &mut NoTrace)?,
                (Tier::T1, Some(s)) => run_batched(&state, budget, s)?,
                (Tier::T1, None) => run_batched(&state, budget, &mut NoTrace)?,
                (t, _) => return Err(Exit::invalid(format!("tier {t} needs an epoch start k=K"))),
            };
            let (final_state, halted) = match run.outcome {
                Outcome::Running(s) => (s, false),
                Outcome::Halted { state, .. } => (state, true),
            };
            RunSummary {
                vars: final_state.vars()?,
                state: final_state.to_string(),
                steps: run.counts.steps(),
                halted,
                counts: Some(run.counts),
                overflow_count: None,
            }
        }
        Start::Epoch(k) => {
            if steps.is_some() {
                return Err(Exit::invalid("--steps applies to state starts only"));
            }
            let tier = tier.unwrap_or(Tier::T3);
            let opts = EpochOptions::new(tier);
            let report = match (tier, sink.as_mut()) {
                (Tier::T2 | Tier::T3, Some(_)) => return Err(Exit::invalid(format!("tier {tier} has no per-step trace"))),
                (_, Some(s)) => run_epoch_traced(k, opts, s)?,
                (_, None) => run_epoch_traced(k, opts, &mut NoTrace)?,
            };
            RunSummary {
                vars: report.s_next.vars()?,
                state: report.s_next.to_string(),
                steps: report.naive_step_total.unwrap_or(0),
                halted: false,
                counts: None,
                overflow_count: Some(report.overflow_count),
            }
        }
    };
    if let Some(mut s) = sink {
        s.out.flush()?;
    }
    summary.print(format);
    Ok(if summary.halted { 2 } else { 0 })
}

fn cmd_verify(suite: &str, k_max: u32, format: Format) -> Result<u8, Exit> {
    let results: Vec<SuiteResult> = match suite {
        "all" => suite_all(k_max)?,
        name => vec![run_suite(name, k_max)?],
    };
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&results).expect("results always serialize")),
        Format::Text => results.iter().for_each(|r| print!("{r}")),
    }
    Ok(if results.iter().all(SuiteResult::passed) { 0 } else { 1 })
}

fn cmd_epoch(k: u32, tier: Tier, out: Option<&Path>, check: bool) -> Result<u8, Exit> {
    if k == 0 {
        return Err(Exit::invalid("k must be at least 1"));
    }
    let report: EpochReport = run_epoch_traced(k, EpochOptions { tier, check }, &mut NoTrace)?;
    let mut w = output(out)?;
    writeln!(w, "{}", report.to_json())?;
    w.flush()?;
    Ok(0)
}

#[derive(Serialize)]
struct CurveRow {
    step: u64,
    n: u64,
    sigma: i64,
    rule: &'static str,
}

fn cmd_ncurve(state: &State, out: Option<&Path>) -> Result<u8, Exit> {
    let points = n_curve(state)?;
    let mut w = csv::Writer::from_writer(output(out)?);
    for p in points {
        w.serialize(CurveRow { step: p.step, n: p.n, sigma: p.sigma, rule: p.rule.map_or("", |r| r.name()) })?;
    }
    w.flush()?;
    Ok(0)
}
