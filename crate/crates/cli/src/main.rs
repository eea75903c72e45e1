//! `greedy`: run greedy expansions from config files, generate the
//! non-convergence counterexample, and verify recorded traces.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CheckArgs, CounterexampleArgs};

#[derive(Parser)]
#[command(
    name = "greedy",
    version,
    about = "Greedy expansions with prescribed coefficients"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config; writes the trace CSV and a metadata sidecar.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Trace path, overriding `[output] trace` (metadata goes beside it).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build and execute the adversarial plan for weakening parameter t < 1.
    Counterexample {
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 6)]
        groups: usize,
        #[arg(long)]
        out: PathBuf,
        /// Phase-mark sidecar; defaults to `<out>.marks.json`.
        #[arg(long)]
        marks: Option<PathBuf>,
        /// Base group size; chosen automatically when omitted.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Verify a trace CSV and write a JSON report.
    Check {
        #[arg(long)]
        trace: PathBuf,
        /// Report path; printed to stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Metadata sidecar; `<trace>.meta.json` is used when present.
        #[arg(long)]
        meta: Option<PathBuf>,
        /// Check the block partition even when the trace has no block labels.
        #[arg(long)]
        require_blocks: bool,
        #[arg(long, default_value_t = 1e-10)]
        energy_tol: f64,
        /// Coherence constant for the (advisory) descent check.
        #[arg(long, requires = "epsilon")]
        coherence: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        from_step: Option<usize>,
        /// Steps excluded from the running minimum and maximum.
        #[arg(long, default_value_t = 0)]
        burn_in: usize,
    },
    /// Run several configs in parallel; each keeps its own outputs.
    Sweep {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out } => commands::cmd_run(config, out.as_deref()),
        Command::Counterexample {
            t,
            groups,
            out,
            marks,
            k,
            max_steps,
        } => commands::cmd_counterexample(CounterexampleArgs {
            t: *t,
            groups: *groups,
            k: *k,
            max_steps: *max_steps,
            out,
            marks: marks.as_deref(),
        }),
        Command::Check {
            trace,
            report,
            meta,
            require_blocks,
            energy_tol,
            coherence,
            epsilon,
            from_step,
            burn_in,
        } => commands::cmd_check(CheckArgs {
            trace,
            report: report.as_deref(),
            meta: meta.as_deref(),
            require_blocks: *require_blocks,
            energy_tol: *energy_tol,
            coherence: *coherence,
            epsilon: *epsilon,
            from_step: *from_step,
            burn_in: *burn_in,
        }),
        Command::Sweep { configs, jobs } => {
            let jobs =
                jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            commands::cmd_sweep(configs, jobs)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
