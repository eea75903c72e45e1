//! Subcommand implementations. Each returns the process exit code; `Err`
//! means a usage, config or I/O problem and maps to exit code 1.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use greedy_core::analysis::{
    residual_extrema, verify_block_partition, verify_descent_inequality, verify_energy_identity,
    verify_greedy_condition, ResidualExtrema, VerificationReport,
};
use greedy_core::counterexample::{run_counterexample, CounterexampleConfig, MarkReport, MARK_TOL};
use greedy_core::dictionary::{CoherenceEstimate, ADMISSIBILITY_TOL};
use greedy_core::greedy::{run, Status, Trace};
use greedy_core::io::{read_trace_csv, write_trace_csv, write_trace_json, TraceMeta};
use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ABORTED: u8 = 2;
pub const EXIT_FAILED_CHECK: u8 = 3;

/// Sidecar path next to a trace, e.g. `out/trace.csv` -> `out/trace.meta.json`.
pub fn sidecar(trace: &Path, suffix: &str) -> PathBuf {
    trace.with_extension(suffix)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_csv(path: &Path, trace: &Trace<f64>) -> Result<()> {
    let mut w = create(path)?;
    write_trace_csv(trace, &mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

/// Metadata written beside every `run` trace.
#[derive(Serialize)]
pub struct RunMeta {
    #[serde(flatten)]
    pub trace: TraceMeta,
    pub seed: u64,
    pub config: ExperimentConfig,
}

/// Output locations of one `run`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutputs {
    pub trace: PathBuf,
    pub meta: PathBuf,
    pub json: Option<PathBuf>,
}

impl RunOutputs {
    /// Config paths are relative to the config directory; `out` (from the
    /// command line) overrides the trace path.
    pub fn resolve(cfg: &ExperimentConfig, base: &Path, out: Option<&Path>) -> Result<Self> {
        let trace = match (out, &cfg.output.trace) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => base.join(p),
            (None, None) => bail!("no trace output: set [output] trace or pass --out"),
        };
        let meta = match (out, &cfg.output.meta) {
            (None, Some(p)) => base.join(p),
            _ => sidecar(&trace, "meta.json"),
        };
        Ok(Self {
            meta,
            json: cfg.output.json.as_ref().map(|p| base.join(p)),
            trace,
        })
    }
}

/// Runs one experiment and writes its outputs.
pub fn run_experiment(
    mut cfg: ExperimentConfig,
    base: &Path,
    out: Option<&Path>,
) -> Result<(u8, Trace<f64>, RunOutputs)> {
    cfg.apply_seed_override()?;
    let outputs = RunOutputs::resolve(&cfg, base, out)?;
    let ex = Experiment::prepare(&cfg, base)?;
    let trace = run(
        &ex.target,
        &ex.dictionary,
        &ex.schedule,
        &ex.policy,
        ex.options,
    );

    write_csv(&outputs.trace, &trace)?;
    let meta = RunMeta {
        trace: TraceMeta::of(&trace),
        seed: cfg.seed,
        config: cfg,
    };
    write_json(&outputs.meta, &meta)?;
    if let Some(path) = &outputs.json {
        let mut w = create(path)?;
        write_trace_json(&trace, &mut w)?;
        w.flush()?;
    }
    let code = match trace.status {
        Status::Aborted { .. } => EXIT_ABORTED,
        _ => EXIT_OK,
    };
    Ok((code, trace, outputs))
}

fn describe_status(trace: &Trace<f64>) -> String {
    let last = trace
        .final_residual_norm()
        .map_or("n/a".into(), |r| format!("{r:.6e}"));
    match &trace.status {
        Status::Exhausted { steps } => {
            format!("exhausted after {steps} steps, final residual {last}")
        }
        Status::Stopped { m } => format!("stopped at step {m} (zero remainder)"),
        Status::Aborted { step, reason } => format!("aborted at step {step}: {reason}"),
    }
}

pub fn cmd_run(config: &Path, out: Option<&Path>) -> Result<u8> {
    let (cfg, base) = ExperimentConfig::load(config)?;
    let (code, trace, outputs) = run_experiment(cfg, &base, out)?;
    eprintln!("{}: {}", outputs.trace.display(), describe_status(&trace));
    Ok(code)
}

/// Runs several configs on separate threads. Exit code is the largest
/// code among them; a config that fails to load counts as 1.
pub fn cmd_sweep(configs: &[PathBuf], jobs: usize) -> Result<u8> {
    if configs.is_empty() {
        bail!("sweep needs at least one config");
    }
    let mut loaded = Vec::with_capacity(configs.len());
    for path in configs {
        let (cfg, base) = ExperimentConfig::load(path)?;
        let outputs =
            RunOutputs::resolve(&cfg, &base, None).with_context(|| path.display().to_string())?;
        loaded.push((path.clone(), cfg, base, outputs));
    }
    let mut claimed = std::collections::BTreeSet::new();
    for (path, _, _, o) in &loaded {
        for p in [Some(&o.trace), Some(&o.meta), o.json.as_ref()]
            .into_iter()
            .flatten()
        {
            if !claimed.insert(p.clone()) {
                bail!(
                    "{}: output {} is shared with another config",
                    path.display(),
                    p.display()
                );
            }
        }
    }

    let jobs = jobs.max(1);
    let mut results: Vec<(PathBuf, Result<(u8, String)>)> = Vec::with_capacity(loaded.len());
    let mut queue = loaded.into_iter();
    loop {
        let batch: Vec<_> = queue.by_ref().take(jobs).collect();
        if batch.is_empty() {
            break;
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .into_iter()
                .map(|(path, cfg, base, _)| {
                    let h = s.spawn(move || {
                        run_experiment(cfg, &base, None)
                            .map(|(code, trace, _)| (code, describe_status(&trace)))
                    });
                    (path, h)
                })
                .collect();
            for (path, h) in handles {
                let r = h
                    .join()
                    .unwrap_or_else(|_| Err(anyhow::anyhow!("worker panicked")));
                results.push((path, r));
            }
        });
    }

    let mut worst = EXIT_OK;
    for (path, r) in results {
        match r {
            Ok((code, summary)) => {
                eprintln!("{}: exit {code}, {summary}", path.display());
                worst = worst.max(code);
            }
            Err(e) => {
                eprintln!("{}: error: {e:#}", path.display());
                worst = worst.max(1);
            }
        }
    }
    Ok(worst)
}

#[derive(Serialize)]
struct CounterexampleMeta<'a> {
    #[serde(flatten)]
    trace: TraceMeta,
    t: f64,
    k: usize,
    groups: usize,
    plan_len: usize,
    marks: &'a [MarkReport],
}

pub struct CounterexampleArgs<'a> {
    pub t: f64,
    pub groups: usize,
    pub k: Option<usize>,
    pub max_steps: Option<usize>,
    pub out: &'a Path,
    pub marks: Option<&'a Path>,
}

pub fn cmd_counterexample(args: CounterexampleArgs<'_>) -> Result<u8> {
    let cfg = match args.k {
        Some(k) => CounterexampleConfig::with_k(args.t, k, args.groups),
        None => CounterexampleConfig::new(args.t, args.groups),
    }?;
    let result = run_counterexample(&cfg, args.max_steps.unwrap_or(usize::MAX))?;
    let marks_path = args
        .marks
        .map_or_else(|| sidecar(args.out, "marks.json"), Path::to_path_buf);

    write_csv(args.out, &result.trace)?;
    write_json(&marks_path, &result.marks)?;
    write_json(
        &sidecar(args.out, "meta.json"),
        &CounterexampleMeta {
            trace: TraceMeta::of(&result.trace),
            t: cfg.t,
            k: cfg.k,
            groups: cfg.num_groups,
            plan_len: result.plan.len(),
            marks: &result.marks,
        },
    )?;

    for m in &result.marks {
        eprintln!(
            "group {} (h = {}): residual {:.12} at step {}, {:.3e} after zeroing at step {}",
            m.group,
            m.h,
            m.residual_at_mark,
            m.subnorm_one_step,
            m.residual_after_zeroing,
            m.zeroed_step
        );
    }
    if let Status::Aborted { step, reason } = &result.trace.status {
        eprintln!("plan rejected at step {step}: {reason}");
        return Ok(EXIT_FAILED_CHECK);
    }
    if !result.marks_reach_one() {
        eprintln!("some group ended its saturation phase below 1 - {MARK_TOL:e}");
        return Ok(EXIT_FAILED_CHECK);
    }
    eprintln!(
        "k = {}, {} groups, {} steps; every mark at residual >= 1 - {MARK_TOL:e}",
        cfg.k,
        result.marks.len(),
        result.trace.len()
    );
    Ok(EXIT_OK)
}

pub struct CheckArgs<'a> {
    pub trace: &'a Path,
    pub report: Option<&'a Path>,
    pub meta: Option<&'a Path>,
    pub require_blocks: bool,
    pub energy_tol: f64,
    pub coherence: Option<f64>,
    pub epsilon: Option<f64>,
    pub from_step: Option<usize>,
    pub burn_in: usize,
}

#[derive(Serialize)]
struct CheckReport {
    trace: PathBuf,
    steps: usize,
    meta_applied: bool,
    #[serde(flatten)]
    verification: VerificationReport,
    extrema: Option<ResidualExtrema>,
    warnings: Vec<String>,
}

pub fn cmd_check(args: CheckArgs<'_>) -> Result<u8> {
    let file =
        File::open(args.trace).with_context(|| format!("cannot open {}", args.trace.display()))?;
    let mut trace = read_trace_csv(std::io::BufReader::new(file))
        .with_context(|| format!("reading {}", args.trace.display()))?;
    let mut warnings = Vec::new();

    let meta_path = args.meta.map(Path::to_path_buf).or_else(|| {
        let p = sidecar(args.trace, "meta.json");
        p.exists().then_some(p)
    });
    let meta_applied = match &meta_path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read {}", p.display()))?;
            let meta: TraceMeta = serde_json::from_str(&text)
                .with_context(|| format!("bad metadata in {}", p.display()))?;
            if meta.steps != trace.len() {
                bail!(
                    "{} describes {} steps, trace has {}",
                    p.display(),
                    meta.steps,
                    trace.len()
                );
            }
            meta.apply(&mut trace);
            true
        }
        None => {
            warnings.push("no metadata: step 1 of the energy identity is skipped".into());
            false
        }
    };

    let mut report = verify_energy_identity(&trace, args.energy_tol)
        .merge(verify_greedy_condition(&trace, ADMISSIBILITY_TOL));
    let blocks = verify_block_partition(&trace);
    if blocks.checks[0].applicable == 0 && args.require_blocks {
        warnings.push(
            "block partition requested but the trace has no block labels; not applicable".into(),
        );
    }
    if blocks.checks[0].applicable > 0 || args.require_blocks {
        report = report.merge(blocks);
    }
    if let Some(c) = args.coherence {
        let Some(eps) = args.epsilon else {
            bail!("--coherence needs --epsilon");
        };
        // A user-supplied constant is treated as an estimate: the check is advisory.
        let est = CoherenceEstimate {
            value: c,
            samples: 1,
            seed: 0,
        };
        match verify_descent_inequality(&trace, &est, eps, args.from_step.unwrap_or(1), 1e-12) {
            Ok(r) => {
                if !r.all_passed {
                    warnings.push("descent inequality violated (advisory)".into());
                }
                report = report.merge(r);
            }
            Err(e) => warnings.push(format!("descent inequality skipped: {e}")),
        }
    }
    let extrema = match residual_extrema(&trace, args.burn_in) {
        Ok(x) => Some(x),
        Err(e) => {
            warnings.push(format!("no residual extrema: {e}"));
            None
        }
    };

    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let failed: Vec<String> = report
        .checks
        .iter()
        .filter(|c| c.hard && !c.passed)
        .map(|c| c.name.clone())
        .collect();
    for c in &report.checks {
        let verdict = if c.passed {
            "ok"
        } else if c.hard {
            "FAILED"
        } else {
            "warn"
        };
        let at = c
            .first_failure
            .map_or(String::new(), |m| format!(", first failure at step {m}"));
        eprintln!(
            "{}: {verdict} ({} steps checked, worst {:.3e}{at})",
            c.name, c.applicable, c.worst_violation
        );
    }

    let doc = CheckReport {
        trace: args.trace.to_path_buf(),
        steps: trace.len(),
        meta_applied,
        verification: report,
        extrema,
        warnings,
    };
    match args.report {
        Some(p) => write_json(p, &doc)?,
        None => println!("{}", serde_json::to_string_pretty(&doc)?),
    }
    if failed.is_empty() {
        Ok(EXIT_OK)
    } else {
        eprintln!("failed: {}", failed.join(", "));
        Ok(EXIT_FAILED_CHECK)
    }
}
