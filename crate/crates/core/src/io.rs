//! Trace serialization.
//!
//! The canonical trace format is CSV with the header
//! `m,atom,c,t,ip,sup,residual_norm,block`; floats are written with 17
//! significant digits so that reading a file back reproduces every value
//! bit for bit. Run metadata lives in a JSON sidecar.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dictionary::AtomId;
use crate::greedy::{Status, StepRecord, Trace, Truncation};
use crate::scalar::Scalar;

pub const CSV_HEADER: [&str; 8] = ["m", "atom", "c", "t", "ip", "sup", "residual_norm", "block"];

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unexpected header {0:?}")]
    Header(Vec<String>),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
}

/// Formats a float with 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_trace_csv<S: Scalar, W: Write>(
    trace: &Trace<S>,
    writer: W,
) -> Result<(), TraceIoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for s in &trace.steps {
        w.write_record([
            s.m.to_string(),
            s.atom.to_string(),
            format_float(s.c.as_f64()),
            format_float(s.t.as_f64()),
            format_float(s.ip.as_f64()),
            format_float(s.sup.as_f64()),
            format_float(s.residual_norm.as_f64()),
            s.block.map(|b| b.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV trace. The result has no initial norm and an `Exhausted`
/// status until metadata is applied with [`TraceMeta::apply`].
///
/// The trailing `block` column may be absent altogether; every step then has
/// no block label.
pub fn read_trace_csv<R: Read>(reader: R) -> Result<Trace<f64>, TraceIoError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let has_block = header == CSV_HEADER;
    if !has_block && header != CSV_HEADER[..7] {
        return Err(TraceIoError::Header(header));
    }
    let mut steps = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let row = k + 1;
        let rec = rec?;
        let bad = |message: String| TraceIoError::Row { row, message };
        let float = |col: usize| -> Result<f64, TraceIoError> {
            rec[col]
                .trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("column {}: {e}", CSV_HEADER[col])))
        };
        let m: usize = rec[0].trim().parse().map_err(|e| bad(format!("m: {e}")))?;
        if m != row {
            return Err(bad(format!("step index {m} out of sequence")));
        }
        let atom: AtomId = rec[1].trim().parse().map_err(|e| bad(format!("{e}")))?;
        let block = match rec.get(7).filter(|_| has_block).map(str::trim) {
            None | Some("") => None,
            Some(b) => Some(b.parse::<u32>().map_err(|e| bad(format!("block: {e}")))?),
        };
        steps.push(StepRecord {
            m,
            atom,
            c: float(2)?,
            t: float(3)?,
            ip: float(4)?,
            sup: float(5)?,
            residual_norm: float(6)?,
            block,
        });
    }
    let n = steps.len();
    Ok(Trace {
        steps,
        initial_norm: None,
        status: Status::Exhausted { steps: n },
        max_steps: n,
        truncation: None,
        remainder: None,
    })
}

/// Sidecar describing how a trace ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub initial_norm: Option<f64>,
    pub final_residual_norm: Option<f64>,
    pub steps: usize,
    pub max_steps: usize,
    pub status: Status,
    pub truncation: Option<Truncation>,
}

impl TraceMeta {
    pub fn of<S: Scalar>(trace: &Trace<S>) -> Self {
        Self {
            initial_norm: trace.initial_norm.map(Scalar::as_f64),
            final_residual_norm: trace.final_residual_norm().map(Scalar::as_f64),
            steps: trace.len(),
            max_steps: trace.max_steps,
            status: trace.status.clone(),
            truncation: trace.truncation,
        }
    }

    pub fn apply(&self, trace: &mut Trace<f64>) {
        trace.initial_norm = self.initial_norm;
        trace.status = self.status.clone();
        trace.max_steps = self.max_steps;
        trace.truncation = self.truncation;
    }
}

#[derive(Serialize)]
struct TraceJson<'a, S> {
    #[serde(flatten)]
    meta: TraceMeta,
    records: &'a [StepRecord<S>],
}

/// Full JSON export: metadata fields plus one object per step.
pub fn write_trace_json<S: Scalar, W: Write>(
    trace: &Trace<S>,
    writer: W,
) -> Result<(), TraceIoError> {
    let doc = TraceJson {
        meta: TraceMeta::of(trace),
        records: &trace.steps,
    };
    serde_json::to_writer_pretty(writer, &doc)?;
    Ok(())
}
