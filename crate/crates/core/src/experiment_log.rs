//! Append-only experiment record (`.aelog`).
//!
//! One record per line: a JSON object with fields in the fixed order
//! `seq, ts, op, params, status, dataset_ref`, keys inside `params` sorted
//! lexicographically, no insignificant whitespace, `\n` terminated. Parsing
//! accepts only this canonical form, so a parsed log re-serializes to the
//! identical bytes.

use crate::workflow::plan::{PlanSource, Step, WorkflowPlan};
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("sequence gap: expected seq {expected}, got {found}")]
    SequenceGap { expected: u64, found: u64 },
    #[error("malformed record at line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("storage failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordStatus {
    Ok,
    Error(String),
}

impl fmt::Display for RecordStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordStatus::Ok => f.write_str("ok"),
            RecordStatus::Error(code) => write!(f, "error:{code}"),
        }
    }
}

impl Serialize for RecordStatus {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RecordStatus {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "ok" => Ok(RecordStatus::Ok),
            _ => match s.strip_prefix("error:") {
                Some(code) if !code.is_empty() => Ok(RecordStatus::Error(code.to_string())),
                _ => Err(serde::de::Error::custom(format!("invalid status {s:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRecord {
    pub seq: u64,
    pub ts: String,
    pub op: String,
    pub params: BTreeMap<String, Json>,
    pub status: RecordStatus,
    pub dataset_ref: Option<String>,
}

impl LogRecord {
    /// Canonical line including the trailing newline.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("record serializes");
        s.push('\n');
        s
    }

    pub fn is_ok(&self) -> bool {
        self.status == RecordStatus::Ok
    }
}

fn valid_timestamp(ts: &str) -> bool {
    ts.len() == 24
        && ts.ends_with('Z')
        && chrono::NaiveDateTime::parse_from_str(&ts[..23], "%Y-%m-%dT%H:%M:%S%.3f").is_ok()
}

/// Parses one line (without its terminator) and checks it is canonical.
pub fn parse_line(line: &str, line_no: usize) -> Result<LogRecord, LogError> {
    let malformed = |reason: String| LogError::MalformedLine { line: line_no, reason };
    let rec: LogRecord = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    if !valid_timestamp(&rec.ts) {
        return Err(malformed(format!("timestamp {:?} is not ISO-8601 UTC with milliseconds", rec.ts)));
    }
    if rec.op.is_empty() {
        return Err(malformed("empty op".into()));
    }
    let canonical = rec.to_line();
    if canonical[..canonical.len() - 1] != *line {
        return Err(malformed("record is not in canonical form".into()));
    }
    Ok(rec)
}

/// Parses a whole log; every line must be `\n` terminated and sequence
/// numbers must run 1, 2, 3, ...
pub fn parse_log_str(text: &str) -> Result<Vec<LogRecord>, LogError> {
    let mut out: Vec<LogRecord> = Vec::new();
    let mut rest = text;
    let mut line_no = 0;
    while !rest.is_empty() {
        line_no += 1;
        let Some(end) = rest.find('\n') else {
            return Err(LogError::MalformedLine { line: line_no, reason: "missing line terminator".into() });
        };
        let rec = parse_line(&rest[..end], line_no)?;
        let expected = out.last().map_or(1, |r| r.seq + 1);
        if rec.seq != expected {
            return Err(LogError::SequenceGap { expected, found: rec.seq });
        }
        out.push(rec);
        rest = &rest[end + 1..];
    }
    Ok(out)
}

pub fn parse_log(path: &Path) -> Result<Vec<LogRecord>, LogError> {
    let text = std::fs::read_to_string(path)?;
    parse_log_str(&text)
}

/// In-memory record list with an optional file it mirrors to. Each record is
/// flushed to the file before `write_record` returns.
#[derive(Debug, Default)]
pub struct ExperimentLog {
    records: Vec<LogRecord>,
    file: Option<File>,
}

impl ExperimentLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends to `path`, continuing the sequence of any records already there.
    pub fn open(path: &Path) -> Result<Self, LogError> {
        let records = if path.exists() { parse_log(path)? } else { Vec::new() };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { records, file: Some(file) })
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn next_seq(&self) -> u64 {
        self.records.last().map_or(1, |r| r.seq + 1)
    }

    pub fn write_record(&mut self, r: LogRecord) -> Result<(), LogError> {
        let expected = self.next_seq();
        if r.seq != expected {
            return Err(LogError::SequenceGap { expected, found: r.seq });
        }
        if let Some(f) = &mut self.file {
            f.write_all(r.to_line().as_bytes())?;
            f.flush()?;
        }
        self.records.push(r);
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            w.write_all(r.to_line().as_bytes())?;
        }
        Ok(())
    }
}

/// Reads records from any line source; convenience for streams.
pub fn parse_log_reader<R: BufRead>(mut r: R) -> Result<Vec<LogRecord>, LogError> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    parse_log_str(&text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub plan: WorkflowPlan,
    /// Sequence numbers of error records that were left out.
    pub skipped: Vec<u64>,
}

/// One step per ok record, in sequence order, with the logged parameters
/// verbatim.
pub fn reconstruct_plan(records: &[LogRecord]) -> Reconstruction {
    let mut plan = WorkflowPlan::new("log-replay", PlanSource::LogReplay);
    if let Some(first) = records.first() {
        plan.metadata.created_at = first.ts.clone();
    }
    let mut skipped = Vec::new();
    for r in records {
        if !r.is_ok() {
            log::warn!("skipping record {} ({}): {}", r.seq, r.op, r.status);
            skipped.push(r.seq);
            continue;
        }
        let mut step = Step::new(&format!("s{}", r.seq), &r.op);
        step.params = r.params.clone();
        plan.push(step);
    }
    Reconstruction { plan, skipped }
}

fn unit_for(name: &str) -> (&str, &'static str) {
    const SUFFIXES: [(&str, &str); 8] = [
        ("_um_s", "µm/s"),
        ("_khz", "kHz"),
        ("_hz", "Hz"),
        ("_um", "µm"),
        ("_ms", "ms"),
        ("_rad", "rad"),
        ("_v", "V"),
        ("_s", "s"),
    ];
    for (suffix, unit) in SUFFIXES {
        if let Some(stem) = name.strip_suffix(suffix) {
            return (stem, unit);
        }
    }
    match name {
        "start" | "end" | "region" | "locations" | "center" => (name, "µm"),
        "bias_waveform" => (name, "V"),
        _ => (name, ""),
    }
}

fn render_value(v: &Json) -> String {
    match v {
        Json::Null => "none".into(),
        Json::Bool(b) => b.to_string(),
        Json::Number(n) => n.as_f64().map_or_else(|| n.to_string(), |f| format!("{f}")),
        Json::String(s) => s.clone(),
        Json::Array(a) if a.len() <= 8 => {
            format!("[{}]", a.iter().map(render_value).collect::<Vec<_>>().join(", "))
        }
        Json::Array(a) => format!("{} values", a.len()),
        Json::Object(o) => match o.get("samples").and_then(Json::as_array) {
            Some(s) => format!("a path of {} samples", s.len()),
            None => format!("{} fields", o.len()),
        },
    }
}

fn describe(op: &str) -> String {
    match op {
        "define_be_parms" => "set the band-excitation parameters".into(),
        "set_io_config" => "configured the IO cluster".into(),
        "set_tip_bias" => "set the tip bias".into(),
        "tip_control" => "moved the tip".into(),
        "do_line_scan" => "performed a BE line scan".into(),
        "raster_scan" => "performed a BE raster scan".into(),
        "do_beps_grid" => "performed BEPS on a grid of locations".into(),
        "do_beps_specific" => "performed BEPS at specific locations".into(),
        "apply_pulse" => "applied a DC pulse at the current tip position".into(),
        "do_trajectory_scan" => "scanned along a custom tip trajectory".into(),
        other => format!("ran {other}"),
    }
}

/// Deterministic English summary, one sentence per record.
pub fn summarize_log(records: &[LogRecord]) -> String {
    if records.is_empty() {
        return "No operations were recorded.".into();
    }
    let mut out = String::new();
    for r in records {
        let params: Vec<String> = r
            .params
            .iter()
            .map(|(k, v)| {
                let (stem, unit) = unit_for(k);
                let label = stem.replace('_', " ");
                let value = render_value(v);
                if unit.is_empty() {
                    format!("{label} = {value}")
                } else {
                    format!("{label} = {value} {unit}")
                }
            })
            .collect();
        let with = if params.is_empty() { String::new() } else { format!(" with {}", params.join(", ")) };
        let sentence = match &r.status {
            RecordStatus::Ok => {
                let stored = r.dataset_ref.as_ref().map(|d| format!(", storing dataset {d}")).unwrap_or_default();
                format!("Step {} at {}: {} ({}){}{}.", r.seq, r.ts, capitalize(&describe(&r.op)), r.op, with, stored)
            }
            RecordStatus::Error(code) => format!(
                "Step {} at {}: failed with error {} while attempting to {} ({}){}.",
                r.seq,
                r.ts,
                code,
                infinitive(&describe(&r.op)),
                r.op,
                with
            ),
        };
        out.push_str(&sentence);
        out.push('\n');
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn infinitive(past: &str) -> String {
    const VERBS: [(&str, &str); 9] = [
        ("set ", "set "),
        ("configured ", "configure "),
        ("moved ", "move "),
        ("performed ", "perform "),
        ("applied ", "apply "),
        ("scanned ", "scan "),
        ("ran ", "run "),
        ("measured ", "measure "),
        ("acquired ", "acquire "),
    ];
    for (p, i) in VERBS {
        if let Some(rest) = past.strip_prefix(p) {
            return format!("{i}{rest}");
        }
    }
    past.to_string()
}
