//! Lineage logs for audited handles, the system log, and the end-of-run
//! report directory.
//!
//! One lineage line per event:
//!
//! ```text
//! <timestamp>\t<field>\t<action>\t<file:row or ->\t<input as JSON>\t→\t<ops as JSON>
//! ```
//!
//! The ops column is enough to rebuild the curated record from the input
//! record; see [`replay`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Local};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::{assemble, initial_lists, AssignmentBuffer, MetadataRecord, RuleRef};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "camelCase")]
pub enum AuditOp {
    /// The field's original values are replaced by what gets staged for it.
    Claim { field: String },
    Stage { field: String, value: String, source: String },
    Delete { field: String, value: String },
    DeleteField { field: String },
    Commit { field: String, step: String, before: Vec<String>, after: Vec<String> },
    DropRecord,
    Warning { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditEvent {
    pub field: String,
    pub action: String,
    pub rule: Option<RuleRef>,
    pub input: Option<String>,
    pub ops: Vec<AuditOp>,
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("cannot write audit log `{}`: {source}", path.display())]
    Write { path: PathBuf, source: io::Error },
    #[error("audit log line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("audit log does not match the input record: `{step}` step of `{field}` expected {expected:?}, found {found:?}")]
    Inconsistent { field: String, step: String, expected: Vec<String>, found: Vec<String> },
}

/// Handle as a file or directory name.
pub fn sanitize_handle(handle: &str) -> String {
    handle.replace(['/', '\\'], "_")
}

fn one_line(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

pub fn format_line(ts: &str, ev: &AuditEvent) -> String {
    let rule = ev.rule.as_ref().map_or_else(|| "-".to_string(), RuleRef::to_string);
    let input = serde_json::to_string(&ev.input).expect("string serializes");
    let ops = serde_json::to_string(&ev.ops).expect("ops serialize");
    format!(
        "{ts}\t{}\t{}\t{}\t{input}\t→\t{ops}",
        one_line(&ev.field),
        one_line(&ev.action),
        one_line(&rule)
    )
}

/// The ops of every line, in order.
pub fn parse_log(text: &str) -> Result<Vec<AuditOp>, AuditError> {
    let mut ops = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let json = line.rsplit('\t').next().unwrap_or_default();
        let parsed: Vec<AuditOp> = serde_json::from_str(json).map_err(|e| AuditError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        ops.extend(parsed);
    }
    Ok(ops)
}

/// Rebuild an output record from its input record and the lineage ops.
/// `None` means the record was removed.
pub fn replay(input: &MetadataRecord, ops: &[AuditOp]) -> Result<Option<MetadataRecord>, AuditError> {
    let buffer = AssignmentBuffer::from_ops(ops);
    if buffer.drop_record {
        return Ok(None);
    }
    let mut lists = initial_lists(&buffer, input);
    for op in ops {
        if let AuditOp::Commit { field, step, before, after } = op {
            let Some((_, current)) = lists.iter_mut().find(|(f, _)| f == field) else {
                return Err(AuditError::Inconsistent {
                    field: field.clone(),
                    step: step.clone(),
                    expected: before.clone(),
                    found: Vec::new(),
                });
            };
            if current != before {
                return Err(AuditError::Inconsistent {
                    field: field.clone(),
                    step: step.clone(),
                    expected: before.clone(),
                    found: current.clone(),
                });
            }
            *current = after.clone();
        }
    }
    Ok(Some(assemble(input, &lists)))
}

/// Writes lineage lines for the configured handles; everything else is
/// discarded before any formatting work.
pub struct AuditSink {
    dir: PathBuf,
    handles: HashSet<String>,
    files: Mutex<HashMap<String, BufWriter<File>>>,
}

impl AuditSink {
    pub fn new(dir: impl Into<PathBuf>, handles: impl IntoIterator<Item = String>) -> Self {
        AuditSink {
            dir: dir.into(),
            handles: handles.into_iter().collect(),
            files: Mutex::new(HashMap::new()),
        }
    }

    pub fn is_enabled(&self) -> bool {
        !self.handles.is_empty()
    }

    pub fn wants(&self, handle: &str) -> bool {
        self.handles.contains(handle)
    }

    pub fn path_for(&self, handle: &str) -> PathBuf {
        self.dir.join(format!("{}.audit.log", sanitize_handle(handle)))
    }

    /// Append the events of one record. The file is truncated the first
    /// time a handle is written during this run.
    pub fn record(&self, handle: &str, events: &[AuditEvent]) -> Result<(), AuditError> {
        if !self.wants(handle) {
            return Ok(());
        }
        let path = self.path_for(handle);
        let err = |source| AuditError::Write { path: path.clone(), source };
        let mut files = self.files.lock().unwrap_or_else(|p| p.into_inner());
        if !files.contains_key(handle) {
            let f = OpenOptions::new()
                .create(true)
                .write(true)
                .truncate(true)
                .open(&path)
                .map_err(err)?;
            files.insert(handle.to_string(), BufWriter::new(f));
        }
        let w = files.get_mut(handle).unwrap();
        let ts = Local::now().format("%Y-%m-%dT%H:%M:%S%.3f").to_string();
        for ev in events {
            writeln!(w, "{}", format_line(&ts, ev)).map_err(err)?;
        }
        w.flush().map_err(err)
    }
}

/// A `log` backend that appends timestamped lines to a file.
pub struct FileLogger {
    file: Mutex<BufWriter<File>>,
    level: log::LevelFilter,
}

impl FileLogger {
    pub fn create(path: &Path, level: log::LevelFilter) -> io::Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(FileLogger {
            file: Mutex::new(BufWriter::new(f)),
            level,
        })
    }

    /// Install as the process-wide logger. Fails if one is already set.
    pub fn install(path: &Path) -> io::Result<()> {
        let logger = FileLogger::create(path, log::LevelFilter::Info)?;
        log::set_boxed_logger(Box::new(logger)).map_err(io::Error::other)?;
        log::set_max_level(log::LevelFilter::Info);
        Ok(())
    }
}

impl log::Log for FileLogger {
    fn enabled(&self, metadata: &log::Metadata) -> bool {
        metadata.level() <= self.level
    }

    fn log(&self, record: &log::Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        let _ = writeln!(
            f,
            "{} {:<5} {}",
            Local::now().format("%Y-%m-%d %H:%M:%S"),
            record.level(),
            record.args()
        );
    }

    fn flush(&self) {
        let _ = self.file.lock().unwrap_or_else(|p| p.into_inner()).flush();
    }
}

/// `3 mins 0 seconds`, or `55 seconds` under a minute.
pub fn format_duration(d: Duration) -> String {
    let secs = d.as_secs();
    let (m, s) = (secs / 60, secs % 60);
    if m == 0 {
        format!("{s} seconds")
    } else {
        format!("{m} mins {s} seconds")
    }
}

pub fn progress_line(count: usize, elapsed: Duration) -> String {
    format!("Processed {count} records in {}.", format_duration(elapsed))
}

pub fn write_progress_line(target: &str, count: usize, elapsed: Duration) -> String {
    format!(
        "Processed ({target}: {count}) Total: {count} records in {}.",
        format_duration(elapsed)
    )
}

pub fn match_line(matched: usize, unmatched: usize) -> String {
    format!("Matched #:{matched} UnMatched #:{unmatched}")
}

pub const REPORT_DIR: &str = "data-report";

pub fn report_dir_name(ts: &DateTime<Local>) -> String {
    ts.format("%Y_%m_%d-%H_%M_%S").to_string()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailureEntry {
    pub handle: String,
    pub field: String,
    pub datatype: String,
    pub value: String,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub mode: String,
    pub schema_type: String,
    pub matched: usize,
    pub unmatched: usize,
    pub removed: usize,
    pub field_fires: BTreeMap<String, usize>,
    pub validation_failures: Vec<FailureEntry>,
    pub warnings: Vec<String>,
    pub started: DateTime<Local>,
    pub finished: DateTime<Local>,
    pub curate_time: Duration,
    pub write_time: Duration,
}

impl RunReport {
    pub fn new(mode: &str, schema_type: &str) -> Self {
        let now = Local::now();
        RunReport {
            mode: mode.to_string(),
            schema_type: schema_type.to_string(),
            matched: 0,
            unmatched: 0,
            removed: 0,
            field_fires: BTreeMap::new(),
            validation_failures: Vec::new(),
            warnings: Vec::new(),
            started: now,
            finished: now,
            curate_time: Duration::ZERO,
            write_time: Duration::ZERO,
        }
    }

    pub fn total(&self) -> usize {
        self.matched + self.unmatched
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&match_line(self.matched, self.unmatched));
        s.push('\n');
        s.push_str(&format!("Total records: {}\n", self.total()));
        s.push_str(&format!("Records removed: {}\n", self.removed));
        s.push_str(&format!("Mode: {}\n", self.mode));
        s.push_str(&format!("Schema type: {}\n", self.schema_type));
        s.push_str(&format!("Started: {}\n", self.started.format("%Y-%m-%d %H:%M:%S")));
        s.push_str(&format!("Finished: {}\n", self.finished.format("%Y-%m-%d %H:%M:%S")));
        s.push_str(&format!("Curation time: {}\n", format_duration(self.curate_time)));
        s.push_str(&format!("Write time: {}\n", format_duration(self.write_time)));
        s.push_str("\nRule fires by field:\n");
        for (field, n) in &self.field_fires {
            s.push_str(&format!("  {field}\t{n}\n"));
        }
        s.push_str(&format!("\nValidation failures: {}\n", self.validation_failures.len()));
        for f in &self.validation_failures {
            s.push_str(&format!("  {}\t{}\t{}\t{}\n", f.handle, f.field, f.datatype, f.value));
        }
        s.push_str(&format!("\nWarnings: {}\n", self.warnings.len()));
        for w in &self.warnings {
            s.push_str(&format!("  {w}\n"));
        }
        s
    }
}

/// Create `<target_dir>/data-report/<timestamp>/` and write `summary.txt`.
/// An existing directory for the same second is reused.
pub fn write_report(report: &RunReport, target_dir: &Path) -> io::Result<PathBuf> {
    let dir = target_dir.join(REPORT_DIR).join(report_dir_name(&report.finished));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("summary.txt"), report.summary_text())?;
    Ok(dir)
}
