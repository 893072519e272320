//! A whole run: configuration, prompts, curation into a spill, writing the
//! target and the report.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::Local;
use rayon::prelude::*;
use thiserror::Error;

use crate::audit::{format_duration, match_line, progress_line, write_progress_line, write_report, AuditSink, FailureEntry, RunReport};
use crate::engine::{Engine, Program, RuleStore};
use crate::logic::{parse_logic_collection, parse_logic_hid, ActionDescriptor, ActionKind, CurationPlan, LogicError};
use crate::normalize::normalizer_for;
use crate::rules::RuleError;
use crate::runconfig::{parse_run_properties, resolve_paths, ConfigError, ResolvedConfig, RunMode, SourceType};
use crate::schema::{parse_schema, FieldSchema, SchemaError};
use crate::sources::{read_source, write_csv, Asset, AssetData, ItemWriter, SourceError, Spill, TargetKind};

pub const PROGRESS_EVERY: usize = 10_000;
const CHUNK: usize = 1_000;

pub const PROMPT_NO_HANDLE_FORMAT: &str =
    "Handle_ID format not specified. Program will terminate if no Handle_ID found during curation.\nDo you still want to run curation [Yes/No]";
pub const PROMPT_DEFAULT_SCHEMA: &str =
    "Schema file and type are not defined in run.properties. System shall process with the default general schema.\nDo you agree?[Yes/No]";
pub const PROMPT_NO_LOGIC: &str =
    "No Logic definition found. Data will be copied over from source to target. Continue?[Yes/No]";
pub const PROMPT_CSV_EXPORT: &str = "Do you want a CSV of the data?";

pub fn default_usemap_prompt(field: &str, file: &str) -> String {
    format!("Default configuration file {file} will be used for {field}. Continue?[Yes/No]")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}: {source}", .path.display())]
    Schema { path: PathBuf, source: SchemaError },
    #[error("{}: {source}", .path.display())]
    Logic { path: PathBuf, source: LogicError },
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error("cannot read `{}`: {source}", .path.display())]
    ReadConfig { path: PathBuf, source: std::io::Error },
    #[error("cannot write `{}`: {source}", .path.display())]
    Write { path: PathBuf, source: std::io::Error },
    #[error("aborted at prompt: {0}")]
    Aborted(String),
}

impl Error {
    /// 1 for configuration problems and refusals, 2 for data problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Source(_) | Error::Write { .. } => 2,
            _ => 1,
        }
    }
}

/// Where prompts and progress go.
pub trait Console {
    /// Ask a Yes/No question.
    fn confirm(&mut self, prompt: &str) -> bool;
    fn say(&mut self, line: &str);
}

/// Answers every prompt with Yes and keeps the transcript.
#[derive(Debug, Default)]
pub struct AutoYes {
    pub transcript: Vec<String>,
    pub quiet: bool,
}

impl Console for AutoYes {
    fn confirm(&mut self, prompt: &str) -> bool {
        self.transcript.extend(prompt.lines().map(str::to_string));
        self.transcript.push("yes".into());
        true
    }

    fn say(&mut self, line: &str) {
        if !self.quiet {
            self.transcript.push(line.to_string());
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub config: ResolvedConfig,
    pub report: RunReport,
    pub report_dir: PathBuf,
    pub written: usize,
}

fn ask(console: &mut dyn Console, prompt: &str) -> Result<(), Error> {
    if console.confirm(prompt) {
        Ok(())
    } else {
        Err(Error::Aborted(prompt.lines().last().unwrap_or(prompt).to_string()))
    }
}

/// useMap descriptors, nested ones included, that fall back to the
/// default rule file.
fn defaulted_usemaps(actions: &[ActionDescriptor], out: &mut Vec<String>) {
    for d in actions {
        if d.kind == ActionKind::UseMap && d.input_file.is_none() && d.filters.iter().all(|f| f.input_file.is_none()) {
            out.push(d.input_file_or_default().unwrap_or_default().to_string());
        }
        defaulted_usemaps(&d.nested, out);
    }
}

pub fn load_config(runfile: &Path, mode: RunMode) -> Result<ResolvedConfig, Error> {
    let text = fs::read_to_string(runfile).map_err(|source| Error::ReadConfig { path: runfile.to_path_buf(), source })?;
    let parsed = parse_run_properties(&text, mode)?;
    for w in &parsed.warnings {
        log::warn!("{}: {w}", runfile.display());
    }
    let dir = runfile.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    Ok(resolve_paths(parsed.props, dir)?)
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|source| Error::ReadConfig { path: path.to_path_buf(), source })
}

/// Load schema, logic and rule tables, issuing the configuration prompts.
pub fn build_engine(cfg: &ResolvedConfig, console: &mut dyn Console) -> Result<Engine, Error> {
    let props = &cfg.props;
    if props.handle_id_format.is_none() {
        ask(console, PROMPT_NO_HANDLE_FORMAT)?;
    }
    let schema = match &cfg.schema_path {
        None => {
            ask(console, PROMPT_DEFAULT_SCHEMA)?;
            FieldSchema::default()
        }
        Some(path) => {
            let parsed = parse_schema(&read_text(path)?).map_err(|source| Error::Schema { path: path.clone(), source })?;
            for w in &parsed.warnings {
                log::warn!("{}: {w}", path.display());
            }
            parsed.schema
        }
    };
    let text = read_text(&cfg.logic_path)?;
    let (program, rules) = match props.mode {
        RunMode::Collection => {
            let parsed = parse_logic_collection(&text).map_err(|source| Error::Logic { path: cfg.logic_path.clone(), source })?;
            for w in &parsed.warnings {
                log::warn!("{}: {w}", cfg.logic_path.display());
            }
            let plan: CurationPlan = parsed.plan;
            for field in &plan.ordered_fields {
                console.say(&format!("Parsing {field} logic..."));
                let mut defaults = Vec::new();
                defaulted_usemaps(&plan.ftbs[field].actions, &mut defaults);
                defaults.dedup();
                for file in defaults {
                    ask(console, &default_usemap_prompt(field, &file))?;
                }
            }
            let rules = RuleStore::load(&plan, &cfg.config_dir, props.csv_field_sep)?;
            (Program::Collection(plan), rules)
        }
        RunMode::HandleId => {
            let name = cfg.logic_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let plan = parse_logic_hid(&name, &text, props.csv_field_sep)?;
            (Program::Handle(plan), RuleStore::default())
        }
    };
    Ok(Engine {
        program,
        rules,
        schema,
        normalizer: normalizer_for(props.service_ip.as_deref()),
        asset_dir: cfg.config_dir.clone(),
    })
}

/// Execute a run file end to end.
pub fn run(runfile: &Path, mode: RunMode, console: &mut dyn Console) -> Result<RunOutcome, Error> {
    let started = Instant::now();
    let cfg = load_config(runfile, mode)?;
    let engine = build_engine(&cfg, console)?;
    execute(cfg, &engine, console, started)
}

pub fn execute(cfg: ResolvedConfig, engine: &Engine, console: &mut dyn Console, started: Instant) -> Result<RunOutcome, Error> {
    let props = &cfg.props;
    let mut report = RunReport::new(&props.mode.to_string(), &props.schema_type);
    let sink = AuditSink::new(&cfg.log_dir, props.audit_handles.iter().cloned());
    let source = read_source(&cfg)?;
    let seed_header = source.header.clone().unwrap_or_default();
    let mut packages = source.packages.peekable();

    if let Some(Ok(first)) = packages.peek() {
        if !engine.uncovered_fields(&first.metadata).is_empty() {
            ask(console, PROMPT_NO_LOGIC)?;
        }
    }

    let mut spill = Spill::new().map_err(|source| Error::Write { path: std::env::temp_dir(), source })?;
    let curate_start = Instant::now();
    let mut processed = 0usize;
    let mut next_mark = PROGRESS_EVERY;
    loop {
        let chunk: Vec<_> = packages.by_ref().take(CHUNK).collect::<Result<_, _>>()?;
        if chunk.is_empty() {
            break;
        }
        let outcomes: Vec<_> = chunk
            .par_iter()
            .map(|p| engine.process(&p.metadata, sink.wants(&p.handle)))
            .collect();
        for (pkg, out) in chunk.into_iter().zip(outcomes) {
            if out.matched {
                report.matched += 1;
            } else {
                report.unmatched += 1;
            }
            for (f, n) in &out.fires {
                *report.field_fires.entry(f.clone()).or_default() += n;
            }
            for (field, failure) in &out.validation_failures {
                report.validation_failures.push(FailureEntry {
                    handle: pkg.handle.clone(),
                    field: field.clone(),
                    datatype: failure.datatype.to_string(),
                    value: failure.value.clone(),
                });
            }
            for w in &out.warnings {
                log::warn!("{}: {w}", pkg.handle);
                report.warnings.push(format!("{}: {w}", pkg.handle));
            }
            if sink.wants(&pkg.handle) {
                if let Err(e) = sink.record(&pkg.handle, &out.events) {
                    log::warn!("{e}");
                    report.warnings.push(e.to_string());
                }
            }
            match out.record {
                None => report.removed += 1,
                Some(rec) => {
                    let mut assets = pkg.assets;
                    assets.extend(out.attachments.into_iter().map(|a| Asset { name: a.name, data: AssetData::File(a.source) }));
                    spill.push(&rec, &assets)?;
                }
            }
            processed += 1;
        }
        if processed >= next_mark {
            console.say(&progress_line(processed, curate_start.elapsed()));
            next_mark += PROGRESS_EVERY;
        }
    }
    if processed % PROGRESS_EVERY != 0 || processed == 0 {
        console.say(&progress_line(processed, curate_start.elapsed()));
    }
    report.curate_time = curate_start.elapsed();

    let want_csv = console.confirm(PROMPT_CSV_EXPORT);

    let write_start = Instant::now();
    let target_name = cfg
        .target_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let written = match TargetKind::for_path(&cfg.target_path) {
        TargetKind::Csv => {
            let n = write_csv(&cfg.target_path, &mut spill, &seed_header, props.csv_field_sep, props.csv_multi_value_sep)?;
            console.say(&write_progress_line(&target_name, n, write_start.elapsed()));
            n
        }
        _ => {
            let mut writer = ItemWriter::create(&cfg.target_path)?;
            let mut n = 0;
            for item in spill.iter()? {
                writer.write(&item?)?;
                n += 1;
                if n % PROGRESS_EVERY == 0 {
                    console.say(&write_progress_line(&target_name, n, write_start.elapsed()));
                }
            }
            writer.finish()?;
            if n % PROGRESS_EVERY != 0 || n == 0 {
                console.say(&write_progress_line(&target_name, n, write_start.elapsed()));
            }
            n
        }
    };
    report.write_time = write_start.elapsed();
    report.finished = Local::now();

    let target_dir = cfg.target_dir();
    let report_dir = write_report(&report, &target_dir).map_err(|source| Error::Write { path: target_dir.clone(), source })?;
    if want_csv && written > 0 {
        let seed = if props.source_type == SourceType::Csv { seed_header.as_slice() } else { &[] };
        write_csv(&report_dir.join("export.csv"), &mut spill, seed, props.csv_field_sep, props.csv_multi_value_sep)?;
    }

    console.say(&match_line(report.matched, report.unmatched));
    console.say(&format!("Report Destination: {}", report_dir.display()));
    console.say(&format!("Total Processing Time {}.", format_duration(started.elapsed())));
    Ok(RunOutcome { config: cfg, report, report_dir, written })
}
