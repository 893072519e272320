//! `.run.properties` parsing and path resolution.
//!
//! A run file is a flat list of `key=value` lines. Keys are matched
//! case-insensitively with `_`, `-` and spaces ignored, so `audit_handle`,
//! `Audit Handle` and `auditHandle` all name the same parameter.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Which of the two curation modes a run executes in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RunMode {
    /// `-c`: one logic document applied across the whole collection.
    Collection,
    /// `-h`: a tabular logic file whose rows address individual handles.
    HandleId,
}

impl RunMode {
    pub fn logic_extension(self) -> &'static str {
        match self {
            RunMode::Collection => ".json",
            RunMode::HandleId => ".csv",
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunMode::Collection => f.write_str("collection (-c)"),
            RunMode::HandleId => f.write_str("Handle_ID (-h)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SourceType {
    SipTar,
    SipFolder,
    Csv,
}

impl SourceType {
    pub fn token(self) -> &'static str {
        match self {
            SourceType::SipTar => "SIP-TAR",
            SourceType::SipFolder => "SIP-FOLDER",
            SourceType::Csv => "CSV",
        }
    }

    fn parse(value: &str) -> Option<Self> {
        match value.trim().to_ascii_uppercase().as_str() {
            "SIP-TAR" => Some(SourceType::SipTar),
            "SIP-FOLDER" => Some(SourceType::SipFolder),
            "CSV" => Some(SourceType::Csv),
            _ => None,
        }
    }
}

impl fmt::Display for SourceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("missing mandatory parameter(s): {}", .0.join(", "))]
    MissingMandatory(Vec<String>),
    #[error("unsupported sourceType `{0}` (expected SIP-TAR, SIP-FOLDER or CSV)")]
    BadSourceType(String),
    #[error("{mode} run requires a logic file ending in `{}`, got `{filename}`", .mode.logic_extension())]
    LogicExtensionMismatch { mode: RunMode, filename: String },
    #[error("parameter `{0}` given more than once")]
    DuplicateKey(String),
    #[error("line {line}: expected `key=value`, got `{text}`")]
    MalformedLine { line: usize, text: String },
    #[error("parameter `{key}` must be a single character, got `{value}`")]
    BadSeparator { key: String, value: String },
    #[error("config directory `{}` does not exist", .0.display())]
    ConfigDirMissing(PathBuf),
    #[error("source data `{}` does not exist", .0.display())]
    SourceFileMissing(PathBuf),
    #[error("cannot create log directory `{}`: {message}", .path.display())]
    LogDirUnavailable { path: PathBuf, message: String },
}

/// Canonical parameter names, in the order they are rendered.
pub const KEYS: [&str; 14] = [
    "sourceData",
    "sourceType",
    "targetData",
    "logic",
    "dataReadPath",
    "auditHandle",
    "logPath",
    "configPath",
    "handleIdFormat",
    "schema",
    "schemaType",
    "serviceIP",
    "csvFieldSep",
    "csvMultiValueSep",
];

const MANDATORY: [&str; 4] = ["sourceData", "sourceType", "targetData", "logic"];

pub const DEFAULT_SCHEMA_TYPE: &str = "general";
pub const DEFAULT_FIELD_SEP: char = ',';
pub const DEFAULT_MULTI_VALUE_SEP: char = ';';

fn normalize_key(key: &str) -> String {
    key.chars()
        .filter(|c| !matches!(c, '_' | '-' | ' ' | '\t'))
        .flat_map(char::to_lowercase)
        .collect()
}

fn canonical_key(key: &str) -> Option<&'static str> {
    let norm = normalize_key(key);
    // `configLocation` is how the run-file overview refers to configPath.
    if norm == "configlocation" {
        return Some("configPath");
    }
    KEYS.iter().copied().find(|k| normalize_key(k) == norm)
}

/// Validated run configuration with defaults resolved, except for the
/// directory defaults which depend on where the run file lives
/// (see [`resolve_paths`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunProperties {
    pub mode: RunMode,
    pub source_data: String,
    pub source_type: SourceType,
    pub target_data: String,
    pub logic: String,
    pub data_read_path: Option<String>,
    pub audit_handles: Vec<String>,
    pub log_path: Option<String>,
    pub config_path: Option<String>,
    pub handle_id_format: Option<String>,
    pub schema: Option<String>,
    pub schema_type: String,
    pub service_ip: Option<String>,
    pub csv_field_sep: char,
    pub csv_multi_value_sep: char,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedRunProperties {
    pub props: RunProperties,
    /// Unrecognised keys, reported but not fatal.
    pub warnings: Vec<String>,
}

fn parse_separator(key: &str, raw: &str) -> Result<char, ConfigError> {
    let unescaped = match raw {
        "\\t" => "\t",
        "\\n" => "\n",
        other => other,
    };
    let mut chars = unescaped.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(ConfigError::BadSeparator {
            key: key.to_string(),
            value: raw.to_string(),
        }),
    }
}

fn render_separator(c: char) -> String {
    match c {
        '\t' => "\\t".to_string(),
        '\n' => "\\n".to_string(),
        c => c.to_string(),
    }
}

/// Parse the text of a `.run.properties` file for the given mode.
pub fn parse_run_properties(text: &str, mode: RunMode) -> Result<ParsedRunProperties, ConfigError> {
    let mut values: BTreeMap<&'static str, String> = BTreeMap::new();
    let mut warnings = Vec::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim_start_matches('\u{feff}').trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('!') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::MalformedLine {
                line: idx + 1,
                text: raw_line.to_string(),
            });
        };
        let key = key.trim();
        let value = value.trim().to_string();
        match canonical_key(key) {
            Some(canonical) => {
                if values.insert(canonical, value).is_some() {
                    return Err(ConfigError::DuplicateKey(canonical.to_string()));
                }
            }
            None => warnings.push(format!("line {}: unknown parameter `{key}` ignored", idx + 1)),
        }
    }

    let missing: Vec<String> = MANDATORY
        .iter()
        .filter(|k| values.get(*k).map_or(true, |v| v.is_empty()))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ConfigError::MissingMandatory(missing));
    }

    let mut take = |key: &str| values.remove(key).filter(|v| !v.is_empty());

    let source_data = take("sourceData").unwrap_or_default();
    let source_type_raw = take("sourceType").unwrap_or_default();
    let source_type =
        SourceType::parse(&source_type_raw).ok_or(ConfigError::BadSourceType(source_type_raw))?;
    let target_data = take("targetData").unwrap_or_default();
    let logic = take("logic").unwrap_or_default();
    if !logic.to_ascii_lowercase().ends_with(mode.logic_extension()) {
        return Err(ConfigError::LogicExtensionMismatch { mode, filename: logic });
    }

    let audit_handles = take("auditHandle")
        .map(|v| {
            v.split(',')
                .map(str::trim)
                .filter(|h| !h.is_empty())
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default();

    let csv_field_sep = match take("csvFieldSep") {
        Some(v) => parse_separator("csvFieldSep", &v)?,
        None => DEFAULT_FIELD_SEP,
    };
    let csv_multi_value_sep = match take("csvMultiValueSep") {
        Some(v) => parse_separator("csvMultiValueSep", &v)?,
        None => DEFAULT_MULTI_VALUE_SEP,
    };

    let props = RunProperties {
        mode,
        source_data,
        source_type,
        target_data,
        logic,
        data_read_path: take("dataReadPath")
            .map(|p| p.trim_matches('/').to_string())
            .filter(|p| !p.is_empty()),
        audit_handles,
        log_path: take("logPath"),
        config_path: take("configPath"),
        handle_id_format: take("handleIdFormat"),
        schema: take("schema"),
        schema_type: take("schemaType").unwrap_or_else(|| DEFAULT_SCHEMA_TYPE.to_string()),
        service_ip: take("serviceIP"),
        csv_field_sep,
        csv_multi_value_sep,
    };
    Ok(ParsedRunProperties { props, warnings })
}

impl RunProperties {
    /// Render back to `key=value` text using canonical key names.
    /// Every resolved value is written, so defaults become explicit.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: &str| {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        };
        push("sourceData", &self.source_data);
        push("sourceType", self.source_type.token());
        push("targetData", &self.target_data);
        push("logic", &self.logic);
        if let Some(p) = &self.data_read_path {
            push("dataReadPath", p);
        }
        if !self.audit_handles.is_empty() {
            push("auditHandle", &self.audit_handles.join(","));
        }
        if let Some(p) = &self.log_path {
            push("logPath", p);
        }
        if let Some(p) = &self.config_path {
            push("configPath", p);
        }
        if let Some(f) = &self.handle_id_format {
            push("handleIdFormat", f);
        }
        if let Some(s) = &self.schema {
            push("schema", s);
        }
        push("schemaType", &self.schema_type);
        if let Some(s) = &self.service_ip {
            push("serviceIP", s);
        }
        push("csvFieldSep", &render_separator(self.csv_field_sep));
        push("csvMultiValueSep", &render_separator(self.csv_multi_value_sep));
        out
    }
}

/// A run configuration with every path made concrete.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedConfig {
    pub props: RunProperties,
    pub runfile_dir: PathBuf,
    pub source_path: PathBuf,
    pub target_path: PathBuf,
    pub config_dir: PathBuf,
    pub log_dir: PathBuf,
    pub logic_path: PathBuf,
    pub schema_path: Option<PathBuf>,
}

fn join_relative(base: &Path, name: &str) -> PathBuf {
    let p = Path::new(name);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ResolvedConfig {
    /// Resolve a configuration file name (logic, schema, rule tables)
    /// against the config directory.
    pub fn config_file(&self, name: &str) -> PathBuf {
        join_relative(&self.config_dir, name)
    }

    /// Directory the target is written into; the report tree lives here.
    pub fn target_dir(&self) -> PathBuf {
        self.target_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.runfile_dir.clone())
    }

    pub fn auditing_enabled(&self) -> bool {
        !self.props.audit_handles.is_empty()
    }
}

/// Resolve every path in `props` relative to the directory holding the
/// run file. Creates the log directory when it does not exist yet.
pub fn resolve_paths(props: RunProperties, runfile_dir: &Path) -> Result<ResolvedConfig, ConfigError> {
    let config_dir = match &props.config_path {
        Some(p) => join_relative(runfile_dir, p),
        None => runfile_dir.to_path_buf(),
    };
    if !config_dir.is_dir() {
        return Err(ConfigError::ConfigDirMissing(config_dir));
    }
    let source_path = join_relative(runfile_dir, &props.source_data);
    if !source_path.exists() {
        return Err(ConfigError::SourceFileMissing(source_path));
    }
    let target_path = join_relative(runfile_dir, &props.target_data);
    let log_dir = match &props.log_path {
        Some(p) => join_relative(runfile_dir, p),
        None => runfile_dir.to_path_buf(),
    };
    std::fs::create_dir_all(&log_dir).map_err(|e| ConfigError::LogDirUnavailable {
        path: log_dir.clone(),
        message: e.to_string(),
    })?;
    let logic_path = join_relative(&config_dir, &props.logic);
    let schema_path = props.schema.as_deref().map(|s| join_relative(&config_dir, s));
    Ok(ResolvedConfig {
        props,
        runfile_dir: runfile_dir.to_path_buf(),
        source_path,
        target_path,
        config_dir,
        log_dir,
        logic_path,
        schema_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE_RUNFILE: &str = "sourceData=Library_of_Congress-Ph16-Export-31.12.2021.tar.gz
sourceType=SIP-TAR
targetData=Library_of_Congress-Ph16-V1.0-10.02.2021.tar.gz
logic=Phase_16_round1_logic_01.02.2022.json
dataReadPath=Library_of_Congress-Ph16-Export-31.12.2021/data
serviceIP=http://10.72.22.155:65/services/v3
";

    const BUNDLE_RUN: &str = "sourceData=Inflibnet-ePGP-23.08.2022.tar.gz
sourceType=SIP-TAR
targetData=Inflibnet-ePGP-V3_23.08.2022.tar.gz
logic=epgPathsalaV3_Logic.json
";

    #[test]
    fn sample_collection_properties() {
        let parsed = parse_run_properties(SAMPLE_RUNFILE, RunMode::Collection).unwrap();
        let p = parsed.props;
        assert_eq!(p.source_type, SourceType::SipTar);
        assert_eq!(
            p.data_read_path.as_deref(),
            Some("Library_of_Congress-Ph16-Export-31.12.2021/data")
        );
        assert_eq!(p.service_ip.as_deref(), Some("http://10.72.22.155:65/services/v3"));
        assert!(p.schema.is_none());
        assert!(parsed.warnings.is_empty());
    }

    #[test]
    fn minimal_bundle_gets_defaults() {
        let p = parse_run_properties(BUNDLE_RUN, RunMode::Collection).unwrap().props;
        assert_eq!(p.logic, "epgPathsalaV3_Logic.json");
        assert!(p.data_read_path.is_none());
        assert_eq!(p.schema_type, "general");
        assert_eq!(p.csv_field_sep, ',');
        assert_eq!(p.csv_multi_value_sep, ';');
        assert!(p.audit_handles.is_empty());
        assert!(p.log_path.is_none() && p.config_path.is_none());
    }

    #[test]
    fn missing_target_is_reported() {
        let text = "sourceData=a.tar.gz\nsourceType=SIP-TAR\nlogic=l.json\n";
        assert_eq!(
            parse_run_properties(text, RunMode::Collection),
            Err(ConfigError::MissingMandatory(vec!["targetData".into()]))
        );
    }

    #[test]
    fn every_missing_key_is_listed() {
        let err = parse_run_properties("# nothing\n", RunMode::Collection).unwrap_err();
        assert_eq!(
            err,
            ConfigError::MissingMandatory(
                MANDATORY.iter().map(|s| s.to_string()).collect()
            )
        );
    }

    #[test]
    fn handle_mode_rejects_json_logic() {
        let text = "sourceData=a\nsourceType=CSV\ntargetData=b\nlogic=plan.json\n";
        assert!(matches!(
            parse_run_properties(text, RunMode::HandleId),
            Err(ConfigError::LogicExtensionMismatch { mode: RunMode::HandleId, .. })
        ));
        let text = "sourceData=a\nsourceType=CSV\ntargetData=b\nlogic=plan.csv\n";
        assert!(matches!(
            parse_run_properties(text, RunMode::Collection),
            Err(ConfigError::LogicExtensionMismatch { mode: RunMode::Collection, .. })
        ));
        assert!(parse_run_properties(text, RunMode::HandleId).is_ok());
    }

    #[test]
    fn bad_source_type() {
        let text = "sourceData=a\nsourceType=RIS\ntargetData=b\nlogic=l.json\n";
        assert_eq!(
            parse_run_properties(text, RunMode::Collection),
            Err(ConfigError::BadSourceType("RIS".into()))
        );
    }

    #[test]
    fn key_spelling_variants_and_duplicates() {
        let text = "sourceData=a\nsourceType=sip-folder\ntargetData=b\nlogic=l.json\n\
                    audit_handle = h/1, h/2\nHandle_ID format=${seq}\nCSV FieldSep=|\nconfigLocation=cfg\n";
        let p = parse_run_properties(text, RunMode::Collection).unwrap().props;
        assert_eq!(p.source_type, SourceType::SipFolder);
        assert_eq!(p.audit_handles, vec!["h/1", "h/2"]);
        assert_eq!(p.handle_id_format.as_deref(), Some("${seq}"));
        assert_eq!(p.csv_field_sep, '|');
        assert_eq!(p.config_path.as_deref(), Some("cfg"));

        let dup = format!("{BUNDLE_RUN}audit-handle=x\nauditHandle=y\n");
        assert_eq!(
            parse_run_properties(&dup, RunMode::Collection),
            Err(ConfigError::DuplicateKey("auditHandle".into()))
        );
    }

    #[test]
    fn unknown_keys_are_warnings() {
        let text = format!("{BUNDLE_RUN}colour=blue\n");
        let parsed = parse_run_properties(&text, RunMode::Collection).unwrap();
        assert_eq!(parsed.warnings.len(), 1);
        assert!(parsed.warnings[0].contains("colour"));
    }

    #[test]
    fn separators_must_be_single_chars() {
        let text = format!("{BUNDLE_RUN}csvMultiValueSep=||\n");
        assert!(matches!(
            parse_run_properties(&text, RunMode::Collection),
            Err(ConfigError::BadSeparator { .. })
        ));
        let text = format!("{BUNDLE_RUN}csvFieldSep=\\t\n");
        let p = parse_run_properties(&text, RunMode::Collection).unwrap().props;
        assert_eq!(p.csv_field_sep, '\t');
    }

    #[test]
    fn resolve_defaults_to_runfile_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("Inflibnet-ePGP-23.08.2022.tar.gz"), b"").unwrap();
        let props = parse_run_properties(BUNDLE_RUN, RunMode::Collection).unwrap().props;
        let cfg = resolve_paths(props, dir.path()).unwrap();
        assert_eq!(cfg.log_dir, dir.path());
        assert_eq!(cfg.config_dir, dir.path());
        assert_eq!(cfg.logic_path, dir.path().join("epgPathsalaV3_Logic.json"));
        assert_eq!(cfg.target_dir(), dir.path());
    }

    #[test]
    fn resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("cfg")).unwrap();
        std::fs::write(dir.path().join("src.csv"), b"").unwrap();
        let text = "sourceData=src.csv\nsourceType=CSV\ntargetData=out.csv\nlogic=L.json\n\
                    configPath=cfg\nlogPath=logs\nschema=s.json\n";
        let props = parse_run_properties(text, RunMode::Collection).unwrap().props;
        let cfg = resolve_paths(props, dir.path()).unwrap();
        assert_eq!(cfg.logic_path, dir.path().join("cfg").join("L.json"));
        assert_eq!(cfg.schema_path, Some(dir.path().join("cfg").join("s.json")));
        assert_eq!(cfg.config_file("useMap.xlsx"), dir.path().join("cfg/useMap.xlsx"));
        assert!(dir.path().join("logs").is_dir());
    }

    #[test]
    fn resolve_errors() {
        let dir = tempfile::tempdir().unwrap();
        let props = parse_run_properties(BUNDLE_RUN, RunMode::Collection).unwrap().props;
        assert!(matches!(
            resolve_paths(props.clone(), dir.path()),
            Err(ConfigError::SourceFileMissing(_))
        ));
        let mut with_cfg = props;
        with_cfg.config_path = Some("nope".into());
        assert!(matches!(
            resolve_paths(with_cfg, dir.path()),
            Err(ConfigError::ConfigDirMissing(_))
        ));
    }

    fn value_strategy() -> impl Strategy<Value = String> {
        "[A-Za-z0-9_./:]{1,12}"
    }

    proptest! {
        #[test]
        fn parse_render_parse_is_stable(
            src in value_strategy(),
            tgt in value_strategy(),
            logic in "[a-z]{1,8}",
            drp in proptest::option::of(value_strategy()),
            handles in proptest::collection::vec("[a-z0-9/]{1,6}", 0..3),
            schema in proptest::option::of(value_strategy()),
            fs in prop_oneof![Just(','), Just('|'), Just('\t')],
        ) {
            let mut text = format!("sourceData={src}\nsourceType=CSV\ntargetData={tgt}\nlogic={logic}.json\n");
            if let Some(d) = &drp { text.push_str(&format!("dataReadPath={d}\n")); }
            if !handles.is_empty() { text.push_str(&format!("auditHandle={}\n", handles.join(","))); }
            if let Some(s) = &schema { text.push_str(&format!("schema={s}\n")); }
            text.push_str(&format!("csvFieldSep={}\n", render_separator(fs)));
            let first = parse_run_properties(&text, RunMode::Collection).unwrap().props;
            let again = parse_run_properties(&first.render(), RunMode::Collection).unwrap().props;
            prop_assert_eq!(first, again);
        }
    }
}
