//! Action configuration tables: useMap, moveField, lookUp and attach.
//!
//! Column order is fixed and checked against the header row. Every cell is
//! read as text exactly as written: no trimming, no case folding, and
//! numeric-looking cells such as `07` stay `07`.
//!
//! CSV is the canonical on-disk format. `.xlsx` workbooks are accepted
//! through a first-sheet reader, and a missing `name.xlsx` falls back to a
//! sibling `name.csv`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleError {
    #[error("configuration file `{}` not found", .0.display())]
    ConfigFileMissing(PathBuf),
    #[error("cannot read `{file}`: {message}")]
    Read { file: String, message: String },
    #[error("{file}: header must be [{expected}], found [{found}]")]
    HeaderOrderMismatch { file: String, expected: String, found: String },
    #[error("{file}:{line}: row has more cells than the header")]
    TooManyCells { file: String, line: usize },
    #[error("{file}:{line}: `remove` must appear in both targetField and targetValue")]
    HalfRemoveRow { file: String, line: usize },
    #[error("{file}:{line}: invalid regular expression: {message}")]
    BadRegex { file: String, line: usize, message: String },
    #[error("{file}:{line}: `{value}` is not a valid count:=N expression")]
    BadCountExpr { file: String, line: usize, value: String },
    #[error("{file}:{line}: unknown expression type `{value}`")]
    BadExprType { file: String, line: usize, value: String },
    #[error("{file}:{line}: capture reference ${group} exceeds the {available} group(s) of the expression")]
    BadCaptureRef { file: String, line: usize, group: usize, available: usize },
    #[error("{file}:{line}: unsupported matchType `{value}` (expected equals or contains)")]
    BadMatchType { file: String, line: usize, value: String },
    #[error("{file}:{line}: unsupported targetValueType `{value}` (expected value)")]
    BadTargetValueType { file: String, line: usize, value: String },
    #[error("{file}:{line}: mode must be add or coalesce, got `{value}`")]
    BadMode { file: String, line: usize, value: String },
    #[error("{file}: header [{header}] does not match any Handle_ID template")]
    UnknownHeaderSignature { file: String, header: String },
    #[error("field separator `{0}` must be a single-byte character")]
    BadSeparator(char),
}

/// A header row plus data rows, each tagged with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableRow {
    pub line: usize,
    pub cells: Vec<String>,
}

fn read_err(name: &str, e: impl ToString) -> RuleError {
    RuleError::Read {
        file: name.to_string(),
        message: e.to_string(),
    }
}

pub(crate) fn separator_byte(sep: char) -> Result<u8, RuleError> {
    if sep.is_ascii() {
        Ok(sep as u8)
    } else {
        Err(RuleError::BadSeparator(sep))
    }
}

impl Table {
    fn from_raw_rows(name: &str, rows: Vec<(usize, Vec<String>)>) -> Result<Table, RuleError> {
        let mut iter = rows.into_iter();
        let mut header = match iter.next() {
            Some((_, h)) => h,
            None => Vec::new(),
        };
        if let Some(first) = header.first_mut() {
            if let Some(stripped) = first.strip_prefix('\u{feff}') {
                *first = stripped.to_string();
            }
        }
        while header.last().is_some_and(|h| h.trim().is_empty()) {
            header.pop();
        }
        let width = header.len();
        let mut out = Vec::new();
        for (line, mut cells) in iter {
            if cells.iter().all(String::is_empty) {
                continue;
            }
            if cells.len() > width {
                if cells[width..].iter().all(String::is_empty) {
                    cells.truncate(width);
                } else {
                    return Err(RuleError::TooManyCells { file: name.to_string(), line });
                }
            }
            cells.resize(width, String::new());
            out.push(TableRow { line, cells });
        }
        Ok(Table {
            name: name.to_string(),
            header,
            rows: out,
        })
    }

    pub fn from_csv_str(name: &str, text: &str, sep: char) -> Result<Table, RuleError> {
        Self::from_csv_reader(name, text.as_bytes(), sep)
    }

    pub fn from_csv_reader<R: std::io::Read>(name: &str, reader: R, sep: char) -> Result<Table, RuleError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .delimiter(separator_byte(sep)?)
            .from_reader(reader);
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| read_err(name, e))?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            rows.push((line, record.iter().map(str::to_string).collect()));
        }
        Self::from_raw_rows(name, rows)
    }

    /// First worksheet of a workbook; other sheets are ignored.
    pub fn from_workbook(path: &Path) -> Result<Table, RuleError> {
        use calamine::{open_workbook_auto, Data, Reader};
        let name = display_name(path);
        let mut wb = open_workbook_auto(path).map_err(|e| read_err(&name, e))?;
        let range = match wb.worksheet_range_at(0) {
            Some(r) => r.map_err(|e| read_err(&name, e))?,
            None => return Self::from_raw_rows(&name, Vec::new()),
        };
        let first_row = range.start().map_or(0, |(r, _)| r as usize);
        let first_col = range.start().map_or(0, |(_, c)| c as usize);
        let rows = range
            .rows()
            .enumerate()
            .map(|(i, row)| {
                let mut cells = vec![String::new(); first_col];
                cells.extend(row.iter().map(|c| match c {
                    Data::Empty => String::new(),
                    other => other.to_string(),
                }));
                (first_row + i + 1, cells)
            })
            .collect();
        Self::from_raw_rows(&name, rows)
    }

    pub fn header_text(&self) -> String {
        self.header.join(", ")
    }
}

fn display_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn is_workbook(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("xlsx" | "xlsm" | "xls" | "xlsb" | "ods")
    )
}

/// The file that will actually be read for a configured name, if any.
pub fn locate_table(path: &Path) -> Option<PathBuf> {
    if path.is_file() {
        return Some(path.to_path_buf());
    }
    if is_workbook(path) {
        let csv = path.with_extension("csv");
        if csv.is_file() {
            return Some(csv);
        }
    }
    None
}

/// Load a table from disk. The returned table is named after the
/// configured file name, which is what audit lines refer to.
pub fn load_table(path: &Path, sep: char) -> Result<Table, RuleError> {
    let actual = locate_table(path).ok_or_else(|| RuleError::ConfigFileMissing(path.to_path_buf()))?;
    let mut table = if is_workbook(&actual) {
        Table::from_workbook(&actual)?
    } else {
        let file = std::fs::File::open(&actual).map_err(|e| read_err(&display_name(&actual), e))?;
        Table::from_csv_reader(&display_name(&actual), std::io::BufReader::new(file), sep)?
    };
    table.name = display_name(path);
    Ok(table)
}

/// Columns and the header names each accepts.
type HeaderSpec = &'static [&'static [&'static str]];

pub(crate) const USEMAP_HEADER: HeaderSpec = &[&["sourceField"], &["sourceValue"], &["targetField"], &["targetValue"]];

pub(crate) const MOVEFIELD_HEADER: HeaderSpec = &[
    &["sourceField"],
    &["matchGroup", "match_group"],
    &["matchType", "src_exprType"],
    &["matchValue", "src_expression"],
    &["targetField"],
    &["transformType", "tgt_exprType"],
    &["targetExpr", "tgt_expression"],
    &["targetReplace", "tgt_stringValue"],
];

pub(crate) const LOOKUP_HEADER: HeaderSpec = &[
    &["sourceField"],
    &["matchType", "matchTyp"],
    &["sourceValue"],
    &["targetField"],
    &["targetValue"],
    &["targetValueType"],
];

pub(crate) const ATTACH_HEADER: HeaderSpec = &[&["Handle_ID", "Hid"], &["assetPath"], &["assetName"]];

pub(crate) fn header_matches(found: &[String], spec: HeaderSpec) -> bool {
    found.len() == spec.len()
        && found
            .iter()
            .zip(spec)
            .all(|(h, names)| names.iter().any(|n| n.eq_ignore_ascii_case(h.trim())))
}

fn expected_text(spec: HeaderSpec) -> String {
    spec.iter().map(|names| names[0]).collect::<Vec<_>>().join(", ")
}

fn check_header(table: &Table, spec: HeaderSpec) -> Result<(), RuleError> {
    if header_matches(&table.header, spec) {
        Ok(())
    } else {
        Err(RuleError::HeaderOrderMismatch {
            file: table.name.clone(),
            expected: expected_text(spec),
            found: table.header_text(),
        })
    }
}

pub const REMOVE: &str = "remove";

/// A parsed rule together with the line it came from.
#[derive(Debug, Clone)]
pub struct Row<T> {
    pub line: usize,
    pub rule: T,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UseMapRule {
    pub source_field: String,
    pub source_value: String,
    pub target_field: String,
    pub target_value: String,
}

impl UseMapRule {
    pub fn from_cells(file: &str, line: usize, cells: &[String]) -> Result<Self, RuleError> {
        let rule = UseMapRule {
            source_field: cells[0].clone(),
            source_value: cells[1].clone(),
            target_field: cells[2].clone(),
            target_value: cells[3].clone(),
        };
        if (rule.target_field == REMOVE) != (rule.target_value == REMOVE) {
            return Err(RuleError::HalfRemoveRow { file: file.to_string(), line });
        }
        Ok(rule)
    }

    pub fn is_removal(&self) -> bool {
        self.target_field == REMOVE
    }

    pub fn to_cells(&self) -> Vec<String> {
        vec![
            self.source_field.clone(),
            self.source_value.clone(),
            self.target_field.clone(),
            self.target_value.clone(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceMatch {
    Matches,
    Contains,
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Move,
    Split,
    Remove,
    Replace,
    RegxReplace,
}

#[derive(Debug, Clone)]
pub struct MoveFieldRule {
    pub source_field: String,
    /// Rules sharing a group id run in sequence; ungrouped rules run in parallel.
    pub match_group: Option<String>,
    pub source_match: SourceMatch,
    source_match_raw: String,
    pub source_expression: String,
    pub target_field: String,
    pub transform: Transform,
    transform_raw: String,
    pub target_expression: String,
    pub target_replacement: String,
    source_regex: Option<Regex>,
    target_regex: Option<Regex>,
}

impl PartialEq for MoveFieldRule {
    fn eq(&self, other: &Self) -> bool {
        self.to_cells() == other.to_cells()
    }
}

fn capture_refs(template: &str) -> Vec<usize> {
    static REFS: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let re = REFS.get_or_init(|| Regex::new(r"\$(?:\{([0-9]+)\}|([0-9]+))").unwrap());
    re.captures_iter(template)
        .filter_map(|c| c.get(1).or_else(|| c.get(2)))
        .filter_map(|m| m.as_str().parse().ok())
        .collect()
}

fn compile(file: &str, line: usize, pattern: &str) -> Result<Regex, RuleError> {
    Regex::new(pattern).map_err(|e| RuleError::BadRegex {
        file: file.to_string(),
        line,
        message: e.to_string(),
    })
}

impl MoveFieldRule {
    pub fn from_cells(file: &str, line: usize, cells: &[String]) -> Result<Self, RuleError> {
        let src_raw = cells[2].clone();
        let src_norm = src_raw.trim().to_ascii_lowercase();
        let source_match = if src_norm == "matches" {
            SourceMatch::Matches
        } else if src_norm == "contains" {
            SourceMatch::Contains
        } else if let Some(n) = src_norm.strip_prefix("count:=") {
            let n = n.trim().parse().map_err(|_| RuleError::BadCountExpr {
                file: file.to_string(),
                line,
                value: src_raw.clone(),
            })?;
            SourceMatch::Count(n)
        } else if src_norm.starts_with("count") {
            return Err(RuleError::BadCountExpr { file: file.to_string(), line, value: src_raw });
        } else {
            return Err(RuleError::BadExprType { file: file.to_string(), line, value: src_raw });
        };

        let tgt_raw = cells[5].clone();
        let transform = match tgt_raw.trim().to_ascii_lowercase().as_str() {
            "move" => Transform::Move,
            "split" => Transform::Split,
            "remove" => Transform::Remove,
            "replace" => Transform::Replace,
            "regxreplace" | "regexreplace" => Transform::RegxReplace,
            _ => return Err(RuleError::BadExprType { file: file.to_string(), line, value: tgt_raw }),
        };

        let source_regex = match source_match {
            SourceMatch::Matches => Some(compile(file, line, &format!("^(?:{})$", cells[3]))?),
            _ => None,
        };
        let target_regex = match transform {
            Transform::RegxReplace => {
                let re = compile(file, line, &cells[6])?;
                let available = re.captures_len() - 1;
                if let Some(&group) = capture_refs(&cells[7]).iter().find(|&&g| g > available) {
                    return Err(RuleError::BadCaptureRef { file: file.to_string(), line, group, available });
                }
                Some(re)
            }
            _ => None,
        };

        Ok(MoveFieldRule {
            source_field: cells[0].clone(),
            match_group: Some(cells[1].clone()).filter(|g| !g.trim().is_empty()),
            source_match,
            source_match_raw: src_raw,
            source_expression: cells[3].clone(),
            target_field: cells[4].clone(),
            transform,
            transform_raw: tgt_raw,
            target_expression: cells[6].clone(),
            target_replacement: cells[7].clone(),
            source_regex,
            target_regex,
        })
    }

    pub fn to_cells(&self) -> Vec<String> {
        vec![
            self.source_field.clone(),
            self.match_group.clone().unwrap_or_default(),
            self.source_match_raw.clone(),
            self.source_expression.clone(),
            self.target_field.clone(),
            self.transform_raw.clone(),
            self.target_expression.clone(),
            self.target_replacement.clone(),
        ]
    }

    /// Whether the rule's source condition holds for `value`.
    pub fn matches(&self, value: &str) -> bool {
        match &self.source_match {
            SourceMatch::Matches => self.source_regex.as_ref().is_some_and(|re| re.is_match(value)),
            SourceMatch::Contains => value.contains(self.source_expression.as_str()),
            SourceMatch::Count(n) => {
                if self.source_expression.is_empty() {
                    return false;
                }
                value.matches(self.source_expression.as_str()).count() == *n
            }
        }
    }

    /// Target field; an empty cell means the source field itself.
    pub fn effective_target(&self) -> &str {
        if self.target_field.is_empty() {
            &self.source_field
        } else {
            &self.target_field
        }
    }

    /// `None` when the rule removes the pair, otherwise the output values.
    pub fn transform_value(&self, value: &str) -> Option<Vec<String>> {
        if self.transform == Transform::Remove || self.target_field == REMOVE {
            return None;
        }
        Some(match self.transform {
            Transform::Move => vec![value.to_string()],
            Transform::Split => {
                if self.target_expression.is_empty() {
                    vec![value.to_string()]
                } else {
                    value
                        .split(self.target_expression.as_str())
                        .filter(|p| !p.is_empty())
                        .map(str::to_string)
                        .collect()
                }
            }
            Transform::Replace => {
                if self.target_expression.is_empty() {
                    vec![value.to_string()]
                } else {
                    vec![value.replace(self.target_expression.as_str(), &self.target_replacement)]
                }
            }
            Transform::RegxReplace => {
                let re = self.target_regex.as_ref().expect("compiled at parse time");
                vec![re.replace_all(value, self.target_replacement.as_str()).into_owned()]
            }
            Transform::Remove => unreachable!(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LookupMatch {
    Equals,
    Contains,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookUpRule {
    pub source_field: String,
    pub match_type: LookupMatch,
    match_type_raw: String,
    pub source_value: String,
    pub target_field: String,
    pub target_value: String,
    pub target_value_type: String,
}

impl LookUpRule {
    pub fn from_cells(file: &str, line: usize, cells: &[String]) -> Result<Self, RuleError> {
        let match_type = match cells[1].trim().to_ascii_lowercase().as_str() {
            "equals" => LookupMatch::Equals,
            "contains" => LookupMatch::Contains,
            _ => {
                return Err(RuleError::BadMatchType {
                    file: file.to_string(),
                    line,
                    value: cells[1].clone(),
                })
            }
        };
        if !cells[5].trim().eq_ignore_ascii_case("value") {
            return Err(RuleError::BadTargetValueType {
                file: file.to_string(),
                line,
                value: cells[5].clone(),
            });
        }
        Ok(LookUpRule {
            source_field: cells[0].clone(),
            match_type,
            match_type_raw: cells[1].clone(),
            source_value: cells[2].clone(),
            target_field: cells[3].clone(),
            target_value: cells[4].clone(),
            target_value_type: cells[5].clone(),
        })
    }

    pub fn matches(&self, value: &str) -> bool {
        match self.match_type {
            LookupMatch::Equals => value == self.source_value,
            LookupMatch::Contains => value.contains(self.source_value.as_str()),
        }
    }

    pub fn is_removal(&self) -> bool {
        self.target_field == REMOVE
    }

    pub fn to_cells(&self) -> Vec<String> {
        vec![
            self.source_field.clone(),
            self.match_type_raw.clone(),
            self.source_value.clone(),
            self.target_field.clone(),
            self.target_value.clone(),
            self.target_value_type.clone(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttachRule {
    pub handle: String,
    pub asset_path: String,
    pub asset_name: String,
}

fn parse_rows<T>(
    table: &Table,
    spec: HeaderSpec,
    parse: impl Fn(&str, usize, &[String]) -> Result<T, RuleError>,
) -> Result<Vec<Row<T>>, RuleError> {
    check_header(table, spec)?;
    table
        .rows
        .iter()
        .map(|r| Ok(Row { line: r.line, rule: parse(&table.name, r.line, &r.cells)? }))
        .collect()
}

pub fn parse_usemap_rules(table: &Table) -> Result<Vec<Row<UseMapRule>>, RuleError> {
    parse_rows(table, USEMAP_HEADER, UseMapRule::from_cells)
}

pub fn parse_movefield_rules(table: &Table) -> Result<Vec<Row<MoveFieldRule>>, RuleError> {
    parse_rows(table, MOVEFIELD_HEADER, MoveFieldRule::from_cells)
}

pub fn parse_lookup_rules(table: &Table) -> Result<Vec<Row<LookUpRule>>, RuleError> {
    parse_rows(table, LOOKUP_HEADER, LookUpRule::from_cells)
}

pub fn parse_attach_rules(table: &Table) -> Result<Vec<Row<AttachRule>>, RuleError> {
    parse_rows(table, ATTACH_HEADER, |_, _, c| {
        Ok(AttachRule {
            handle: c[0].clone(),
            asset_path: c[1].clone(),
            asset_name: c[2].clone(),
        })
    })
}

/// useMap rows indexed on the exact (sourceField, sourceValue) pair.
#[derive(Debug, Clone)]
pub struct UseMapTable {
    pub file: String,
    pub rows: Vec<Row<UseMapRule>>,
    index: HashMap<(String, String), Vec<usize>>,
}

impl UseMapTable {
    pub fn new(file: impl Into<String>, rows: Vec<Row<UseMapRule>>) -> Self {
        let mut index: HashMap<(String, String), Vec<usize>> = HashMap::new();
        for (i, r) in rows.iter().enumerate() {
            index
                .entry((r.rule.source_field.clone(), r.rule.source_value.clone()))
                .or_default()
                .push(i);
        }
        UseMapTable { file: file.into(), rows, index }
    }

    /// Every row whose source pair equals `(field, value)` byte for byte,
    /// in file order.
    pub fn lookup<'a>(&'a self, field: &str, value: &str) -> impl Iterator<Item = &'a Row<UseMapRule>> + 'a {
        self.index
            .get(&(field.to_string(), value.to_string()))
            .into_iter()
            .flatten()
            .map(move |&i| &self.rows[i])
    }
}

/// Rows grouped by source field, file order preserved within each group.
#[derive(Debug, Clone)]
pub struct FieldIndexed<T> {
    pub file: String,
    pub rows: Vec<Row<T>>,
    by_field: HashMap<String, Vec<usize>>,
}

pub trait HasSourceField {
    fn source_field(&self) -> &str;
}

impl HasSourceField for LookUpRule {
    fn source_field(&self) -> &str {
        &self.source_field
    }
}

impl HasSourceField for MoveFieldRule {
    fn source_field(&self) -> &str {
        &self.source_field
    }
}

impl<T: HasSourceField> FieldIndexed<T> {
    pub fn new(file: impl Into<String>, rows: Vec<Row<T>>) -> Self {
        let mut by_field: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, r) in rows.iter().enumerate() {
            by_field.entry(r.rule.source_field().to_string()).or_default().push(i);
        }
        FieldIndexed { file: file.into(), rows, by_field }
    }

    pub fn for_field<'a>(&'a self, field: &str) -> impl Iterator<Item = &'a Row<T>> + 'a {
        self.by_field
            .get(field)
            .into_iter()
            .flatten()
            .map(move |&i| &self.rows[i])
    }
}

pub type LookUpTable = FieldIndexed<LookUpRule>;
pub type MoveFieldTable = FieldIndexed<MoveFieldRule>;

#[derive(Debug, Clone)]
pub struct AttachTable {
    pub file: String,
    pub rows: Vec<Row<AttachRule>>,
    by_handle: HashMap<String, Vec<usize>>,
}

impl AttachTable {
    pub fn new(file: impl Into<String>, rows: Vec<Row<AttachRule>>) -> Self {
        let mut by_handle: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, r) in rows.iter().enumerate() {
            by_handle.entry(r.rule.handle.clone()).or_default().push(i);
        }
        AttachTable { file: file.into(), rows, by_handle }
    }

    pub fn for_handle<'a>(&'a self, handle: &str) -> impl Iterator<Item = &'a Row<AttachRule>> + 'a {
        self.by_handle
            .get(handle)
            .into_iter()
            .flatten()
            .map(move |&i| &self.rows[i])
    }
}
