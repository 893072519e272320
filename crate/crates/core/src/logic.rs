//! Curation logic: the JSON plan used in collection mode and the
//! per-handle CSV plan used in handle mode.

use std::collections::{BTreeSet, HashMap};

use regex::Regex;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::json::{duplicate_keys, Json};
use crate::rules::{
    header_matches, LookUpRule, MoveFieldRule, RuleError, Table, UseMapRule, LOOKUP_HEADER, MOVEFIELD_HEADER,
    USEMAP_HEADER,
};
use crate::schema::{PartialFieldProps, SchemaError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LogicError {
    #[error("logic file is not valid JSON: {0}")]
    Malformed(String),
    #[error("logic file has no top-level `Fields` object")]
    MissingFieldsKey,
    #[error("field `{field}`: unknown action `{name}`")]
    UnknownAction { field: String, name: String },
    #[error("field `{field}`: the `{action}` descriptor is empty")]
    EmptyDescriptor { field: String, action: String },
    #[error(transparent)]
    Property(#[from] SchemaError),
    #[error("field `{field}`: `{key}` must be {expected}")]
    BadValue { field: String, key: String, expected: &'static str },
    #[error("field `{field}`: filter `{filter}` listed in `{action}` has no block")]
    MissingFilterBlock { field: String, action: String, filter: String },
    #[error("field `{field}`: filter `{filter}` of `{action}` needs an inputFile")]
    FilterMissingInputFile { field: String, action: String, filter: String },
    #[error("field `{field}`: filter `{filter}`: {message}")]
    BadFilter { field: String, filter: String, message: String },
    #[error("field `{field}`: `add` needs a targetValue")]
    MissingTargetValue { field: String },
    #[error("dependency cycle among fields: {}", .0.join(", "))]
    DependencyCycle(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActionKind {
    UseMap,
    CopyData,
    MoveField,
    LookUp,
    Add,
    Attach,
    DeleteField,
}

impl ActionKind {
    pub const ALL: [ActionKind; 7] = [
        ActionKind::UseMap,
        ActionKind::CopyData,
        ActionKind::MoveField,
        ActionKind::LookUp,
        ActionKind::Add,
        ActionKind::Attach,
        ActionKind::DeleteField,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::UseMap => "useMap",
            ActionKind::CopyData => "copyData",
            ActionKind::MoveField => "moveField",
            ActionKind::LookUp => "lookUp",
            ActionKind::Add => "add",
            ActionKind::Attach => "attach",
            ActionKind::DeleteField => "deleteField",
        }
    }

    /// Action names are matched without regard to case (`lookup` and
    /// `lookUp` both appear in curation sheets).
    pub fn from_name(name: &str) -> Option<ActionKind> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(name))
    }

    /// A halting action ends the container for the value it matched.
    pub fn is_halting(self) -> bool {
        !matches!(self, ActionKind::LookUp | ActionKind::Add)
    }

    pub fn default_input_file(self) -> Option<&'static str> {
        match self {
            ActionKind::UseMap => Some("useMap.xlsx"),
            ActionKind::MoveField => Some("moveField.xlsx"),
            ActionKind::LookUp => Some("lookUp.xlsx"),
            ActionKind::Attach => Some("attach.xlsx"),
            _ => None,
        }
    }

    pub fn uses_table(self) -> bool {
        self.default_input_file().is_some()
    }

    /// Runs once per field and record instead of once per value.
    pub fn is_field_level(self) -> bool {
        matches!(self, ActionKind::Add | ActionKind::DeleteField | ActionKind::Attach)
    }

    fn accepts(self, key: &str) -> bool {
        let common = matches!(key, "filter" | "action");
        common
            || match self {
                ActionKind::UseMap => matches!(key, "inputFile" | "delimiter"),
                ActionKind::MoveField | ActionKind::LookUp | ActionKind::Attach => key == "inputFile",
                ActionKind::CopyData | ActionKind::Add => matches!(key, "targetField" | "targetValue" | "delimiter"),
                ActionKind::DeleteField => false,
            }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMatch {
    Equals,
    Contains,
    Matches,
}

impl FilterMatch {
    fn name(self) -> &'static str {
        match self {
            FilterMatch::Equals => "equals",
            FilterMatch::Contains => "contains",
            FilterMatch::Matches => "matches",
        }
    }
}

/// A named record predicate plus the configuration used when it holds.
#[derive(Debug, Clone)]
pub struct FilterSpec {
    pub name: String,
    pub field: String,
    pub match_type: FilterMatch,
    pub value: String,
    pub input_file: Option<String>,
    pub delimiter: Option<String>,
    pub target_field: Option<Vec<String>>,
    pub target_value: Option<Vec<String>>,
    regex: Option<Regex>,
}

impl PartialEq for FilterSpec {
    fn eq(&self, o: &Self) -> bool {
        self.name == o.name
            && self.field == o.field
            && self.match_type == o.match_type
            && self.value == o.value
            && self.input_file == o.input_file
            && self.delimiter == o.delimiter
            && self.target_field == o.target_field
            && self.target_value == o.target_value
    }
}

impl FilterSpec {
    pub fn matches_value(&self, v: &str) -> bool {
        match self.match_type {
            FilterMatch::Equals => v == self.value,
            FilterMatch::Contains => v.contains(self.value.as_str()),
            FilterMatch::Matches => self.regex.as_ref().is_some_and(|re| re.is_match(v)),
        }
    }

    /// True when any value of the predicate field satisfies the filter.
    pub fn matches_any<'a>(&self, mut values: impl Iterator<Item = &'a str>) -> bool {
        values.any(|v| self.matches_value(v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionDescriptor {
    pub kind: ActionKind,
    /// Whether the descriptor object was written in the logic file.
    pub explicit: bool,
    pub input_file: Option<String>,
    pub delimiter: Option<String>,
    pub target_field: Option<Vec<String>>,
    pub target_value: Option<Vec<String>>,
    pub filters: Vec<FilterSpec>,
    pub nested: Vec<ActionDescriptor>,
}

impl ActionDescriptor {
    pub fn default_for(kind: ActionKind) -> ActionDescriptor {
        ActionDescriptor {
            kind,
            explicit: false,
            input_file: None,
            delimiter: None,
            target_field: None,
            target_value: None,
            filters: Vec::new(),
            nested: Vec::new(),
        }
    }

    pub fn input_file_or_default(&self) -> Option<&str> {
        self.input_file.as_deref().or(self.kind.default_input_file())
    }

    /// Every rule table this descriptor can read, nested ones included.
    pub fn referenced_files(&self, out: &mut Vec<(ActionKind, String)>) {
        if self.kind.uses_table() {
            let parent_needed = self.filters.is_empty() || self.input_file.is_some();
            if parent_needed {
                if let Some(f) = self.input_file_or_default() {
                    out.push((self.kind, f.to_string()));
                }
            }
            for f in &self.filters {
                if let Some(file) = &f.input_file {
                    out.push((self.kind, file.clone()));
                }
            }
        }
        for n in &self.nested {
            n.referenced_files(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldTranslationBlock {
    pub field: String,
    pub props_overrides: PartialFieldProps,
    pub dependency: Vec<String>,
    pub source_priority: Vec<String>,
    pub actions: Vec<ActionDescriptor>,
}

impl FieldTranslationBlock {
    pub fn is_active(&self) -> bool {
        !self.props_overrides.is_empty()
            || !self.dependency.is_empty()
            || !self.source_priority.is_empty()
            || !self.actions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurationPlan {
    pub ftbs: HashMap<String, FieldTranslationBlock>,
    /// Fields in processing order; see [`order_fields`].
    pub ordered_fields: Vec<String>,
}

impl CurationPlan {
    pub fn ftb(&self, field: &str) -> Option<&FieldTranslationBlock> {
        self.ftbs.get(field)
    }

    pub fn referenced_files(&self) -> Vec<(ActionKind, String)> {
        let mut out = Vec::new();
        for field in &self.ordered_fields {
            for d in &self.ftbs[field].actions {
                d.referenced_files(&mut out);
            }
        }
        let mut seen = std::collections::HashSet::new();
        out.retain(|e| seen.insert(e.clone()));
        out
    }

    /// Render back to logic JSON. Parsing the result yields an equal plan.
    pub fn render(&self) -> Value {
        let mut fields = Map::new();
        for name in &self.ordered_fields {
            fields.insert(name.clone(), render_ftb(&self.ftbs[name]));
        }
        json!({ "Fields": fields })
    }
}

fn list_value(items: &[String]) -> Value {
    Value::Array(items.iter().cloned().map(Value::String).collect())
}

fn render_ftb(ftb: &FieldTranslationBlock) -> Value {
    let mut m = Map::new();
    let p = &ftb.props_overrides;
    if let Some(d) = &p.datatype {
        m.insert("datatype".into(), Value::String(d.name().to_string()));
    }
    if let Some(b) = p.multi_valued {
        m.insert("multiValued".into(), Value::Bool(b));
    }
    if let Some(b) = p.controlled {
        m.insert("controlled".into(), Value::Bool(b));
    }
    if let Some(b) = p.validation {
        m.insert("validation".into(), Value::Bool(b));
    }
    if !ftb.dependency.is_empty() {
        m.insert("dependency".into(), list_value(&ftb.dependency));
    }
    if !ftb.source_priority.is_empty() {
        m.insert("sourcePriority".into(), list_value(&ftb.source_priority));
    }
    render_container(&ftb.actions, &mut m);
    Value::Object(m)
}

fn render_container(actions: &[ActionDescriptor], m: &mut Map<String, Value>) {
    if actions.is_empty() {
        return;
    }
    m.insert(
        "action".into(),
        Value::Array(actions.iter().map(|a| Value::String(a.kind.name().into())).collect()),
    );
    for a in actions {
        if a.explicit && !m.contains_key(a.kind.name()) {
            m.insert(a.kind.name().into(), render_descriptor(a));
        }
    }
}

fn render_config(
    m: &mut Map<String, Value>,
    input_file: &Option<String>,
    delimiter: &Option<String>,
    target_field: &Option<Vec<String>>,
    target_value: &Option<Vec<String>>,
) {
    if let Some(f) = input_file {
        m.insert("inputFile".into(), Value::String(f.clone()));
    }
    if let Some(d) = delimiter {
        m.insert("delimiter".into(), Value::String(d.clone()));
    }
    if let Some(t) = target_field {
        m.insert("targetField".into(), list_value(t));
    }
    if let Some(t) = target_value {
        m.insert("targetValue".into(), list_value(t));
    }
}

fn render_descriptor(d: &ActionDescriptor) -> Value {
    let mut m = Map::new();
    if !d.filters.is_empty() {
        m.insert(
            "filter".into(),
            Value::Array(d.filters.iter().map(|f| Value::String(f.name.clone())).collect()),
        );
        for f in &d.filters {
            let mut fm = Map::new();
            fm.insert("field".into(), Value::String(f.field.clone()));
            fm.insert("matchType".into(), Value::String(f.match_type.name().into()));
            fm.insert("value".into(), Value::String(f.value.clone()));
            render_config(&mut fm, &f.input_file, &f.delimiter, &f.target_field, &f.target_value);
            m.insert(f.name.clone(), Value::Object(fm));
        }
    }
    render_config(&mut m, &d.input_file, &d.delimiter, &d.target_field, &d.target_value);
    render_container(&d.nested, &mut m);
    Value::Object(m)
}

#[derive(Debug, Clone)]
pub struct ParsedPlan {
    pub plan: CurationPlan,
    pub warnings: Vec<String>,
}

struct Ctx<'a> {
    field: &'a str,
    warnings: &'a mut Vec<String>,
}

fn string_list(field: &str, key: &str, v: &Json) -> Result<Vec<String>, LogicError> {
    v.as_string_list().ok_or_else(|| LogicError::BadValue {
        field: field.to_string(),
        key: key.to_string(),
        expected: "a string or a list of strings",
    })
}

fn string_value(field: &str, key: &str, v: &Json) -> Result<String, LogicError> {
    v.as_str().map(str::to_string).ok_or_else(|| LogicError::BadValue {
        field: field.to_string(),
        key: key.to_string(),
        expected: "a string",
    })
}

fn action_names(field: &str, v: &Json) -> Result<Vec<ActionKind>, LogicError> {
    let names = match v {
        Json::Array(items) => items
            .iter()
            .map(|i| string_value(field, "action", i))
            .collect::<Result<Vec<_>, _>>()?,
        _ => {
            return Err(LogicError::BadValue {
                field: field.to_string(),
                key: "action".into(),
                expected: "a list of action names",
            })
        }
    };
    names
        .into_iter()
        .map(|n| {
            ActionKind::from_name(&n).ok_or(LogicError::UnknownAction { field: field.to_string(), name: n })
        })
        .collect()
}

/// Parse a container (`action` list plus sibling descriptor blocks) out of
/// an object. Keys consumed here are added to `used`.
fn parse_container(
    ctx: &mut Ctx,
    entries: &[(String, Json)],
    used: &mut Vec<String>,
) -> Result<Vec<ActionDescriptor>, LogicError> {
    let Some((_, list)) = entries.iter().rev().find(|(k, _)| k == "action") else {
        return Ok(Vec::new());
    };
    used.push("action".into());
    let kinds = action_names(ctx.field, list)?;
    let mut out = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let block = entries
            .iter()
            .rev()
            .find(|(k, _)| ActionKind::from_name(k) == Some(kind));
        let desc = match block {
            Some((key, v)) => {
                used.push(key.clone());
                parse_descriptor(ctx, kind, v)?
            }
            None => ActionDescriptor::default_for(kind),
        };
        out.push(desc);
    }
    Ok(out)
}

fn parse_filter(ctx: &mut Ctx, kind: ActionKind, name: &str, v: &Json) -> Result<FilterSpec, LogicError> {
    let bad = |message: String| LogicError::BadFilter {
        field: ctx.field.to_string(),
        filter: name.to_string(),
        message,
    };
    let entries = v.as_object().ok_or_else(|| bad("filter block must be an object".into()))?;
    let mut spec = FilterSpec {
        name: name.to_string(),
        field: String::new(),
        match_type: FilterMatch::Equals,
        value: String::new(),
        input_file: None,
        delimiter: None,
        target_field: None,
        target_value: None,
        regex: None,
    };
    let mut has_field = false;
    for (k, v) in entries {
        match k.as_str() {
            "field" => {
                spec.field = string_value(ctx.field, k, v)?;
                has_field = true;
            }
            "matchType" | "matchTyp" => {
                spec.match_type = match string_value(ctx.field, k, v)?.to_ascii_lowercase().as_str() {
                    "equals" => FilterMatch::Equals,
                    "contains" => FilterMatch::Contains,
                    "matches" => FilterMatch::Matches,
                    other => return Err(bad(format!("unknown matchType `{other}`"))),
                }
            }
            "value" => spec.value = string_value(ctx.field, k, v)?,
            "inputFile" => spec.input_file = Some(string_value(ctx.field, k, v)?),
            "delimiter" => spec.delimiter = Some(string_value(ctx.field, k, v)?),
            "targetField" => spec.target_field = Some(string_list(ctx.field, k, v)?),
            "targetValue" => spec.target_value = Some(string_list(ctx.field, k, v)?),
            other => ctx
                .warnings
                .push(format!("field `{}`: filter `{name}`: unknown key `{other}` ignored", ctx.field)),
        }
    }
    if !has_field {
        return Err(bad("missing `field`".into()));
    }
    if spec.match_type == FilterMatch::Matches {
        spec.regex = Some(Regex::new(&format!("^(?:{})$", spec.value)).map_err(|e| bad(e.to_string()))?);
    }
    if kind.uses_table() && spec.input_file.is_none() {
        return Err(LogicError::FilterMissingInputFile {
            field: ctx.field.to_string(),
            action: kind.name().to_string(),
            filter: name.to_string(),
        });
    }
    Ok(spec)
}

fn parse_descriptor(ctx: &mut Ctx, kind: ActionKind, v: &Json) -> Result<ActionDescriptor, LogicError> {
    let entries = v.as_object().ok_or_else(|| LogicError::BadValue {
        field: ctx.field.to_string(),
        key: kind.name().to_string(),
        expected: "an object",
    })?;
    if entries.is_empty() {
        return Err(LogicError::EmptyDescriptor {
            field: ctx.field.to_string(),
            action: kind.name().to_string(),
        });
    }
    let mut d = ActionDescriptor::default_for(kind);
    d.explicit = true;
    let mut used = Vec::new();

    if let Some((_, names)) = entries.iter().rev().find(|(k, _)| k == "filter") {
        used.push("filter".to_string());
        for name in string_list(ctx.field, "filter", names)? {
            let Some((_, block)) = entries.iter().rev().find(|(k, _)| *k == name) else {
                return Err(LogicError::MissingFilterBlock {
                    field: ctx.field.to_string(),
                    action: kind.name().to_string(),
                    filter: name,
                });
            };
            used.push(name.clone());
            d.filters.push(parse_filter(ctx, kind, &name, block)?);
        }
    }

    d.nested = parse_container(ctx, entries, &mut used)?;

    for (k, v) in entries {
        if used.contains(k) {
            continue;
        }
        let known = matches!(k.as_str(), "inputFile" | "delimiter" | "targetField" | "targetValue");
        if !known {
            ctx.warnings.push(format!(
                "field `{}`: `{}` descriptor: unknown key `{k}` ignored",
                ctx.field,
                kind.name()
            ));
            continue;
        }
        if !kind.accepts(k) {
            ctx.warnings.push(format!(
                "field `{}`: `{k}` does not apply to `{}` and is ignored",
                ctx.field,
                kind.name()
            ));
            continue;
        }
        match k.as_str() {
            "inputFile" => d.input_file = Some(string_value(ctx.field, k, v)?),
            "delimiter" => d.delimiter = Some(string_value(ctx.field, k, v)?),
            "targetField" => d.target_field = Some(string_list(ctx.field, k, v)?),
            "targetValue" => d.target_value = Some(string_list(ctx.field, k, v)?),
            _ => unreachable!(),
        }
    }

    if kind == ActionKind::Add && d.target_value.is_none() {
        return Err(LogicError::MissingTargetValue { field: ctx.field.to_string() });
    }
    Ok(d)
}

fn parse_ftb(field: &str, v: &Json, warnings: &mut Vec<String>) -> Result<FieldTranslationBlock, LogicError> {
    let entries = v.as_object().ok_or_else(|| LogicError::BadValue {
        field: field.to_string(),
        key: field.to_string(),
        expected: "an object",
    })?;
    for dup in duplicate_keys(entries) {
        warnings.push(format!("field `{field}`: key `{dup}` repeated; the last one is used"));
    }
    let mut ctx = Ctx { field, warnings };
    let mut used = Vec::new();
    let actions = parse_container(&mut ctx, entries, &mut used)?;
    let mut ftb = FieldTranslationBlock {
        field: field.to_string(),
        props_overrides: PartialFieldProps::default(),
        dependency: Vec::new(),
        source_priority: Vec::new(),
        actions,
    };
    for (k, v) in entries {
        if used.contains(k) {
            continue;
        }
        match k.as_str() {
            "dependency" => ftb.dependency = string_list(field, k, v)?,
            "sourcePriority" => ftb.source_priority = string_list(field, k, v)?,
            _ => {
                if ftb.props_overrides.absorb(field, k, v)? {
                    continue;
                }
                if ActionKind::from_name(k).is_some() {
                    ctx.warnings
                        .push(format!("field `{field}`: descriptor `{k}` is not in the action list and is ignored"));
                } else {
                    ctx.warnings.push(format!("field `{field}`: unknown key `{k}` ignored"));
                }
            }
        }
    }
    Ok(ftb)
}

/// Parse a collection-mode logic document and order its fields.
pub fn parse_logic_collection(text: &str) -> Result<ParsedPlan, LogicError> {
    let doc = Json::parse(text).map_err(|e| LogicError::Malformed(e.to_string()))?;
    let root = doc.as_object().ok_or(LogicError::MissingFieldsKey)?;
    let mut warnings = Vec::new();
    for (k, _) in root {
        if k != "Fields" {
            warnings.push(format!("top-level key `{k}` ignored"));
        }
    }
    let fields = root
        .iter()
        .rev()
        .find(|(k, _)| k == "Fields")
        .and_then(|(_, v)| v.as_object())
        .ok_or(LogicError::MissingFieldsKey)?;
    for dup in duplicate_keys(fields) {
        warnings.push(format!("field `{dup}` defined more than once; the last definition is used"));
    }

    let mut plan = CurationPlan::default();
    for (name, v) in fields {
        let ftb = parse_ftb(name, v, &mut warnings)?;
        if ftb.is_active() {
            plan.ftbs.insert(name.clone(), ftb);
        } else {
            plan.ftbs.remove(name);
            warnings.push(format!("field `{name}`: empty translation block ignored"));
        }
    }
    plan.ordered_fields = order_fields(&plan)?;
    Ok(ParsedPlan { plan, warnings })
}

/// Topological order over dependency edges between plan fields. Fields
/// that are free at the same time are taken in lexicographic order.
/// Dependencies on fields without a block impose no constraint.
pub fn order_fields(plan: &CurationPlan) -> Result<Vec<String>, LogicError> {
    let mut indegree: HashMap<&str, usize> = plan.ftbs.keys().map(|k| (k.as_str(), 0)).collect();
    let mut dependents: HashMap<&str, Vec<&str>> = HashMap::new();
    for (name, ftb) in &plan.ftbs {
        let deps: BTreeSet<&str> = ftb
            .dependency
            .iter()
            .map(String::as_str)
            .filter(|d| plan.ftbs.contains_key(*d))
            .collect();
        for d in deps {
            *indegree.get_mut(name.as_str()).unwrap() += 1;
            dependents.entry(d).or_default().push(name);
        }
    }
    let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, &n)| n == 0).map(|(k, _)| *k).collect();
    let mut out = Vec::with_capacity(indegree.len());
    while let Some(next) = ready.pop_first() {
        out.push(next.to_string());
        for dep in dependents.get(next).into_iter().flatten() {
            let n = indegree.get_mut(dep).unwrap();
            *n -= 1;
            if *n == 0 {
                ready.insert(dep);
            }
        }
    }
    if out.len() < plan.ftbs.len() {
        let mut stuck: Vec<String> = indegree
            .iter()
            .filter(|(k, _)| !out.iter().any(|o| o == *k))
            .map(|(k, _)| k.to_string())
            .collect();
        stuck.sort();
        return Err(LogicError::DependencyCycle(stuck));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HidKind {
    UseMap,
    MoveField,
    LookUp,
    AddCoalesce,
    DeleteField,
    ItemsRemove,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddMode {
    Add,
    /// Only fills a field that has no values.
    Coalesce,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddRow {
    pub target_field: String,
    pub separator: String,
    pub target_value: String,
    pub mode: AddMode,
}

impl AddRow {
    pub fn values(&self) -> Vec<String> {
        if self.separator.is_empty() {
            vec![self.target_value.clone()]
        } else {
            self.target_value
                .split(self.separator.as_str())
                .filter(|p| !p.is_empty())
                .map(str::to_string)
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HidRule {
    UseMap(UseMapRule),
    MoveField(MoveFieldRule),
    LookUp(LookUpRule),
    Add(AddRow),
    DeleteField(String),
    ItemsRemove,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HidRow {
    pub handle: String,
    pub line: usize,
    pub rule: HidRule,
}

#[derive(Debug, Clone)]
pub struct HidPlan {
    pub kind: HidKind,
    pub file: String,
    pub rows: Vec<HidRow>,
    by_handle: HashMap<String, Vec<usize>>,
}

impl HidPlan {
    pub fn new(kind: HidKind, file: impl Into<String>, rows: Vec<HidRow>) -> HidPlan {
        let mut by_handle: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, r) in rows.iter().enumerate() {
            by_handle.entry(r.handle.clone()).or_default().push(i);
        }
        HidPlan {
            kind,
            file: file.into(),
            rows,
            by_handle,
        }
    }

    /// Rows for `handle` in file order.
    pub fn rows_for<'a>(&'a self, handle: &str) -> impl Iterator<Item = &'a HidRow> + 'a {
        self.by_handle
            .get(handle)
            .into_iter()
            .flatten()
            .map(move |&i| &self.rows[i])
    }

    pub fn addresses(&self, handle: &str) -> bool {
        self.by_handle.contains_key(handle)
    }
}

fn is_handle_column(h: &str) -> bool {
    let h = h.trim();
    h.eq_ignore_ascii_case("hid") || h.eq_ignore_ascii_case("handle_id")
}

const ADD_HEADER: &[&[&str]] = &[&["targetField"], &["mul_sep"], &["targetValue"], &["mode"]];
const DELETE_HEADER: &[&[&str]] = &[&["sourceField"]];

fn detect_kind(table: &Table) -> Option<HidKind> {
    let (first, rest) = table.header.split_first()?;
    if !is_handle_column(first) {
        return None;
    }
    if rest.is_empty() {
        Some(HidKind::ItemsRemove)
    } else if header_matches(rest, USEMAP_HEADER) {
        Some(HidKind::UseMap)
    } else if header_matches(rest, MOVEFIELD_HEADER) {
        Some(HidKind::MoveField)
    } else if header_matches(rest, LOOKUP_HEADER) {
        Some(HidKind::LookUp)
    } else if header_matches(rest, ADD_HEADER) {
        Some(HidKind::AddCoalesce)
    } else if header_matches(rest, DELETE_HEADER) {
        Some(HidKind::DeleteField)
    } else {
        None
    }
}

/// Build a handle-mode plan from a loaded table, detecting the rule kind
/// from the header row.
pub fn hid_plan_from_table(table: &Table) -> Result<HidPlan, RuleError> {
    let kind = detect_kind(table).ok_or_else(|| RuleError::UnknownHeaderSignature {
        file: table.name.clone(),
        header: table.header_text(),
    })?;
    let file = table.name.as_str();
    let mut rows = Vec::with_capacity(table.rows.len());
    for r in &table.rows {
        let (handle, cells) = r.cells.split_first().expect("header has a handle column");
        let rule = match kind {
            HidKind::UseMap => HidRule::UseMap(UseMapRule::from_cells(file, r.line, cells)?),
            HidKind::MoveField => HidRule::MoveField(MoveFieldRule::from_cells(file, r.line, cells)?),
            HidKind::LookUp => HidRule::LookUp(LookUpRule::from_cells(file, r.line, cells)?),
            HidKind::AddCoalesce => {
                let mode = match cells[3].trim().to_ascii_lowercase().as_str() {
                    "add" => AddMode::Add,
                    "coalesce" => AddMode::Coalesce,
                    _ => {
                        return Err(RuleError::BadMode {
                            file: file.to_string(),
                            line: r.line,
                            value: cells[3].clone(),
                        })
                    }
                };
                HidRule::Add(AddRow {
                    target_field: cells[0].clone(),
                    separator: cells[1].clone(),
                    target_value: cells[2].clone(),
                    mode,
                })
            }
            HidKind::DeleteField => HidRule::DeleteField(cells[0].clone()),
            HidKind::ItemsRemove => HidRule::ItemsRemove,
        };
        rows.push(HidRow {
            handle: handle.clone(),
            line: r.line,
            rule,
        });
    }
    Ok(HidPlan::new(kind, file, rows))
}

pub fn parse_logic_hid(name: &str, text: &str, sep: char) -> Result<HidPlan, RuleError> {
    hid_plan_from_table(&Table::from_csv_str(name, text, sep)?)
}
