//! The per-record pipeline.
//!
//! Collection mode walks the plan's fields in order. Every value of a field
//! with a translation block runs through that block's action container: a
//! continuing action stages its output and lets the value go on, the first
//! halting action that fires stages its output and ends the container, and
//! a value nothing consumed is dropped. Fields without a block are copied
//! unchanged. Handle mode applies the rows addressed to the record's handle.
//! Both modes finish with [`commit`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use crate::audit::{AuditEvent, AuditOp};
use crate::logic::{
    ActionDescriptor, ActionKind, AddMode, CurationPlan, FieldTranslationBlock, HidKind, HidPlan, HidRule,
};
use crate::normalize::Normalizer;
use crate::record::{commit, pending_values, Assignment, AssignmentBuffer, FieldPolicy, MetadataRecord, RuleRef};
use crate::rules::{
    load_table, parse_attach_rules, parse_lookup_rules, parse_movefield_rules, parse_usemap_rules, AttachTable,
    LookUpTable, MoveFieldRule, MoveFieldTable, RuleError, UseMapTable,
};
use crate::schema::{effective_props, FieldProps, FieldSchema, ValidationFailure};

/// Read access to a record's current values while its pipeline runs.
pub trait View {
    fn values(&self, field: &str) -> Vec<String>;

    fn first(&self, field: &str) -> Option<String> {
        self.values(field).into_iter().next()
    }
}

impl View for MetadataRecord {
    fn values(&self, field: &str) -> Vec<String> {
        MetadataRecord::values(self, field).map(str::to_string).collect()
    }

    fn first(&self, field: &str) -> Option<String> {
        self.first_value(field).map(str::to_string)
    }
}

/// The source record overlaid with everything staged so far.
struct PendingView<'a> {
    record: &'a MetadataRecord,
    buffer: &'a AssignmentBuffer,
}

impl View for PendingView<'_> {
    fn values(&self, field: &str) -> Vec<String> {
        pending_values(self.buffer, self.record, field)
    }
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn token_name(s: &str) -> Option<&str> {
    let end = s.find('$')?;
    let name = &s[..end];
    (!name.is_empty() && !name.chars().any(char::is_whitespace)).then_some(name)
}

fn substitute(template: &str, value: &str, view: &dyn View, bare_value: bool) -> String {
    let mut out = String::with_capacity(template.len() + value.len());
    let mut i = 0;
    let mut prev: Option<char> = None;
    while i < template.len() {
        let rest = &template[i..];
        let c = rest.chars().next().unwrap();
        if c == '$' {
            if let Some(name) = token_name(&rest[1..]) {
                if name == "value" {
                    out.push_str(value);
                } else if let Some(v) = view.first(name) {
                    out.push_str(&v);
                }
                i += name.len() + 2;
                prev = Some('$');
                continue;
            }
        } else if bare_value
            && rest.starts_with("value")
            && !prev.is_some_and(is_word)
            && !rest[5..].chars().next().is_some_and(is_word)
        {
            out.push_str(value);
            i += 5;
            prev = Some('e');
            continue;
        }
        out.push(c);
        prev = Some(c);
        i += c.len_utf8();
    }
    out
}

/// Replace `$value$` with `value` and `$name$` with the first value of
/// field `name` (empty when absent). A `$` that does not open a token is
/// kept as is.
pub fn substitute_tokens(template: &str, value: &str, view: &dyn View) -> String {
    substitute(template, value, view, false)
}

/// copyData templates also accept the bare word `value`.
pub fn substitute_copy_template(template: &str, value: &str, view: &dyn View) -> String {
    substitute(template, value, view, true)
}

fn split_parts(text: String, delimiter: Option<&str>) -> Vec<String> {
    match delimiter {
        Some(d) if !d.is_empty() => text.split(d).filter(|p| !p.is_empty()).map(str::to_string).collect(),
        _ => vec![text],
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    Stage { field: String, value: String },
    Delete { field: String, value: String },
    DeleteField { field: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Origin {
    pub action: ActionKind,
    pub rule: Option<RuleRef>,
    pub input: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tagged {
    pub effect: Effect,
    pub origin: Origin,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActionResult {
    /// A halting action fired on the value.
    pub consumed: bool,
    /// The value was deleted and must not reach later actions.
    pub stop: bool,
    /// Rule-table rows that fired.
    pub fired: usize,
    pub effects: Vec<Tagged>,
}

impl ActionResult {
    fn push(&mut self, effect: Effect, origin: &Origin) {
        self.effects.push(Tagged {
            effect,
            origin: origin.clone(),
        });
    }

    pub fn assignments(&self) -> Vec<(String, String)> {
        self.effects
            .iter()
            .filter_map(|t| match &t.effect {
                Effect::Stage { field, value } => Some((field.clone(), value.clone())),
                _ => None,
            })
            .collect()
    }

    pub fn deletions(&self) -> Vec<(String, String)> {
        self.effects
            .iter()
            .filter_map(|t| match &t.effect {
                Effect::Delete { field, value } => Some((field.clone(), value.clone())),
                _ => None,
            })
            .collect()
    }
}

pub fn apply_usemap(
    table: &UseMapTable,
    field: &str,
    value: &str,
    delimiter: Option<&str>,
    view: &dyn View,
) -> ActionResult {
    let mut r = ActionResult::default();
    for row in table.lookup(field, value) {
        r.fired += 1;
        let origin = Origin {
            action: ActionKind::UseMap,
            rule: Some(RuleRef { file: table.file.clone(), line: row.line }),
            input: Some(value.to_string()),
        };
        if row.rule.is_removal() {
            r.push(Effect::Delete { field: field.into(), value: value.into() }, &origin);
            continue;
        }
        let text = substitute_tokens(&row.rule.target_value, value, view);
        for part in split_parts(text, delimiter) {
            r.push(Effect::Stage { field: row.rule.target_field.clone(), value: part }, &origin);
        }
    }
    r.consumed = r.fired > 0;
    r
}

/// moveField over `rows` (file order). Ungrouped rules each see the
/// original value; a group's rules run as a chain over the outputs of the
/// previous rule, and a rule in the chain only applies to items currently
/// in its source field.
pub fn apply_movefield_rows(rows: &[(usize, &MoveFieldRule)], file: &str, field: &str, value: &str) -> ActionResult {
    let mut r = ActionResult::default();
    let rref = |line: usize| RuleRef { file: file.to_string(), line };
    let mut done_groups: HashSet<&str> = HashSet::new();
    for &(line, rule) in rows {
        match rule.match_group.as_deref() {
            None => {
                if rule.source_field != field || !rule.matches(value) {
                    continue;
                }
                r.fired += 1;
                let origin = Origin {
                    action: ActionKind::MoveField,
                    rule: Some(rref(line)),
                    input: Some(value.to_string()),
                };
                match rule.transform_value(value) {
                    None => r.push(Effect::Delete { field: field.into(), value: value.into() }, &origin),
                    Some(outs) => {
                        for o in outs {
                            r.push(Effect::Stage { field: rule.effective_target().to_string(), value: o }, &origin);
                        }
                    }
                }
            }
            Some(group) => {
                if !done_groups.insert(group) {
                    continue;
                }
                let members: Vec<(usize, &MoveFieldRule)> = rows
                    .iter()
                    .filter(|(_, m)| m.match_group.as_deref() == Some(group))
                    .copied()
                    .collect();
                // (field, value, rule that produced it)
                let mut items: Vec<(String, String, Option<usize>)> = vec![(field.to_string(), value.to_string(), None)];
                let mut fired = false;
                let mut removed_original = None;
                for (mline, m) in &members {
                    let mut next = Vec::with_capacity(items.len());
                    for (f, v, by) in items {
                        if f != m.source_field || !m.matches(&v) {
                            next.push((f, v, by));
                            continue;
                        }
                        fired = true;
                        r.fired += 1;
                        match m.transform_value(&v) {
                            None => {
                                if by.is_none() {
                                    removed_original = Some(*mline);
                                }
                            }
                            Some(outs) => {
                                for o in outs {
                                    next.push((m.effective_target().to_string(), o, Some(*mline)));
                                }
                            }
                        }
                    }
                    items = next;
                }
                if !fired {
                    continue;
                }
                if let Some(l) = removed_original {
                    let origin = Origin {
                        action: ActionKind::MoveField,
                        rule: Some(rref(l)),
                        input: Some(value.to_string()),
                    };
                    r.push(Effect::Delete { field: field.into(), value: value.into() }, &origin);
                }
                for (f, v, by) in items {
                    let origin = Origin {
                        action: ActionKind::MoveField,
                        rule: by.map(rref),
                        input: Some(value.to_string()),
                    };
                    r.push(Effect::Stage { field: f, value: v }, &origin);
                }
            }
        }
    }
    r.consumed = r.fired > 0;
    r
}

pub fn apply_lookup_rows<'a>(
    rows: impl Iterator<Item = (usize, &'a crate::rules::LookUpRule)>,
    file: &str,
    field: &str,
    value: &str,
    view: &dyn View,
) -> ActionResult {
    let mut r = ActionResult::default();
    for (line, rule) in rows {
        if rule.source_field != field || !rule.matches(value) {
            continue;
        }
        r.fired += 1;
        let origin = Origin {
            action: ActionKind::LookUp,
            rule: Some(RuleRef { file: file.to_string(), line }),
            input: Some(value.to_string()),
        };
        if rule.is_removal() {
            r.push(Effect::Delete { field: field.into(), value: value.into() }, &origin);
            r.stop = true;
        } else {
            let v = substitute_tokens(&rule.target_value, value, view);
            r.push(Effect::Stage { field: rule.target_field.clone(), value: v }, &origin);
        }
    }
    r
}

pub fn apply_lookup(table: &LookUpTable, field: &str, value: &str, view: &dyn View) -> ActionResult {
    apply_lookup_rows(table.for_field(field).map(|r| (r.line, &r.rule)), &table.file, field, value, view)
}

/// The configuration an action uses for one record after filters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EffectiveConfig {
    pub input_file: Option<String>,
    pub delimiter: Option<String>,
    pub target_field: Option<Vec<String>>,
    pub target_value: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution {
    Use(EffectiveConfig),
    /// The action does nothing for this record.
    Skip,
    /// copyData with filters, none matching and no own target: the value is
    /// consumed without output.
    Remove,
}

/// First matching filter wins, falling back to the descriptor's own
/// configuration when it has one.
pub fn select_filter_config(d: &ActionDescriptor, view: &dyn View) -> Resolution {
    let own = EffectiveConfig {
        input_file: d.input_file_or_default().map(str::to_string),
        delimiter: d.delimiter.clone(),
        target_field: d.target_field.clone(),
        target_value: d.target_value.clone(),
    };
    if d.filters.is_empty() {
        return Resolution::Use(own);
    }
    for f in &d.filters {
        if f.matches_any(view.values(&f.field).iter().map(String::as_str)) {
            return Resolution::Use(EffectiveConfig {
                input_file: f.input_file.clone().or(own.input_file),
                delimiter: f.delimiter.clone().or(own.delimiter),
                target_field: f.target_field.clone().or(own.target_field),
                target_value: f.target_value.clone().or(own.target_value),
            });
        }
    }
    let has_own = match d.kind {
        ActionKind::CopyData => d.target_field.is_some(),
        ActionKind::Add => d.target_value.is_some(),
        ActionKind::DeleteField => false,
        _ => d.input_file.is_some(),
    };
    if has_own {
        Resolution::Use(own)
    } else if d.kind == ActionKind::CopyData {
        Resolution::Remove
    } else {
        Resolution::Skip
    }
}

pub fn apply_copydata(cfg: &EffectiveConfig, field: &str, value: &str, view: &dyn View) -> ActionResult {
    let mut r = ActionResult {
        consumed: true,
        ..Default::default()
    };
    let origin = Origin {
        action: ActionKind::CopyData,
        rule: None,
        input: Some(value.to_string()),
    };
    let own = [field.to_string()];
    let targets = cfg.target_field.as_deref().unwrap_or(&own);
    for target in targets {
        match &cfg.target_value {
            None => {
                for part in split_parts(value.to_string(), cfg.delimiter.as_deref()) {
                    r.push(Effect::Stage { field: target.clone(), value: part }, &origin);
                }
            }
            Some(templates) => {
                for t in templates {
                    let text = substitute_copy_template(t, value, view);
                    for part in split_parts(text, cfg.delimiter.as_deref()) {
                        r.push(Effect::Stage { field: target.clone(), value: part }, &origin);
                    }
                }
            }
        }
    }
    r
}

pub fn apply_add(cfg: &EffectiveConfig, field: &str, view: &dyn View) -> ActionResult {
    let mut r = ActionResult::default();
    let origin = Origin {
        action: ActionKind::Add,
        rule: None,
        input: None,
    };
    let own = [field.to_string()];
    let targets = cfg.target_field.as_deref().unwrap_or(&own);
    for target in targets {
        for t in cfg.target_value.iter().flatten() {
            let text = substitute_tokens(t, "", view);
            for part in split_parts(text, cfg.delimiter.as_deref()) {
                r.push(Effect::Stage { field: target.clone(), value: part }, &origin);
            }
        }
    }
    r
}

/// A movefield table plus an index of its match groups.
#[derive(Debug, Clone)]
pub struct MoveFieldSet {
    pub table: MoveFieldTable,
    groups: HashMap<String, Vec<usize>>,
}

impl MoveFieldSet {
    pub fn new(table: MoveFieldTable) -> Self {
        let mut groups: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, r) in table.rows.iter().enumerate() {
            if let Some(g) = &r.rule.match_group {
                groups.entry(g.clone()).or_default().push(i);
            }
        }
        MoveFieldSet { table, groups }
    }

    /// Rules that can act on a value of `field`: its own rules plus every
    /// member of the groups they belong to, in file order.
    pub fn rows_for(&self, field: &str) -> Vec<(usize, &MoveFieldRule)> {
        let mut idx: Vec<usize> = Vec::new();
        for row in self.table.for_field(field) {
            let i = self.table.rows.iter().position(|r| std::ptr::eq(r, row)).unwrap();
            idx.push(i);
            if let Some(g) = &row.rule.match_group {
                idx.extend(&self.groups[g]);
            }
        }
        idx.sort_unstable();
        idx.dedup();
        idx.into_iter()
            .map(|i| (self.table.rows[i].line, &self.table.rows[i].rule))
            .collect()
    }

    pub fn apply(&self, field: &str, value: &str) -> ActionResult {
        apply_movefield_rows(&self.rows_for(field), &self.table.file, field, value)
    }
}

/// Every rule table referenced by a plan, keyed by configured file name.
#[derive(Debug, Clone, Default)]
pub struct RuleStore {
    pub usemap: HashMap<String, UseMapTable>,
    pub movefield: HashMap<String, MoveFieldSet>,
    pub lookup: HashMap<String, LookUpTable>,
    pub attach: HashMap<String, AttachTable>,
}

impl RuleStore {
    /// Load every table the plan names, resolving file names against
    /// `config_dir`.
    pub fn load(plan: &CurationPlan, config_dir: &Path, sep: char) -> Result<RuleStore, RuleError> {
        let mut store = RuleStore::default();
        for (kind, name) in plan.referenced_files() {
            let table = load_table(&config_dir.join(&name), sep)?;
            store.insert_table(kind, &name, &table)?;
        }
        Ok(store)
    }

    pub fn insert_table(&mut self, kind: ActionKind, name: &str, table: &crate::rules::Table) -> Result<(), RuleError> {
        match kind {
            ActionKind::UseMap => {
                self.usemap
                    .insert(name.to_string(), UseMapTable::new(&table.name, parse_usemap_rules(table)?));
            }
            ActionKind::MoveField => {
                let t = MoveFieldTable::new(&table.name, parse_movefield_rules(table)?);
                self.movefield.insert(name.to_string(), MoveFieldSet::new(t));
            }
            ActionKind::LookUp => {
                self.lookup
                    .insert(name.to_string(), LookUpTable::new(&table.name, parse_lookup_rules(table)?));
            }
            ActionKind::Attach => {
                self.attach
                    .insert(name.to_string(), AttachTable::new(&table.name, parse_attach_rules(table)?));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Which rules run: a collection plan or a handle plan.
pub enum Program {
    Collection(CurationPlan),
    Handle(HidPlan),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attachment {
    pub name: String,
    pub source: PathBuf,
}

#[derive(Debug, Clone, Default)]
pub struct RecordOutcome {
    /// `None` when the record was removed.
    pub record: Option<MetadataRecord>,
    pub matched: bool,
    /// Rule rows fired, per field.
    pub fires: BTreeMap<String, usize>,
    pub attachments: Vec<Attachment>,
    /// Lineage events; filled only when requested.
    pub events: Vec<AuditEvent>,
    pub validation_failures: Vec<(String, ValidationFailure)>,
    pub warnings: Vec<String>,
}

pub struct Engine {
    pub program: Program,
    pub rules: RuleStore,
    pub schema: FieldSchema,
    pub normalizer: Box<dyn Normalizer>,
    /// Base directory for attach asset paths.
    pub asset_dir: PathBuf,
}

struct Policy<'a> {
    schema: &'a FieldSchema,
    plan: Option<&'a CurationPlan>,
}

impl FieldPolicy for Policy<'_> {
    fn props(&self, field: &str) -> FieldProps {
        match self.plan.and_then(|p| p.ftb(field)) {
            Some(ftb) => effective_props(self.schema, &ftb.props_overrides, field),
            None => self.schema.props(field),
        }
    }

    fn source_priority(&self, field: &str) -> &[String] {
        self.plan
            .and_then(|p| p.ftb(field))
            .map(|f| f.source_priority.as_slice())
            .unwrap_or(&[])
    }
}

fn default_actions() -> &'static [ActionDescriptor] {
    static DEFAULT: OnceLock<Vec<ActionDescriptor>> = OnceLock::new();
    DEFAULT.get_or_init(|| vec![ActionDescriptor::default_for(ActionKind::CopyData)])
}

/// Mutable state of one record's run.
struct Run<'e> {
    engine: &'e Engine,
    record: &'e MetadataRecord,
    buffer: AssignmentBuffer,
    audit: bool,
    events: Vec<AuditEvent>,
    fires: BTreeMap<String, usize>,
    attachments: Vec<Attachment>,
    warnings: Vec<String>,
}

impl<'e> Run<'e> {
    fn new(engine: &'e Engine, record: &'e MetadataRecord, audit: bool) -> Self {
        Run {
            engine,
            record,
            buffer: AssignmentBuffer::default(),
            audit,
            events: Vec::new(),
            fires: BTreeMap::new(),
            attachments: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn view(&self) -> PendingView<'_> {
        PendingView {
            record: self.record,
            buffer: &self.buffer,
        }
    }

    fn fire(&mut self, field: &str, n: usize) {
        if n > 0 {
            *self.fires.entry(field.to_string()).or_default() += n;
        }
    }

    fn event(&mut self, field: &str, action: &str, input: Option<String>, ops: Vec<AuditOp>) {
        if self.audit {
            self.events.push(AuditEvent {
                field: field.to_string(),
                action: action.to_string(),
                rule: None,
                input,
                ops,
            });
        }
    }

    /// Apply effects to the buffer; `source` is the provenance field.
    fn apply(&mut self, source: &str, effects: Vec<Tagged>) {
        let mut current: Option<(Origin, Vec<AuditOp>)> = None;
        for t in effects {
            let op = match &t.effect {
                Effect::Stage { field, value } => {
                    self.buffer.stage(Assignment {
                        target_field: field.clone(),
                        value: value.clone(),
                        source_field: source.to_string(),
                        origin: t.origin.rule.clone(),
                    });
                    AuditOp::Stage {
                        field: field.clone(),
                        value: value.clone(),
                        source: source.to_string(),
                    }
                }
                Effect::Delete { field, value } => {
                    self.buffer.delete_pair(field, value);
                    AuditOp::Delete {
                        field: field.clone(),
                        value: value.clone(),
                    }
                }
                Effect::DeleteField { field } => {
                    self.buffer.delete_field(field);
                    AuditOp::DeleteField { field: field.clone() }
                }
            };
            if !self.audit {
                continue;
            }
            match &mut current {
                Some((o, ops)) if *o == t.origin => ops.push(op),
                _ => {
                    if let Some((o, ops)) = current.take() {
                        self.push_event(source, o, ops);
                    }
                    current = Some((t.origin, vec![op]));
                }
            }
        }
        if let Some((o, ops)) = current {
            self.push_event(source, o, ops);
        }
    }

    fn push_event(&mut self, field: &str, o: Origin, ops: Vec<AuditOp>) {
        self.events.push(AuditEvent {
            field: field.to_string(),
            action: o.action.name().to_string(),
            rule: o.rule,
            input: o.input,
            ops,
        });
    }

    /// Attach rows for this record's handle; returns whether any fired.
    fn run_attach(&mut self, ftb_field: &str, cfg: &EffectiveConfig) -> bool {
        let Some(file) = cfg.input_file.as_deref() else { return false };
        let Some(table) = self.engine.rules.attach.get(file) else { return false };
        let Some(handle) = self.record.handle() else {
            self.warnings.push("attach: record has no Handle_ID".into());
            return false;
        };
        let mut fired = 0;
        for row in table.for_handle(handle) {
            fired += 1;
            let source = self.engine.asset_dir.join(&row.rule.asset_path);
            if source.is_file() {
                self.attachments.push(Attachment {
                    name: row.rule.asset_name.clone(),
                    source,
                });
            } else {
                self.warnings.push(format!(
                    "{}:{}: asset `{}` not found for {handle}",
                    table.file,
                    row.line,
                    source.display()
                ));
            }
        }
        self.fire(ftb_field, fired);
        fired > 0
    }

    /// One action on one value, before nesting.
    fn run_action(&mut self, d: &ActionDescriptor, cfg: &EffectiveConfig, field: &str, value: &str) -> ActionResult {
        let view = self.view();
        let file = cfg.input_file.as_deref().unwrap_or_default();
        match d.kind {
            ActionKind::UseMap => match self.engine.rules.usemap.get(file) {
                Some(t) => apply_usemap(t, field, value, cfg.delimiter.as_deref(), &view),
                None => ActionResult::default(),
            },
            ActionKind::MoveField => match self.engine.rules.movefield.get(file) {
                Some(t) => t.apply(field, value),
                None => ActionResult::default(),
            },
            ActionKind::LookUp => match self.engine.rules.lookup.get(file) {
                Some(t) => apply_lookup(t, field, value, &view),
                None => ActionResult::default(),
            },
            ActionKind::CopyData => apply_copydata(cfg, field, value, &view),
            _ => ActionResult::default(),
        }
    }

    /// Feed each staged output of a parent action through its nested
    /// container; the container's effects replace the output.
    fn nest(&mut self, ftb_field: &str, nested: &[ActionDescriptor], effects: Vec<Tagged>) -> Vec<Tagged> {
        if nested.is_empty() {
            return effects;
        }
        let mut out = Vec::new();
        for t in effects {
            match &t.effect {
                Effect::Stage { field, value } => {
                    let (inner, _) = self.run_container(ftb_field, nested, field, std::slice::from_ref(value), false);
                    out.extend(inner);
                }
                _ => out.push(t),
            }
        }
        out
    }

    fn flush(&mut self, ftb_field: &str, effects: &mut Vec<Tagged>, apply_now: bool) {
        if apply_now && !effects.is_empty() {
            let e = std::mem::take(effects);
            self.apply(ftb_field, e);
        }
    }

    /// Run a container over `values` of `field`. Field-level actions run
    /// once per call. With `apply_now` effects reach the buffer after the
    /// field-level pass, after each value and after the add pass; otherwise
    /// they are returned. Also returns how many values were dropped.
    fn run_container(
        &mut self,
        ftb_field: &str,
        actions: &[ActionDescriptor],
        field: &str,
        values: &[String],
        apply_now: bool,
    ) -> (Vec<Tagged>, usize) {
        let mut effects = Vec::new();
        let mut dropped = 0;

        // Field-level decisions are taken once, against the view as it is
        // before this container's values run.
        let mut resolutions: Vec<Resolution> = Vec::with_capacity(actions.len());
        let mut attach_fired = vec![false; actions.len()];
        for (i, d) in actions.iter().enumerate() {
            let res = select_filter_config(d, &self.view());
            match (&res, d.kind) {
                (Resolution::Use(_), ActionKind::DeleteField) => effects.push(Tagged {
                    effect: Effect::DeleteField { field: field.to_string() },
                    origin: Origin {
                        action: ActionKind::DeleteField,
                        rule: None,
                        input: None,
                    },
                }),
                (Resolution::Use(cfg), ActionKind::Attach) => attach_fired[i] = self.run_attach(ftb_field, cfg),
                _ => {}
            }
            resolutions.push(res);
        }
        self.flush(ftb_field, &mut effects, apply_now);

        for value in values {
            let mut consumed = false;
            for (i, d) in actions.iter().enumerate() {
                if d.kind == ActionKind::Add {
                    continue;
                }
                // Filters on per-value actions are re-evaluated per value so
                // they see outputs staged by earlier values.
                let res = if d.kind.is_field_level() {
                    resolutions[i].clone()
                } else {
                    select_filter_config(d, &self.view())
                };
                let cfg = match res {
                    Resolution::Skip => continue,
                    Resolution::Remove => {
                        consumed = true;
                        break;
                    }
                    Resolution::Use(cfg) => cfg,
                };
                match d.kind {
                    ActionKind::DeleteField => {
                        consumed = true;
                        break;
                    }
                    ActionKind::Attach => {
                        if attach_fired[i] {
                            effects.push(Tagged {
                                effect: Effect::Stage { field: field.to_string(), value: value.clone() },
                                origin: Origin {
                                    action: ActionKind::Attach,
                                    rule: None,
                                    input: Some(value.clone()),
                                },
                            });
                            consumed = true;
                            break;
                        }
                        continue;
                    }
                    _ => {}
                }
                let r = self.run_action(d, &cfg, field, value);
                self.fire(ftb_field, r.fired);
                let (halted, stop) = (d.kind.is_halting() && r.consumed, r.stop);
                let nested = self.nest(ftb_field, &d.nested, r.effects);
                effects.extend(nested);
                if halted || stop {
                    consumed = true;
                    break;
                }
            }
            self.flush(ftb_field, &mut effects, apply_now);
            if !consumed {
                dropped += 1;
                if self.audit {
                    self.event(ftb_field, "drop", Some(value.clone()), Vec::new());
                }
            }
        }

        for (i, d) in actions.iter().enumerate() {
            if d.kind != ActionKind::Add {
                continue;
            }
            if let Resolution::Use(cfg) = &resolutions[i] {
                let r = apply_add(cfg, field, &self.view());
                let nested = self.nest(ftb_field, &d.nested, r.effects);
                effects.extend(nested);
            }
        }
        self.flush(ftb_field, &mut effects, apply_now);
        (effects, dropped)
    }

    fn run_ftb(&mut self, ftb: &FieldTranslationBlock) {
        let field = ftb.field.as_str();
        let actions = if ftb.actions.is_empty() {
            default_actions()
        } else {
            ftb.actions.as_slice()
        };
        let values: Vec<String> = self.record.values(field).map(str::to_string).collect();
        if values.is_empty() && !actions.iter().any(|a| a.kind.is_field_level()) {
            return;
        }
        self.run_container(field, actions, field, &values, true);
        if self.record.has_field(field) {
            self.buffer.claim(field);
            self.event(field, "claim", None, vec![AuditOp::Claim { field: field.to_string() }]);
        }
    }

    fn run_collection(&mut self, plan: &CurationPlan) {
        for field in &plan.ordered_fields {
            let ftb = &plan.ftbs[field];
            self.run_ftb(ftb);
        }
    }

    fn run_hid(&mut self, plan: &HidPlan) {
        let Some(handle) = self.record.handle() else { return };
        let rows: Vec<_> = plan.rows_for(handle).collect();
        if rows.is_empty() {
            return;
        }
        let file = plan.file.as_str();
        let rref = |line| Some(RuleRef { file: file.to_string(), line });
        let pairs = self.record.entries.clone();
        match plan.kind {
            HidKind::ItemsRemove => {
                self.buffer.drop_record = true;
                self.fire(crate::schema::HANDLE_FIELD, 1);
                self.event(crate::schema::HANDLE_FIELD, "itemsRemove", Some(handle.to_string()), vec![AuditOp::DropRecord]);
            }
            HidKind::DeleteField => {
                for row in rows {
                    if let HidRule::DeleteField(f) = &row.rule {
                        self.fire(f, 1);
                        let effects = vec![Tagged {
                            effect: Effect::DeleteField { field: f.clone() },
                            origin: Origin { action: ActionKind::DeleteField, rule: rref(row.line), input: None },
                        }];
                        self.apply(f, effects);
                    }
                }
            }
            HidKind::AddCoalesce => {
                for row in rows {
                    let HidRule::Add(add) = &row.rule else { continue };
                    if add.mode == AddMode::Coalesce && !self.view().values(&add.target_field).is_empty() {
                        continue;
                    }
                    self.fire(&add.target_field, 1);
                    let origin = Origin { action: ActionKind::Add, rule: rref(row.line), input: None };
                    let effects = add
                        .values()
                        .into_iter()
                        .map(|v| Tagged {
                            effect: Effect::Stage { field: add.target_field.clone(), value: v },
                            origin: origin.clone(),
                        })
                        .collect();
                    self.apply(&add.target_field, effects);
                }
            }
            HidKind::UseMap => {
                for (f, v) in &pairs {
                    let mut r = ActionResult::default();
                    for row in &rows {
                        let HidRule::UseMap(u) = &row.rule else { continue };
                        if u.source_field != *f || u.source_value != *v {
                            continue;
                        }
                        r.fired += 1;
                        let origin = Origin { action: ActionKind::UseMap, rule: rref(row.line), input: Some(v.clone()) };
                        if r.fired == 1 {
                            r.push(Effect::Delete { field: f.clone(), value: v.clone() }, &origin);
                        }
                        if !u.is_removal() {
                            let text = substitute_tokens(&u.target_value, v, &self.view());
                            r.push(Effect::Stage { field: u.target_field.clone(), value: text }, &origin);
                        }
                    }
                    self.fire(f, r.fired);
                    self.apply(f, r.effects);
                }
            }
            HidKind::MoveField => {
                let rules: Vec<(usize, &MoveFieldRule)> = rows
                    .iter()
                    .filter_map(|r| match &r.rule {
                        HidRule::MoveField(m) => Some((r.line, m)),
                        _ => None,
                    })
                    .collect();
                for (f, v) in &pairs {
                    let mut r = apply_movefield_rows(&rules, file, f, v);
                    if r.consumed && !r.deletions().contains(&(f.clone(), v.clone())) {
                        let origin = Origin { action: ActionKind::MoveField, rule: None, input: Some(v.clone()) };
                        r.effects.insert(
                            0,
                            Tagged { effect: Effect::Delete { field: f.clone(), value: v.clone() }, origin },
                        );
                    }
                    self.fire(f, r.fired);
                    self.apply(f, r.effects);
                }
            }
            HidKind::LookUp => {
                for (f, v) in &pairs {
                    let lookups = rows.iter().filter_map(|r| match &r.rule {
                        HidRule::LookUp(l) => Some((r.line, l)),
                        _ => None,
                    });
                    let r = apply_lookup_rows(lookups, file, f, v, &self.view());
                    self.fire(f, r.fired);
                    self.apply(f, r.effects);
                }
            }
        }
    }
}

impl Engine {
    /// Run one record through the program and commit it. Lineage events
    /// are collected only when `audit` is set.
    pub fn process(&self, record: &MetadataRecord, audit: bool) -> RecordOutcome {
        let mut run = Run::new(self, record, audit);
        let plan = match &self.program {
            Program::Collection(plan) => {
                run.run_collection(plan);
                Some(plan)
            }
            Program::Handle(hid) => {
                run.run_hid(hid);
                None
            }
        };
        let policy = Policy {
            schema: &self.schema,
            plan,
        };
        let committed = commit(&run.buffer, record, &policy, self.normalizer.as_ref());
        let mut events = run.events;
        if audit {
            events.extend(committed.events);
        }
        let mut warnings = run.warnings;
        warnings.extend(committed.warnings);
        RecordOutcome {
            record: committed.record,
            matched: !run.fires.is_empty(),
            fires: run.fires,
            attachments: run.attachments,
            events,
            validation_failures: committed.validation_failures,
            warnings,
        }
    }

    /// Fields of `record` that no translation block covers.
    pub fn uncovered_fields<'r>(&self, record: &'r MetadataRecord) -> Vec<&'r str> {
        match &self.program {
            Program::Collection(plan) => record.fields().into_iter().filter(|f| plan.ftb(f).is_none()).collect(),
            Program::Handle(_) => Vec::new(),
        }
    }
}
