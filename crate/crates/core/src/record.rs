//! Records, staged assignments and the commit step that turns a record plus
//! its assignment buffer into the curated record.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::audit::{AuditEvent, AuditOp};
use crate::json::Json;
use crate::normalize::{routes_field, Normalizer};
use crate::schema::{validate_value, FieldProps, ValidationFailure, HANDLE_FIELD};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecordError {
    #[error("metadata is not valid JSON: {0}")]
    Malformed(String),
    #[error("metadata must be a JSON object of field -> list of strings")]
    NotAnObject,
    #[error("field `{0}` must hold a string or a list of strings")]
    BadValue(String),
    #[error("record has no Handle_ID")]
    MissingHandle,
    #[error("record has {0} Handle_ID values; exactly one is required")]
    MultipleHandles(usize),
}

/// An ordered multimap of field -> value pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct MetadataRecord {
    pub entries: Vec<(String, String)>,
}

impl MetadataRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, F, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (F, V)>,
        F: Into<String>,
        V: Into<String>,
    {
        MetadataRecord {
            entries: pairs.into_iter().map(|(f, v)| (f.into(), v.into())).collect(),
        }
    }

    pub fn push(&mut self, field: impl Into<String>, value: impl Into<String>) {
        self.entries.push((field.into(), value.into()));
    }

    pub fn handle(&self) -> Option<&str> {
        self.first_value(HANDLE_FIELD)
    }

    pub fn values<'a>(&'a self, field: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries
            .iter()
            .filter(move |(f, _)| f == field)
            .map(|(_, v)| v.as_str())
    }

    pub fn first_value(&self, field: &str) -> Option<&str> {
        self.entries.iter().find(|(f, _)| f == field).map(|(_, v)| v.as_str())
    }

    pub fn has_field(&self, field: &str) -> bool {
        self.entries.iter().any(|(f, _)| f == field)
    }

    /// Distinct field names in order of first appearance.
    pub fn fields(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .filter(|(f, _)| seen.insert(f.as_str()))
            .map(|(f, _)| f.as_str())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// JSON object of field -> list of values, fields in first-appearance order.
    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        for (f, v) in &self.entries {
            let slot = map.entry(f.clone()).or_insert_with(|| Value::Array(Vec::new()));
            if let Value::Array(items) = slot {
                items.push(Value::String(v.clone()));
            }
        }
        Value::Object(map)
    }

    /// Pretty-printed `metadata.json` bytes, newline terminated.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(&self.to_json()).expect("string map serializes");
        out.push(b'\n');
        out
    }

    /// Parse `metadata.json`. A bare string is accepted as a one-value list;
    /// repeated keys append.
    pub fn from_json_text(text: &str) -> Result<Self, RecordError> {
        let doc = Json::parse(text).map_err(|e| RecordError::Malformed(e.to_string()))?;
        let entries = doc.as_object().ok_or(RecordError::NotAnObject)?;
        let mut rec = MetadataRecord::new();
        for (field, v) in entries {
            let values = v.as_string_list().ok_or_else(|| RecordError::BadValue(field.clone()))?;
            for value in values {
                rec.push(field.clone(), value);
            }
        }
        Ok(rec)
    }

    pub fn require_handle(&self) -> Result<&str, RecordError> {
        match self.values(HANDLE_FIELD).count() {
            0 => Err(RecordError::MissingHandle),
            1 => Ok(self.handle().unwrap()),
            n => Err(RecordError::MultipleHandles(n)),
        }
    }
}

/// Points at the rule-table row that produced an output.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RuleRef {
    pub file: String,
    pub line: usize,
}

impl fmt::Display for RuleRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file, self.line)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub target_field: String,
    pub value: String,
    /// The field whose translation block produced this value.
    pub source_field: String,
    pub origin: Option<RuleRef>,
}

/// Everything the pipeline decided for one record, before commit.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssignmentBuffer {
    pub staged: Vec<Assignment>,
    /// Pairs removed from the record's original values.
    pub deletions: Vec<(String, String)>,
    /// Fields whose original values are removed as a whole.
    pub field_deletions: Vec<String>,
    /// Fields whose original values are replaced by what was staged for them.
    pub claimed: Vec<String>,
    pub drop_record: bool,
}

impl AssignmentBuffer {
    pub fn stage(&mut self, a: Assignment) {
        self.staged.push(a);
    }

    pub fn delete_pair(&mut self, field: &str, value: &str) {
        if !self.deletions.iter().any(|(f, v)| f == field && v == value) {
            self.deletions.push((field.to_string(), value.to_string()));
        }
    }

    pub fn delete_field(&mut self, field: &str) {
        if !self.field_deletions.iter().any(|f| f == field) {
            self.field_deletions.push(field.to_string());
        }
    }

    pub fn claim(&mut self, field: &str) {
        if !self.claimed.iter().any(|f| f == field) {
            self.claimed.push(field.to_string());
        }
    }

    pub fn is_empty(&self) -> bool {
        self.staged.is_empty()
            && self.deletions.is_empty()
            && self.field_deletions.is_empty()
            && self.claimed.is_empty()
            && !self.drop_record
    }

    /// Rebuild a buffer from the ops of a lineage log.
    pub fn from_ops<'a>(ops: impl IntoIterator<Item = &'a AuditOp>) -> Self {
        let mut b = AssignmentBuffer::default();
        for op in ops {
            match op {
                AuditOp::Claim { field } => b.claim(field),
                AuditOp::Stage { field, value, source } => b.stage(Assignment {
                    target_field: field.clone(),
                    value: value.clone(),
                    source_field: source.clone(),
                    origin: None,
                }),
                AuditOp::Delete { field, value } => b.delete_pair(field, value),
                AuditOp::DeleteField { field } => b.delete_field(field),
                AuditOp::DropRecord => b.drop_record = true,
                AuditOp::Commit { .. } | AuditOp::Warning { .. } => {}
            }
        }
        b
    }
}

/// Per-field settings consulted at commit time.
pub trait FieldPolicy {
    fn props(&self, field: &str) -> FieldProps;
    fn source_priority(&self, field: &str) -> &[String];
}

/// Built-in defaults only: no schema, no priorities.
pub struct DefaultPolicy;

impl FieldPolicy for DefaultPolicy {
    fn props(&self, field: &str) -> FieldProps {
        FieldProps::default_for(field)
    }

    fn source_priority(&self, _field: &str) -> &[String] {
        &[]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Candidate {
    value: String,
    source: String,
    staged: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommitStats {
    pub staged: usize,
    pub kept: usize,
    pub invalid: usize,
    /// Lost to single-value selection or duplicate collapse.
    pub discarded: usize,
}

#[derive(Debug, Clone)]
pub struct Committed {
    /// `None` when the record was removed.
    pub record: Option<MetadataRecord>,
    pub events: Vec<AuditEvent>,
    pub validation_failures: Vec<(String, ValidationFailure)>,
    pub warnings: Vec<String>,
    pub stats: CommitStats,
}

/// Fields whose final values are decided at commit, in output order:
/// record fields first, then newly staged fields in staging order.
fn touched_fields(buffer: &AssignmentBuffer, record: &MetadataRecord) -> Vec<String> {
    let mut touched: HashSet<&str> = HashSet::new();
    touched.extend(buffer.claimed.iter().map(String::as_str));
    touched.extend(buffer.field_deletions.iter().map(String::as_str));
    touched.extend(buffer.deletions.iter().map(|(f, _)| f.as_str()));
    touched.extend(buffer.staged.iter().map(|a| a.target_field.as_str()));
    let mut out: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    for f in record.fields() {
        if touched.contains(f) && seen.insert(f.to_string()) {
            out.push(f.to_string());
        }
    }
    for a in &buffer.staged {
        if seen.insert(a.target_field.clone()) {
            out.push(a.target_field.clone());
        }
    }
    out
}

fn candidates(buffer: &AssignmentBuffer, record: &MetadataRecord, field: &str) -> Vec<Candidate> {
    let mut out = Vec::new();
    let base_replaced = buffer.claimed.iter().any(|f| f == field) || buffer.field_deletions.iter().any(|f| f == field);
    if !base_replaced {
        for v in record.values(field) {
            if !buffer.deletions.iter().any(|(f, dv)| f == field && dv == v) {
                out.push(Candidate {
                    value: v.to_string(),
                    source: field.to_string(),
                    staged: false,
                });
            }
        }
    }
    for a in buffer.staged.iter().filter(|a| a.target_field == field) {
        out.push(Candidate {
            value: a.value.clone(),
            source: a.source_field.clone(),
            staged: true,
        });
    }
    out
}

/// The values `field` would have if the record were committed without any
/// selection, validation or duplicate collapse.
pub fn pending_values(buffer: &AssignmentBuffer, record: &MetadataRecord, field: &str) -> Vec<String> {
    candidates(buffer, record, field).into_iter().map(|c| c.value).collect()
}

/// Candidate values of every touched field before any commit step runs.
pub fn initial_lists(buffer: &AssignmentBuffer, record: &MetadataRecord) -> Vec<(String, Vec<String>)> {
    touched_fields(buffer, record)
        .into_iter()
        .map(|f| {
            let values = candidates(buffer, record, &f).into_iter().map(|c| c.value).collect();
            (f, values)
        })
        .collect()
}

/// Rebuild a record: untouched pairs stay where they are, each touched
/// field's final list is placed at the field's first position, and new
/// fields follow at the end.
pub fn assemble(record: &MetadataRecord, finals: &[(String, Vec<String>)]) -> MetadataRecord {
    let lookup: HashMap<&str, &Vec<String>> = finals.iter().map(|(f, v)| (f.as_str(), v)).collect();
    let mut placed: HashSet<&str> = HashSet::new();
    let mut out = MetadataRecord::new();
    for (f, v) in &record.entries {
        match lookup.get(f.as_str()) {
            None => out.push(f.clone(), v.clone()),
            Some(values) => {
                if placed.insert(f.as_str()) {
                    for nv in values.iter() {
                        out.push(f.clone(), nv.clone());
                    }
                }
            }
        }
    }
    for (f, values) in finals {
        if !placed.contains(f.as_str()) && !record.has_field(f) {
            for v in values {
                out.push(f.clone(), v.clone());
            }
        }
    }
    out
}

fn values_of(list: &[Candidate]) -> Vec<String> {
    list.iter().map(|c| c.value.clone()).collect()
}

fn step_event(field: &str, step: &str, before: &[Candidate], after: &[Candidate]) -> Option<AuditEvent> {
    let (b, a) = (values_of(before), values_of(after));
    (b != a).then(|| AuditEvent {
        field: field.to_string(),
        action: "commit".into(),
        rule: None,
        input: None,
        ops: vec![AuditOp::Commit {
            field: field.to_string(),
            step: step.to_string(),
            before: b,
            after: a,
        }],
    })
}

/// Apply a buffer to a record.
///
/// For every touched field: original values (unless the field was claimed
/// or deleted, minus deleted pairs) followed by staged values; then
/// single-value selection or priority ordering, validation and
/// normalization of staged values, and duplicate collapse. Every step that
/// changes a list is reported as a commit event.
pub fn commit(
    buffer: &AssignmentBuffer,
    record: &MetadataRecord,
    policy: &dyn FieldPolicy,
    normalizer: &dyn Normalizer,
) -> Committed {
    let mut result = Committed {
        record: None,
        events: Vec::new(),
        validation_failures: Vec::new(),
        warnings: Vec::new(),
        stats: CommitStats {
            staged: buffer.staged.len(),
            ..CommitStats::default()
        },
    };
    if buffer.drop_record {
        result.stats.discarded = buffer.staged.len();
        return result;
    }
    if buffer.is_empty() {
        result.record = Some(record.clone());
        return result;
    }

    let mut finals = Vec::new();
    for field in touched_fields(buffer, record) {
        let props = policy.props(&field);
        let priority = policy.source_priority(&field);
        let rank = |c: &Candidate| priority.iter().position(|p| *p == c.source).unwrap_or(priority.len());
        let mut list = candidates(buffer, record, &field);

        let before = list.clone();
        if !props.multi_valued && list.len() > 1 {
            let best = (0..list.len()).min_by_key(|&i| (rank(&list[i]), i)).unwrap();
            let winner = list.swap_remove(best);
            result.stats.discarded += list.iter().filter(|c| c.staged).count();
            list = vec![winner];
        } else if !priority.is_empty() {
            list.sort_by_key(|c| rank(c));
        }
        result.events.extend(step_event(&field, "priority", &before, &list));

        if props.validation {
            let before = list.clone();
            let mut kept = Vec::with_capacity(list.len());
            for mut c in list {
                if !c.staged {
                    kept.push(c);
                    continue;
                }
                match validate_value(&props, &c.value) {
                    Ok(v) => {
                        c.value = v;
                        kept.push(c);
                    }
                    Err(failure) => {
                        result.stats.invalid += 1;
                        result.validation_failures.push((field.clone(), failure));
                    }
                }
            }
            list = kept;
            result.events.extend(step_event(&field, "validation", &before, &list));
        }

        if routes_field(&props) && !normalizer.is_identity() {
            let idx: Vec<usize> = (0..list.len()).filter(|&i| list[i].staged).collect();
            if !idx.is_empty() {
                let before = list.clone();
                let input: Vec<String> = idx.iter().map(|&i| list[i].value.clone()).collect();
                let out = normalizer.normalize(&field, props.datatype.name(), &input);
                if out.values.len() == idx.len() {
                    for (&i, v) in idx.iter().zip(out.values) {
                        list[i].value = v;
                    }
                }
                if let Some(w) = out.warning {
                    result.events.push(AuditEvent {
                        field: field.clone(),
                        action: "normalize".into(),
                        rule: None,
                        input: None,
                        ops: vec![AuditOp::Warning { message: w.clone() }],
                    });
                    result.warnings.push(w);
                }
                result.events.extend(step_event(&field, "normalize", &before, &list));
            }
        }

        let before = list.clone();
        let mut seen = HashSet::new();
        let mut deduped = Vec::with_capacity(list.len());
        for c in list {
            if seen.insert(c.value.clone()) {
                deduped.push(c);
            } else if c.staged {
                result.stats.discarded += 1;
            }
        }
        list = deduped;
        result.events.extend(step_event(&field, "dedup", &before, &list));

        result.stats.kept += list.iter().filter(|c| c.staged).count();
        finals.push((field, values_of(&list)));
    }
    result.record = Some(assemble(record, &finals));
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalize::IdentityNormalizer;
    use crate::schema::Datatype;
    use proptest::prelude::*;

    #[derive(Debug)]
    struct Policy {
        props: HashMap<String, FieldProps>,
        priority: HashMap<String, Vec<String>>,
    }

    impl FieldPolicy for Policy {
        fn props(&self, field: &str) -> FieldProps {
            self.props.get(field).cloned().unwrap_or_else(|| FieldProps::default_for(field))
        }
        fn source_priority(&self, field: &str) -> &[String] {
            self.priority.get(field).map(Vec::as_slice).unwrap_or(&[])
        }
    }

    fn assign(target: &str, value: &str, source: &str) -> Assignment {
        Assignment {
            target_field: target.into(),
            value: value.into(),
            source_field: source.into(),
            origin: None,
        }
    }

    fn run(buffer: &AssignmentBuffer, record: &MetadataRecord, policy: &dyn FieldPolicy) -> MetadataRecord {
        commit(buffer, record, policy, &IdentityNormalizer).record.unwrap()
    }

    #[test]
    fn json_round_trip() {
        let rec = MetadataRecord::from_pairs([("Handle_ID", "h/1"), ("dc.title", "A"), ("dc.title", "B")]);
        let bytes = rec.to_json_bytes();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.ends_with("]\n}\n"));
        assert_eq!(MetadataRecord::from_json_text(&text).unwrap(), rec);
        assert_eq!(rec.require_handle(), Ok("h/1"));
        let bad = MetadataRecord::from_json_text(r#"{"dc.title":[1]}"#);
        assert_eq!(bad, Err(RecordError::BadValue("dc.title".into())));
        let two = MetadataRecord::from_pairs([("Handle_ID", "a"), ("Handle_ID", "b")]);
        assert_eq!(two.require_handle(), Err(RecordError::MultipleHandles(2)));
    }

    #[test]
    fn staging_is_append_only() {
        let mut b = AssignmentBuffer::default();
        b.stage(assign("f", "x", "f"));
        b.stage(assign("f", "x", "f"));
        assert_eq!(b.staged.len(), 2);
        b.claim("f");
        let rec = MetadataRecord::from_pairs([("f", "old")]);
        assert_eq!(run(&b, &rec, &DefaultPolicy), MetadataRecord::from_pairs([("f", "x")]));
    }

    #[test]
    fn multivalued_keeps_all() {
        let mut b = AssignmentBuffer::default();
        b.stage(assign("f", "a", "f"));
        b.stage(assign("f", "b", "g"));
        let out = run(&b, &MetadataRecord::new(), &DefaultPolicy);
        assert_eq!(out, MetadataRecord::from_pairs([("f", "a"), ("f", "b")]));
    }

    #[test]
    fn single_valued_first_occurrence() {
        let policy = Policy {
            props: HashMap::from([(
                "f".to_string(),
                FieldProps { multi_valued: false, ..FieldProps::default() },
            )]),
            priority: HashMap::new(),
        };
        let mut b = AssignmentBuffer::default();
        b.stage(assign("f", "a", "x"));
        b.stage(assign("f", "b", "y"));
        assert_eq!(run(&b, &MetadataRecord::new(), &policy), MetadataRecord::from_pairs([("f", "a")]));
    }

    #[test]
    fn handle_priority_from_bundle_plan() {
        let note = "ndl.sourceMeta.additionalInfo@note";
        let policy = Policy {
            props: HashMap::new(),
            priority: HashMap::from([("Handle_ID".to_string(), vec!["Handle_ID".to_string(), note.to_string()])]),
        };
        let rec = MetadataRecord::from_pairs([("Handle_ID", "new")]);
        let mut b = AssignmentBuffer::default();
        b.claim("Handle_ID");
        b.stage(assign("Handle_ID", "old", note));
        b.stage(assign("Handle_ID", "new", "Handle_ID"));
        assert_eq!(run(&b, &rec, &policy).handle(), Some("new"));
    }

    #[test]
    fn duplicates_collapse() {
        let mut b = AssignmentBuffer::default();
        b.stage(assign("dc.subject", "x", "a"));
        b.stage(assign("dc.subject", "x", "b"));
        let c = commit(&b, &MetadataRecord::new(), &DefaultPolicy, &IdentityNormalizer);
        assert_eq!(c.record.unwrap(), MetadataRecord::from_pairs([("dc.subject", "x")]));
        assert_eq!(c.stats, CommitStats { staged: 2, kept: 1, invalid: 0, discarded: 1 });
    }

    #[test]
    fn validation_drops_and_normalizes_staged_only() {
        let policy = Policy {
            props: HashMap::from([(
                "n".to_string(),
                FieldProps { datatype: Datatype::Integer, ..FieldProps::default() },
            )]),
            priority: HashMap::new(),
        };
        let rec = MetadataRecord::from_pairs([("n", "zz")]);
        let mut b = AssignmentBuffer::default();
        b.stage(assign("n", "007", "n"));
        b.stage(assign("n", "seven", "n"));
        let c = commit(&b, &rec, &policy, &IdentityNormalizer);
        assert_eq!(c.record.unwrap(), MetadataRecord::from_pairs([("n", "zz"), ("n", "7")]));
        assert_eq!(c.validation_failures.len(), 1);
        assert_eq!(c.stats.invalid, 1);
    }

    #[test]
    fn deletions_and_field_deletions_hit_original_values() {
        let rec = MetadataRecord::from_pairs([("a", "1"), ("b", "2"), ("a", "3"), ("c", "4")]);
        let mut b = AssignmentBuffer::default();
        b.delete_pair("a", "1");
        b.delete_field("c");
        b.stage(assign("c", "5", "c"));
        let out = run(&b, &rec, &DefaultPolicy);
        assert_eq!(out, MetadataRecord::from_pairs([("a", "3"), ("b", "2"), ("c", "5")]));
    }

    #[test]
    fn drop_record() {
        let b = AssignmentBuffer { drop_record: true, ..Default::default() };
        assert!(commit(&b, &MetadataRecord::new(), &DefaultPolicy, &IdentityNormalizer).record.is_none());
    }

    fn arb_record() -> impl Strategy<Value = MetadataRecord> {
        proptest::collection::vec(("[a-d]", "[x-z]{1,2}"), 0..8).prop_map(MetadataRecord::from_pairs)
    }

    fn arb_buffer() -> impl Strategy<Value = AssignmentBuffer> {
        (
            proptest::collection::vec(("[a-e]", "[x-z]{1,2}", "[a-e]"), 0..8),
            proptest::collection::vec(("[a-d]", "[x-z]{1,2}"), 0..3),
            proptest::collection::vec("[a-d]", 0..2),
            proptest::collection::vec("[a-d]", 0..2),
        )
            .prop_map(|(staged, dels, fdels, claimed)| {
                let mut b = AssignmentBuffer::default();
                for (t, v, s) in staged {
                    b.stage(assign(&t, &v, &s));
                }
                for (f, v) in dels {
                    b.delete_pair(&f, &v);
                }
                for f in fdels {
                    b.delete_field(&f);
                }
                for f in claimed {
                    b.claim(&f);
                }
                b
            })
    }

    fn arb_policy() -> impl Strategy<Value = Policy> {
        (
            proptest::collection::vec(any::<bool>(), 5),
            proptest::collection::vec(any::<bool>(), 5),
            proptest::collection::vec("[a-e]", 0..4),
        )
            .prop_map(|(multi, integer, prio)| {
                let fields = ["a", "b", "c", "d", "e"];
                let mut props = HashMap::new();
                for (i, f) in fields.iter().enumerate() {
                    props.insert(
                        f.to_string(),
                        FieldProps {
                            multi_valued: multi[i],
                            datatype: if integer[i] { Datatype::Integer } else { Datatype::Text },
                            ..FieldProps::default()
                        },
                    );
                }
                let priority = fields.iter().map(|f| (f.to_string(), prio.clone())).collect();
                Policy { props, priority }
            })
    }

    proptest! {
        #[test]
        fn empty_buffer_is_identity(rec in arb_record()) {
            prop_assert_eq!(run(&AssignmentBuffer::default(), &rec, &DefaultPolicy), rec);
        }

        #[test]
        fn commit_is_deterministic(rec in arb_record(), b in arb_buffer(), p in arb_policy()) {
            prop_assert_eq!(run(&b, &rec, &p), run(&b, &rec, &p));
        }

        #[test]
        fn staged_values_are_conserved(rec in arb_record(), b in arb_buffer(), p in arb_policy()) {
            let c = commit(&b, &rec, &p, &IdentityNormalizer);
            prop_assert_eq!(c.stats.kept + c.stats.invalid + c.stats.discarded, c.stats.staged);
        }

        #[test]
        fn priority_winner_ignores_staging_order(
            values in proptest::collection::vec("[x-z]{1,3}", 2..5),
            shuffle_seed in any::<u64>(),
        ) {
            // one value per distinct source, priority fully orders the sources
            let sources: Vec<String> = (0..values.len()).map(|i| format!("s{i}")).collect();
            let policy = Policy {
                props: HashMap::from([("t".to_string(), FieldProps { multi_valued: false, ..FieldProps::default() })]),
                priority: HashMap::from([("t".to_string(), sources.clone())]),
            };
            let mut order: Vec<usize> = (0..values.len()).collect();
            let mut s = shuffle_seed;
            for i in (1..order.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                order.swap(i, (s >> 33) as usize % (i + 1));
            }
            let mut b = AssignmentBuffer::default();
            for &i in &order {
                b.stage(assign("t", &values[i], &sources[i]));
            }
            let out = run(&b, &MetadataRecord::new(), &policy);
            prop_assert_eq!(out.first_value("t"), Some(values[0].as_str()));
        }
    }
}
