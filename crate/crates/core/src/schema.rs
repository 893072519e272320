//! Field schema: per-field datatype and assignment behavior.
//!
//! The schema file is a JSON object of field name → properties. It is not
//! exhaustive; a field it does not mention gets [`FieldProps::default`].

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use chrono::NaiveDate;
use regex::Regex;
use thiserror::Error;

use crate::json::{duplicate_keys, Json};

/// Field that always identifies a record.
pub const HANDLE_FIELD: &str = "Handle_ID";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Datatype {
    Text,
    Integer,
    Date,
    Person,
    Custom(String),
}

impl Datatype {
    pub fn parse(name: &str) -> Datatype {
        match name.trim().to_ascii_lowercase().as_str() {
            "text" | "string" => Datatype::Text,
            "integer" | "int" => Datatype::Integer,
            "date" => Datatype::Date,
            "person" => Datatype::Person,
            _ => Datatype::Custom(name.trim().to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Datatype::Text => "text",
            Datatype::Integer => "integer",
            Datatype::Date => "date",
            Datatype::Person => "person",
            Datatype::Custom(name) => name,
        }
    }
}

impl fmt::Display for Datatype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldProps {
    pub datatype: Datatype,
    pub multi_valued: bool,
    /// Stored and reported only; no vocabulary is enforced.
    pub controlled: bool,
    pub validation: bool,
}

impl Default for FieldProps {
    fn default() -> Self {
        FieldProps {
            datatype: Datatype::Text,
            multi_valued: true,
            controlled: false,
            validation: true,
        }
    }
}

impl FieldProps {
    /// Built-in behavior for a field the schema does not mention.
    pub fn default_for(field: &str) -> FieldProps {
        let mut props = FieldProps::default();
        if field == HANDLE_FIELD {
            props.multi_valued = false;
        }
        props
    }
}

/// A set of property overrides where each key is optional.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PartialFieldProps {
    pub datatype: Option<Datatype>,
    pub multi_valued: Option<bool>,
    pub controlled: Option<bool>,
    pub validation: Option<bool>,
}

impl PartialFieldProps {
    pub fn is_empty(&self) -> bool {
        self.datatype.is_none()
            && self.multi_valued.is_none()
            && self.controlled.is_none()
            && self.validation.is_none()
    }

    /// Layer `self` over `base`, key by key.
    pub fn apply_to(&self, base: &FieldProps) -> FieldProps {
        FieldProps {
            datatype: self.datatype.clone().unwrap_or_else(|| base.datatype.clone()),
            multi_valued: self.multi_valued.unwrap_or(base.multi_valued),
            controlled: self.controlled.unwrap_or(base.controlled),
            validation: self.validation.unwrap_or(base.validation),
        }
    }

    /// Layer `over` on top of `self`, producing a new partial set.
    pub fn merged_with(&self, over: &PartialFieldProps) -> PartialFieldProps {
        PartialFieldProps {
            datatype: over.datatype.clone().or_else(|| self.datatype.clone()),
            multi_valued: over.multi_valued.or(self.multi_valued),
            controlled: over.controlled.or(self.controlled),
            validation: over.validation.or(self.validation),
        }
    }

    /// Try to absorb one `key: value` pair. Returns `Ok(false)` when the key
    /// is not a field property.
    pub fn absorb(&mut self, field: &str, key: &str, value: &Json) -> Result<bool, SchemaError> {
        let flag = |slot: &mut Option<bool>| -> Result<bool, SchemaError> {
            let b = value.as_lenient_bool().ok_or_else(|| SchemaError::NonBooleanProperty {
                field: field.to_string(),
                key: key.to_string(),
            })?;
            *slot = Some(b);
            Ok(true)
        };
        match key {
            "datatype" => {
                let name = value.as_str().ok_or_else(|| SchemaError::NonStringProperty {
                    field: field.to_string(),
                    key: key.to_string(),
                })?;
                self.datatype = Some(Datatype::parse(name));
                Ok(true)
            }
            "multiValued" => flag(&mut self.multi_valued),
            "controlled" => flag(&mut self.controlled),
            "validation" => flag(&mut self.validation),
            _ => Ok(false),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("malformed schema document: {0}")]
    MalformedDocument(String),
    #[error("field `{field}`: property `{key}` must be a boolean")]
    NonBooleanProperty { field: String, key: String },
    #[error("field `{field}`: property `{key}` must be a string")]
    NonStringProperty { field: String, key: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FieldSchema {
    pub entries: HashMap<String, FieldProps>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSchema {
    pub schema: FieldSchema,
    pub warnings: Vec<String>,
}

/// Parse a schema document.
pub fn parse_schema(text: &str) -> Result<ParsedSchema, SchemaError> {
    let doc = Json::parse(text).map_err(|e| SchemaError::MalformedDocument(e.to_string()))?;
    let entries = doc
        .as_object()
        .ok_or_else(|| SchemaError::MalformedDocument(format!("expected an object, found {}", doc.kind())))?;

    let mut warnings: Vec<String> = duplicate_keys(entries)
        .into_iter()
        .map(|k| format!("field `{k}` defined more than once; last definition wins"))
        .collect();
    let mut schema = FieldSchema::default();
    for (field, body) in entries {
        let props = body.as_object().ok_or_else(|| {
            SchemaError::MalformedDocument(format!("field `{field}` must map to an object"))
        })?;
        let mut partial = PartialFieldProps::default();
        for (key, value) in props {
            if !partial.absorb(field, key, value)? {
                warnings.push(format!("field `{field}`: unknown property `{key}` ignored"));
            }
        }
        schema
            .entries
            .insert(field.clone(), partial.apply_to(&FieldProps::default_for(field)));
    }
    Ok(ParsedSchema { schema, warnings })
}

impl FieldSchema {
    pub fn props(&self, field: &str) -> FieldProps {
        self.entries
            .get(field)
            .cloned()
            .unwrap_or_else(|| FieldProps::default_for(field))
    }
}

/// FTB-level keys override schema-level keys override defaults.
pub fn effective_props(schema: &FieldSchema, overrides: &PartialFieldProps, field: &str) -> FieldProps {
    overrides.apply_to(&schema.props(field))
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("value `{value}` is not a valid {datatype}")]
pub struct ValidationFailure {
    pub datatype: String,
    pub value: String,
}

fn fail(props: &FieldProps, value: &str) -> ValidationFailure {
    ValidationFailure {
        datatype: props.datatype.to_string(),
        value: value.to_string(),
    }
}

fn normalize_integer(value: &str) -> Option<String> {
    let v = value.trim();
    let (negative, digits) = match v.as_bytes().first()? {
        b'-' => (true, &v[1..]),
        b'+' => (false, &v[1..]),
        _ => (false, v),
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let stripped = digits.trim_start_matches('0');
    if stripped.is_empty() {
        return Some("0".to_string());
    }
    Some(if negative { format!("-{stripped}") } else { stripped.to_string() })
}

const MONTHS: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december",
];

struct DatePatterns {
    ymd: Regex,
    dmy: Regex,
    named: Regex,
    year: Regex,
}

fn date_patterns() -> &'static DatePatterns {
    static PATTERNS: OnceLock<DatePatterns> = OnceLock::new();
    PATTERNS.get_or_init(|| DatePatterns {
        ymd: Regex::new(r"^(\d{4})([-/])(\d{1,2})([-/])(\d{1,2})$").unwrap(),
        dmy: Regex::new(r"^(\d{1,2})([-/])(\d{1,2})([-/])(\d{4})$").unwrap(),
        named: Regex::new(r"^([A-Za-z]+)\s+(\d{1,2}),\s*(\d{4})$").unwrap(),
        year: Regex::new(r"^\d{4}$").unwrap(),
    })
}

fn iso(year: &str, month: &str, day: &str) -> Option<String> {
    let date = NaiveDate::from_ymd_opt(year.parse().ok()?, month.parse().ok()?, day.parse().ok()?)?;
    Some(date.format("%Y-%m-%d").to_string())
}

fn normalize_date(value: &str) -> Option<String> {
    let v = value.trim();
    let p = date_patterns();
    if p.year.is_match(v) {
        return Some(v.to_string());
    }
    if let Some(c) = p.ymd.captures(v) {
        // Both separators must agree: 2021/01-03 is not a date.
        if c[2] != c[4] {
            return None;
        }
        return iso(&c[1], &c[3], &c[5]);
    }
    if let Some(c) = p.dmy.captures(v) {
        if c[2] != c[4] {
            return None;
        }
        return iso(&c[5], &c[3], &c[1]);
    }
    if let Some(c) = p.named.captures(v) {
        let month = MONTHS.iter().position(|m| m.eq_ignore_ascii_case(&c[1]))? + 1;
        return iso(&c[3], &month.to_string(), &c[2]);
    }
    None
}

/// Check a value against its datatype and return the normalized form.
/// Callers skip this when `props.validation` is false.
pub fn validate_value(props: &FieldProps, value: &str) -> Result<String, ValidationFailure> {
    match &props.datatype {
        Datatype::Text | Datatype::Custom(_) => Ok(value.to_string()),
        Datatype::Person => Ok(value.trim().to_string()),
        Datatype::Integer => normalize_integer(value).ok_or_else(|| fail(props, value)),
        Datatype::Date => normalize_date(value).ok_or_else(|| fail(props, value)),
    }
}
