//! Client for the optional value-normalization service.
//!
//! One POST per field batch with body `{"field", "datatype", "values"}`;
//! the service answers `{"values"}` with the same number of entries. Any
//! failure falls back to the input values plus a warning.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::schema::{Datatype, FieldProps};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Normalized {
    pub values: Vec<String>,
    pub warning: Option<String>,
}

pub trait Normalizer: Send + Sync {
    fn normalize(&self, field: &str, datatype: &str, values: &[String]) -> Normalized;

    /// The identity normalizer lets commit skip the call entirely.
    fn is_identity(&self) -> bool {
        false
    }
}

/// Returns values unchanged. Installed when no service is configured.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityNormalizer;

impl Normalizer for IdentityNormalizer {
    fn normalize(&self, _field: &str, _datatype: &str, values: &[String]) -> Normalized {
        Normalized {
            values: values.to_vec(),
            warning: None,
        }
    }

    fn is_identity(&self) -> bool {
        true
    }
}

/// Which fields are sent to the service: validated fields whose datatype
/// is not plain text.
pub fn routes_field(props: &FieldProps) -> bool {
    props.validation && props.datatype != Datatype::Text
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizerEndpoint {
    pub base_url: String,
    pub timeout: Duration,
    pub retries: u32,
}

impl NormalizerEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        NormalizerEndpoint {
            base_url: base_url.into(),
            timeout: Duration::from_secs(5),
            retries: 2,
        }
    }
}

#[derive(Serialize)]
struct Request<'a> {
    field: &'a str,
    datatype: &'a str,
    values: &'a [String],
}

#[derive(Deserialize)]
struct Response {
    values: Vec<String>,
}

pub struct HttpNormalizer {
    endpoint: NormalizerEndpoint,
    agent: ureq::Agent,
}

impl HttpNormalizer {
    pub fn new(endpoint: NormalizerEndpoint) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(endpoint.timeout).build();
        HttpNormalizer { endpoint, agent }
    }

    fn call(&self, body: &Request) -> Result<Vec<String>, String> {
        let resp = self
            .agent
            .post(&self.endpoint.base_url)
            .send_json(body)
            .map_err(|e| e.to_string())?;
        let parsed: Response = resp.into_json().map_err(|e| e.to_string())?;
        if parsed.values.len() != body.values.len() {
            return Err(format!(
                "service returned {} values for {}",
                parsed.values.len(),
                body.values.len()
            ));
        }
        Ok(parsed.values)
    }
}

impl Normalizer for HttpNormalizer {
    fn normalize(&self, field: &str, datatype: &str, values: &[String]) -> Normalized {
        if values.is_empty() {
            return Normalized { values: Vec::new(), warning: None };
        }
        let body = Request { field, datatype, values };
        let mut last = String::new();
        for _ in 0..=self.endpoint.retries {
            match self.call(&body) {
                Ok(values) => return Normalized { values, warning: None },
                Err(e) => last = e,
            }
        }
        Normalized {
            values: values.to_vec(),
            warning: Some(format!(
                "normalization of `{field}` via {} failed, values kept as is: {last}",
                self.endpoint.base_url
            )),
        }
    }
}

pub fn normalizer_for(service_ip: Option<&str>) -> Box<dyn Normalizer> {
    match service_ip {
        Some(url) if !url.trim().is_empty() => Box::new(HttpNormalizer::new(NormalizerEndpoint::new(url.trim()))),
        _ => Box::new(IdentityNormalizer),
    }
}
