//! Directive configuration documents.
//!
//! The on-disk format is a JSON object with three keys:
//!
//! ```json
//! {
//!     "context_instructions": "",
//!     "directives": { "prompt": null, "output": null, "feedback": "... {prompt} ... {output}" },
//!     "parameters": { "feedback": { "model": "gpt-4o", "temperature": 0.0 } }
//! }
//! ```
//!
//! `null` directives are input markers supplied by the caller; string
//! directives are prompt templates. Declaration order is significant (it
//! breaks ties in the execution order) and is preserved exactly.

use std::fmt;
use std::marker::PhantomData;

use indexmap::IndexMap;
use serde::de::{Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("malformed config: {0}")]
    Malformed(String),
    #[error("no directives")]
    NoDirectives,
    #[error("no executable directive: every directive is an input marker")]
    NoExecutable,
    #[error("empty directive name")]
    EmptyName,
    #[error("duplicate directive `{0}`")]
    DuplicateDirective(String),
    #[error("duplicate parameters entry `{0}`")]
    DuplicateParameter(String),
    #[error("parameters reference unknown directive `{0}`")]
    UnknownParameter(String),
    #[error("parameters for `{0}` target an input marker")]
    ParameterOnInput(String),
    #[error("temperature {value} for `{directive}` is outside [0, 2]")]
    TemperatureOutOfRange { directive: String, value: f64 },
    #[error("reasoning_effort `{value}` for `{directive}` is not one of low, medium, high")]
    InvalidReasoningEffort { directive: String, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningEffort {
    Low,
    Medium,
    High,
}

impl ReasoningEffort {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasoningEffort::Low => "low",
            ReasoningEffort::Medium => "medium",
            ReasoningEffort::High => "high",
        }
    }
}

impl std::str::FromStr for ReasoningEffort {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(ReasoningEffort::Low),
            "medium" => Ok(ReasoningEffort::Medium),
            "high" => Ok(ReasoningEffort::High),
            other => Err(other.to_string()),
        }
    }
}

/// Model parameters for one executable directive.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepParams {
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reasoning_effort: Option<ReasoningEffort>,
}

impl StepParams {
    pub fn model(model: impl Into<String>) -> Self {
        StepParams {
            model: model.into(),
            temperature: None,
            reasoning_effort: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Directive {
    /// Supplied by the caller at execution time (`null` in the document).
    Input,
    Template(String),
}

impl Directive {
    pub fn template(&self) -> Option<&str> {
        match self {
            Directive::Input => None,
            Directive::Template(text) => Some(text),
        }
    }

    pub fn is_input(&self) -> bool {
        matches!(self, Directive::Input)
    }
}

impl Serialize for Directive {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Directive::Input => serializer.serialize_none(),
            Directive::Template(text) => serializer.serialize_str(text),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectiveConfig {
    pub context_instructions: String,
    pub directives: IndexMap<String, Directive>,
    pub parameters: IndexMap<String, StepParams>,
}

impl DirectiveConfig {
    pub fn directive(&self, name: &str) -> Option<&Directive> {
        self.directives.get(name)
    }

    pub fn params(&self, name: &str) -> Option<&StepParams> {
        self.parameters.get(name)
    }

    /// Names of input-marker directives, in declaration order.
    pub fn input_markers(&self) -> impl Iterator<Item = &str> {
        self.directives
            .iter()
            .filter(|(_, d)| d.is_input())
            .map(|(name, _)| name.as_str())
    }

    /// Names of template directives, in declaration order.
    pub fn executable(&self) -> impl Iterator<Item = &str> {
        self.directives
            .iter()
            .filter(|(_, d)| !d.is_input())
            .map(|(name, _)| name.as_str())
    }

    /// Canonical JSON rendering in the documented file format.
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization is infallible")
    }

    /// Stable content digest: SHA-256 of the compact canonical rendering.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serialization is infallible"))
    }

    /// Copy of this config with every step's model replaced.
    pub fn with_model(&self, model: &str) -> DirectiveConfig {
        let mut out = self.clone();
        for name in self.executable() {
            out.parameters
                .entry(name.to_string())
                .and_modify(|p| p.model = model.to_string())
                .or_insert_with(|| StepParams::model(model));
        }
        out
    }
}

impl Serialize for DirectiveConfig {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(3))?;
        map.serialize_entry("context_instructions", &self.context_instructions)?;
        map.serialize_entry("directives", &self.directives)?;
        map.serialize_entry("parameters", &self.parameters)?;
        map.end()
    }
}

/// Object deserialized as an ordered list of entries, keeping duplicates so
/// validation can name them.
struct Entries<V>(Vec<(String, V)>);

impl<'de, V: Deserialize<'de>> Deserialize<'de> for Entries<V> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor<V>(PhantomData<V>);

        impl<'de, V: Deserialize<'de>> Visitor<'de> for EntriesVisitor<V> {
            type Value = Entries<V>;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                let mut entries = Vec::with_capacity(access.size_hint().unwrap_or(0));
                while let Some((key, value)) = access.next_entry::<String, V>()? {
                    entries.push((key, value));
                }
                Ok(Entries(entries))
            }
        }

        deserializer.deserialize_map(EntriesVisitor(PhantomData))
    }
}

#[derive(Deserialize)]
struct RawParams {
    model: String,
    #[serde(default)]
    temperature: Option<f64>,
    #[serde(default)]
    reasoning_effort: Option<String>,
}

#[derive(Deserialize)]
struct RawConfig {
    #[serde(default)]
    context_instructions: Option<String>,
    directives: Entries<Option<String>>,
    #[serde(default)]
    parameters: Option<Entries<RawParams>>,
}

/// Parse and validate a directive configuration document.
pub fn parse_config(raw: &str) -> Result<DirectiveConfig, ConfigError> {
    let raw: RawConfig =
        serde_json::from_str(raw).map_err(|e| ConfigError::Malformed(e.to_string()))?;

    if raw.directives.0.is_empty() {
        return Err(ConfigError::NoDirectives);
    }
    let mut directives = IndexMap::with_capacity(raw.directives.0.len());
    for (name, value) in raw.directives.0 {
        if name.trim().is_empty() {
            return Err(ConfigError::EmptyName);
        }
        if directives.contains_key(&name) {
            return Err(ConfigError::DuplicateDirective(name));
        }
        let directive = match value {
            None => Directive::Input,
            Some(text) => Directive::Template(text),
        };
        directives.insert(name, directive);
    }
    if directives.values().all(Directive::is_input) {
        return Err(ConfigError::NoExecutable);
    }

    let mut parameters = IndexMap::new();
    for (name, params) in raw.parameters.map(|p| p.0).unwrap_or_default() {
        match directives.get(&name) {
            None => return Err(ConfigError::UnknownParameter(name)),
            Some(Directive::Input) => return Err(ConfigError::ParameterOnInput(name)),
            Some(Directive::Template(_)) => {}
        }
        if parameters.contains_key(&name) {
            return Err(ConfigError::DuplicateParameter(name));
        }
        if let Some(t) = params.temperature {
            if !(0.0..=2.0).contains(&t) {
                return Err(ConfigError::TemperatureOutOfRange {
                    directive: name,
                    value: t,
                });
            }
        }
        let reasoning_effort = match params.reasoning_effort {
            None => None,
            Some(value) => Some(value.parse().map_err(|value| {
                ConfigError::InvalidReasoningEffort {
                    directive: name.clone(),
                    value,
                }
            })?),
        };
        parameters.insert(
            name,
            StepParams {
                model: params.model,
                temperature: params.temperature,
                reasoning_effort,
            },
        );
    }

    Ok(DirectiveConfig {
        context_instructions: raw.context_instructions.unwrap_or_default(),
        directives,
        parameters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LISTING: &str = include_str!("../../../../fixtures/workflows/ms_w_example_final.json");

    #[test]
    fn listing_config_parses_in_declaration_order() {
        let config = parse_config(LISTING).unwrap();
        let names: Vec<_> = config.directives.keys().map(String::as_str).collect();
        assert_eq!(
            names,
            ["prompt", "output", "markscheme", "llm_feedback", "regraded"]
        );
        assert_eq!(config.input_markers().collect::<Vec<_>>(), ["prompt", "output"]);
        assert_eq!(
            config.executable().collect::<Vec<_>>(),
            ["markscheme", "llm_feedback", "regraded"]
        );
        assert_eq!(config.parameters.len(), 3);
        assert_eq!(config.params("regraded").unwrap().temperature, Some(0.0));
        assert_eq!(config.params("markscheme").unwrap().model, "gpt-5");
        assert_eq!(config.context_instructions, "");
    }

    #[test]
    fn empty_directives_rejected() {
        let err = parse_config(r#"{"context_instructions": "", "directives": {}}"#).unwrap_err();
        assert_eq!(err, ConfigError::NoDirectives);
        assert_eq!(err.to_string(), "no directives");
    }

    #[test]
    fn unknown_parameter_key_is_named() {
        let mut doc: serde_json::Value = serde_json::from_str(LISTING).unwrap();
        doc["parameters"]["nonexistent"] = serde_json::json!({"model": "gpt-4o"});
        let err = parse_config(&doc.to_string()).unwrap_err();
        assert_eq!(err, ConfigError::UnknownParameter("nonexistent".into()));
        assert!(err.to_string().contains("nonexistent"));
    }

    #[test]
    fn duplicate_directive_is_named() {
        let raw = r#"{"directives": {"a": "x", "b": null, "a": "y"}}"#;
        assert_eq!(
            parse_config(raw).unwrap_err(),
            ConfigError::DuplicateDirective("a".into())
        );
    }

    #[test]
    fn temperature_range_enforced() {
        let raw = r#"{"directives": {"a": "x"}, "parameters": {"a": {"model": "m", "temperature": 2.5}}}"#;
        assert!(matches!(
            parse_config(raw).unwrap_err(),
            ConfigError::TemperatureOutOfRange { ref directive, .. } if directive == "a"
        ));
        let ok = r#"{"directives": {"a": "x"}, "parameters": {"a": {"model": "m", "temperature": 2.0}}}"#;
        assert!(parse_config(ok).is_ok());
    }

    #[test]
    fn reasoning_effort_validated() {
        let raw = r#"{"directives": {"a": "x"}, "parameters": {"a": {"model": "m", "reasoning_effort": "medium"}}}"#;
        let config = parse_config(raw).unwrap();
        assert_eq!(
            config.params("a").unwrap().reasoning_effort,
            Some(ReasoningEffort::Medium)
        );
        let bad = r#"{"directives": {"a": "x"}, "parameters": {"a": {"model": "m", "reasoning_effort": "max"}}}"#;
        assert!(matches!(
            parse_config(bad).unwrap_err(),
            ConfigError::InvalidReasoningEffort { .. }
        ));
    }

    #[test]
    fn malformed_and_degenerate_documents() {
        assert!(matches!(parse_config("{"), Err(ConfigError::Malformed(_))));
        assert!(matches!(
            parse_config(r#"{"directives": []}"#),
            Err(ConfigError::Malformed(_))
        ));
        assert_eq!(
            parse_config(r#"{"directives": {"a": null}}"#).unwrap_err(),
            ConfigError::NoExecutable
        );
        assert_eq!(
            parse_config(r#"{"directives": {"": "x"}}"#).unwrap_err(),
            ConfigError::EmptyName
        );
        assert_eq!(
            parse_config(r#"{"directives": {"a": null, "b": "x"}, "parameters": {"a": {"model": "m"}}}"#)
                .unwrap_err(),
            ConfigError::ParameterOnInput("a".into())
        );
    }

    #[test]
    fn canonical_rendering_reparses_identically() {
        let config = parse_config(LISTING).unwrap();
        let again = parse_config(&config.to_json_pretty()).unwrap();
        assert_eq!(config, again);
        assert_eq!(config.digest(), again.digest());
    }

    #[test]
    fn model_override_touches_every_step() {
        let config = parse_config(LISTING).unwrap().with_model("gpt-4.1-nano");
        assert!(config.parameters.values().all(|p| p.model == "gpt-4.1-nano"));
        assert_eq!(config.params("regraded").unwrap().temperature, Some(0.0));
    }
}
