use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::openai::{post_json, LiveConfig};
use super::ProviderError;

pub const DEFAULT_UNSAFE_SENTINEL: &str = "@@UNSAFE@@";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModerationVerdict {
    pub flagged: bool,
    /// Non-empty exactly when `flagged`.
    pub categories: Vec<String>,
}

impl ModerationVerdict {
    pub fn clean() -> Self {
        ModerationVerdict {
            flagged: false,
            categories: Vec::new(),
        }
    }

    pub fn flagged(categories: Vec<String>) -> Self {
        let categories = if categories.is_empty() {
            vec!["unspecified".to_string()]
        } else {
            categories
        };
        ModerationVerdict {
            flagged: true,
            categories,
        }
    }
}

pub trait Moderator: Send + Sync {
    fn moderate(&self, text: &str) -> Result<ModerationVerdict, ProviderError>;
}

impl<M: Moderator + ?Sized> Moderator for std::sync::Arc<M> {
    fn moderate(&self, text: &str) -> Result<ModerationVerdict, ProviderError> {
        (**self).moderate(text)
    }
}

/// Offline moderator: flags any text containing the sentinel token.
#[derive(Debug, Clone)]
pub struct MockModerator {
    sentinel: String,
}

impl MockModerator {
    pub fn new(sentinel: impl Into<String>) -> Self {
        MockModerator {
            sentinel: sentinel.into(),
        }
    }
}

impl Default for MockModerator {
    fn default() -> Self {
        MockModerator::new(DEFAULT_UNSAFE_SENTINEL)
    }
}

impl Moderator for MockModerator {
    fn moderate(&self, text: &str) -> Result<ModerationVerdict, ProviderError> {
        if !self.sentinel.is_empty() && text.contains(&self.sentinel) {
            Ok(ModerationVerdict::flagged(vec!["test-sentinel".into()]))
        } else {
            Ok(ModerationVerdict::clean())
        }
    }
}

/// `POST {base_url}/moderations` with `{"input": text}`.
pub struct LiveModerator {
    config: LiveConfig,
    client: Client,
}

impl LiveModerator {
    pub fn new(config: LiveConfig) -> Result<Self, ProviderError> {
        let client = config.client()?;
        Ok(LiveModerator { config, client })
    }
}

#[derive(Deserialize)]
struct ModerationResponse {
    results: Vec<ModerationResult>,
}

#[derive(Deserialize)]
struct ModerationResult {
    flagged: bool,
    #[serde(default)]
    categories: serde_json::Map<String, Value>,
}

impl Moderator for LiveModerator {
    fn moderate(&self, text: &str) -> Result<ModerationVerdict, ProviderError> {
        let url = format!("{}/moderations", self.config.base_url);
        let value = post_json(&self.client, &self.config, &url, &json!({"input": text}))?;
        let parsed: ModerationResponse =
            serde_json::from_value(value).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        let mut flagged = false;
        let mut categories = Vec::new();
        for result in parsed.results {
            flagged |= result.flagged;
            categories.extend(
                result
                    .categories
                    .into_iter()
                    .filter(|(_, v)| v.as_bool() == Some(true))
                    .map(|(k, _)| k),
            );
        }
        if flagged {
            categories.sort();
            categories.dedup();
            Ok(ModerationVerdict::flagged(categories))
        } else {
            Ok(ModerationVerdict::clean())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_verdicts() {
        let m = MockModerator::default();
        assert_eq!(
            m.moderate("Let $x \\in \\mathbb{R}$ with $x^2 = 2$.").unwrap(),
            ModerationVerdict::clean()
        );
        let flagged = m.moderate("please @@UNSAFE@@ now").unwrap();
        assert!(flagged.flagged);
        assert!(!flagged.categories.is_empty());
        assert!(!m.moderate("").unwrap().flagged);
    }

    #[test]
    fn flagged_verdict_always_has_categories() {
        assert_eq!(ModerationVerdict::flagged(vec![]).categories, ["unspecified"]);
    }
}
