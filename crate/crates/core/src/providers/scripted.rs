use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CompletionProvider, CompletionRequest, CompletionResponse, ProviderError};

/// One canned reply. Fixture files may give either a bare string or an object
/// with token usage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Text(String),
    Full {
        text: String,
        #[serde(default)]
        prompt_tokens: u64,
        #[serde(default)]
        completion_tokens: u64,
    },
}

impl ScriptedReply {
    fn to_response(&self, model: &str) -> CompletionResponse {
        let (text, prompt_tokens, completion_tokens) = match self {
            ScriptedReply::Text(text) => (text.clone(), 0, 0),
            ScriptedReply::Full {
                text,
                prompt_tokens,
                completion_tokens,
            } => (text.clone(), *prompt_tokens, *completion_tokens),
        };
        CompletionResponse {
            text,
            prompt_tokens,
            completion_tokens,
            model_echo: model.to_string(),
        }
    }
}

impl From<&str> for ScriptedReply {
    fn from(text: &str) -> Self {
        ScriptedReply::Text(text.to_string())
    }
}

/// Fixture file layout: `{"replies": {<request digest>: reply}, "default": reply?}`.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
struct Fixture {
    #[serde(default)]
    replies: HashMap<String, ScriptedReply>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    default: Option<ScriptedReply>,
}

/// Replays canned replies keyed by [`CompletionRequest::digest`].
#[derive(Debug, Default, Clone)]
pub struct ScriptedProvider {
    fixture: Fixture,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        ScriptedProvider::default()
    }

    pub fn from_json(raw: &str) -> Result<Self, ProviderError> {
        let malformed = |e: serde_json::Error| ProviderError::Malformed(format!("scripted fixture: {e}"));
        let value: serde_json::Value = serde_json::from_str(raw).map_err(malformed)?;
        if !value.is_object() {
            return Err(ProviderError::Malformed("scripted fixture: expected a JSON object".into()));
        }
        let fixture = serde_json::from_value(value).map_err(malformed)?;
        Ok(ScriptedProvider { fixture })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| {
            ProviderError::Unavailable(format!("reading {}: {e}", path.display()))
        })?;
        Self::from_json(&raw)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.fixture).expect("fixture serialization")
    }

    /// Script the reply to `request` (matched on model, system and user text).
    pub fn insert(&mut self, request: &CompletionRequest, reply: impl Into<ScriptedReply>) {
        self.fixture.replies.insert(request.digest(), reply.into());
    }

    pub fn insert_digest(&mut self, digest: impl Into<String>, reply: impl Into<ScriptedReply>) {
        self.fixture.replies.insert(digest.into(), reply.into());
    }

    /// Reply used when no digest matches.
    pub fn with_default(mut self, reply: impl Into<ScriptedReply>) -> Self {
        self.fixture.default = Some(reply.into());
        self
    }

    pub fn len(&self) -> usize {
        self.fixture.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixture.replies.is_empty()
    }
}

impl CompletionProvider for ScriptedProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        request.validate()?;
        let digest = request.digest();
        self.fixture
            .replies
            .get(&digest)
            .or(self.fixture.default.as_ref())
            .map(|reply| reply.to_response(&request.model))
            .ok_or(ProviderError::Unscripted(digest))
    }

    fn name(&self) -> &str {
        "scripted"
    }
}
