//! Completion backends and the metering around them.
//!
//! Every backend implements [`CompletionProvider`]. The live backend speaks
//! the OpenAI-compatible chat-completions protocol; [`MockProvider`] and
//! [`ScriptedProvider`] are offline and deterministic. Moderation, cost
//! tracking and per-user quotas are separate pieces so each can be swapped
//! or tested on its own.

mod budget;
mod mock;
mod moderation;
mod openai;
mod rate_limit;
mod scripted;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::directive::config::ReasoningEffort;
use crate::digest::fields_digest;

pub use budget::{charge, BudgetExceeded, BudgetTracker, Charge, CostTable, ModelPrice};
pub use mock::{MockProvider, GRADE_STEP};
pub use moderation::{
    LiveModerator, MockModerator, ModerationVerdict, Moderator, DEFAULT_UNSAFE_SENTINEL,
};
pub use openai::{LiveConfig, LiveProvider, API_KEY_ENV};
pub use rate_limit::{
    check_rate_limit, Clock, ManualClock, Permit, RateLimiter, Refusal, SystemClock,
};
pub use scripted::{ScriptedProvider, ScriptedReply};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub user: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_effort: Option<ReasoningEffort>,
    /// Local label of the calling step. Never sent over the wire.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<String>,
}

impl CompletionRequest {
    pub fn new(model: impl Into<String>, user: impl Into<String>) -> Self {
        CompletionRequest {
            model: model.into(),
            system: None,
            user: user.into(),
            temperature: None,
            reasoning_effort: None,
            step: None,
        }
    }

    pub fn with_step(mut self, step: impl Into<String>) -> Self {
        self.step = Some(step.into());
        self
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system = Some(system.into());
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.user.is_empty() {
            return Err(ProviderError::InvalidRequest("empty user message".into()));
        }
        if self.model.is_empty() {
            return Err(ProviderError::InvalidRequest("empty model".into()));
        }
        Ok(())
    }

    /// Digest of what the model sees: model, system and user message.
    pub fn digest(&self) -> String {
        fields_digest([
            self.model.as_str(),
            self.system.as_deref().unwrap_or(""),
            self.user.as_str(),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub model_echo: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("authentication failed: {0}")]
    Authentication(String),
    #[error("request refused by provider: {0}")]
    Refusal(String),
    #[error("provider rejected request with status {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("no scripted reply for request digest {0}")]
    Unscripted(String),
    #[error("provider unavailable: {0}")]
    Unavailable(String),
}

impl ProviderError {
    /// Failures worth another attempt.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            ProviderError::Transport { .. } | ProviderError::Timeout { .. }
        )
    }
}

pub trait CompletionProvider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError>;

    fn name(&self) -> &str;
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for &P {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        (**self).complete(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for std::sync::Arc<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        (**self).complete(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for Box<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        (**self).complete(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Wrapper that counts calls and remembers every request it forwarded.
pub struct Recording<P> {
    inner: P,
    calls: AtomicUsize,
    requests: Mutex<Vec<CompletionRequest>>,
}

impl<P> Recording<P> {
    pub fn new(inner: P) -> Self {
        Recording {
            inner,
            calls: AtomicUsize::new(0),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: CompletionProvider> CompletionProvider for Recording<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.requests.lock().unwrap().push(request.clone());
        self.inner.complete(request)
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_user_is_invalid() {
        assert!(CompletionRequest::new("m", "").validate().is_err());
        assert!(CompletionRequest::new("m", "x").validate().is_ok());
    }

    #[test]
    fn digest_ignores_local_step_label() {
        let a = CompletionRequest::new("m", "hello");
        let b = a.clone().with_step("markscheme");
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), a.clone().with_system("s").digest());
    }

    #[test]
    fn recording_counts() {
        let p = Recording::new(MockProvider::new(1));
        p.complete(&CompletionRequest::new("m", "x")).unwrap();
        p.complete(&CompletionRequest::new("m", "y")).unwrap();
        assert_eq!(p.calls(), 2);
        assert_eq!(p.requests()[1].user, "y");
    }
}
