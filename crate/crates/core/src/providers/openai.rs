//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{CompletionProvider, CompletionRequest, CompletionResponse, ProviderError};

/// Environment variable holding the API key for the live provider.
pub const API_KEY_ENV: &str = "OPENAI_API_KEY";

const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub base_url: String,
    pub api_key: String,
    /// Total attempts per logical call, including the first.
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl LiveConfig {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        LiveConfig {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            max_attempts: 4,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(180),
        }
    }

    /// Key from [`API_KEY_ENV`]; base URL from the argument or the public endpoint.
    pub fn from_env(base_url: Option<&str>) -> Result<Self, ProviderError> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| {
            ProviderError::Authentication(format!("environment variable {API_KEY_ENV} is not set"))
        })?;
        Ok(LiveConfig::new(base_url.unwrap_or(DEFAULT_BASE_URL), key))
    }

    pub(crate) fn client(&self) -> Result<Client, ProviderError> {
        Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))
    }

    pub(crate) fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff
            .saturating_mul(2u32.saturating_pow(attempt.saturating_sub(1)))
    }
}

enum Attempt<T> {
    Done(Result<T, ProviderError>),
    Retry(ProviderError),
}

/// POST `body` to `url`, retrying transport failures, timeouts, 429 and 5xx
/// with exponential backoff. Returns the JSON body of the first 2xx reply.
pub(crate) fn post_json(
    client: &Client,
    config: &LiveConfig,
    url: &str,
    body: &Value,
) -> Result<Value, ProviderError> {
    let attempts = config.max_attempts.max(1);
    let mut last = ProviderError::Unavailable("no attempt made".into());
    for attempt in 1..=attempts {
        let outcome = match client
            .post(url)
            .bearer_auth(&config.api_key)
            .json(body)
            .send()
        {
            Err(e) if e.is_timeout() => Attempt::Retry(ProviderError::Timeout { attempts: attempt }),
            Err(e) => Attempt::Retry(ProviderError::Transport {
                attempts: attempt,
                message: e.to_string(),
            }),
            Ok(resp) => {
                let status = resp.status();
                let text = resp.text().unwrap_or_default();
                classify(status, text, attempt)
            }
        };
        match outcome {
            Attempt::Done(result) => return result,
            Attempt::Retry(err) => {
                debug!(url, attempt, error = %err, "transient provider failure");
                last = err;
                if attempt < attempts {
                    std::thread::sleep(config.backoff(attempt));
                }
            }
        }
    }
    warn!(url, error = %last, "giving up after retries");
    Err(last)
}

fn classify(status: StatusCode, body: String, attempt: u32) -> Attempt<Value> {
    if status.is_success() {
        return Attempt::Done(
            serde_json::from_str(&body).map_err(|e| ProviderError::Malformed(e.to_string())),
        );
    }
    let message = error_message(&body).unwrap_or_else(|| body.chars().take(300).collect());
    match status {
        StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => {
            Attempt::Done(Err(ProviderError::Authentication(message)))
        }
        StatusCode::TOO_MANY_REQUESTS | StatusCode::REQUEST_TIMEOUT => {
            Attempt::Retry(ProviderError::Transport {
                attempts: attempt,
                message: format!("status {status}: {message}"),
            })
        }
        s if s.is_server_error() => Attempt::Retry(ProviderError::Transport {
            attempts: attempt,
            message: format!("status {status}: {message}"),
        }),
        s => Attempt::Done(Err(ProviderError::Rejected {
            status: s.as_u16(),
            message,
        })),
    }
}

fn error_message(body: &str) -> Option<String> {
    let value: Value = serde_json::from_str(body).ok()?;
    value
        .pointer("/error/message")
        .and_then(Value::as_str)
        .map(str::to_string)
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    model: Option<String>,
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    refusal: Option<String>,
}

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub struct LiveProvider {
    config: LiveConfig,
    client: Client,
}

impl LiveProvider {
    pub fn new(config: LiveConfig) -> Result<Self, ProviderError> {
        let client = config.client()?;
        Ok(LiveProvider { config, client })
    }

    pub fn config(&self) -> &LiveConfig {
        &self.config
    }

    fn body(request: &CompletionRequest) -> Value {
        let mut messages = Vec::with_capacity(2);
        if let Some(system) = &request.system {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": request.user}));
        let mut body = json!({"model": request.model, "messages": messages});
        if let Some(t) = request.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(effort) = request.reasoning_effort {
            body["reasoning_effort"] = json!(effort.as_str());
        }
        body
    }
}

impl CompletionProvider for LiveProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        request.validate()?;
        let url = format!("{}/chat/completions", self.config.base_url);
        let value = post_json(&self.client, &self.config, &url, &Self::body(request))?;
        let parsed: ChatResponse =
            serde_json::from_value(value).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::Malformed("no choices in response".into()))?;
        if let Some(refusal) = choice.message.refusal {
            return Err(ProviderError::Refusal(refusal));
        }
        if choice.finish_reason.as_deref() == Some("content_filter") {
            return Err(ProviderError::Refusal("content filter".into()));
        }
        let text = choice
            .message
            .content
            .ok_or_else(|| ProviderError::Malformed("choice without content".into()))?;
        let usage = parsed.usage.unwrap_or_default();
        Ok(CompletionResponse {
            text,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            model_echo: parsed.model.unwrap_or_else(|| request.model.clone()),
        })
    }

    fn name(&self) -> &str {
        "live"
    }
}
