//! Chat-completion adapters for hosted providers.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::time::Duration;

use serde_json::{json, Value};

use super::provider::{Capabilities, Completion, CompletionRequest, Provider, ProviderError};
use super::SamplingParams;

const ANTHROPIC_VERSION: &str = "2023-06-01";

/// Request and response shape spoken by a provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dialect {
    /// `/v1/chat/completions`; also used by most open-weight hosts.
    OpenAi,
    Anthropic,
    Cohere,
}

impl Dialect {
    pub fn default_endpoint(self) -> &'static str {
        match self {
            Dialect::OpenAi => "https://api.openai.com/v1/chat/completions",
            Dialect::Anthropic => "https://api.anthropic.com/v1/messages",
            Dialect::Cohere => "https://api.cohere.com/v2/chat",
        }
    }

    pub fn requires_max_tokens(self) -> bool {
        self == Dialect::Anthropic
    }

    pub fn request_body(self, model: &str, prompt: &str, params: &SamplingParams) -> Value {
        let mut body = json!({
            "model": model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
        });
        let top_p_key = if self == Dialect::Cohere { "p" } else { "top_p" };
        body[top_p_key] = json!(params.top_p);
        if let Some(max_tokens) = params.max_tokens {
            body["max_tokens"] = json!(max_tokens);
        }
        body
    }

    /// Extracts the generated text and a few metadata fields.
    pub fn parse_response(self, body: &Value) -> Result<Completion, ProviderError> {
        let text = match self {
            Dialect::OpenAi => body
                .pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .map(str::to_string),
            Dialect::Anthropic => join_text_blocks(body.get("content")),
            Dialect::Cohere => join_text_blocks(body.pointer("/message/content")),
        };
        let text = text.ok_or_else(|| ProviderError::Permanent(format!("unexpected response shape: {body}")))?;
        let mut meta = BTreeMap::new();
        let finish = match self {
            Dialect::OpenAi => body.pointer("/choices/0/finish_reason"),
            Dialect::Anthropic => body.get("stop_reason"),
            Dialect::Cohere => body.get("finish_reason"),
        };
        for (key, value) in [
            ("id", body.get("id")),
            ("model", body.get("model")),
            ("finish_reason", finish),
        ] {
            if let Some(s) = value.and_then(Value::as_str) {
                meta.insert(key.to_string(), s.to_string());
            }
        }
        Ok(Completion { text, meta })
    }
}

impl FromStr for Dialect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "openai" | "together" | "groq" => Ok(Dialect::OpenAi),
            "anthropic" => Ok(Dialect::Anthropic),
            "cohere" => Ok(Dialect::Cohere),
            other => Err(format!("unknown provider dialect {other:?}")),
        }
    }
}

fn join_text_blocks(blocks: Option<&Value>) -> Option<String> {
    let blocks = blocks?.as_array()?;
    let parts: Vec<&str> = blocks
        .iter()
        .filter(|b| b.get("type").and_then(Value::as_str).unwrap_or("text") == "text")
        .filter_map(|b| b.get("text").and_then(Value::as_str))
        .collect();
    (!parts.is_empty()).then(|| parts.concat())
}

/// Maps an HTTP status to the retry class of the failure.
pub fn classify_status(status: u16, body: &str) -> ProviderError {
    let detail = format!("HTTP {status}: {}", body.chars().take(300).collect::<String>());
    match status {
        401 | 403 => ProviderError::Auth(detail),
        408 | 409 | 429 | 500..=599 => ProviderError::Transient(detail),
        _ => ProviderError::Permanent(detail),
    }
}

/// Name of the environment variable holding a provider's key.
pub fn credential_var(provider: &str) -> String {
    let slug: String = provider
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_uppercase()
            } else {
                '_'
            }
        })
        .collect();
    format!("{slug}_API_KEY")
}

#[derive(Debug, Clone)]
pub struct HttpChatProvider {
    name: String,
    dialect: Dialect,
    model: String,
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpChatProvider {
    pub fn new(
        name: impl Into<String>,
        dialect: Dialect,
        model: impl Into<String>,
        api_key: impl Into<String>,
    ) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| ProviderError::Permanent(format!("http client: {e}")))?;
        Ok(HttpChatProvider {
            name: name.into(),
            dialect,
            model: model.into(),
            endpoint: dialect.default_endpoint().to_string(),
            api_key: api_key.into(),
            client,
        })
    }

    /// Reads the key from `<PROVIDER>_API_KEY`.
    pub fn from_env(name: &str, dialect: Dialect, model: impl Into<String>) -> Result<Self, ProviderError> {
        let var = credential_var(name);
        let key = std::env::var(&var)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| ProviderError::Auth(format!("{var} is not set")))?;
        HttpChatProvider::new(name, dialect, model, key)
    }

    pub fn with_endpoint(mut self, endpoint: impl Into<String>) -> Self {
        self.endpoint = endpoint.into();
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Provider for HttpChatProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            requires_max_tokens: self.dialect.requires_max_tokens(),
            uses_network: true,
        }
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ProviderError> {
        let body = self.dialect.request_body(&self.model, request.prompt, request.params);
        let mut builder = self.client.post(&self.endpoint).json(&body);
        builder = match self.dialect {
            Dialect::Anthropic => builder
                .header("x-api-key", &self.api_key)
                .header("anthropic-version", ANTHROPIC_VERSION),
            Dialect::OpenAi | Dialect::Cohere => builder.bearer_auth(&self.api_key),
        };
        let response = builder
            .send()
            .map_err(|e| ProviderError::Transient(format!("request failed: {e}")))?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|e| ProviderError::Transient(format!("reading response: {e}")))?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, &text));
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| ProviderError::Permanent(format!("response is not JSON: {e}")))?;
        self.dialect.parse_response(&value)
    }
}
