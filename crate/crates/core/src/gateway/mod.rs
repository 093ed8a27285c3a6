//! Generation against chat-completion providers.
//!
//! A run expands each [`PromptSpec`](crate::corpus::PromptSpec) into its
//! replicates, skips whatever the record store already holds, and appends one
//! [`GenerationRecord`] per replicate. Records are never rewritten, so a store
//! doubles as the replay source for every later stage.

mod http;
mod provider;
mod rate_limit;
mod runner;
mod store;
mod synthetic;

pub use http::{Dialect, HttpChatProvider};
pub use provider::{Capabilities, Completion, CompletionRequest, Provider, ProviderError};
pub use rate_limit::TokenBucket;
pub use runner::{run_corpus, Clock, RetryPolicy, RunOptions, RunSummary};
pub use store::{RecordStore, StoreError};
pub use synthetic::{
    sample_profile, synthetic_generate, CellDistributions, CellOverride, SyntheticError, SyntheticModelConfig,
    SyntheticProvider, SYNTHETIC_REFUSAL_TEXT,
};

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Token cap applied when a provider requires one and none is configured.
pub const DEFAULT_MAX_TOKENS_CAP: u32 = 1000;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("provider rejected credentials: {0}")]
    ProviderAuth(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("request budget of {0} exhausted")]
    BudgetExceeded(u64),
    #[error("invalid sampling parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: Option<u32>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.7,
            top_p: 0.9,
            max_tokens: None,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidParams(format!(
                "temperature {} must be non-negative",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::InvalidParams(format!(
                "top_p {} must be in (0, 1]",
                self.top_p
            )));
        }
        if self.max_tokens == Some(0) {
            return Err(GatewayError::InvalidParams("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Parameters as sent to a provider with the given capabilities.
    pub fn effective(&self, capabilities: Capabilities) -> SamplingParams {
        let mut params = *self;
        if capabilities.requires_max_tokens && params.max_tokens.is_none() {
            params.max_tokens = Some(DEFAULT_MAX_TOKENS_CAP);
        }
        params
    }
}

/// One raw model response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub record_id: String,
    pub prompt_id: String,
    pub model_id: String,
    pub params: SamplingParams,
    pub raw_text: String,
    pub created_at: DateTime<Utc>,
    pub provider_meta: BTreeMap<String, String>,
    pub replicate_index: u32,
    /// Set when the provider failed after all retries; `raw_text` is empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl GenerationRecord {
    pub fn is_failure(&self) -> bool {
        self.failure.is_some()
    }

    pub fn key(&self) -> (&str, &str, u32) {
        (&self.prompt_id, &self.model_id, self.replicate_index)
    }
}

/// Deterministic record id over (model, prompt, replicate).
pub fn record_id(model_id: &str, prompt_id: &str, replicate_index: u32) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model_id.as_bytes());
    hasher.update([0x1f]);
    hasher.update(prompt_id.as_bytes());
    hasher.update([0x1f]);
    hasher.update(replicate_index.to_le_bytes());
    hex::encode(&hasher.finalize()[..8])
}
