use std::collections::BTreeMap;

use thiserror::Error;

use super::SamplingParams;
use crate::corpus::PromptSpec;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Capabilities {
    /// The provider rejects requests without `max_tokens`.
    pub requires_max_tokens: bool,
    /// Calls leave the process; replay mode refuses such providers.
    pub uses_network: bool,
}

/// One completion call. `spec` and `replicate_index` identify the call for
/// providers that are keyed on them; HTTP adapters only send `prompt`.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    pub params: &'a SamplingParams,
    pub spec: &'a PromptSpec,
    pub replicate_index: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub meta: BTreeMap<String, String>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Completion {
            text: text.into(),
            meta: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProviderError {
    /// Credentials rejected. The run stops immediately.
    #[error("authentication failed: {0}")]
    Auth(String),
    /// Rate limited, overloaded or a network fault. Retried.
    #[error("transient failure: {0}")]
    Transient(String),
    /// Anything else. Recorded as a failure without retrying.
    #[error("permanent failure: {0}")]
    Permanent(String),
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ProviderError>;
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ProviderError> {
        (**self).complete(request)
    }
}
