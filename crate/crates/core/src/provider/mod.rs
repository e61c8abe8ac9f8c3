//! Text-generation providers.
//!
//! Everything that talks to an LLM goes through [`Provider::generate`]: the
//! rewrite prompts, the equivalence judge and the in-context evaluation. A
//! [`CachedProvider`] in front of any provider persists every completion on
//! disk, so a rerun with a warm cache is offline and bit-reproducible.

mod cache;
mod mock;
mod remote;

pub use cache::{CacheEntry, CacheKey, CacheStats, CachedProvider, ResponseCache};
pub use mock::{MockProvider, MockRules};
pub use remote::{RemoteConfig, RemoteProvider};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Purpose of a generation call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestTag {
    Paraphrase,
    Backtranslate,
    Equivalence,
    Evaluate,
}

impl RequestTag {
    /// Sampling temperature used when the caller does not override it.
    /// Rewrites sample for diversity; judging and evaluation are greedy.
    pub fn default_temperature(self) -> f64 {
        match self {
            RequestTag::Paraphrase | RequestTag::Backtranslate => 0.7,
            RequestTag::Equivalence | RequestTag::Evaluate => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RequestTag::Paraphrase => "paraphrase",
            RequestTag::Backtranslate => "backtranslate",
            RequestTag::Equivalence => "equivalence",
            RequestTag::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for RequestTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const DEFAULT_MAX_TOKENS: u32 = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub tag: RequestTag,
}

impl GenerationRequest {
    /// Request with the tag's default temperature and [`DEFAULT_MAX_TOKENS`].
    pub fn new(prompt: impl Into<String>, tag: RequestTag) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            temperature: tag.default_temperature(),
            max_tokens: DEFAULT_MAX_TOKENS,
            tag,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.prompt.is_empty() {
            return Err(ProviderError::InvalidRequest("prompt is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(ProviderError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("provider returned an empty completion")]
    EmptyCompletion,
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("response cache: {0}")]
    Cache(String),
}

/// A text-in, text-out completion backend.
pub trait Provider: Send + Sync {
    /// Stable identifier of the backend kind, part of the cache key.
    fn id(&self) -> &str;
    /// Model identifier, part of the cache key.
    fn model(&self) -> &str;
    fn generate(&self, req: &GenerationRequest) -> Result<String, ProviderError>;
}

impl<P: Provider + ?Sized> Provider for &P {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn model(&self) -> &str {
        (**self).model()
    }
    fn generate(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        (**self).generate(req)
    }
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn model(&self) -> &str {
        (**self).model()
    }
    fn generate(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        (**self).generate(req)
    }
}

/// Digest of a request as seen by `provider`.
pub fn cache_key<P: Provider + ?Sized>(provider: &P, req: &GenerationRequest) -> CacheKey {
    CacheKey::compute(provider.id(), provider.model(), req)
}
