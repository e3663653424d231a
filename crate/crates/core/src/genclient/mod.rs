//! Multimodal generation against an OpenAI-compatible chat-completions
//! endpoint, a deterministic offline mock, and describe-and-respond
//! inference built on either.

mod http;
mod log;
mod mock;

use std::path::PathBuf;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::corruption::{ImageBuffer, ImageError};
use crate::prompts::{infused_prompt, PromptRegistry};
use crate::rng::SeededRng;

pub use http::HttpBackend;
pub use log::RunLog;
pub use mock::{mock_generate, MockBackend, MOCK_MODEL_ID};

pub const ENV_API_KEY: &str = "STIC_API_KEY";
pub const ENV_BASE_URL: &str = "STIC_BASE_URL";

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub image: Option<ImageBuffer>,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub want_logprobs: bool,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, image: Option<ImageBuffer>, decoding: &DecodingConfig) -> Self {
        Self {
            image,
            prompt: prompt.into(),
            max_tokens: decoding.max_tokens,
            temperature: decoding.temperature,
            seed: None,
            want_logprobs: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.prompt.is_empty() {
            return Err(GenError::Precondition("prompt is empty".into()));
        }
        if self.max_tokens == 0 {
            return Err(GenError::Precondition("max_tokens must be >= 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GenError::Precondition(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub model_id: String,
    pub latency_ms: u64,
}

/// Decoding parameters shared by every generation of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodingConfig {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    /// Taken from the environment, never from config files.
    #[serde(skip)]
    pub api_key: Option<String>,
    pub model: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_concurrency: usize,
    pub max_image_bytes: usize,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    pub log_file: Option<PathBuf>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            api_key: None,
            model: "llava-v1.6-mistral-7b".into(),
            timeout_secs: 120.0,
            max_retries: 4,
            max_concurrency: 8,
            max_image_bytes: 20 * 1024 * 1024,
            backoff_base_ms: 500,
            backoff_max_ms: 30_000,
            log_file: None,
        }
    }
}

impl EndpointConfig {
    /// Picks up `STIC_API_KEY` and `STIC_BASE_URL`.
    pub fn apply_env(&mut self) {
        if let Ok(key) = std::env::var(ENV_API_KEY) {
            if !key.is_empty() {
                self.api_key = Some(key);
            }
        }
        if let Ok(url) = std::env::var(ENV_BASE_URL) {
            if !url.is_empty() {
                self.base_url = url;
            }
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.max_concurrency == 0 {
            return Err(GenError::Precondition("max_concurrency must be >= 1".into()));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(GenError::Precondition("timeout must be > 0".into()));
        }
        if self.model.is_empty() {
            return Err(GenError::Precondition("model must be set".into()));
        }
        Ok(())
    }
}

/// Coarse error classes, as recorded in run manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Precondition,
    Transport,
    Auth,
    Http,
    MalformedResponse,
    OversizedImage,
    Image,
}

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("invalid request: {0}")]
    Precondition(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("encoded image is {bytes} bytes, limit is {limit}")]
    OversizedImage { bytes: usize, limit: usize },
    #[error(transparent)]
    Image(#[from] ImageError),
}

impl GenError {
    pub fn class(&self) -> ErrorClass {
        match self {
            GenError::Precondition(_) => ErrorClass::Precondition,
            GenError::Transport { .. } => ErrorClass::Transport,
            GenError::Auth { .. } => ErrorClass::Auth,
            GenError::Http { .. } => ErrorClass::Http,
            GenError::MalformedResponse(_) => ErrorClass::MalformedResponse,
            GenError::OversizedImage { .. } => ErrorClass::OversizedImage,
            GenError::Image(_) => ErrorClass::Image,
        }
    }

    /// Errors that make every further request pointless.
    pub fn is_fatal(&self) -> bool {
        matches!(self, GenError::Auth { .. } | GenError::Precondition(_))
    }
}

#[async_trait]
pub trait Backend: Send + Sync {
    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, GenError>;

    fn model_id(&self) -> &str;

    /// True when outputs are a pure function of the request, so that
    /// wall-clock metadata must stay out of emitted files.
    fn is_deterministic(&self) -> bool {
        false
    }
}

#[async_trait]
impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, GenError> {
        (**self).generate(req).await
    }

    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

/// One-shot generation against a live endpoint.
pub async fn generate(cfg: &EndpointConfig, req: &GenerationRequest) -> Result<GenerationResult, GenError> {
    HttpBackend::new(cfg.clone())?.generate(req).await
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DarStage {
    Describe,
    Answer,
}

impl std::fmt::Display for DarStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DarStage::Describe => "describe",
            DarStage::Answer => "answer",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} call failed: {source}")]
pub struct DarError {
    pub stage: DarStage,
    #[source]
    pub source: GenError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DarOutput {
    pub description: String,
    pub answer: String,
    pub describe_prompt_id: String,
    pub answer_prompt: String,
}

/// Describes the image first, then answers `question` with the description
/// prepended. Both calls see the image.
pub async fn describe_then_respond(
    backend: &dyn Backend,
    registry: &PromptRegistry,
    decoding: &DecodingConfig,
    image: &ImageBuffer,
    question: &str,
    rng: &SeededRng,
    index: u64,
) -> Result<DarOutput, DarError> {
    if question.is_empty() {
        return Err(DarError {
            stage: DarStage::Answer,
            source: GenError::Precondition("question is empty".into()),
        });
    }
    let describe = registry.sample_describe_prompt(rng, index);
    let req = GenerationRequest::new(describe.text.clone(), Some(image.clone()), decoding)
        .with_seed(rng.u64(index));
    let description = backend
        .generate(&req)
        .await
        .map_err(|source| DarError {
            stage: DarStage::Describe,
            source,
        })?
        .text;
    let answer_prompt = infused_prompt(&description, question);
    let req = GenerationRequest::new(answer_prompt.clone(), Some(image.clone()), decoding)
        .with_seed(rng.u64(index).wrapping_add(1));
    let answer = backend
        .generate(&req)
        .await
        .map_err(|source| DarError {
            stage: DarStage::Answer,
            source,
        })?
        .text;
    Ok(DarOutput {
        description,
        answer,
        describe_prompt_id: describe.id.clone(),
        answer_prompt,
    })
}
