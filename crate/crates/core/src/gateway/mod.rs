//! Caption collection from pluggable providers.
//!
//! Each model is an [`ModelEndpoint`]: a provider, the prompt that provider
//! receives, a retry policy and a concurrency cap. [`caption_test_set`] fans
//! the test split out over all endpoints, skips pairs already present in the
//! [`CaptionStore`] and funnels results through a single writer.

mod http;
mod mock;
mod store;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tokio::task::JoinSet;

use crate::dataset::{FrameRecord, Manifest, Split};
use crate::preprocess::{self, PreparedImage, PreprocessError};
use crate::prompt::{build_prompt, PromptSpec, PromptStyle, ProviderKind};

pub use http::{ChatCompletionsProvider, VlmHttpProvider, WireRequest, WireResponse};
pub use mock::{MockConfig, MockProvider, MockStats};
pub use store::{CaptionStore, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    /// 0 means greedy decoding.
    pub temperature: f32,
    pub max_tokens: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the n-th retry; the last entry repeats.
    #[serde(default)]
    pub backoff_ms: Vec<u64>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            backoff_ms: vec![500, 1000, 2000, 4000],
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            backoff_ms: Vec::new(),
        }
    }

    pub fn delay_before_retry(&self, retry: u32) -> Duration {
        let ms = match self.backoff_ms.as_slice() {
            [] => 0,
            steps => steps[(retry as usize).min(steps.len() - 1)],
        };
        Duration::from_millis(ms)
    }
}

fn default_concurrency() -> usize {
    4
}

fn default_timeout_ms() -> u64 {
    120_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub auth_env: Option<String>,
    /// Vendor model name sent to chat-completions endpoints.
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub decode: DecodeParams,
    #[serde(default)]
    pub mock: Option<MockConfig>,
}

impl ProviderConfig {
    pub fn mock(mock: MockConfig) -> Self {
        Self {
            kind: ProviderKind::Mock,
            endpoint: None,
            auth_env: None,
            model: None,
            max_concurrency: default_concurrency(),
            retry: RetryPolicy::no_delay(3),
            timeout_ms: default_timeout_ms(),
            decode: DecodeParams::default(),
            mock: Some(mock),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::Config(m.to_string()));
        if self.max_concurrency < 1 {
            return bad("max_concurrency must be at least 1");
        }
        if self.retry.max_attempts < 1 {
            return bad("retry.max_attempts must be at least 1");
        }
        if self.kind != ProviderKind::Mock && self.endpoint.as_deref().unwrap_or("").is_empty() {
            return bad("endpoint is required for non-mock providers");
        }
        Ok(())
    }

    pub fn prompt(&self) -> PromptSpec {
        build_prompt(match self.kind {
            ProviderKind::CommercialLlm => PromptStyle::CommercialLlm,
            ProviderKind::VlmLocal | ProviderKind::Mock => PromptStyle::VlmLocal,
        })
    }

    /// Instantiates the provider this config describes.
    pub fn build(&self) -> Result<Arc<dyn CaptionProvider>, GatewayError> {
        self.validate()?;
        let timeout = Duration::from_millis(self.timeout_ms);
        Ok(match self.kind {
            ProviderKind::Mock => Arc::new(MockProvider::from_config(self.mock.clone().unwrap_or_default())),
            ProviderKind::VlmLocal => Arc::new(VlmHttpProvider::new(
                self.endpoint.clone().unwrap_or_default(),
                self.auth_env.clone(),
                timeout,
            )?),
            ProviderKind::CommercialLlm => Arc::new(ChatCompletionsProvider::new(
                self.endpoint.clone().unwrap_or_default(),
                self.auth_env.clone(),
                self.model.clone().unwrap_or_else(|| "gpt-5.2".to_string()),
                timeout,
            )?),
        })
    }
}

#[derive(Debug, Clone)]
pub struct CaptionRequest {
    pub request_id: String,
    pub frame_id: String,
    pub image_png: Arc<Vec<u8>>,
    pub prompt: PromptSpec,
    pub decode: DecodeParams,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderReply {
    pub text: String,
    pub model_version: Option<String>,
}

/// Outcome of a single provider call.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderFailure {
    #[error("timed out")]
    Timeout,
    #[error("status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unusable response: {0}")]
    BadResponse(String),
    #[error("misconfigured provider: {0}")]
    Misconfigured(String),
}

impl ProviderFailure {
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderFailure::Timeout | ProviderFailure::Transport(_) => true,
            ProviderFailure::Status { status, .. } => *status == 408 || *status == 429 || *status >= 500,
            ProviderFailure::BadResponse(_) | ProviderFailure::Misconfigured(_) => false,
        }
    }
}

#[async_trait]
pub trait CaptionProvider: Send + Sync {
    async fn caption(&self, request: &CaptionRequest) -> Result<ProviderReply, ProviderFailure>;
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("provider timed out after {attempts} attempt(s)")]
    ProviderTimeout { attempts: u32 },
    #[error("provider rejected the request with status {status}: {body}")]
    ProviderRejected { status: u16, body: String },
    #[error("gave up after {attempts} attempt(s): {last}")]
    ExhaustedRetries { attempts: u32, last: ProviderFailure },
    #[error("provider returned an unusable response: {0}")]
    BadResponse(String),
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("manifest has no test frames")]
    NoTestFrames,
    #[error(transparent)]
    Image(#[from] PreprocessError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderMeta {
    pub provider_kind: ProviderKind,
    pub request_id: String,
    pub latency_ms: u64,
    pub retries: u32,
    pub model_version: Option<String>,
    pub decode: DecodeParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub frame_id: String,
    pub model_id: String,
    pub text: String,
    pub prompt_hash: String,
    pub provider_meta: ProviderMeta,
    pub created_at: DateTime<Utc>,
}

/// A model id bound to its provider, prompt and concurrency cap.
#[derive(Clone)]
pub struct ModelEndpoint {
    pub model_id: String,
    pub config: ProviderConfig,
    pub prompt: PromptSpec,
    provider: Arc<dyn CaptionProvider>,
    permits: Arc<Semaphore>,
}

impl std::fmt::Debug for ModelEndpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelEndpoint")
            .field("model_id", &self.model_id)
            .field("kind", &self.config.kind)
            .finish()
    }
}

impl ModelEndpoint {
    pub fn new(model_id: impl Into<String>, config: ProviderConfig) -> Result<Self, GatewayError> {
        let provider = config.build()?;
        Self::with_provider(model_id, config, provider)
    }

    /// Uses an already-constructed provider, e.g. a shared mock.
    pub fn with_provider(
        model_id: impl Into<String>,
        config: ProviderConfig,
        provider: Arc<dyn CaptionProvider>,
    ) -> Result<Self, GatewayError> {
        config.validate()?;
        Ok(Self {
            model_id: model_id.into(),
            prompt: config.prompt(),
            permits: Arc::new(Semaphore::new(config.max_concurrency)),
            config,
            provider,
        })
    }
}

/// Captions one prepared frame, retrying transient failures per the endpoint's policy.
pub async fn caption_one(
    endpoint: &ModelEndpoint,
    frame_id: &str,
    image_png: Arc<Vec<u8>>,
) -> Result<CaptionRecord, GatewayError> {
    let _permit = endpoint.permits.acquire().await.expect("semaphore is never closed");
    let request = CaptionRequest {
        request_id: uuid::Uuid::new_v4().to_string(),
        frame_id: frame_id.to_string(),
        image_png,
        prompt: endpoint.prompt.clone(),
        decode: endpoint.config.decode,
    };
    let policy = &endpoint.config.retry;
    let timeout = Duration::from_millis(endpoint.config.timeout_ms);
    let mut attempt = 0;
    loop {
        attempt += 1;
        let started = Instant::now();
        let outcome = match tokio::time::timeout(timeout, endpoint.provider.caption(&request)).await {
            Ok(r) => r,
            Err(_) => Err(ProviderFailure::Timeout),
        };
        match outcome {
            Ok(reply) => {
                let text = reply.text.trim_end().to_string();
                if text.is_empty() {
                    return Err(GatewayError::BadResponse("empty caption".into()));
                }
                return Ok(CaptionRecord {
                    frame_id: frame_id.to_string(),
                    model_id: endpoint.model_id.clone(),
                    text,
                    prompt_hash: endpoint.prompt.hash(),
                    provider_meta: ProviderMeta {
                        provider_kind: endpoint.config.kind,
                        request_id: request.request_id,
                        latency_ms: started.elapsed().as_millis() as u64,
                        retries: attempt - 1,
                        model_version: reply.model_version,
                        decode: endpoint.config.decode,
                    },
                    created_at: Utc::now(),
                });
            }
            Err(failure) if failure.is_transient() && attempt < policy.max_attempts => {
                tracing::debug!(frame_id, model = %endpoint.model_id, attempt, %failure, "retrying");
                tokio::time::sleep(policy.delay_before_retry(attempt - 1)).await;
            }
            Err(ProviderFailure::Timeout) => return Err(GatewayError::ProviderTimeout { attempts: attempt }),
            Err(failure) if failure.is_transient() => {
                return Err(GatewayError::ExhaustedRetries {
                    attempts: attempt,
                    last: failure,
                })
            }
            Err(ProviderFailure::Status { status, body }) => {
                return Err(GatewayError::ProviderRejected { status, body })
            }
            Err(ProviderFailure::Misconfigured(m)) => return Err(GatewayError::Config(m)),
            Err(other) => return Err(GatewayError::BadResponse(other.to_string())),
        }
    }
}

/// Convenience wrapper that encodes a prepared image first.
pub async fn caption_prepared(endpoint: &ModelEndpoint, image: &PreparedImage) -> Result<CaptionRecord, GatewayError> {
    let png = Arc::new(image.png_bytes()?);
    caption_one(endpoint, image.source_id(), png).await
}

/// Where prepared PNG bytes for a frame come from.
pub trait ImageSource: Send + Sync {
    fn png_for(&self, frame: &FrameRecord) -> Result<Vec<u8>, PreprocessError>;
}

/// Directory written by the preprocessing step.
#[derive(Debug, Clone)]
pub struct PreparedDir(pub std::path::PathBuf);

impl ImageSource for PreparedDir {
    fn png_for(&self, frame: &FrameRecord) -> Result<Vec<u8>, PreprocessError> {
        Ok(std::fs::read(preprocess::prepared_png_path(&self.0, &frame.frame_id))?)
    }
}

impl<F> ImageSource for F
where
    F: Fn(&FrameRecord) -> Result<Vec<u8>, PreprocessError> + Send + Sync,
{
    fn png_for(&self, frame: &FrameRecord) -> Result<Vec<u8>, PreprocessError> {
        self(frame)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionFailure {
    pub frame_id: String,
    pub model_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchReport {
    /// Pairs sent to a provider in this run.
    pub requested: usize,
    /// Pairs already present in the store.
    pub cached: usize,
    pub succeeded: usize,
    pub failures: Vec<CaptionFailure>,
}

/// Captions every test frame with every endpoint. Cached pairs are skipped,
/// each new record is persisted as soon as it arrives, and per-pair failures
/// end up in the report instead of aborting the batch.
pub async fn caption_test_set(
    manifest: &Manifest,
    endpoints: &[ModelEndpoint],
    store: &mut CaptionStore,
    images: &dyn ImageSource,
) -> Result<BatchReport, GatewayError> {
    let frames: Vec<&FrameRecord> = manifest.in_split(Split::Test).collect();
    if frames.is_empty() {
        return Err(GatewayError::NoTestFrames);
    }
    let mut report = BatchReport::default();
    let mut png_cache: HashMap<&str, Arc<Vec<u8>>> = HashMap::new();
    let mut tasks = JoinSet::new();
    for frame in &frames {
        for endpoint in endpoints {
            if store
                .lookup(&frame.frame_id, &endpoint.model_id, &endpoint.prompt.hash())
                .is_some()
            {
                report.cached += 1;
                continue;
            }
            let png = match png_cache.get(frame.frame_id.as_str()) {
                Some(png) => png.clone(),
                None => match images.png_for(frame) {
                    Ok(bytes) => {
                        let png = Arc::new(bytes);
                        png_cache.insert(&frame.frame_id, png.clone());
                        png
                    }
                    Err(e) => {
                        report.failures.push(CaptionFailure {
                            frame_id: frame.frame_id.clone(),
                            model_id: endpoint.model_id.clone(),
                            error: e.to_string(),
                        });
                        continue;
                    }
                },
            };
            report.requested += 1;
            let endpoint = endpoint.clone();
            let frame_id = frame.frame_id.clone();
            tasks.spawn(async move {
                let result = caption_one(&endpoint, &frame_id, png).await;
                (frame_id, endpoint.model_id, result)
            });
        }
    }
    while let Some(joined) = tasks.join_next().await {
        let (frame_id, model_id, result) = joined.expect("caption task panicked");
        match result {
            Ok(record) => {
                store.insert(record)?;
                report.succeeded += 1;
            }
            Err(e) => {
                tracing::warn!(%frame_id, %model_id, error = %e, "caption failed");
                report.failures.push(CaptionFailure {
                    frame_id,
                    model_id,
                    error: e.to_string(),
                })
            }
        }
    }
    report
        .failures
        .sort_by(|a, b| (&a.frame_id, &a.model_id).cmp(&(&b.frame_id, &b.model_id)));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn endpoint(provider: MockProvider, attempts: u32) -> ModelEndpoint {
        let mut cfg = ProviderConfig::mock(MockConfig::default());
        cfg.retry = RetryPolicy::no_delay(attempts);
        ModelEndpoint::with_provider("m", cfg, Arc::new(provider)).unwrap()
    }

    #[tokio::test]
    async fn canned_text_without_retries() {
        let ep = endpoint(MockProvider::canned("Two-cell embryo."), 3);
        let r = caption_one(&ep, "f1", Arc::new(vec![])).await.unwrap();
        assert_eq!(r.text, "Two-cell embryo.");
        assert_eq!(r.provider_meta.retries, 0);
        assert_eq!(r.prompt_hash, build_prompt(PromptStyle::VlmLocal).hash());
    }

    #[tokio::test]
    async fn rate_limited_twice_then_ok() {
        let mock = MockProvider::scripted(vec![
            Err(ProviderFailure::Status {
                status: 429,
                body: String::new(),
            }),
            Err(ProviderFailure::Status {
                status: 429,
                body: String::new(),
            }),
            Ok("ok".into()),
        ]);
        let stats = mock.stats();
        let r = caption_one(&endpoint(mock, 3), "f", Arc::new(vec![])).await.unwrap();
        assert_eq!(r.provider_meta.retries, 2);
        assert_eq!(stats.calls(), 3);
    }

    #[tokio::test]
    async fn provider_down_exhausts_retries() {
        let mock = MockProvider::scripted(vec![Err(ProviderFailure::Transport("connection refused".into()))]);
        let stats = mock.stats();
        let err = caption_one(&endpoint(mock, 4), "f", Arc::new(vec![]))
            .await
            .unwrap_err();
        assert!(matches!(err, GatewayError::ExhaustedRetries { attempts: 4, .. }));
        assert_eq!(stats.calls(), 4);
    }

    #[tokio::test]
    async fn client_errors_are_not_retried() {
        let mock = MockProvider::scripted(vec![Err(ProviderFailure::Status {
            status: 400,
            body: "bad".into(),
        })]);
        let stats = mock.stats();
        let err = caption_one(&endpoint(mock, 4), "f", Arc::new(vec![]))
            .await
            .unwrap_err();
        assert!(matches!(err, GatewayError::ProviderRejected { status: 400, .. }));
        assert_eq!(stats.calls(), 1);
    }

    #[tokio::test]
    async fn slow_provider_times_out() {
        let mock = MockProvider::canned("late").with_delay(Duration::from_millis(200));
        let mut ep = endpoint(mock, 2);
        ep.config.timeout_ms = 20;
        let err = caption_one(&ep, "f", Arc::new(vec![])).await.unwrap_err();
        assert!(matches!(err, GatewayError::ProviderTimeout { attempts: 2 }));
    }

    #[tokio::test]
    async fn trailing_whitespace_only_is_trimmed() {
        let ep = endpoint(MockProvider::canned("  Zygote,\tzwei Vorkerne – ok.\n\n "), 1);
        let r = caption_one(&ep, "f", Arc::new(vec![])).await.unwrap();
        assert_eq!(r.text, "  Zygote,\tzwei Vorkerne – ok.");
        let empty = endpoint(MockProvider::canned(" \n"), 1);
        assert!(matches!(
            caption_one(&empty, "f", Arc::new(vec![])).await,
            Err(GatewayError::BadResponse(_))
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = ProviderConfig::mock(MockConfig::default());
        cfg.max_concurrency = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ProviderConfig::mock(MockConfig::default());
        cfg.retry.max_attempts = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ProviderConfig::mock(MockConfig::default());
        cfg.kind = ProviderKind::VlmLocal;
        assert!(cfg.validate().is_err());
        assert_eq!(ProviderConfig::mock(MockConfig::default()).prompt().text, "describe en");
    }

    #[test]
    fn backoff_schedule_repeats_last_step() {
        let p = RetryPolicy {
            max_attempts: 5,
            backoff_ms: vec![10, 20],
        };
        assert_eq!(p.delay_before_retry(0), Duration::from_millis(10));
        assert_eq!(p.delay_before_retry(1), Duration::from_millis(20));
        assert_eq!(p.delay_before_retry(7), Duration::from_millis(20));
        assert_eq!(RetryPolicy::no_delay(1).delay_before_retry(3), Duration::ZERO);
    }
}
