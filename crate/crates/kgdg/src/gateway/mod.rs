//! Uniform LLM backend contract with two implementations: an
//! OpenAI-compatible HTTP endpoint and a deterministic fault-injecting mock.
//! The [`Gateway`] adds an in-flight bound, batch dispatch, and usage metrics
//! on top of either backend.

mod http;
mod mock;

pub use http::{backoff_delay, max_total_backoff, HttpBackend};
pub use mock::{canonical_statute_text, MalformedKind, MockBackend, MockScript};

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::BackendError;
use crate::exec::Executor;

/// Pipeline stage names. The stage travels with each request as its
/// `request_tag`, which is how the mock backend decides what to answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sampling,
    Writer,
    RefFixer,
    ReasonFixer,
    Verifier,
}

impl Stage {
    pub fn tag(&self) -> &'static str {
        match self {
            Stage::Sampling => "sampling",
            Stage::Writer => "writer",
            Stage::RefFixer => "ref_fixer",
            Stage::ReasonFixer => "reason_fixer",
            Stage::Verifier => "verifier",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Stage> {
        let head = tag.split([':', '#']).next().unwrap_or(tag);
        match head {
            "sampling" => Some(Stage::Sampling),
            "writer" => Some(Stage::Writer),
            "ref_fixer" => Some(Stage::RefFixer),
            "reason_fixer" => Some(Stage::ReasonFixer),
            "verifier" => Some(Stage::Verifier),
            _ => None,
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_tag: String,
}

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 4096;

impl ChatRequest {
    pub fn new(stage: Stage, prompt: impl Into<String>, temperature: f64) -> Self {
        ChatRequest {
            prompt: prompt.into(),
            temperature,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            request_tag: stage.tag().to_string(),
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        Stage::from_tag(&self.request_tag)
    }
}

#[derive(Debug, Clone)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

/// One chat completion round trip. Implementations must be shareable across
/// worker threads.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
}

pub const DEFAULT_AUTH_ENV_VAR: &str = "KGDG_API_KEY";

fn default_auth_env_var() -> String {
    DEFAULT_AUTH_ENV_VAR.to_string()
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_max_retries() -> u32 {
    5
}

fn default_max_in_flight() -> usize {
    16
}

fn default_backoff_base_ms() -> u64 {
    250
}

fn default_backoff_jitter_ms() -> u64 {
    100
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model_name: String,
    #[serde(default = "default_auth_env_var")]
    pub auth_env_var: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_jitter_ms")]
    pub backoff_jitter_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: String::new(),
            model_name: String::new(),
            auth_env_var: default_auth_env_var(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            max_in_flight: default_max_in_flight(),
            backoff_base_ms: default_backoff_base_ms(),
            backoff_jitter_ms: default_backoff_jitter_ms(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_in_flight < 1 {
            return Err("max_in_flight must be at least 1".to_string());
        }
        if self.kind == BackendKind::Http {
            if self.endpoint.is_empty() {
                return Err("http backend requires an endpoint".to_string());
            }
            if self.model_name.is_empty() {
                return Err("http backend requires a model_name".to_string());
            }
        }
        Ok(())
    }
}

/// Counting semaphore. Callers block until a permit is free.
struct Semaphore {
    state: Mutex<usize>,
    cv: Condvar,
    capacity: usize,
}

impl Semaphore {
    fn new(capacity: usize) -> Self {
        Semaphore {
            state: Mutex::new(capacity),
            cv: Condvar::new(),
            capacity,
        }
    }

    fn acquire(&self) {
        let mut available = self.state.lock().unwrap();
        while *available == 0 {
            available = self.cv.wait(available).unwrap();
        }
        *available -= 1;
    }

    fn release(&self) {
        let mut available = self.state.lock().unwrap();
        *available += 1;
        debug_assert!(*available <= self.capacity);
        self.cv.notify_one();
    }
}

#[derive(Debug, Default)]
struct MetricsInner {
    calls: AtomicU64,
    errors: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

/// Usage counters accumulated across one gateway's lifetime.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewaySnapshot {
    pub calls: u64,
    pub errors: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub peak_in_flight: usize,
}

/// A backend behind an in-flight limiter plus metrics. Shareable across
/// workers; `complete_batch` dispatches through a pool of the same size as
/// the limiter, so at most `max_in_flight` requests are outstanding.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    limiter: Semaphore,
    metrics: MetricsInner,
    executor: Executor,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, max_in_flight: usize) -> Self {
        let max_in_flight = max_in_flight.max(1);
        Gateway {
            backend,
            limiter: Semaphore::new(max_in_flight),
            metrics: MetricsInner::default(),
            executor: Executor::new(max_in_flight),
        }
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        if request.prompt.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".to_string()));
        }
        self.limiter.acquire();
        let now = self.metrics.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.metrics.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        let result = self.backend.complete(request);
        self.metrics.in_flight.fetch_sub(1, Ordering::SeqCst);
        self.limiter.release();

        self.metrics.calls.fetch_add(1, Ordering::Relaxed);
        match &result {
            Ok(resp) => {
                self.metrics
                    .prompt_tokens
                    .fetch_add(resp.prompt_tokens, Ordering::Relaxed);
                self.metrics
                    .completion_tokens
                    .fetch_add(resp.completion_tokens, Ordering::Relaxed);
            }
            Err(_) => {
                self.metrics.errors.fetch_add(1, Ordering::Relaxed);
            }
        }
        result
    }

    /// Dispatch a batch; the result vector is positionally aligned with the
    /// requests, and per-item errors are reported in place.
    pub fn complete_batch(
        &self,
        requests: &[ChatRequest],
    ) -> Vec<Result<ChatResponse, BackendError>> {
        self.executor.map(requests, |req| self.complete(req))
    }

    pub fn snapshot(&self) -> GatewaySnapshot {
        GatewaySnapshot {
            calls: self.metrics.calls.load(Ordering::Relaxed),
            errors: self.metrics.errors.load(Ordering::Relaxed),
            prompt_tokens: self.metrics.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: self.metrics.completion_tokens.load(Ordering::Relaxed),
            peak_in_flight: self.metrics.peak_in_flight.load(Ordering::SeqCst),
        }
    }
}

/// Build a backend from its config. The mock script is passed separately so
/// every mock-backed stage can share one deterministic instance.
pub fn build_backend(
    config: &BackendConfig,
    script: &MockScript,
) -> Result<Arc<dyn Backend>, BackendError> {
    config
        .validate()
        .map_err(BackendError::InvalidRequest)?;
    match config.kind {
        BackendKind::Mock => Ok(Arc::new(MockBackend::new(script.clone())?)),
        BackendKind::Http => Ok(Arc::new(HttpBackend::new(config)?)),
    }
}
