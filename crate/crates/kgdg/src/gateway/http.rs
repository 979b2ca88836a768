//! OpenAI-compatible chat completions over HTTP with retry and backoff.

use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::json;

use super::{BackendConfig, Backend, ChatRequest, ChatResponse};
use crate::error::BackendError;

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    auth_env_var: String,
    timeout_ms: u64,
    max_retries: u32,
    backoff_base_ms: u64,
    backoff_jitter_ms: u64,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        config.validate().map_err(BackendError::InvalidRequest)?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpBackend {
            client,
            endpoint: config.endpoint.trim_end_matches('/').to_string(),
            model: config.model_name.clone(),
            auth_env_var: config.auth_env_var.clone(),
            timeout_ms: config.timeout_ms,
            max_retries: config.max_retries,
            backoff_base_ms: config.backoff_base_ms,
            backoff_jitter_ms: config.backoff_jitter_ms,
        })
    }

    fn api_key(&self) -> Result<String, BackendError> {
        std::env::var(&self.auth_env_var).map_err(|_| BackendError::Auth {
            var: self.auth_env_var.clone(),
        })
    }

    fn send_once(&self, key: &str, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let started = Instant::now();
        let response = self
            .client
            .post(format!("{}/chat/completions", self.endpoint))
            .bearer_auth(key)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    BackendError::Timeout(self.timeout_ms)
                } else {
                    BackendError::Transport(e.to_string())
                }
            })?;
        let status = response.status().as_u16();
        if status == 401 || status == 403 {
            return Err(BackendError::Denied { status });
        }
        if status == 429 {
            return Err(BackendError::RateLimited);
        }
        if !(200..300).contains(&status) {
            let body = response.text().unwrap_or_default();
            let body = body.chars().take(400).collect();
            return Err(BackendError::Status { status, body });
        }
        let latency_ms = started.elapsed().as_millis() as u64;
        let value: serde_json::Value = response
            .json()
            .map_err(|e| BackendError::Transport(format!("invalid response body: {e}")))?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(serde_json::Value::as_str)
            .ok_or(BackendError::MissingContent)?
            .to_string();
        let usage = |field: &str| {
            value
                .pointer(&format!("/usage/{field}"))
                .and_then(serde_json::Value::as_u64)
                .unwrap_or(0)
        };
        Ok(ChatResponse {
            text,
            prompt_tokens: usage("prompt_tokens"),
            completion_tokens: usage("completion_tokens"),
            latency_ms,
        })
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        // Missing credentials fail immediately; nothing to retry.
        let key = self.api_key()?;
        let mut rng = rand::thread_rng();
        let mut last = None;
        for attempt in 0..=self.max_retries {
            match self.send_once(&key, request) {
                Ok(resp) => return Ok(resp),
                Err(err) if err.is_retryable() && attempt < self.max_retries => {
                    log::debug!(
                        "attempt {attempt} for tag {} failed: {err}; backing off",
                        request.request_tag
                    );
                    std::thread::sleep(backoff_delay(
                        attempt,
                        self.backoff_base_ms,
                        self.backoff_jitter_ms,
                        &mut rng,
                    ));
                    last = Some(err);
                }
                Err(err) if err.is_retryable() => {
                    return Err(BackendError::Exhausted {
                        attempts: attempt + 1,
                        last: Box::new(err),
                    })
                }
                Err(err) => return Err(err),
            }
        }
        Err(BackendError::Exhausted {
            attempts: self.max_retries + 1,
            last: Box::new(last.unwrap_or(BackendError::MissingContent)),
        })
    }
}

/// Exponential backoff with uniform jitter: `base * 2^attempt + U[0, jitter]`.
pub fn backoff_delay<R: Rng + ?Sized>(
    attempt: u32,
    base_ms: u64,
    jitter_ms: u64,
    rng: &mut R,
) -> Duration {
    let exp = base_ms.saturating_mul(1u64 << attempt.min(20));
    let jitter = if jitter_ms == 0 {
        0
    } else {
        rng.gen_range(0..=jitter_ms)
    };
    Duration::from_millis(exp + jitter)
}

/// Upper bound on cumulative sleep across `n` retries:
/// `base * (2^n - 1) + n * jitter`.
pub fn max_total_backoff(retries: u32, base_ms: u64, jitter_ms: u64) -> Duration {
    let exp_sum = base_ms.saturating_mul((1u64 << retries.min(20)) - 1);
    Duration::from_millis(exp_sum + u64::from(retries) * jitter_ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cumulative_backoff_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for retries in 1..=6u32 {
            let total: Duration = (0..retries)
                .map(|attempt| backoff_delay(attempt, 250, 100, &mut rng))
                .sum();
            assert!(
                total <= max_total_backoff(retries, 250, 100),
                "total {total:?} exceeds bound for {retries} retries"
            );
        }
    }

    #[test]
    fn backoff_doubles_without_jitter() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let delays: Vec<u64> = (0..4)
            .map(|a| backoff_delay(a, 100, 0, &mut rng).as_millis() as u64)
            .collect();
        assert_eq!(delays, vec![100, 200, 400, 800]);
    }
}
