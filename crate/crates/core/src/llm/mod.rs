//! Chat-completion gateway.
//!
//! Every language-model call in the crate goes through an [`LlmBackend`].
//! Backends: [`RemoteBackend`] (chat-completion HTTP API), [`ReplayBackend`]
//! (cassette lookup), [`RecordingBackend`] (wraps another backend and
//! appends to a cassette) and [`MockBackend`] (rule-based, offline).

mod backends;
mod cassette;
mod judge;

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use backends::{MockBackend, MockReply, MockRule, RemoteBackend};
pub use cassette::{cassette_key, CassetteEntry, RecordingBackend, ReplayBackend};
pub use judge::{judge_score, mean_judge_score, parse_score, JudgeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            backoff_ms: 500,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): `backoff * 2^(attempt-1)`.
    pub fn delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.backoff_ms.saturating_mul(1 << (attempt - 1).min(16)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub model: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub timeout_ms: u64,
    pub retry: RetryPolicy,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, model: impl Into<String>) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            model: model.into(),
            max_tokens: 1024,
            temperature: 0.0,
            timeout_ms: 60_000,
            retry: RetryPolicy::default(),
        }
    }

    pub fn check(&self) -> Result<(), LlmError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.retry.attempts == 0 {
            return Err(LlmError::InvalidRequest(
                "retry attempts must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub backend: String,
    pub latency_ms: u64,
    /// SHA-256 of the raw response payload.
    pub payload_hash: String,
    pub cache_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited")]
    RateLimited,
    #[error("authentication failed")]
    AuthFailure,
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("no cassette entry for key {key}")]
    CassetteMiss { key: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cassette: {0}")]
    Cassette(String),
}

impl LlmError {
    /// Whether a retry may succeed.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            LlmError::Timeout | LlmError::RateLimited | LlmError::BackendUnavailable(_)
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub trait LlmBackend: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, LlmError>;
}

/// Counting semaphore bounding concurrent calls.
#[derive(Debug)]
struct InFlight {
    max: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.max {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// Shared entry point: a backend plus a global in-flight cap and request
/// defaults.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn LlmBackend>,
    in_flight: Arc<InFlight>,
    pub model: String,
    pub max_tokens: u32,
    pub timeout_ms: u64,
    pub retry: RetryPolicy,
}

impl Gateway {
    pub fn new(backend: Arc<dyn LlmBackend>, max_in_flight: usize) -> Self {
        Gateway {
            backend,
            in_flight: Arc::new(InFlight {
                max: max_in_flight.max(1),
                used: Mutex::new(0),
                freed: Condvar::new(),
            }),
            model: "gpt-3.5-turbo-1106".to_string(),
            max_tokens: 1024,
            timeout_ms: 60_000,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    pub fn request(&self, prompt: &str) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.to_string(),
            model: self.model.clone(),
            max_tokens: self.max_tokens,
            temperature: 0.0,
            timeout_ms: self.timeout_ms,
            retry: self.retry,
        }
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        req.check()?;
        let _slot = self.in_flight.acquire();
        self.backend.complete(req)
    }

    /// Completes `prompt` with the gateway defaults.
    pub fn complete_prompt(&self, prompt: &str) -> Result<CompletionResult, LlmError> {
        self.complete(&self.request(prompt))
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;

    struct Slow {
        current: AtomicUsize,
        peak: AtomicUsize,
    }

    impl LlmBackend for Slow {
        fn id(&self) -> String {
            "slow".into()
        }

        fn complete(&self, _req: &CompletionRequest) -> Result<CompletionResult, LlmError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(20));
            self.current.fetch_sub(1, Ordering::SeqCst);
            Ok(CompletionResult {
                text: "ok".into(),
                backend: self.id(),
                latency_ms: 20,
                payload_hash: String::new(),
                cache_hit: false,
            })
        }
    }

    #[test]
    fn in_flight_cap_is_enforced() {
        let backend = Arc::new(Slow {
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let gw = Gateway::new(backend.clone(), 2);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| gw.complete_prompt("x").unwrap());
            }
        });
        assert_eq!(backend.peak.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn request_checks() {
        let mut r = CompletionRequest::new("p", "m");
        assert!(r.check().is_ok());
        r.temperature = -1.0;
        assert!(r.check().is_err());
        r.temperature = 0.0;
        r.retry.attempts = 0;
        assert!(r.check().is_err());
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy {
            attempts: 4,
            backoff_ms: 100,
        };
        assert_eq!(p.delay(1), Duration::from_millis(100));
        assert_eq!(p.delay(3), Duration::from_millis(400));
    }
}
