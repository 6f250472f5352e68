//! Access to completion and NLI services.
//!
//! A [`Client`] wraps any [`Backend`] with retry/backoff, a bound on in-flight
//! requests and an optional JSONL audit trail. Backends are either the
//! OpenAI-compatible HTTP endpoint ([`http::OpenAiBackend`]) or one of the
//! deterministic mocks in [`mock`].

pub mod http;
pub mod mock;
pub mod nli;
pub mod reader;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::Serialize;

pub use nli::{nli_judge, LexicalNli, NliScorer, NliVerdict};
pub use reader::{compare_documents, score_document, ScoreMode, Winner};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_name: String,
    /// Ask the service for token log-probabilities.
    pub logprobs: bool,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self { prompt: prompt.into(), temperature: 0.0, max_tokens: 64, model_name: model_name.into(), logprobs: false }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("prompt must be non-empty".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Model output: text plus the summed token log-probability when reported.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Completion {
    pub text: String,
    pub logprob: Option<f64>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), logprob: None }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("unmapped prompt: {0:?}")]
    UnmappedPrompt(String),
    #[error("could not parse a 1-5 rating from reply {raw:?}")]
    Rating { raw: String },
    #[error("comparison reply {raw:?} is neither A nor B")]
    Comparison { raw: String },
    #[error("service reported no log-probability")]
    MissingLogprob,
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transient(_))
    }
}

pub trait Backend: Send + Sync {
    fn send(&self, request: &CompletionRequest) -> Result<Completion, GatewayError>;
}

impl<F> Backend for F
where
    F: Fn(&CompletionRequest) -> Result<Completion, GatewayError> + Send + Sync,
{
    fn send(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        self(request)
    }
}

/// Exponential backoff: sleep `base * factor^(n-1)` after the n-th failed attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: f64,
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { base: Duration::from_secs(1), factor: 2.0, max_attempts: 5 }
    }
}

impl RetryPolicy {
    pub fn delay(&self, failed_attempt: u32) -> Duration {
        self.base.mul_f64(self.factor.powi(failed_attempt as i32 - 1))
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

#[derive(Debug, Default)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Records requested sleeps instead of sleeping.
#[derive(Debug, Default)]
pub struct RecordingSleeper {
    sleeps: Mutex<Vec<Duration>>,
}

impl RecordingSleeper {
    pub fn sleeps(&self) -> Vec<Duration> {
        self.sleeps.lock().unwrap().clone()
    }
}

impl Sleeper for RecordingSleeper {
    fn sleep(&self, duration: Duration) {
        self.sleeps.lock().unwrap().push(duration);
    }
}

/// Runs `call` until it succeeds, fails permanently, or attempts run out.
pub fn with_retries<T>(
    policy: &RetryPolicy,
    sleeper: &dyn Sleeper,
    mut call: impl FnMut(u32) -> Result<T, GatewayError>,
) -> Result<T, GatewayError> {
    let mut attempt = 1;
    loop {
        match call(attempt) {
            Ok(v) => return Ok(v),
            Err(e) if e.is_retryable() => {
                if attempt >= policy.max_attempts {
                    return Err(GatewayError::RetriesExhausted { attempts: attempt, last: e.to_string() });
                }
                log::debug!("attempt {attempt} failed ({e}), backing off");
                sleeper.sleep(policy.delay(attempt));
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Counting semaphore bounding simultaneous backend calls.
#[derive(Debug)]
pub struct InFlightLimit {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        Self { max: max.max(1), current: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.current.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        InFlightGuard { limit: self }
    }
}

pub struct InFlightGuard<'a> {
    limit: &'a InFlightLimit,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.limit.current.lock().unwrap() -= 1;
        self.limit.freed.notify_one();
    }
}

/// Append-only JSONL log of requests and outcomes.
pub struct AuditLog {
    out: Mutex<BufWriter<File>>,
}

#[derive(Serialize)]
struct AuditEntry<'a> {
    request: &'a CompletionRequest,
    attempts: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    response: Option<&'a Completion>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl AuditLog {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        Ok(Self { out: Mutex::new(BufWriter::new(File::create(path)?)) })
    }

    fn record(&self, entry: &AuditEntry<'_>) {
        let mut out = self.out.lock().unwrap();
        let line = serde_json::to_string(entry).expect("audit entry serializes");
        if let Err(e) = writeln!(out, "{line}").and_then(|_| out.flush()) {
            log::warn!("audit log write failed: {e}");
        }
    }
}

/// Shareable completion client.
#[derive(Clone)]
pub struct Client {
    backend: Arc<dyn Backend>,
    retry: RetryPolicy,
    sleeper: Arc<dyn Sleeper>,
    limit: Arc<InFlightLimit>,
    audit: Option<Arc<AuditLog>>,
    model_name: String,
    temperature: f64,
    max_tokens: u32,
}

impl Client {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            retry: RetryPolicy::default(),
            sleeper: Arc::new(ThreadSleeper),
            limit: Arc::new(InFlightLimit::new(4)),
            audit: None,
            model_name: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            max_tokens: 64,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn with_max_in_flight(mut self, max: usize) -> Self {
        self.limit = Arc::new(InFlightLimit::new(max));
        self
    }

    pub fn with_audit(mut self, audit: Arc<AuditLog>) -> Self {
        self.audit = Some(audit);
        self
    }

    pub fn with_model(mut self, model_name: impl Into<String>, temperature: f64, max_tokens: u32) -> Self {
        self.model_name = model_name.into();
        self.temperature = temperature;
        self.max_tokens = max_tokens;
        self
    }

    pub fn max_in_flight(&self) -> usize {
        self.limit.max()
    }

    /// A request for `prompt` using this client's model defaults.
    pub fn request(&self, prompt: impl Into<String>) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.into(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            model_name: self.model_name.clone(),
            logprobs: false,
        }
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        self.complete_full(request).map(|c| c.text)
    }

    pub fn complete_full(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        request.validate()?;
        let mut attempts = 0;
        let result = with_retries(&self.retry, self.sleeper.as_ref(), |attempt| {
            attempts = attempt;
            let _slot = self.limit.acquire();
            self.backend.send(request)
        });
        if let Some(audit) = &self.audit {
            audit.record(&AuditEntry {
                request,
                attempts,
                response: result.as_ref().ok(),
                error: result.as_ref().err().map(ToString::to_string),
            });
        }
        result
    }

    pub fn prompt(&self, prompt: impl Into<String>) -> Result<String, GatewayError> {
        self.complete(&self.request(prompt))
    }
}

/// Maps `f` over `items` on at most `workers` threads, preserving input order.
pub fn fan_out<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *results[i].lock().unwrap() = Some(r);
            });
        }
    });
    results.into_iter().map(|m| m.into_inner().unwrap().expect("every slot filled")).collect()
}
