//! HTTP client for an embedding and scoring service.
//!
//! Endpoints: `POST /embed`, `POST /score`, `POST /tokenize`, `GET /health`,
//! all JSON. At most `max_in_flight` requests run at once across every
//! clone of a client. Timeouts, connection failures and 5xx responses are
//! retried with exponential backoff and jitter; 4xx responses are not.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use ehrtext_core::embed::{yes_probability, DecoderScorer, EmbeddingProvider, EmbeddingVector, ProviderError};
use ehrtext_core::serialize::{TokenCountError, TokenCounter};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::ProviderConfig;

pub const PROVIDER_ID: &str = "remote";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EmbedRequest {
    pub model: String,
    pub instruction: String,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EmbedResponse {
    pub dim: usize,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScoreRequest {
    pub model: String,
    pub prompt: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScoreResponse {
    pub p_yes: f64,
    pub p_no: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TokenizeRequest {
    pub model: String,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TokenizeResponse {
    pub n_tokens: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HealthResponse {
    pub status: String,
    pub models: Vec<String>,
}

#[derive(Debug)]
struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore { free: Mutex::new(n), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore lock") += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Delay before the first retry; doubles each attempt.
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, base_delay: Duration::from_millis(200), max_delay: Duration::from_secs(10) }
    }
}

impl RetryPolicy {
    /// Full-range jitter between half and the whole exponential delay.
    fn delay(&self, attempt: u32) -> Duration {
        let exp = self.base_delay.saturating_mul(1u32 << attempt.min(16)).min(self.max_delay);
        exp.mul_f64(rand::thread_rng().gen_range(0.5..=1.0))
    }
}

fn to_json<T: Serialize>(body: &T) -> serde_json::Value {
    serde_json::to_value(body).expect("request bodies serialize")
}

enum Failure {
    Retry(String),
    Fatal(ProviderError),
}

#[derive(Debug, Clone)]
pub struct RemoteClient {
    agent: ureq::Agent,
    base_url: String,
    model: String,
    retry: RetryPolicy,
    in_flight: Arc<Semaphore>,
}

impl RemoteClient {
    pub fn new(base_url: &str, model: &str, timeout: Duration, max_in_flight: usize, retry: RetryPolicy) -> Self {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        RemoteClient {
            agent,
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            retry,
            in_flight: Arc::new(Semaphore::new(max_in_flight.max(1))),
        }
    }

    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, ProviderError> {
        let url = cfg.url.as_deref().ok_or_else(|| ProviderError::Config("no provider URL configured".into()))?;
        let retry = RetryPolicy { max_retries: cfg.max_retries, ..RetryPolicy::default() };
        Ok(RemoteClient::new(url, &cfg.model, cfg.timeout(), cfg.max_in_flight, retry))
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    fn attempt<Resp: DeserializeOwned>(&self, path: &str, body: Option<&serde_json::Value>) -> Result<Resp, Failure> {
        let url = format!("{}{path}", self.base_url);
        let _permit = self.in_flight.acquire();
        let sent = match body {
            Some(b) => self.agent.post(&url).send_json(b),
            None => self.agent.get(&url).call(),
        };
        let mut resp = match sent {
            Ok(r) => r,
            Err(e) => return Err(Failure::Retry(format!("{url}: {e}"))),
        };
        let status = resp.status().as_u16();
        if status >= 500 {
            return Err(Failure::Retry(format!("{url}: HTTP {status}")));
        }
        if status >= 400 {
            let message = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Failure::Fatal(ProviderError::Rejected { status, message }));
        }
        resp.body_mut()
            .read_json::<Resp>()
            .map_err(|e| Failure::Fatal(ProviderError::Integrity(format!("{url}: malformed response: {e}"))))
    }

    fn request<Resp: DeserializeOwned>(&self, path: &str, body: Option<&serde_json::Value>) -> Result<Resp, ProviderError> {
        let mut attempt = 0;
        loop {
            match self.attempt(path, body) {
                Ok(r) => return Ok(r),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(msg)) if attempt >= self.retry.max_retries => {
                    return Err(ProviderError::Unavailable(format!("{msg} (after {} attempts)", attempt + 1)));
                }
                Err(Failure::Retry(_)) => {
                    std::thread::sleep(self.retry.delay(attempt));
                    attempt += 1;
                }
            }
        }
    }

    pub fn embed_raw(&self, instruction: &str, text: &str) -> Result<EmbedResponse, ProviderError> {
        let req = EmbedRequest { model: self.model.clone(), instruction: instruction.into(), text: text.into() };
        self.request("/embed", Some(&to_json(&req)))
    }

    pub fn score_raw(&self, prompt: &str) -> Result<ScoreResponse, ProviderError> {
        self.request("/score", Some(&to_json(&ScoreRequest { model: self.model.clone(), prompt: prompt.into() })))
    }

    pub fn tokenize(&self, text: &str) -> Result<usize, ProviderError> {
        let req = TokenizeRequest { model: self.model.clone(), text: text.into() };
        let r: TokenizeResponse = self.request("/tokenize", Some(&to_json(&req)))?;
        Ok(r.n_tokens)
    }

    pub fn health(&self) -> Result<HealthResponse, ProviderError> {
        self.request("/health", None)
    }
}

/// Embedding provider backed by `/embed`. With a declared dimension of 0
/// the first response fixes it.
#[derive(Debug)]
pub struct RemoteEmbedder {
    client: RemoteClient,
    dim: AtomicUsize,
}

impl RemoteEmbedder {
    pub fn new(client: RemoteClient, declared_dim: usize) -> Self {
        RemoteEmbedder { client, dim: AtomicUsize::new(declared_dim) }
    }

    pub fn client(&self) -> &RemoteClient {
        &self.client
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn provider_id(&self) -> &str {
        PROVIDER_ID
    }

    fn model_id(&self) -> &str {
        self.client.model()
    }

    fn dim(&self) -> usize {
        self.dim.load(Ordering::Acquire)
    }

    fn embed(&self, instruction: &str, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let r = self.client.embed_raw(instruction, text)?;
        if r.vector.len() != r.dim {
            return Err(ProviderError::Integrity(format!("response declares dim {} but carries {} values", r.dim, r.vector.len())));
        }
        let declared = match self.dim.compare_exchange(0, r.dim, Ordering::AcqRel, Ordering::Acquire) {
            Ok(_) => r.dim,
            Err(d) => d,
        };
        let v = EmbeddingVector::new(r.vector.iter().map(|&x| x as f32).collect(), PROVIDER_ID, self.client.model());
        v.check(declared)?;
        Ok(v)
    }
}

/// Yes/No scoring through `/score`.
#[derive(Debug, Clone)]
pub struct RemoteScorer(pub RemoteClient);

impl DecoderScorer for RemoteScorer {
    fn score(&self, prompt: &str) -> Result<f64, ProviderError> {
        let r = self.0.score_raw(prompt)?;
        yes_probability(r.p_yes, r.p_no)
    }
}

/// Token counts from `/tokenize`, for exact budget enforcement.
#[derive(Debug, Clone)]
pub struct RemoteTokenizer(pub RemoteClient);

impl TokenCounter for RemoteTokenizer {
    fn count(&self, text: &str) -> Result<usize, TokenCountError> {
        if text.is_empty() {
            return Ok(0);
        }
        self.0.tokenize(text).map_err(|e| TokenCountError(e.to_string()))
    }
}
