//! Vision-chat endpoint client.
//!
//! Requests are content-addressed by the SHA-256 of their JSON body, so a
//! repeated prompt is answered from the cache without a network call or cost.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::cache::ResponseCache;
use super::ledger::{BudgetExceeded, Cost, Ledger, LedgerEntry};
use super::response::{parse_response, ParseMode};
use super::{QueryRecord, QueryStatus};
use crate::context::ContextVocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub endpoint_url: String,
    pub model: String,
    /// Environment variable holding the bearer credential.
    pub api_key_env: String,
    /// Maximum number of attempts per request, including the first.
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    pub timeout_ms: u64,
    /// Minimum spacing between request starts across all workers.
    pub min_interval_ms: u64,
    pub budget_cap: f64,
    pub cost_per_call: f64,
    pub cost_per_1k_prompt_tokens: f64,
    pub cost_per_1k_completion_tokens: f64,
    pub concurrency: usize,
    pub temperature: f64,
    /// Extra request fields passed through untouched.
    pub extra: serde_json::Map<String, Value>,
    pub parse_mode: ParseMode,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            endpoint_url: "http://127.0.0.1:8080/v1/chat".into(),
            model: "vision-chat".into(),
            api_key_env: "LLM_API_KEY".into(),
            max_retries: 5,
            backoff_base_ms: 500,
            backoff_max_ms: 30_000,
            timeout_ms: 120_000,
            min_interval_ms: 0,
            budget_cap: 100.0,
            cost_per_call: 0.10,
            cost_per_1k_prompt_tokens: 0.0,
            cost_per_1k_completion_tokens: 0.0,
            concurrency: 4,
            temperature: 0.0,
            extra: serde_json::Map::new(),
            parse_mode: ParseMode::Lenient,
        }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("api error: HTTP {status} after {attempts} attempt(s): {body}")]
    Api { status: u16, attempts: u32, body: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error(transparent)]
    BudgetExceeded(#[from] BudgetExceeded),
    #[error("cache error: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpRequest {
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("{0}")]
    Connection(String),
}

pub trait Transport: Send + Sync {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

/// Adapts a closure into a [`Transport`]; handy for local stubs and tests.
pub struct FnTransport<F>(pub F);

impl<F> Transport for FnTransport<F>
where
    F: Fn(&HttpRequest) -> Result<HttpResponse, TransportError> + Send + Sync,
{
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        (self.0)(req)
    }
}

/// Blocking HTTP transport.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new() -> Self {
        UreqTransport { agent: ureq::AgentBuilder::new().build() }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new()
    }
}

fn is_timeout(err: &ureq::Transport) -> bool {
    let mut source = std::error::Error::source(err);
    while let Some(e) = source {
        if let Some(io) = e.downcast_ref::<std::io::Error>() {
            if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) {
                return true;
            }
        }
        source = e.source();
    }
    err.to_string().contains("timed out")
}

impl Transport for UreqTransport {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let mut call = self.agent.post(&req.url).timeout(req.timeout);
        for (k, v) in &req.headers {
            call = call.set(k, v);
        }
        let read_body = |resp: ureq::Response| -> Result<HttpResponse, TransportError> {
            let status = resp.status();
            let mut body = Vec::new();
            std::io::Read::read_to_end(&mut resp.into_reader(), &mut body)
                .map_err(|e| TransportError::Connection(e.to_string()))?;
            Ok(HttpResponse { status, body })
        };
        match call.send_bytes(&req.body) {
            Ok(resp) => read_body(resp),
            Err(ureq::Error::Status(_, resp)) => read_body(resp),
            Err(ureq::Error::Transport(t)) if is_timeout(&t) => Err(TransportError::Timeout),
            Err(ureq::Error::Transport(t)) => Err(TransportError::Connection(t.to_string())),
        }
    }
}

/// Enforces a minimum spacing between request starts.
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(interval: Duration) -> Self {
        RateLimiter { interval, next: Mutex::new(None) }
    }

    /// How long the caller must wait before starting; books the slot.
    pub fn acquire(&self) -> Duration {
        if self.interval.is_zero() {
            return Duration::ZERO;
        }
        let now = Instant::now();
        let mut next = self.next.lock().expect("rate limiter lock");
        let start = match *next {
            Some(t) if t > now => t,
            _ => now,
        };
        *next = Some(start + self.interval);
        start - now
    }
}

/// The text and PNG bytes of one prompt.
#[derive(Debug, Clone, Copy)]
pub struct PromptPayload<'a> {
    pub text: &'a str,
    pub png: &'a [u8],
}

/// The JSON request body; the credential is never part of it.
pub fn request_body(cfg: &EndpointConfig, payload: PromptPayload<'_>) -> Vec<u8> {
    let image = base64::engine::general_purpose::STANDARD.encode(payload.png);
    let mut body = json!({
        "model": cfg.model,
        "temperature": cfg.temperature,
        "messages": [{
            "role": "user",
            "content": [
                {"type": "text", "text": payload.text},
                {"type": "image", "source": {"type": "base64", "media_type": "image/png", "data": image}},
            ],
        }],
    });
    if let Value::Object(map) = &mut body {
        for (k, v) in &cfg.extra {
            map.entry(k.clone()).or_insert_with(|| v.clone());
        }
    }
    serde_json::to_vec(&body).expect("request body serializes")
}

/// Hex SHA-256 of a request body; the cache key.
pub fn request_hash(body: &[u8]) -> String {
    hex::encode(Sha256::digest(body))
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

pub struct LlmClient {
    cfg: EndpointConfig,
    vocab: ContextVocabulary,
    transport: Box<dyn Transport>,
    cache: Option<ResponseCache>,
    ledger: Arc<Ledger>,
    limiter: RateLimiter,
    api_key: Option<String>,
    sleep: Sleeper,
    network_calls: AtomicUsize,
}

impl LlmClient {
    pub fn new(cfg: EndpointConfig, vocab: ContextVocabulary, transport: Box<dyn Transport>) -> Self {
        let api_key = std::env::var(&cfg.api_key_env).ok();
        let ledger = Arc::new(Ledger::new(Cost::from_units(cfg.budget_cap)));
        let limiter = RateLimiter::new(Duration::from_millis(cfg.min_interval_ms));
        LlmClient {
            cfg,
            vocab,
            transport,
            cache: None,
            ledger,
            limiter,
            api_key,
            sleep: Arc::new(std::thread::sleep),
            network_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_ledger(mut self, ledger: Arc<Ledger>) -> Self {
        self.ledger = ledger;
        self
    }

    pub fn with_sleeper(mut self, sleep: Sleeper) -> Self {
        self.sleep = sleep;
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn ledger(&self) -> &Arc<Ledger> {
        &self.ledger
    }

    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn estimate(&self, prompt_tokens: u64, completion_tokens: u64) -> Cost {
        let units = self.cfg.cost_per_call
            + self.cfg.cost_per_1k_prompt_tokens * prompt_tokens as f64 / 1000.0
            + self.cfg.cost_per_1k_completion_tokens * completion_tokens as f64 / 1000.0;
        Cost::from_units(units)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt.saturating_sub(1)).min(20);
        Duration::from_millis(self.cfg.backoff_base_ms.saturating_mul(factor).min(self.cfg.backoff_max_ms))
    }

    /// Sends one prompt, retrying transient failures with exponential backoff.
    pub fn query(&self, scenario_id: &str, payload: PromptPayload<'_>) -> Result<QueryRecord, LlmError> {
        let body = request_body(&self.cfg, payload);
        let request_hash = request_hash(&body);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&request_hash)) {
            return Ok(hit);
        }

        let prompt_estimate = (payload.text.len() as u64).div_ceil(4);
        let reservation = self.ledger.reserve(self.estimate(prompt_estimate, 0))?;

        let mut headers = vec![("Content-Type".to_string(), "application/json".to_string())];
        if let Some(key) = &self.api_key {
            headers.push(("Authorization".to_string(), format!("Bearer {key}")));
        }
        let req = HttpRequest {
            url: self.cfg.endpoint_url.clone(),
            headers,
            body,
            timeout: Duration::from_millis(self.cfg.timeout_ms),
        };

        let max_attempts = self.cfg.max_retries.max(1);
        let mut attempts = 0;
        let response = loop {
            attempts += 1;
            let wait = self.limiter.acquire();
            if !wait.is_zero() {
                (self.sleep)(wait);
            }
            self.network_calls.fetch_add(1, Ordering::SeqCst);
            let outcome = self.transport.send(&req);
            let transient = match &outcome {
                Ok(r) if (200..300).contains(&r.status) => break r.body.clone(),
                Ok(r) => matches!(r.status, 408 | 429 | 500..=599),
                Err(_) => true,
            };
            if !transient || attempts >= max_attempts {
                self.ledger.release(reservation);
                return Err(match outcome {
                    Ok(r) => LlmError::Api {
                        status: r.status,
                        attempts,
                        body: String::from_utf8_lossy(&r.body).chars().take(500).collect(),
                    },
                    Err(TransportError::Timeout) => LlmError::Timeout { attempts },
                    Err(TransportError::Connection(message)) => LlmError::Transport { attempts, message },
                });
            }
            (self.sleep)(self.backoff(attempts));
        };

        let (response_text, usage) = extract_text(&response);
        let prompt_tokens = usage.map(|u| u.0).unwrap_or(prompt_estimate);
        let completion_tokens = usage.map(|u| u.1).unwrap_or((response_text.len() as u64).div_ceil(4));
        let cost = self.estimate(prompt_tokens, completion_tokens);

        let (status, parsed, unparsed_words, error) = match parse_response(&response_text, &self.vocab, self.cfg.parse_mode) {
            Ok(p) => (QueryStatus::Ok, Some(p.context), p.unparsed_words, None),
            Err(e) => (QueryStatus::ParseFailed, None, Vec::new(), Some(e.to_string())),
        };
        let record = QueryRecord {
            scenario_id: scenario_id.to_string(),
            request_hash: request_hash.clone(),
            response_text,
            parsed,
            unparsed_words,
            prompt_tokens,
            completion_tokens,
            estimated_cost: cost,
            attempts,
            status,
            error,
        };
        self.ledger.settle(
            reservation,
            LedgerEntry { scenario_id: scenario_id.to_string(), request_hash, cost },
        );
        if let Some(cache) = &self.cache {
            cache.put(&record).map_err(|e| LlmError::Cache(e.to_string()))?;
        }
        Ok(record)
    }

    /// Runs `items` with at most `concurrency` requests in flight. Once the
    /// budget is exhausted no further requests start; their slots report
    /// `BudgetExceeded`.
    pub fn query_batch(&self, items: &[(String, Vec<u8>, String)]) -> Vec<Result<QueryRecord, LlmError>> {
        let n = items.len();
        let workers = self.cfg.concurrency.max(1).min(n.max(1));
        let next = AtomicUsize::new(0);
        let stop = AtomicBool::new(false);
        let slots: Mutex<Vec<Option<Result<QueryRecord, LlmError>>>> = Mutex::new((0..n).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= n {
                        break;
                    }
                    let (id, png, text) = &items[i];
                    let result = if stop.load(Ordering::SeqCst) {
                        Err(LlmError::BudgetExceeded(BudgetExceeded {
                            spent: self.ledger.total(),
                            reserved: Cost::ZERO,
                            estimate: Cost::ZERO,
                            cap: self.ledger.cap(),
                        }))
                    } else {
                        self.query(id, PromptPayload { text, png })
                    };
                    if matches!(result, Err(LlmError::BudgetExceeded(_))) {
                        stop.store(true, Ordering::SeqCst);
                    }
                    slots.lock().expect("slots lock")[i] = Some(result);
                });
            }
        });
        slots
            .into_inner()
            .expect("slots lock")
            .into_iter()
            .map(|r| r.expect("every slot filled"))
            .collect()
    }
}

/// Pulls the answer text and `(prompt, completion)` token usage out of a
/// chat-style response body. Falls back to the raw body for non-JSON replies.
fn extract_text(body: &[u8]) -> (String, Option<(u64, u64)>) {
    let Ok(v) = serde_json::from_slice::<Value>(body) else {
        return (String::from_utf8_lossy(body).into_owned(), None);
    };
    let join_parts = |c: &Value| -> Option<String> {
        match c {
            Value::String(s) => Some(s.clone()),
            Value::Array(parts) => Some(
                parts
                    .iter()
                    .filter_map(|p| p.get("text").and_then(Value::as_str))
                    .collect::<Vec<_>>()
                    .join("\n"),
            ),
            _ => None,
        }
    };
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(join_parts)
        .or_else(|| v.get("content").and_then(join_parts))
        .or_else(|| v.get("output_text").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| String::from_utf8_lossy(body).into_owned());
    let usage = v.get("usage").and_then(|u| {
        let p = u.get("prompt_tokens").or_else(|| u.get("input_tokens"))?.as_u64()?;
        let c = u.get("completion_tokens").or_else(|| u.get("output_tokens"))?.as_u64()?;
        Some((p, c))
    });
    (text, usage)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_openai_and_anthropic_shapes() {
        let a = br#"{"choices":[{"message":{"content":"hi"}}],"usage":{"prompt_tokens":3,"completion_tokens":1}}"#;
        assert_eq!(extract_text(a), ("hi".to_string(), Some((3, 1))));
        let b = br#"{"content":[{"type":"text","text":"yo"}],"usage":{"input_tokens":5,"output_tokens":2}}"#;
        assert_eq!(extract_text(b), ("yo".to_string(), Some((5, 2))));
        assert_eq!(extract_text(b"plain").0, "plain");
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let cfg = EndpointConfig { backoff_base_ms: 100, backoff_max_ms: 350, ..EndpointConfig::default() };
        let c = LlmClient::new(cfg, ContextVocabulary::default(), Box::new(FnTransport(|_: &HttpRequest| {
            Err(TransportError::Timeout)
        })));
        let ms: Vec<u128> = (1..=4).map(|a| c.backoff(a).as_millis()).collect();
        assert_eq!(ms, vec![100, 200, 350, 350]);
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let rl = RateLimiter::new(Duration::from_millis(50));
        assert_eq!(rl.acquire(), Duration::ZERO);
        let w = rl.acquire();
        assert!(w > Duration::from_millis(40) && w <= Duration::from_millis(50), "{w:?}");
    }
}
