use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::audit::AuditEntry;
use super::GatewayError;

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "LLM_API_KEY";
pub const CHAT_ROUTE: &str = "/v1/chat/completions";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

/// Request body of an OpenAI-compatible chat completion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn user(model: &str, prompt: &str, temperature: f64, max_tokens: u32) -> Self {
        ChatRequest {
            model: model.to_string(),
            messages: vec![Message {
                role: "user".into(),
                content: prompt.to_string(),
            }],
            temperature,
            max_tokens,
        }
    }

    /// Canonical JSON (sorted keys), used as the replay key.
    pub fn canonical(&self) -> String {
        serde_json::to_value(self).expect("request serialises").to_string()
    }
}

/// One completed call: what was sent, what came back, and when.
#[derive(Clone, Debug, PartialEq)]
pub struct ChatExchange {
    pub endpoint: String,
    pub request: ChatRequest,
    pub status: u16,
    pub raw_response: String,
    pub text: String,
    pub attempts: u32,
    pub started_ms: u128,
    pub finished_ms: u128,
}

impl ChatExchange {
    pub fn audit_entry(&self) -> AuditEntry {
        AuditEntry {
            endpoint: self.endpoint.clone(),
            request: serde_json::to_value(&self.request).expect("request serialises"),
            status: self.status,
            response: self.raw_response.clone(),
            attempts: self.attempts,
            started_ms: self.started_ms,
            finished_ms: self.finished_ms,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, GatewayError>;
}

/// Backoff before retry `i` (0-based) is `base * 2^i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.pow(retry)
    }
}

pub(crate) fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// First choice's message content.
pub fn extract_text(body: &str) -> Result<String, GatewayError> {
    let v: Value = serde_json::from_str(body).map_err(|e| GatewayError::Malformed(format!("not JSON: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| GatewayError::Malformed("missing choices[0].message.content".into()))
}

/// Full URL for an endpoint given either as a base or as the complete route.
pub fn completions_url(endpoint: &str) -> String {
    let e = endpoint.trim_end_matches('/');
    if e.ends_with("/chat/completions") {
        e.to_string()
    } else if e.ends_with("/v1") {
        format!("{e}/chat/completions")
    } else {
        format!("{e}{CHAT_ROUTE}")
    }
}

pub struct HttpBackend {
    url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

enum Attempt {
    Done(u16, String),
    Retryable(String),
}

impl HttpBackend {
    /// Reads the API key from [`API_KEY_ENV`]; a missing key sends no
    /// Authorization header.
    pub fn new(endpoint: &str, timeout: Duration, retry: RetryPolicy) -> Result<Self, GatewayError> {
        Self::with_key(endpoint, std::env::var(API_KEY_ENV).ok(), timeout, retry)
    }

    pub fn with_key(
        endpoint: &str,
        api_key: Option<String>,
        timeout: Duration,
        retry: RetryPolicy,
    ) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Network(e.to_string()))?;
        Ok(HttpBackend {
            url: completions_url(endpoint),
            api_key,
            retry,
            client,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn attempt(&self, request: &ChatRequest) -> Result<Attempt, GatewayError> {
        let mut req = self.client.post(&self.url).json(request);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        match req.send() {
            Ok(resp) => {
                let status = resp.status().as_u16();
                let body = resp.text();
                match body {
                    Ok(body) if status == 429 || (500..600).contains(&status) => {
                        Ok(Attempt::Retryable(format!("HTTP {status}: {body}")))
                    }
                    Ok(body) => Ok(Attempt::Done(status, body)),
                    Err(e) if e.is_timeout() => Ok(Attempt::Retryable(format!("timeout reading body: {e}"))),
                    Err(e) => Err(GatewayError::Network(e.to_string())),
                }
            }
            Err(e) if e.is_timeout() || e.is_connect() => Ok(Attempt::Retryable(e.to_string())),
            Err(e) => Err(GatewayError::Network(e.to_string())),
        }
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, GatewayError> {
        let started_ms = now_ms();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(request)? {
                Attempt::Done(status, body) => {
                    if status == 401 || status == 403 {
                        return Err(GatewayError::Auth { status, body });
                    }
                    if !(200..300).contains(&status) {
                        return Err(GatewayError::Status { status, body });
                    }
                    let text = extract_text(&body)?;
                    return Ok(ChatExchange {
                        endpoint: self.url.clone(),
                        request: request.clone(),
                        status,
                        raw_response: body,
                        text,
                        attempts,
                        started_ms,
                        finished_ms: now_ms(),
                    });
                }
                Attempt::Retryable(last) => {
                    let retry = attempts - 1;
                    if retry >= self.retry.max_retries {
                        return Err(GatewayError::RetriesExhausted { attempts, last });
                    }
                    log::warn!("attempt {attempts} failed ({last}); retrying");
                    std::thread::sleep(self.retry.delay(retry));
                }
            }
        }
    }
}

/// Answers from a recorded audit log instead of the network.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    entries: HashMap<String, AuditEntry>,
}

impl ReplayBackend {
    pub fn from_entries(entries: Vec<AuditEntry>) -> Self {
        let entries = entries
            .into_iter()
            .map(|e| (e.request.to_string(), e))
            .collect();
        ReplayBackend { entries }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::from_entries(super::audit::read_audit_log(path)?))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, GatewayError> {
        let key = request.canonical();
        let e = self.entries.get(&key).ok_or(GatewayError::NotRecorded)?;
        Ok(ChatExchange {
            endpoint: e.endpoint.clone(),
            request: request.clone(),
            status: e.status,
            raw_response: e.response.clone(),
            text: extract_text(&e.response)?,
            attempts: e.attempts,
            started_ms: e.started_ms,
            finished_ms: e.finished_ms,
        })
    }
}
