use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{LlmBackend, LlmError, LlmRequest, LlmResponse, Usage};

#[derive(Clone, Debug)]
pub struct HttpConfig {
    /// Base URL; `/chat/completions` is appended.
    pub api_base: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub max_transport_retries: u32,
    pub backoff_base: Duration,
    /// `None` disables the limiter.
    pub requests_per_minute: Option<u32>,
}

impl HttpConfig {
    pub fn new(api_base: impl Into<String>, model: impl Into<String>) -> HttpConfig {
        HttpConfig {
            api_base: api_base.into(),
            api_key: None,
            model: model.into(),
            timeout: Duration::from_secs(300),
            max_transport_retries: 3,
            backoff_base: Duration::from_millis(500),
            requests_per_minute: None,
        }
    }

    /// Reads `LLM_API_BASE`, `LLM_API_KEY` and `LLM_MODEL`.
    pub fn from_env() -> Result<HttpConfig, String> {
        let base = std::env::var("LLM_API_BASE").map_err(|_| "LLM_API_BASE is not set".to_string())?;
        let model = std::env::var("LLM_MODEL").map_err(|_| "LLM_MODEL is not set".to_string())?;
        let mut cfg = HttpConfig::new(base, model);
        cfg.api_key = std::env::var("LLM_API_KEY").ok().filter(|k| !k.is_empty());
        Ok(cfg)
    }
}

/// Chat-completions client over HTTP(S).
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    next_slot: Mutex<Instant>,
}

enum Attempt {
    Done(Result<LlmResponse, LlmError>),
    Retry(String),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<HttpBackend, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::Transport { message: e.to_string(), retries: 0 })?;
        Ok(HttpBackend { config, client, next_slot: Mutex::new(Instant::now()) })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.api_base.trim_end_matches('/'))
    }

    fn wait_for_slot(&self) {
        let Some(rpm) = self.config.requests_per_minute.filter(|r| *r > 0) else { return };
        let interval = Duration::from_secs(60) / rpm;
        let wait = {
            let mut next = self.next_slot.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + interval;
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }

    fn attempt(&self, body: &Value) -> Attempt {
        self.wait_for_slot();
        let started = Instant::now();
        let mut builder = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = match builder.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Attempt::Done(Err(LlmError::Auth(text)));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Attempt::Retry(format!("HTTP {status}: {text}"));
        }
        if !status.is_success() {
            return Attempt::Done(Err(LlmError::Api { status: status.as_u16(), body: text }));
        }
        Attempt::Done(parse_completion(&text).map(|(content, usage)| LlmResponse {
            text: content,
            usage,
            latency: started.elapsed(),
            transport_retries: 0,
        }))
    }
}

fn parse_completion(body: &str) -> Result<(String, Option<Usage>), LlmError> {
    let v: Value = serde_json::from_str(body).map_err(|e| LlmError::Malformed(e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .ok_or_else(|| LlmError::Malformed("missing choices[0].message.content".into()))?;
    // a null content (e.g. a refusal) is an empty reply, not a transport problem
    let text = content.as_str().unwrap_or_default().to_string();
    let usage = v.get("usage").and_then(|u| serde_json::from_value(u.clone()).ok());
    Ok((text, usage))
}

impl LlmBackend for HttpBackend {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let mut body = json!({ "model": self.config.model, "messages": req.messages });
        if let Some(t) = req.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(m) = req.max_tokens {
            body["max_tokens"] = json!(m);
        }
        let mut retries = 0;
        loop {
            match self.attempt(&body) {
                Attempt::Done(Ok(mut r)) => {
                    r.transport_retries = retries;
                    return Ok(r);
                }
                Attempt::Done(Err(e)) => return Err(e),
                Attempt::Retry(message) => {
                    if retries >= self.config.max_transport_retries {
                        return Err(LlmError::Transport { message, retries });
                    }
                    let delay = self.config.backoff_base * 2u32.saturating_pow(retries);
                    log::warn!("transport failure ({message}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    retries += 1;
                }
            }
        }
    }

    fn model_id(&self) -> &str {
        &self.config.model
    }
}
