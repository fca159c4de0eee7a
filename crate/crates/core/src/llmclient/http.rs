use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError, TokenUsage};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model_id: String,
    pub timeout: Duration,
    pub max_attempts: u32,
    /// First backoff delay; doubles after each failed attempt.
    pub backoff: Duration,
}

impl HttpConfig {
    pub fn new(endpoint: &str, model_id: &str) -> Self {
        HttpConfig {
            endpoint: endpoint.to_string(),
            api_key: None,
            model_id: model_id.to_string(),
            timeout: Duration::from_secs(120),
            max_attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

/// Speaks the common chat-completion wire format: a `messages` array in,
/// `choices[0].message.content` out.
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend").field("endpoint", &self.config.endpoint).field("model", &self.config.model_id).finish()
    }
}

enum Attempt {
    Done(ChatResponse),
    Retry(LlmError),
    Fatal(LlmError),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, LlmError> {
        if config.max_attempts == 0 {
            return Err(LlmError::Config("max_attempts must be at least 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(HttpBackend { config, client })
    }

    fn body(&self, req: &ChatRequest) -> Value {
        let model = if req.model_id.is_empty() { &self.config.model_id } else { &req.model_id };
        let user = if req.schema_hint.is_empty() {
            req.user_content.clone()
        } else {
            format!(
                "{}\n\nReply with a single JSON document matching this schema:\n{}",
                req.user_content, req.schema_hint
            )
        };
        json!({
            "model": model,
            "messages": [
                { "role": "system", "content": req.system_prompt },
                { "role": "user", "content": user },
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        })
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut rb = self.client.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.config.api_key {
            rb = rb.bearer_auth(key);
        }
        let started = Instant::now();
        let resp = match rb.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(LlmError::Timeout(self.config.timeout.as_secs())),
            Err(e) => return Attempt::Retry(LlmError::Transport(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) if e.is_timeout() => return Attempt::Retry(LlmError::Timeout(self.config.timeout.as_secs())),
            Err(e) => return Attempt::Retry(LlmError::Transport(e.to_string())),
        };
        let latency_ms = started.elapsed().as_millis() as u64;
        match status {
            200..=299 => match parse_completion(&text) {
                Ok((text, token_usage)) => Attempt::Done(ChatResponse { text, token_usage, latency_ms }),
                Err(e) => Attempt::Fatal(e),
            },
            401 | 403 => Attempt::Fatal(LlmError::Auth(status)),
            429 | 500..=599 => Attempt::Retry(LlmError::Http { status, body: truncate(&text) }),
            _ => Attempt::Fatal(LlmError::Http { status, body: truncate(&text) }),
        }
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(500).collect()
}

fn parse_completion(text: &str) -> Result<(String, TokenUsage), LlmError> {
    let v: Value = serde_json::from_str(text).map_err(|e| LlmError::BadResponse(e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::BadResponse("missing choices[0].message.content".into()))?;
    let usage = TokenUsage {
        prompt: v.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion: v.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    };
    Ok((content.to_string(), usage))
}

impl ChatBackend for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let body = self.body(req);
        let started = Instant::now();
        let mut delay = self.config.backoff;
        let mut last = LlmError::Transport("no attempt made".into());
        for attempt in 1..=self.config.max_attempts {
            match self.attempt(&body) {
                Attempt::Done(mut r) => {
                    r.latency_ms = started.elapsed().as_millis() as u64;
                    return Ok(r);
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => last = e,
            }
            if attempt < self.config.max_attempts {
                std::thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(last)
    }

    fn name(&self) -> &str {
        "http"
    }
}
