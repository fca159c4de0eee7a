//! Chat backends behind one request/response contract, and the context
//! assembly that turns workflow state into a prompt.

mod context;
mod http;
mod scripted;

use serde::{Deserialize, Serialize};

pub use context::{assemble_context, ContextError, ContextOptions};
pub use http::{HttpBackend, HttpConfig};
pub use scripted::{ScriptEntry, ScriptedBackend, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    /// Agent role issuing the call; used by the scripted backend and the trace.
    pub agent: String,
    pub system_prompt: String,
    pub user_content: String,
    pub schema_hint: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(agent: &str, system_prompt: &str, user_content: String, schema_hint: &str) -> Self {
        ChatRequest {
            agent: agent.to_string(),
            system_prompt: system_prompt.to_string(),
            user_content,
            schema_hint: schema_hint.to_string(),
            model_id: String::new(),
            temperature: 0.0,
            max_tokens: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u64,
    pub completion: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub token_usage: TokenUsage,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("request timed out after {0} s")]
    Timeout(u64),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("script exhausted at call {index} (agent {agent})")]
    ScriptExhausted { agent: String, index: usize },
    #[error("script entry {index} is for {expected}, but {got} called")]
    ScriptMismatch { expected: String, got: String, index: usize },
    #[error("backend configuration: {0}")]
    Config(String),
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError>;
    fn name(&self) -> &str;
}

pub fn complete(backend: &dyn ChatBackend, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
    backend.complete(req)
}
