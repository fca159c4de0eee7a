use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError, TokenUsage};

fn one() -> usize {
    1
}

/// One scripted reply. `agent` is a role name or `*`; `response` is either a
/// string sent verbatim or a JSON value sent in compact form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub agent: String,
    pub response: Value,
    #[serde(default = "one")]
    pub repeat: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ScriptEntry {
    pub fn text(&self) -> String {
        match &self.response {
            Value::String(s) => s.clone(),
            v => v.to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub entries: Vec<ScriptEntry>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))
    }
}

/// Replays a scenario strictly in order.
#[derive(Debug)]
pub struct ScriptedBackend {
    replies: Vec<(String, String)>,
    cursor: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn new(scenario: Scenario) -> Self {
        let replies = scenario
            .entries
            .iter()
            .flat_map(|e| std::iter::repeat_n((e.agent.clone(), e.text()), e.repeat))
            .collect();
        ScriptedBackend { replies, cursor: Mutex::new(0) }
    }

    pub fn calls_made(&self) -> usize {
        *self.cursor.lock().expect("cursor lock")
    }

    pub fn remaining(&self) -> usize {
        self.replies.len() - self.calls_made()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let mut cursor = self.cursor.lock().expect("cursor lock");
        let index = *cursor;
        let (agent, text) = self
            .replies
            .get(index)
            .ok_or_else(|| LlmError::ScriptExhausted { agent: req.agent.clone(), index: index + 1 })?;
        if agent != "*" && agent != &req.agent {
            return Err(LlmError::ScriptMismatch { expected: agent.clone(), got: req.agent.clone(), index: index + 1 });
        }
        *cursor += 1;
        let usage = TokenUsage {
            prompt: (req.system_prompt.len() + req.user_content.len()).div_ceil(4) as u64,
            completion: text.len().div_ceil(4) as u64,
        };
        Ok(ChatResponse { text: text.clone(), token_usage: usage, latency_ms: 0 })
    }

    fn name(&self) -> &str {
        "scripted"
    }
}
