//! Replays a recorded transcript, one step per call.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{estimate_tokens, ChatModel, ChatRequest, ChatResponse, FinishReason, LlmError, MessageRole, Usage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub expect_role: MessageRole,
    pub response_text: String,
    /// Optional agent label; checked against the request's agent when both are set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request: ChatRequest,
    pub response: ChatResponse,
}

#[derive(Default)]
struct Cursor {
    next: usize,
    transcript: Vec<TranscriptEntry>,
}

pub struct ScriptedProvider {
    steps: Vec<ScriptStep>,
    cursor: Mutex<Cursor>,
}

impl ScriptedProvider {
    pub fn new(steps: Vec<ScriptStep>) -> Self {
        ScriptedProvider { steps, cursor: Mutex::new(Cursor::default()) }
    }

    pub fn from_json(raw: &str) -> serde_json::Result<Self> {
        Ok(Self::new(serde_json::from_str(raw)?))
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        Self::from_json(&raw).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn steps(&self) -> &[ScriptStep] {
        &self.steps
    }

    /// Number of steps consumed so far.
    pub fn position(&self) -> usize {
        self.lock().next
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.lock().transcript.clone()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Cursor> {
        self.cursor.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }
}

impl ChatModel for ScriptedProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.check()?;
        let mut cursor = self.lock();
        let index = cursor.next;
        let step = self.steps.get(index).ok_or(LlmError::ScriptExhausted { steps: self.steps.len() })?;
        let role = request.last_role().expect("checked non-empty");
        if role != step.expect_role {
            return Err(LlmError::ScriptMismatch {
                step: index,
                expected: format!("{:?} message", step.expect_role),
                actual: format!("{role:?} message"),
            });
        }
        if let (Some(expected), Some(actual)) = (&step.agent, &request.agent) {
            if expected != actual {
                return Err(LlmError::ScriptMismatch { step: index, expected: expected.clone(), actual: actual.clone() });
            }
        }
        let response = ChatResponse {
            content: step.response_text.clone(),
            finish_reason: FinishReason::Stop,
            usage: Usage { prompt_tokens: request.token_estimate(), output_tokens: estimate_tokens(&step.response_text) },
        };
        cursor.next += 1;
        cursor.transcript.push(TranscriptEntry { request: request.clone(), response: response.clone() });
        Ok(response)
    }
}

/// Builds fixture step lists.
#[derive(Debug, Clone, Default)]
pub struct ScriptBuilder {
    steps: Vec<ScriptStep>,
}

impl ScriptBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a reply to a user message from `agent`.
    pub fn reply(mut self, agent: &str, text: impl Into<String>) -> Self {
        self.steps.push(ScriptStep {
            expect_role: MessageRole::User,
            response_text: text.into(),
            agent: Some(agent.to_string()),
        });
        self
    }

    /// Adds a `{thought, action, action_input}` reply.
    pub fn action(self, agent: &str, thought: &str, action: &str, action_input: &str) -> Self {
        let text = serde_json::json!({ "thought": thought, "action": action, "action_input": action_input }).to_string();
        self.reply(agent, text)
    }

    pub fn steps(&self) -> &[ScriptStep] {
        &self.steps
    }

    pub fn build(self) -> Vec<ScriptStep> {
        self.steps
    }

    pub fn provider(self) -> ScriptedProvider {
        ScriptedProvider::new(self.steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ChatMessage;

    fn request(text: &str) -> ChatRequest {
        ChatRequest::new(vec![ChatMessage::system("sys"), ChatMessage::user(text)]).unwrap()
    }

    fn fixture() -> &'static str {
        r#"[{"expect_role":"user","response_text":"one"},
            {"expect_role":"user","response_text":"two","agent":"sql_engineer"},
            {"expect_role":"user","response_text":"three"}]"#
    }

    #[test]
    fn replays_verbatim_then_exhausts() {
        let p = ScriptedProvider::from_json(fixture()).unwrap();
        assert_eq!(p.complete(&request("a")).unwrap().content, "one");
        assert_eq!(p.complete(&request("b").with_agent("sql_engineer")).unwrap().content, "two");
        assert_eq!(p.complete(&request("c")).unwrap().content, "three");
        assert_eq!(p.complete(&request("d")), Err(LlmError::ScriptExhausted { steps: 3 }));
        assert_eq!(p.position(), 3);
    }

    #[test]
    fn identical_runs_identical_transcripts() {
        let run = || {
            let p = ScriptedProvider::from_json(fixture()).unwrap();
            for q in ["a", "b", "c"] {
                p.complete(&request(q)).unwrap();
            }
            serde_json::to_string(&p.transcript()).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn role_and_agent_mismatch() {
        let p = ScriptedProvider::from_json(fixture()).unwrap();
        let bad = ChatRequest::new(vec![ChatMessage::assistant("x")]).unwrap();
        assert!(matches!(p.complete(&bad), Err(LlmError::ScriptMismatch { step: 0, .. })));
        p.complete(&request("a")).unwrap();
        assert!(matches!(
            p.complete(&request("b").with_agent("data_analyst")),
            Err(LlmError::ScriptMismatch { step: 1, .. })
        ));
    }

    #[test]
    fn builder_emits_json_actions() {
        let steps = ScriptBuilder::new().action("project_manager", "t", "query_database", "q").build();
        let v: serde_json::Value = serde_json::from_str(&steps[0].response_text).unwrap();
        assert_eq!(v["action"], "query_database");
        assert_eq!(steps[0].agent.as_deref(), Some("project_manager"));
    }
}
