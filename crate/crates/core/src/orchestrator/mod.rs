//! The four-agent question answering pipeline.

mod pipeline;
mod reply;

use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::LlmError;
use crate::prompt::{AgentRole, PromptError};
use crate::sql::{ExecutionError, QueryResult, ValidationReport, DEFAULT_MAX_ROWS};

pub use pipeline::{Orchestrator, StateObserver};
pub use reply::{parse_agent_reply, AgentReply};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureFlags {
    pub prompt_on: bool,
    pub fewshot_on: bool,
    pub multiagent_on: bool,
}

impl Default for FeatureFlags {
    fn default() -> Self {
        FeatureFlags { prompt_on: true, fewshot_on: true, multiagent_on: true }
    }
}

impl FeatureFlags {
    /// Full system plus one variant per disabled feature.
    pub fn ablation_matrix() -> [(&'static str, FeatureFlags); 4] {
        let full = FeatureFlags::default();
        [
            ("full", full),
            ("no_prompt", FeatureFlags { prompt_on: false, ..full }),
            ("no_fewshot", FeatureFlags { fewshot_on: false, ..full }),
            ("no_multiagent", FeatureFlags { multiagent_on: false, ..full }),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestratorConfig {
    pub max_iterations: u32,
    pub fewshot_k: usize,
    pub recall_m: usize,
    pub flags: FeatureFlags,
    pub max_rows: usize,
    pub timeout_ms: u64,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            max_iterations: 5,
            fewshot_k: crate::fewshot::DEFAULT_K,
            recall_m: crate::memory::DEFAULT_RECALL,
            flags: FeatureFlags::default(),
            max_rows: DEFAULT_MAX_ROWS,
            timeout_ms: 10_000,
        }
    }
}

impl OrchestratorConfig {
    pub fn check(&self) -> Result<(), PipelineError> {
        if self.max_iterations == 0 {
            return Err(PipelineError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if self.max_rows == 0 {
            return Err(PipelineError::InvalidConfig("max_rows must be at least 1".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Upper bound on provider calls for one question.
    pub fn call_budget(&self) -> u32 {
        2 + 3 * self.max_iterations
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Plan,
    SqlDraft,
    Validation,
    Execution,
    Inspection,
    Interpretation,
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScratchpadEntry {
    pub seq: u64,
    pub agent: AgentRole,
    pub kind: EntryKind,
    pub content: String,
    pub instant: DateTime<Utc>,
}

/// Append-only log shared by the agents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scratchpad {
    entries: Vec<ScratchpadEntry>,
}

impl Scratchpad {
    pub fn append(&mut self, agent: AgentRole, kind: EntryKind, content: impl Into<String>, instant: DateTime<Utc>) {
        let seq = self.entries.last().map_or(1, |e| e.seq + 1);
        self.entries.push(ScratchpadEntry { seq, agent, kind, content: content.into(), instant });
    }

    pub fn entries(&self) -> &[ScratchpadEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_monotonic(&self) -> bool {
        self.entries.windows(2).all(|w| w[0].seq < w[1].seq)
    }

    /// Entries rendered for inclusion in a prompt.
    pub fn digest(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("[{}] {} / {:?}:\n{}", e.seq, e.agent, e.kind, e.content))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineState {
    Plan,
    Chat,
    GenerateSql,
    Validate,
    Execute,
    Inspect,
    Replan,
    Interpret,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlAttempt {
    pub sql: String,
    pub validation: ValidationReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<QueryResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ExecutionError>,
}

impl SqlAttempt {
    pub fn executed(&self) -> bool {
        self.result.is_some() || self.error.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Answered,
    ChatOnly,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub question: String,
    pub scratchpad: Scratchpad,
    pub sql_attempts: Vec<SqlAttempt>,
    pub final_answer: String,
    pub outcome: Outcome,
    pub iterations_used: u32,
    pub feature_flags: FeatureFlags,
    pub states: Vec<PipelineState>,
    pub provider_calls: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl PipelineTrace {
    pub fn new(question: &str, flags: FeatureFlags) -> Self {
        PipelineTrace {
            question: question.to_string(),
            scratchpad: Scratchpad::default(),
            sql_attempts: Vec::new(),
            final_answer: String::new(),
            outcome: Outcome::Failed,
            iterations_used: 0,
            feature_flags: flags,
            states: Vec::new(),
            provider_calls: 0,
            failure: None,
        }
    }

    /// The most recent successful query result.
    pub fn final_result(&self) -> Option<&QueryResult> {
        self.sql_attempts.iter().rev().find_map(|a| a.result.as_ref())
    }

    /// Every attempt that reached the engine carries a non-blocking verdict.
    pub fn executions_were_validated(&self) -> bool {
        self.sql_attempts.iter().filter(|a| a.executed()).all(|a| a.validation.verdict.allows_execution())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("provider failure: {source}")]
    Provider { source: LlmError, trace: Box<PipelineTrace> },
    #[error("prompt error: {0}")]
    Prompt(#[from] PromptError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl PipelineError {
    pub fn partial_trace(&self) -> Option<&PipelineTrace> {
        match self {
            PipelineError::Provider { trace, .. } => Some(trace),
            _ => None,
        }
    }
}
