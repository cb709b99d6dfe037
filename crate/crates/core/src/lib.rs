//! Chat-driven analytics over a loop-detector traffic database.
//!
//! A project manager, SQL engineer, quality analyst and data analyst agent
//! cooperate through a shared scratchpad to turn a question into validated,
//! read-only SQL, run it against the embedded store and explain the rows.
//! The `eval` module grades whole pipelines against ground-truth digests.

pub mod clock;
pub mod eval;
pub mod fewshot;
pub mod llm;
pub mod memory;
pub mod orchestrator;
pub mod prompt;
pub mod sql;
pub mod traffic;

pub use clock::{Clock, StepClock, SystemClock};
pub use fewshot::FewShotRepository;
pub use llm::{ChatModel, Embedder, LocalHashEmbedder, ScriptedProvider};
pub use memory::ChatSession;
pub use orchestrator::{FeatureFlags, Orchestrator, OrchestratorConfig, Outcome, PipelineTrace};
pub use prompt::PromptTemplate;
pub use sql::{SchemaCatalog, SqlGateway};
