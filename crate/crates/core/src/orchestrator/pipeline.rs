use log::{debug, info};

use super::reply::{extract_sql, parse_agent_reply, AgentReply};
use super::{
    EntryKind, Outcome, OrchestratorConfig, PipelineError, PipelineState, PipelineTrace, SqlAttempt,
};
use crate::clock::Clock;
use crate::fewshot::{FewShotExample, FewShotRepository};
use crate::llm::{ChatMessage, ChatModel, ChatRequest, Embedder, LlmError};
use crate::memory::{format_recalled, ChatSession};
use crate::prompt::{render, render_minimal, AgentRole, PromptError, PromptTemplate};
use crate::sql::SqlGateway;

/// Called on every state transition, e.g. to publish progress.
pub type StateObserver<'a> = &'a (dyn Fn(PipelineState) + Sync);

pub const FAILED_ANSWER: &str = "Sorry, I could not produce a working query for this question.";
const PREVIEW_ROWS: usize = 20;
const REASK: &str =
    "Your reply was not a JSON object with the fields thought, action and action_input. Reply again with only that JSON object.";

const PLAN_ACTIONS: &[&str] = &["query_database", "chat"];
const REPLAN_ACTIONS: &[&str] = &["revise", "stop", "query_database"];
const SQL_ACTIONS: &[&str] = &["sql"];

/// Everything an agent team needs to answer one question. Borrowed so the
/// caller decides how the shared pieces are locked.
pub struct Orchestrator<'a> {
    pub gateway: &'a SqlGateway,
    pub model: &'a dyn ChatModel,
    pub embedder: &'a dyn Embedder,
    pub template: &'a PromptTemplate,
    pub fewshot: Option<&'a FewShotRepository>,
    pub clock: &'a dyn Clock,
    pub observer: Option<StateObserver<'a>>,
}

enum Stop {
    Provider(LlmError),
    Prompt(PromptError),
    Budget(u32),
    Contract(AgentRole),
}

impl From<LlmError> for Stop {
    fn from(e: LlmError) -> Self {
        Stop::Provider(e)
    }
}

impl From<PromptError> for Stop {
    fn from(e: PromptError) -> Self {
        Stop::Prompt(e)
    }
}

impl<'a> Orchestrator<'a> {
    pub fn new(
        gateway: &'a SqlGateway,
        model: &'a dyn ChatModel,
        embedder: &'a dyn Embedder,
        template: &'a PromptTemplate,
        clock: &'a dyn Clock,
    ) -> Self {
        Orchestrator { gateway, model, embedder, template, fewshot: None, clock, observer: None }
    }

    pub fn with_fewshot(mut self, repo: &'a FewShotRepository) -> Self {
        self.fewshot = Some(repo);
        self
    }

    pub fn with_observer(mut self, observer: StateObserver<'a>) -> Self {
        self.observer = Some(observer);
        self
    }

    /// Multi-agent or single-agent depending on `config.flags.multiagent_on`.
    pub fn run(
        &self,
        question: &str,
        session: &ChatSession,
        config: &OrchestratorConfig,
    ) -> Result<PipelineTrace, PipelineError> {
        if config.flags.multiagent_on {
            self.answer(question, session, config)
        } else {
            self.answer_single_agent(question, session, config)
        }
    }

    /// Plan, then generate/validate/execute/inspect until a result is
    /// accepted or the iteration budget runs out, then interpret.
    pub fn answer(
        &self,
        question: &str,
        session: &ChatSession,
        config: &OrchestratorConfig,
    ) -> Result<PipelineTrace, PipelineError> {
        let mut run = Run::start(self, question, config)?;
        let result = run.multi_agent(session);
        run.finish(result)
    }

    /// One generation, one execution, one interpretation. No inspection loop.
    pub fn answer_single_agent(
        &self,
        question: &str,
        session: &ChatSession,
        config: &OrchestratorConfig,
    ) -> Result<PipelineTrace, PipelineError> {
        let mut run = Run::start(self, question, config)?;
        let result = run.single_agent(session);
        run.finish(result)
    }
}

struct Run<'r, 'a> {
    team: &'r Orchestrator<'a>,
    config: &'r OrchestratorConfig,
    template: PromptTemplate,
    trace: PipelineTrace,
    memory: String,
}

impl<'r, 'a> Run<'r, 'a> {
    fn start(team: &'r Orchestrator<'a>, question: &str, config: &'r OrchestratorConfig) -> Result<Self, PipelineError> {
        config.check()?;
        let template = team.template.clone().with_fewshot_slots(config.fewshot_k);
        if config.flags.prompt_on {
            template.check()?;
        }
        Ok(Run { team, config, template, trace: PipelineTrace::new(question, config.flags), memory: String::new() })
    }

    fn question(&self) -> String {
        self.trace.question.clone()
    }

    fn enter(&mut self, state: PipelineState) {
        debug!("pipeline state {state:?}");
        self.trace.states.push(state);
        if let Some(observer) = self.team.observer {
            observer(state);
        }
    }

    fn note(&mut self, agent: AgentRole, kind: EntryKind, content: impl Into<String>) {
        let instant = self.team.clock.now();
        self.trace.scratchpad.append(agent, kind, content, instant);
    }

    fn finish(mut self, result: Result<(), Stop>) -> Result<PipelineTrace, PipelineError> {
        match result {
            Ok(()) => Ok(self.trace),
            Err(Stop::Budget(budget)) => {
                self.fail(format!("provider call budget of {budget} exhausted"));
                Ok(self.trace)
            }
            Err(Stop::Contract(role)) => {
                self.fail(format!("{role} reply did not follow the JSON contract after a re-ask"));
                Ok(self.trace)
            }
            Err(Stop::Prompt(e)) => Err(PipelineError::Prompt(e)),
            Err(Stop::Provider(source)) => {
                self.trace.failure = Some(format!("provider failure: {source}"));
                Err(PipelineError::Provider { source, trace: Box::new(self.trace) })
            }
        }
    }

    fn fail(&mut self, reason: String) {
        info!("pipeline failed: {reason}");
        self.trace.outcome = Outcome::Failed;
        self.trace.final_answer = FAILED_ANSWER.to_string();
        self.trace.failure = Some(reason);
        self.enter(PipelineState::Done);
    }

    fn recall(&mut self, session: &ChatSession) -> Result<(), Stop> {
        let pairs = session.recall(&self.trace.question, self.config.recall_m, self.team.embedder)?;
        if !pairs.is_empty() {
            self.memory = format!("Earlier conversation:\n{}", format_recalled(&pairs));
        }
        Ok(())
    }

    fn examples(&self) -> Result<Vec<FewShotExample>, Stop> {
        match self.team.fewshot {
            Some(repo) if self.config.flags.fewshot_on && self.config.fewshot_k > 0 => {
                Ok(repo.retrieve_examples(&self.trace.question, self.config.fewshot_k)?)
            }
            _ => Ok(Vec::new()),
        }
    }

    fn working_digest(&self) -> String {
        [self.memory.as_str(), &self.trace.scratchpad.digest()]
            .into_iter()
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    fn call(&mut self, request: &ChatRequest) -> Result<String, Stop> {
        let budget = self.config.call_budget();
        if self.trace.provider_calls >= budget {
            return Err(Stop::Budget(budget));
        }
        self.trace.provider_calls += 1;
        Ok(self.team.model.complete(request)?.content)
    }

    /// One agent turn. With prompts on, replies must follow the JSON
    /// contract (one re-ask); with prompts off, plain text is accepted.
    fn ask(
        &mut self,
        role: AgentRole,
        text: &str,
        digest: &str,
        examples: &[FewShotExample],
        actions: &[&str],
    ) -> Result<AgentReply, Stop> {
        let acceptable = |reply: &AgentReply| actions.is_empty() || actions.contains(&reply.action.as_str());
        if !self.config.flags.prompt_on {
            let mut body = String::new();
            if !examples.is_empty() {
                body.push_str("Similar questions with their SQL:\n");
                for ex in examples {
                    body.push_str(&format!("Q: {}\nSQL: {}\n", ex.question, ex.sql));
                }
                body.push('\n');
            }
            if !digest.is_empty() {
                body.push_str(digest);
                body.push_str("\n\n");
            }
            body.push_str(text);
            let prompt = render_minimal(&body, self.team.gateway.catalog());
            let request = ChatRequest::new(prompt.messages)?.with_agent(role.as_str());
            let content = self.call(&request)?;
            return Ok(parse_agent_reply(&content).filter(acceptable).unwrap_or(AgentReply {
                thought: String::new(),
                action: String::new(),
                action_input: content.trim().to_string(),
            }));
        }
        let prompt = render(&self.template, text, examples, digest, role)?;
        let mut request = ChatRequest::new(prompt.messages)?.with_agent(role.as_str());
        let content = self.call(&request)?;
        if let Some(reply) = parse_agent_reply(&content).filter(acceptable) {
            return Ok(reply);
        }
        request.messages.push(ChatMessage::assistant(content));
        request.messages.push(ChatMessage::user(REASK));
        let content = self.call(&request)?;
        parse_agent_reply(&content).filter(acceptable).ok_or(Stop::Contract(role))
    }

    /// Returns true when the question needs the database.
    fn plan(&mut self) -> Result<bool, Stop> {
        self.enter(PipelineState::Plan);
        let question = self.question();
        let memory = self.memory.clone();
        let reply = self.ask(AgentRole::ProjectManager, &question, &memory, &[], PLAN_ACTIONS)?;
        self.note(AgentRole::ProjectManager, EntryKind::Plan, describe(&reply));
        if reply.action == "chat" {
            self.enter(PipelineState::Chat);
            self.note(AgentRole::ProjectManager, EntryKind::Chat, reply.action_input.clone());
            self.trace.final_answer = reply.action_input;
            self.trace.outcome = Outcome::ChatOnly;
            self.enter(PipelineState::Done);
            return Ok(false);
        }
        Ok(true)
    }

    fn generate(&mut self, examples: &[FewShotExample]) -> Result<String, Stop> {
        self.enter(PipelineState::GenerateSql);
        let text = format!("User question: {}", self.trace.question);
        let digest = self.working_digest();
        let reply = self.ask(AgentRole::SqlEngineer, &text, &digest, examples, SQL_ACTIONS)?;
        let sql = extract_sql(&reply.action_input);
        self.note(AgentRole::SqlEngineer, EntryKind::SqlDraft, sql.clone());
        Ok(sql)
    }

    fn interpret(&mut self) -> Result<(), Stop> {
        self.enter(PipelineState::Interpret);
        let attempt = self.trace.sql_attempts.last().expect("interpret follows an execution");
        let result = attempt.result.as_ref().expect("interpret follows a successful execution");
        let text = format!(
            "User question: {}\n\nQuery:\n{}\n\nResult ({} row(s)):\n{}",
            self.trace.question,
            attempt.sql,
            result.row_count,
            result.render(PREVIEW_ROWS)
        );
        let memory = self.memory.clone();
        let reply = self.ask(AgentRole::DataAnalyst, &text, &memory, &[], &[])?;
        self.note(AgentRole::DataAnalyst, EntryKind::Interpretation, reply.action_input.clone());
        self.trace.final_answer = reply.action_input;
        self.trace.outcome = Outcome::Answered;
        self.enter(PipelineState::Done);
        Ok(())
    }

    /// Validates and, when allowed, executes `sql`. Returns the problem to
    /// inspect, or `None` when a result was obtained.
    fn attempt(&mut self, sql: String) -> Option<String> {
        self.enter(PipelineState::Validate);
        let validation = self.team.gateway.validate(&sql);
        self.note(AgentRole::QualityAnalyst, EntryKind::Validation, format!("{}\n{}", validation.verdict, validation.summary()));
        if validation.verdict.is_blocking() {
            let problem = format!("The validator rejected the query.\n{}", validation.summary());
            self.trace.sql_attempts.push(SqlAttempt { sql, validation, result: None, error: None });
            return Some(problem);
        }
        self.enter(PipelineState::Execute);
        match self.team.gateway.execute(&sql, self.config.max_rows, self.config.timeout()) {
            Ok(result) => {
                self.note(
                    AgentRole::QualityAnalyst,
                    EntryKind::Execution,
                    format!("{}\n{}", result.execution_log, result.render(PREVIEW_ROWS)),
                );
                self.trace.sql_attempts.push(SqlAttempt { sql, validation, result: Some(result), error: None });
                None
            }
            Err(error) => {
                let problem = format!("The database rejected the query.\n{}", error.log);
                self.note(AgentRole::QualityAnalyst, EntryKind::Execution, error.log.clone());
                self.trace.sql_attempts.push(SqlAttempt { sql, validation, result: None, error: Some(error) });
                Some(problem)
            }
        }
    }

    fn multi_agent(&mut self, session: &ChatSession) -> Result<(), Stop> {
        self.recall(session)?;
        if !self.plan()? {
            return Ok(());
        }
        let examples = self.examples()?;
        let max = self.config.max_iterations;
        let mut empty_retry_left = true;
        loop {
            self.trace.iterations_used += 1;
            let iteration = self.trace.iterations_used;
            let sql = self.generate(&examples)?;
            let problem = match self.attempt(sql.clone()) {
                Some(problem) => problem,
                None => {
                    let empty = self.trace.final_result().is_some_and(|r| r.row_count == 0);
                    if !(empty && empty_retry_left && iteration < max) {
                        return self.interpret();
                    }
                    empty_retry_left = false;
                    "The query ran but returned no rows. Check filters, literal values and date ranges.".to_string()
                }
            };
            if iteration >= max {
                self.fail(format!("iteration budget of {max} exhausted"));
                return Ok(());
            }
            self.enter(PipelineState::Inspect);
            let text = format!("User question: {}\n\nQuery under inspection:\n{sql}\n\nProblem:\n{problem}", self.trace.question);
            let digest = self.trace.scratchpad.digest();
            let inspection = self.ask(AgentRole::QualityAnalyst, &text, &digest, &[], &[])?;
            self.note(AgentRole::QualityAnalyst, EntryKind::Inspection, inspection.action_input.clone());

            self.enter(PipelineState::Replan);
            let text = format!(
                "User question: {}\n\nAttempt {iteration} of {max} failed. The quality analyst advises:\n{}\n\nShould the engineer revise the query or should the team stop?",
                self.trace.question, inspection.action_input
            );
            let digest = self.trace.scratchpad.digest();
            let replan = self.ask(AgentRole::ProjectManager, &text, &digest, &[], REPLAN_ACTIONS)?;
            self.note(AgentRole::ProjectManager, EntryKind::Plan, describe(&replan));
            if replan.action == "stop" {
                self.fail(format!("project manager stopped after attempt {iteration}"));
                return Ok(());
            }
        }
    }

    fn single_agent(&mut self, session: &ChatSession) -> Result<(), Stop> {
        self.recall(session)?;
        if !self.plan()? {
            return Ok(());
        }
        let examples = self.examples()?;
        self.trace.iterations_used = 1;
        let sql = self.generate(&examples)?;
        match self.attempt(sql) {
            None => self.interpret(),
            Some(problem) => {
                self.fail(problem);
                Ok(())
            }
        }
    }
}

fn describe(reply: &AgentReply) -> String {
    let mut out = String::new();
    if !reply.thought.is_empty() {
        out.push_str(&format!("thought: {}\n", reply.thought));
    }
    if !reply.action.is_empty() {
        out.push_str(&format!("action: {}\n", reply.action));
    }
    out.push_str(&reply.action_input);
    out
}
