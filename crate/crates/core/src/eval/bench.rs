//! Running tasks through a pipeline variant and reporting the results.

use serde::{Deserialize, Serialize};

use super::{classify, score, BenchmarkTask, Category, EvalOutcome, ScoreTally};
use crate::clock::Clock;
use crate::fewshot::FewShotRepository;
use crate::llm::{ChatModel, Embedder};
use crate::memory::ChatSession;
use crate::orchestrator::{FeatureFlags, Orchestrator, OrchestratorConfig, PipelineError, PipelineTrace};
use crate::prompt::PromptTemplate;
use crate::sql::SqlGateway;

/// Shared pieces for a benchmark run.
pub struct BenchEnv<'a> {
    pub gateway: &'a SqlGateway,
    pub embedder: &'a dyn Embedder,
    pub template: &'a PromptTemplate,
    pub fewshot: Option<&'a FewShotRepository>,
    pub clock: &'a dyn Clock,
}

/// Supplies the chat model for each task, e.g. that task's fixture.
pub type ModelFactory<'f> = dyn FnMut(&BenchmarkTask) -> Box<dyn ChatModel> + 'f;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub variant: String,
    pub feature_flags: FeatureFlags,
    pub outcomes: Vec<EvalOutcome>,
    pub tally: ScoreTally,
    pub score: f64,
    /// Non-functional, runnable but imperfect, flawless.
    pub percentages: [f64; 3],
}

impl BenchmarkReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs every task in a fresh session. Provider faults grade the task as
/// non-functional.
pub fn run_benchmark(
    env: &BenchEnv<'_>,
    variant: &str,
    tasks: &[BenchmarkTask],
    config: &OrchestratorConfig,
    models: &mut ModelFactory<'_>,
) -> Result<BenchmarkReport, super::EvalError> {
    let mut outcomes = Vec::with_capacity(tasks.len());
    for task in tasks {
        let model = models(task);
        let mut team = Orchestrator::new(env.gateway, model.as_ref(), env.embedder, env.template, env.clock);
        if let Some(repo) = env.fewshot {
            team = team.with_fewshot(repo);
        }
        let session = ChatSession::new(format!("bench-{}", task.task_id), env.clock.now());
        let outcome = match team.run(&task.question, &session, config) {
            Ok(trace) => classify(&trace, task),
            Err(err) => {
                let trace = err.partial_trace().cloned().unwrap_or_else(|| PipelineTrace::new(&task.question, config.flags));
                EvalOutcome {
                    task_id: task.task_id.clone(),
                    category: Category::NonFunctional,
                    trace,
                    reason: match err {
                        PipelineError::Provider { source, .. } => format!("provider fault: {source}"),
                        other => other.to_string(),
                    },
                }
            }
        };
        outcomes.push(outcome);
    }
    let tally = ScoreTally::from_categories(outcomes.iter().map(|o| o.category));
    Ok(BenchmarkReport {
        variant: variant.to_string(),
        feature_flags: config.flags,
        score: score(&tally)?,
        percentages: tally.percentages()?,
        tally,
        outcomes,
    })
}

/// One report per feature variant.
pub fn run_ablation(
    env: &BenchEnv<'_>,
    tasks: &[BenchmarkTask],
    config: &OrchestratorConfig,
    models: &mut ModelFactory<'_>,
) -> Result<Vec<BenchmarkReport>, super::EvalError> {
    FeatureFlags::ablation_matrix()
        .into_iter()
        .map(|(name, flags)| run_benchmark(env, name, tasks, &OrchestratorConfig { flags, ..config.clone() }, models))
        .collect()
}

/// Plain-text table: counts and shares per category plus the average score.
pub fn render_table(reports: &[BenchmarkReport]) -> String {
    let header = ["Variant", "Non-functional", "Runnable but imperfect", "Flawless", "Average score"];
    let mut rows = vec![header.map(str::to_string).to_vec()];
    for r in reports {
        let cell = |c: Category, p: f64| format!("{} ({:.0}%)", r.tally.count(c), p);
        rows.push(vec![
            r.variant.clone(),
            cell(Category::NonFunctional, r.percentages[0]),
            cell(Category::RunnableImperfect, r.percentages[1]),
            cell(Category::Flawless, r.percentages[2]),
            format!("{:.2}", r.score),
        ]);
    }
    let widths: Vec<usize> = (0..header.len()).map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0)).collect();
    let line = |row: &Vec<String>| {
        row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join(" | ").trim_end().to_string()
    };
    let mut out = line(&rows[0]);
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
    for row in &rows[1..] {
        out.push('\n');
        out.push_str(&line(row));
    }
    out
}
