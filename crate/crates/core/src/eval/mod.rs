//! Benchmark tasks, response grading and the average performance score.

mod bench;
mod scenarios;
mod tasks;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sqlparser::ast::Statement;
use sqlparser::dialect::GenericDialect;
use sqlparser::parser::Parser;
use thiserror::Error;

use crate::fewshot::ScenarioTag;
use crate::orchestrator::{Outcome, PipelineTrace};
use crate::sql::{QueryResult, Value};

pub use bench::{render_table, run_ablation, run_benchmark, BenchEnv, BenchmarkReport, ModelFactory};
pub use scenarios::{authored_scenarios, oracle_fixture, scenario_tasks, Scenario};
pub use tasks::{
    build_tasks, build_tasks_for_seed, read_tasks_jsonl, reference_dataset, reference_gateway, task_templates,
    tasks_to_jsonl, TaskTemplate, REFERENCE_SEED,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    NonFunctional,
    RunnableImperfect,
    Flawless,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::NonFunctional, Category::RunnableImperfect, Category::Flawless];

    pub fn rate(&self) -> u64 {
        match self {
            Category::NonFunctional => 0,
            Category::RunnableImperfect => 1,
            Category::Flawless => 2,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Category::NonFunctional => "Non-functional",
            Category::RunnableImperfect => "Runnable but imperfect",
            Category::Flawless => "Flawless",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub const MAX_RATE: u64 = 2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreTally {
    pub non_functional: u64,
    pub runnable_imperfect: u64,
    pub flawless: u64,
}

impl ScoreTally {
    pub fn new(non_functional: u64, runnable_imperfect: u64, flawless: u64) -> Self {
        ScoreTally { non_functional, runnable_imperfect, flawless }
    }

    pub fn from_categories(categories: impl IntoIterator<Item = Category>) -> Self {
        let mut tally = ScoreTally::default();
        for c in categories {
            tally.add(c);
        }
        tally
    }

    pub fn add(&mut self, category: Category) {
        match category {
            Category::NonFunctional => self.non_functional += 1,
            Category::RunnableImperfect => self.runnable_imperfect += 1,
            Category::Flawless => self.flawless += 1,
        }
    }

    pub fn count(&self, category: Category) -> u64 {
        match category {
            Category::NonFunctional => self.non_functional,
            Category::RunnableImperfect => self.runnable_imperfect,
            Category::Flawless => self.flawless,
        }
    }

    pub fn total(&self) -> u64 {
        self.non_functional + self.runnable_imperfect + self.flawless
    }

    /// Share of each category, in `Category::ALL` order.
    pub fn percentages(&self) -> Result<[f64; 3], EvalError> {
        let total = self.total();
        if total == 0 {
            return Err(EvalError::EmptyTally);
        }
        Ok(Category::ALL.map(|c| 100.0 * self.count(c) as f64 / total as f64))
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot score an empty tally")]
    EmptyTally,
    #[error("ground truth for task {task_id} is invalid: {reason}")]
    GroundTruthInvalid { task_id: String, reason: String },
    #[error("line {line}: {source}")]
    TaskFile { line: usize, source: serde_json::Error },
    #[error("dataset error: {0}")]
    Dataset(String),
}

/// Average performance score: Σ nᵢ·sᵢ / (s_max · Σ nᵢ).
pub fn score(tally: &ScoreTally) -> Result<f64, EvalError> {
    let total = tally.total();
    if total == 0 {
        return Err(EvalError::EmptyTally);
    }
    let points: u64 = Category::ALL.iter().map(|c| tally.count(*c) * c.rate()).sum();
    Ok(points as f64 / (MAX_RATE * total) as f64)
}

fn canonical_cell(value: &Value) -> String {
    let number = |v: f64| {
        let s = format!("{v:.6}");
        if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
            s.trim_start_matches('-').to_string()
        } else {
            s
        }
    };
    match value {
        Value::Null => "NULL".to_string(),
        Value::Integer(i) => number(*i as f64),
        Value::Real(r) => number(*r),
        Value::Text(t) => format!("'{t}'"),
    }
}

/// Hash of the rows with numbers at six decimals. Row order counts only
/// when `ordered`.
pub fn result_digest(result: &QueryResult, ordered: bool) -> String {
    let mut rows: Vec<String> =
        result.rows.iter().map(|row| row.iter().map(canonical_cell).collect::<Vec<_>>().join("\u{1f}")).collect();
    if !ordered {
        rows.sort();
    }
    let mut hasher = Sha256::new();
    hasher.update(format!("{}\u{1d}", result.columns.len()));
    for row in rows {
        hasher.update(row.as_bytes());
        hasher.update([0x1e]);
    }
    hex::encode(hasher.finalize())
}

/// Whether the outermost query has an ORDER BY.
pub fn has_order_by(sql: &str) -> bool {
    match Parser::parse_sql(&GenericDialect {}, sql) {
        Ok(statements) => statements.iter().any(|s| matches!(s, Statement::Query(q) if q.order_by.is_some())),
        Err(_) => sql.to_ascii_uppercase().contains("ORDER BY"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTask {
    pub task_id: String,
    pub question: String,
    pub ground_truth_sql: String,
    pub digest: String,
    pub scenario_tag: ScenarioTag,
}

impl BenchmarkTask {
    pub fn ordered(&self) -> bool {
        has_order_by(&self.ground_truth_sql)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub task_id: String,
    pub category: Category,
    pub trace: PipelineTrace,
    pub reason: String,
}

/// Grades a finished trace against the task's ground-truth digest.
pub fn classify(trace: &PipelineTrace, task: &BenchmarkTask) -> EvalOutcome {
    let (category, reason) = match (trace.outcome, trace.final_result()) {
        (Outcome::Failed, _) => (
            Category::NonFunctional,
            format!("pipeline failed: {}", trace.failure.as_deref().unwrap_or("no reason recorded")),
        ),
        (_, None) => (Category::NonFunctional, "no query was executed successfully".to_string()),
        (_, Some(result)) => {
            let digest = result_digest(result, task.ordered());
            if digest == task.digest {
                (Category::Flawless, "result matches the ground truth".to_string())
            } else {
                (Category::RunnableImperfect, format!("result digest {} differs from ground truth", &digest[..12]))
            }
        }
    };
    EvalOutcome { task_id: task.task_id.clone(), category, trace: trace.clone(), reason }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(rows: Vec<Vec<Value>>) -> QueryResult {
        QueryResult {
            columns: vec!["a".into(), "b".into()],
            row_count: rows.len(),
            rows,
            truncated: false,
            execution_log: String::new(),
        }
    }

    #[test]
    fn published_scores() {
        let cases = [((3, 7, 40), 0.87), ((15, 13, 22), 0.57), ((31, 4, 15), 0.34), ((41, 2, 7), 0.16), ((50, 0, 0), 0.0)];
        for ((nf, ri, f), expected) in cases {
            let s = score(&ScoreTally::new(nf, ri, f)).unwrap();
            assert!((s - expected).abs() <= 1e-12, "{nf},{ri},{f} -> {s}");
        }
        assert!(matches!(score(&ScoreTally::default()), Err(EvalError::EmptyTally)));
    }

    #[test]
    fn digest_ignores_order_unless_ordered() {
        let a = result(vec![vec![Value::Text("x".into()), Value::Real(1.0)], vec![Value::Text("y".into()), Value::Integer(2)]]);
        let b = result(vec![vec![Value::Text("y".into()), Value::Real(2.0000000001)], vec![Value::Text("x".into()), Value::Integer(1)]]);
        assert_eq!(result_digest(&a, false), result_digest(&b, false));
        assert_ne!(result_digest(&a, true), result_digest(&b, true));
        let c = result(vec![vec![Value::Text("x".into()), Value::Real(1.00001)]]);
        assert_ne!(result_digest(&a, false), result_digest(&c, false));
        let zero = result(vec![vec![Value::Real(-0.0000001), Value::Null]]);
        let plus = result(vec![vec![Value::Integer(0), Value::Null]]);
        assert_eq!(result_digest(&zero, false), result_digest(&plus, false));
    }

    #[test]
    fn order_by_detection() {
        assert!(has_order_by("SELECT a FROM t ORDER BY a"));
        assert!(!has_order_by("SELECT a FROM (SELECT a FROM t ORDER BY a LIMIT 3) s"));
        assert!(!has_order_by("SELECT COUNT(*) FROM t"));
    }

    #[test]
    fn percentages_sum_to_100() {
        let p = ScoreTally::new(1, 2, 7).percentages().unwrap();
        assert_eq!(p, [10.0, 20.0, 70.0]);
    }
}
