#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, OnceLock};

use loopchat_core::clock::StepClock;
use loopchat_core::eval::{reference_gateway, REFERENCE_SEED};
use loopchat_core::fewshot::{FewShotExample, FewShotRepository, ScenarioTag};
use loopchat_core::llm::{Embedder, EmbeddingVector, LlmError, LocalHashEmbedder, ScriptStep, ScriptedProvider};
use loopchat_core::memory::ChatSession;
use loopchat_core::orchestrator::{Orchestrator, OrchestratorConfig, PipelineError, PipelineTrace};
use loopchat_core::prompt::PromptTemplate;
use loopchat_core::sql::{validate_sql, SchemaCatalog, SqlGateway, Verdict, DEFAULT_TIMEOUT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn gateway() -> &'static SqlGateway {
    static GATEWAY: OnceLock<SqlGateway> = OnceLock::new();
    GATEWAY.get_or_init(|| reference_gateway(REFERENCE_SEED).expect("reference dataset loads"))
}

pub fn template() -> &'static PromptTemplate {
    static TEMPLATE: OnceLock<PromptTemplate> = OnceLock::new();
    TEMPLATE.get_or_init(|| PromptTemplate::default_for(&SchemaCatalog::traffic()))
}

pub fn fewshot() -> &'static FewShotRepository {
    static REPO: OnceLock<FewShotRepository> = OnceLock::new();
    REPO.get_or_init(|| {
        FewShotRepository::starter(SchemaCatalog::traffic(), Arc::new(LocalHashEmbedder::default())).unwrap()
    })
}

/// Runs `question` against a fresh scripted provider and step clock.
pub fn run_with(
    steps: Vec<ScriptStep>,
    question: &str,
    session: &ChatSession,
    config: &OrchestratorConfig,
) -> (Result<PipelineTrace, PipelineError>, ScriptedProvider) {
    let provider = ScriptedProvider::new(steps);
    let clock = StepClock::default();
    let embedder = LocalHashEmbedder::default();
    let team = Orchestrator::new(gateway(), &provider, &embedder, template(), &clock).with_fewshot(fewshot());
    let result = team.run(question, session, config);
    if let Ok(trace) = &result {
        assert_validated(trace);
    }
    if let Err(PipelineError::Provider { trace, .. }) = &result {
        assert_validated(trace);
    }
    (result, provider)
}

pub fn run(steps: Vec<ScriptStep>, question: &str, config: &OrchestratorConfig) -> PipelineTrace {
    run_with(steps, question, &empty_session(), config).0.expect("pipeline completes")
}

pub fn empty_session() -> ChatSession {
    ChatSession::new("test", chrono::DateTime::UNIX_EPOCH)
}

/// Every executed attempt in the trace passed the validator gate.
pub fn assert_validated(trace: &PipelineTrace) {
    assert!(trace.executions_were_validated(), "unvalidated execution in trace for {:?}", trace.question);
    assert!(trace.scratchpad.is_monotonic());
}

/// Small non-negative integer vectors keyed by text, so cosine ordering can
/// be checked with exact integer arithmetic.
pub struct GridEmbedder;

impl GridEmbedder {
    pub fn ints(text: &str) -> Vec<i64> {
        let mut h = DefaultHasher::new();
        text.hash(&mut h);
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        let mut v: Vec<i64> = (0..5).map(|_| rng.random_range(0..=2)).collect();
        if v.iter().all(|x| *x == 0) {
            v[0] = 1;
        }
        v
    }
}

impl Embedder for GridEmbedder {
    fn dimension(&self) -> usize {
        5
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError> {
        Ok(EmbeddingVector::normalized(Self::ints(text).into_iter().map(|x| x as f64).collect()).unwrap())
    }
}

/// Compares cos(a, q) with cos(b, q) exactly: d_a / √n_a against d_b / √n_b.
pub fn exact_cmp(a: &[i64], b: &[i64], q: &[i64]) -> Ordering {
    let dot = |x: &[i64]| -> i128 { x.iter().zip(q).map(|(p, r)| (p * r) as i128).sum() };
    let norm = |x: &[i64]| -> i128 { x.iter().map(|p| (p * p) as i128).sum() };
    (dot(a) * dot(a) * norm(b)).cmp(&(dot(b) * dot(b) * norm(a)))
}

fn grid_question(rng: &mut ChaCha8Rng) -> String {
    format!("question {}", rng.random_range(0..1_000_000))
}

/// Queries where `retrieve` disagrees with a brute-force cosine sort, over
/// every k from 0 to size + 1.
pub fn retrieval_mismatches(seed: u64, size: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut repo = FewShotRepository::new(SchemaCatalog::traffic(), Arc::new(GridEmbedder));
    let mut examples = Vec::new();
    for i in 0..size {
        let id = format!("ex{:08}", rng.random_range(0..100_000) * 1000 + i);
        let q = grid_question(&mut rng);
        repo.add_example(FewShotExample::new(id.clone(), q.clone(), "SELECT 1", ScenarioTag::Counting)).unwrap();
        examples.push((id, GridEmbedder::ints(&q)));
    }
    let mut mismatches = 0;
    for _ in 0..20 {
        let q = grid_question(&mut rng);
        let qv = GridEmbedder::ints(&q);
        let mut oracle = examples.clone();
        oracle.sort_by(|a, b| exact_cmp(&b.1, &a.1, &qv).then_with(|| a.0.cmp(&b.0)));
        for k in 0..=size + 1 {
            let got: Vec<String> = repo.retrieve(&q, k).unwrap().hits.into_iter().map(|h| h.example_id).collect();
            let want: Vec<String> = oracle.iter().take(k).map(|e| e.0.clone()).collect();
            if got != want {
                mismatches += 1;
            }
        }
    }
    mismatches
}

/// Queries where `recall` disagrees with a brute-force sort (ties to the
/// more recent pair, output oldest first), over every m.
pub fn recall_mismatches(seed: u64, pairs: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = chrono::DateTime::UNIX_EPOCH;
    let mut mismatches = 0;
    for s in 0..4 {
        let mut session = ChatSession::new(format!("s{s}"), start);
        let mut questions = Vec::new();
        for i in 0..pairs {
            let q = grid_question(&mut rng);
            session.commit(&q, &format!("answer {i}"), &GridEmbedder, start + chrono::Duration::seconds(i as i64)).unwrap();
            questions.push(GridEmbedder::ints(&q));
        }
        for _ in 0..5 {
            let q = grid_question(&mut rng);
            let qv = GridEmbedder::ints(&q);
            let mut order: Vec<usize> = (0..questions.len()).collect();
            order.sort_by(|&a, &b| exact_cmp(&questions[b], &questions[a], &qv).then_with(|| b.cmp(&a)));
            for m in 0..=pairs + 1 {
                let mut want: Vec<usize> = order.iter().take(m).copied().collect();
                want.sort_unstable();
                let want: Vec<String> = want.iter().map(|i| format!("answer {i}")).collect();
                let got: Vec<String> =
                    session.recall(&q, m, &GridEmbedder).unwrap().into_iter().map(|p| p.answer.text).collect();
                if got != want {
                    mismatches += 1;
                }
            }
        }
    }
    mismatches
}

#[derive(serde::Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub verdict: Verdict,
    pub sql: String,
}

pub fn corpus() -> Vec<CorpusEntry> {
    include_str!("../data/validator_corpus.jsonl").lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

/// Corpus entries whose verdict is wrong, or that pass validation but fail
/// to execute on the reference store.
pub fn corpus_failures() -> Vec<String> {
    let catalog = SchemaCatalog::traffic();
    let mut failures = Vec::new();
    for e in corpus() {
        let report = validate_sql(&e.sql, &catalog);
        if report.verdict != e.verdict {
            failures.push(format!("{}: want {:?}, got {}", e.id, e.verdict, report.summary()));
        } else if !e.verdict.is_blocking() {
            if let Err(err) = gateway().execute(&e.sql, 50, DEFAULT_TIMEOUT) {
                failures.push(format!("{}: does not execute: {}", e.id, err.log));
            }
        }
    }
    failures
}
