use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use loopchat_core::clock::StepClock;
use loopchat_core::eval::{
    build_tasks, oracle_fixture, reference_gateway, run_benchmark, score, task_templates, BenchEnv, ScoreTally,
    REFERENCE_SEED,
};
use loopchat_core::fewshot::FewShotRepository;
use loopchat_core::llm::{LocalHashEmbedder, ScriptedProvider};
use loopchat_core::orchestrator::OrchestratorConfig;
use loopchat_core::prompt::PromptTemplate;
use loopchat_core::sql::{validate_sql, SchemaCatalog};
use loopchat_core::traffic::{compute_tps, TpsInput};

fn metrics(c: &mut Criterion) {
    let inputs: Vec<TpsInput> =
        (0..1440).map(|i| TpsInput::new(40.0 + (i % 30) as f64, 10.0 + (i % 7) as f64, 0.5)).collect();
    c.bench_function("tps_one_day", |b| b.iter(|| compute_tps(black_box(&inputs), 60.0).unwrap()));

    let tally = ScoreTally { non_functional: 3, runnable_imperfect: 5, flawless: 13 };
    c.bench_function("score", |b| b.iter(|| score(black_box(&tally)).unwrap()));
}

fn sql(c: &mut Criterion) {
    let catalog = SchemaCatalog::traffic();
    let query = "SELECT c.route, AVG(o.speed) AS avg_speed FROM dbo.MinuteDataNW o \
                 JOIN dbo.cabinets c ON c.detector_id = o.detector_id \
                 WHERE o.local_time >= '2024-01-02' GROUP BY c.route ORDER BY avg_speed LIMIT 10";
    c.bench_function("validate_join", |b| b.iter(|| validate_sql(black_box(query), &catalog)));

    let repo = FewShotRepository::starter(catalog, Arc::new(LocalHashEmbedder::default())).unwrap();
    c.bench_function("fewshot_retrieve_k3", |b| {
        b.iter(|| repo.retrieve(black_box("average speed on I-5 during the morning peak"), 3).unwrap())
    });
}

fn pipeline(c: &mut Criterion) {
    let gateway = reference_gateway(REFERENCE_SEED).unwrap();
    let tasks = build_tasks(&gateway, &task_templates()).unwrap();
    let embedder = LocalHashEmbedder::default();
    let template = PromptTemplate::default_for(gateway.catalog());
    let fewshot = FewShotRepository::starter(gateway.catalog().clone(), Arc::new(embedder.clone())).unwrap();
    let clock = StepClock::default();
    let env = BenchEnv { gateway: &gateway, embedder: &embedder, template: &template, fewshot: Some(&fewshot), clock: &clock };
    let config = OrchestratorConfig::default();

    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.bench_function("oracle_replay_all_tasks", |b| {
        b.iter(|| {
            run_benchmark(&env, "full", &tasks, &config, &mut |task| Box::new(ScriptedProvider::new(oracle_fixture(task))))
                .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, metrics, sql, pipeline);
criterion_main!(benches);
