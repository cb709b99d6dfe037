//! Command-line entry points.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use loopchat_core::clock::{Clock, SystemClock};
use loopchat_core::eval::{
    build_tasks, oracle_fixture, read_tasks_jsonl, render_table, run_ablation, run_benchmark, task_templates,
    tasks_to_jsonl, BenchEnv, BenchmarkReport, BenchmarkTask, REFERENCE_SEED,
};
use loopchat_core::llm::{ChatModel, LocalHashEmbedder, ScriptedProvider};
use loopchat_core::memory::ChatSession;
use loopchat_core::orchestrator::{FeatureFlags, OrchestratorConfig};
use loopchat_core::sql::{SchemaCatalog, SqlGateway};
use loopchat_core::traffic::{generate_synthetic_network, SynthConfig};

use crate::config::{DatasetSource, ProviderMode, ServiceConfig};
use crate::engine::{open_gateway, open_provider, Engine};
use crate::service::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "loopchat", version, about = "Ask questions of a loop-detector traffic database")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic network as one CSV file per table.
    Generate(GenerateArgs),
    /// Load a CSV directory into a store file.
    Ingest(IngestArgs),
    /// Answer one question and write its trace.
    Ask(AskArgs),
    /// Grade pipeline variants on the benchmark tasks.
    Bench(BenchArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = REFERENCE_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "I-5,I-405,SR-520")]
    pub routes: Vec<String>,
    #[arg(long, default_value_t = 6)]
    pub detectors: usize,
    #[arg(long, default_value_t = 8)]
    pub days: usize,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub csv_dir: PathBuf,
    #[arg(long)]
    pub db: PathBuf,
}

/// Where the data comes from: a store file or a generated reference network.
#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long, conflicts_with = "seed")]
    pub db: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl DataArgs {
    fn source(&self) -> DatasetSource {
        match &self.db {
            Some(path) => DatasetSource::File(path.clone()),
            None => DatasetSource::Seed(self.seed.unwrap_or(REFERENCE_SEED)),
        }
    }
}

#[derive(Debug, Args)]
pub struct FlagArgs {
    #[arg(long)]
    pub no_prompt: bool,
    #[arg(long)]
    pub no_fewshot: bool,
    #[arg(long)]
    pub single_agent: bool,
    #[arg(long, default_value_t = 5)]
    pub max_iterations: u32,
}

impl FlagArgs {
    fn config(&self) -> OrchestratorConfig {
        OrchestratorConfig {
            max_iterations: self.max_iterations,
            flags: FeatureFlags {
                prompt_on: !self.no_prompt,
                fewshot_on: !self.no_fewshot,
                multiagent_on: !self.single_agent,
            },
            ..OrchestratorConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct AskArgs {
    pub question: String,
    #[command(flatten)]
    pub data: DataArgs,
    /// Scripted provider fixture (JSON list of steps).
    #[arg(long, conflicts_with = "live", required_unless_present = "live")]
    pub fixture: Option<PathBuf>,
    /// Use the OpenAI-compatible provider from TPGPT_LLM_* variables.
    #[arg(long)]
    pub live: bool,
    #[arg(long)]
    pub template_dir: Option<PathBuf>,
    #[arg(long)]
    pub fewshot_path: Option<PathBuf>,
    #[command(flatten)]
    pub flags: FlagArgs,
    #[arg(long, default_value = "trace.json")]
    pub trace_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Task file (JSON lines); generated from the data when absent.
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    /// Write the tasks used to this file.
    #[arg(long)]
    pub tasks_out: Option<PathBuf>,
    /// Replay each task's ground-truth SQL.
    #[arg(long, conflicts_with_all = ["fixtures", "live"])]
    pub oracle: bool,
    /// Directory of `<task_id>.json` fixtures; a missing file grades as a provider fault.
    #[arg(long, conflicts_with = "live")]
    pub fixtures: Option<PathBuf>,
    #[arg(long)]
    pub live: bool,
    /// Run all four feature variants instead of the full pipeline only.
    #[arg(long)]
    pub ablation: bool,
    #[command(flatten)]
    pub flags: FlagArgs,
    /// Write the full reports as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `bind` from the config file.
    #[arg(long)]
    pub bind: Option<std::net::SocketAddr>,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate(args) => generate(&args, out),
        Command::Ingest(args) => ingest(&args, out),
        Command::Ask(args) => ask(&args, out),
        Command::Bench(args) => bench(&args, out),
        Command::Serve(args) => serve(&args),
    }
}

fn generate(args: &GenerateArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let routes: Vec<&str> = args.routes.iter().map(String::as_str).collect();
    let config = SynthConfig::new(args.seed, &routes, args.detectors, args.days);
    let dataset = generate_synthetic_network(&config)?;
    dataset.write_csv_dir(&args.out)?;
    writeln!(out, "wrote {} observations for {} detectors to {}", dataset.observations.len(), dataset.detectors.len(), args.out.display())?;
    Ok(())
}

fn write_counts(out: &mut dyn Write, counts: &BTreeMap<String, u64>) -> std::io::Result<()> {
    for (table, rows) in counts {
        writeln!(out, "{table}: {rows}")?;
    }
    Ok(())
}

fn ingest(args: &IngestArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    if args.db.exists() {
        bail!("{} already exists", args.db.display());
    }
    let gateway = SqlGateway::in_memory(SchemaCatalog::traffic())?;
    let counts = gateway.load_csv_dir(&args.csv_dir)?;
    gateway.save_to(&args.db)?;
    write_counts(out, &counts)?;
    writeln!(out, "saved {}", args.db.display())?;
    Ok(())
}

fn provider_mode(fixture: Option<&Path>, live: bool) -> anyhow::Result<ProviderMode> {
    match (fixture, live) {
        (Some(path), false) => Ok(ProviderMode::Scripted(path.to_path_buf())),
        (None, true) => Ok(ProviderMode::Live),
        _ => bail!("choose exactly one of --fixture or --live"),
    }
}

fn ask(args: &AskArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let config = ServiceConfig {
        dataset: args.data.source(),
        template_dir: args.template_dir.clone(),
        fewshot_path: args.fewshot_path.clone(),
        orchestrator: args.flags.config(),
        provider: provider_mode(args.fixture.as_deref(), args.live)?,
        ..ServiceConfig::scripted("")
    };
    let engine = Engine::from_config(&config)?;
    let session = ChatSession::new("cli", SystemClock.now());
    let trace = match engine.answer(&args.question, &session, &SystemClock, None) {
        Ok(trace) => trace,
        Err(err) => {
            if let Some(trace) = err.partial_trace() {
                std::fs::write(&args.trace_out, trace.to_json())?;
                writeln!(out, "trace: {}", args.trace_out.display())?;
            }
            return Err(err.into());
        }
    };
    std::fs::write(&args.trace_out, trace.to_json())
        .with_context(|| format!("cannot write {}", args.trace_out.display()))?;
    writeln!(out, "{}", trace.final_answer)?;
    writeln!(out, "trace: {}", args.trace_out.display())?;
    Ok(())
}

fn bench(args: &BenchArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let gateway = open_gateway(&args.data.source())?;
    let tasks: Vec<BenchmarkTask> = match &args.tasks {
        Some(path) => read_tasks_jsonl(
            &std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?,
        )?,
        None => build_tasks(&gateway, &task_templates())?,
    };
    if tasks.is_empty() {
        bail!("no benchmark tasks");
    }
    if let Some(path) = &args.tasks_out {
        std::fs::write(path, tasks_to_jsonl(&tasks))?;
    }

    let (live_model, embedder) = if args.live {
        let (model, embedder) = open_provider(&ProviderMode::Live)?;
        (Some(model), embedder)
    } else {
        (None, Arc::new(LocalHashEmbedder::default()) as Arc<dyn loopchat_core::llm::Embedder>)
    };
    let mut models = |task: &BenchmarkTask| -> Box<dyn ChatModel> {
        if let Some(model) = &live_model {
            return Box::new(model.clone());
        }
        let steps = match &args.fixtures {
            Some(dir) => ScriptedProvider::from_file(&dir.join(format!("{}.json", task.task_id)))
                .map(|p| p.steps().to_vec())
                .unwrap_or_default(),
            None => oracle_fixture(task),
        };
        Box::new(ScriptedProvider::new(steps))
    };

    let template = loopchat_core::prompt::PromptTemplate::default_for(gateway.catalog());
    let fewshot = loopchat_core::fewshot::FewShotRepository::starter(gateway.catalog().clone(), embedder.clone())?;
    let clock = SystemClock;
    let env = BenchEnv { gateway: &gateway, embedder: embedder.as_ref(), template: &template, fewshot: Some(&fewshot), clock: &clock };
    let config = args.flags.config();
    let reports: Vec<BenchmarkReport> = if args.ablation {
        run_ablation(&env, &tasks, &config, &mut models)?
    } else {
        vec![run_benchmark(&env, "full", &tasks, &config, &mut models)?]
    };
    writeln!(out, "{} tasks", tasks.len())?;
    writeln!(out, "{}", render_table(&reports))?;
    if let Some(path) = &args.report {
        std::fs::write(path, serde_json::to_string_pretty(&reports)?)?;
    }
    Ok(())
}

fn serve(args: &ServeArgs) -> anyhow::Result<()> {
    let mut config = ServiceConfig::load(&args.config)?;
    if let Some(bind) = args.bind {
        config.bind = bind;
    }
    // Built before the runtime starts: the live provider's blocking client
    // must not be created inside async context.
    let engine = Engine::from_config(&config)?;
    let app = Arc::new(AppState::from_config(engine, &config)?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(service::serve(app, config.bind))?;
    Ok(())
}
