//! The shared pieces behind `ask`, `bench` and `serve`.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use anyhow::Context;
use loopchat_core::clock::Clock;
use loopchat_core::eval::reference_gateway;
use loopchat_core::fewshot::FewShotRepository;
use loopchat_core::llm::{ChatModel, Embedder, LiveConfig, LiveProvider, LocalHashEmbedder, ScriptedProvider};
use loopchat_core::memory::ChatSession;
use loopchat_core::orchestrator::{Orchestrator, OrchestratorConfig, PipelineError, PipelineState, PipelineTrace};
use loopchat_core::prompt::{PromptError, PromptTemplate};
use loopchat_core::sql::{SchemaCatalog, SqlGateway};

use crate::config::{DatasetSource, ProviderMode, ServiceConfig};

pub struct Engine {
    pub gateway: SqlGateway,
    pub model: Arc<dyn ChatModel>,
    pub embedder: Arc<dyn Embedder>,
    pub fewshot: FewShotRepository,
    pub config: OrchestratorConfig,
    template: RwLock<PromptTemplate>,
    template_dir: Option<PathBuf>,
}

pub fn open_gateway(dataset: &DatasetSource) -> anyhow::Result<SqlGateway> {
    match dataset {
        DatasetSource::Seed(seed) => Ok(reference_gateway(*seed)?),
        DatasetSource::File(path) => SqlGateway::open_file(path, SchemaCatalog::traffic())
            .with_context(|| format!("cannot open store {}", path.display())),
    }
}

/// Chat model and embedder for a provider mode. The live provider embeds
/// remotely only when an embedding model is configured.
pub fn open_provider(mode: &ProviderMode) -> anyhow::Result<(Arc<dyn ChatModel>, Arc<dyn Embedder>)> {
    match mode {
        ProviderMode::Scripted(path) => {
            let provider = ScriptedProvider::from_file(path)
                .with_context(|| format!("cannot read fixture {}", path.display()))?;
            Ok((Arc::new(provider), Arc::new(LocalHashEmbedder::default())))
        }
        ProviderMode::Live => {
            let live = Arc::new(LiveProvider::new(LiveConfig::from_env()?)?);
            let embedder: Arc<dyn Embedder> = if live.config().embed_model.is_some() {
                live.clone()
            } else {
                Arc::new(LocalHashEmbedder::default())
            };
            Ok((live, embedder))
        }
    }
}

impl Engine {
    pub fn from_config(config: &ServiceConfig) -> anyhow::Result<Self> {
        let gateway = open_gateway(&config.dataset)?;
        let (model, embedder) = open_provider(&config.provider)?;
        Self::assemble(gateway, model, embedder, config)
    }

    /// Builds an engine around an already opened store and provider.
    pub fn assemble(
        gateway: SqlGateway,
        model: Arc<dyn ChatModel>,
        embedder: Arc<dyn Embedder>,
        config: &ServiceConfig,
    ) -> anyhow::Result<Self> {
        let template = load_template(config.template_dir.as_ref(), gateway.catalog())?;
        let catalog = gateway.catalog().clone();
        let fewshot = match &config.fewshot_path {
            Some(path) => FewShotRepository::load_jsonl(path, catalog, embedder.clone())
                .with_context(|| format!("cannot load few-shot examples from {}", path.display()))?,
            None => FewShotRepository::starter(catalog, embedder.clone())?,
        };
        Ok(Engine {
            gateway,
            model,
            embedder,
            fewshot,
            config: config.orchestrator.clone(),
            template: RwLock::new(template),
            template_dir: config.template_dir.clone(),
        })
    }

    pub fn template(&self) -> PromptTemplate {
        self.template.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Re-reads the template directory. The old template stays on error.
    pub fn reload_templates(&self) -> Result<(), PromptError> {
        let fresh = load_template(self.template_dir.as_ref(), self.gateway.catalog())?;
        *self.template.write().unwrap_or_else(|p| p.into_inner()) = fresh;
        Ok(())
    }

    pub fn answer(
        &self,
        question: &str,
        session: &ChatSession,
        clock: &dyn Clock,
        observer: Option<&(dyn Fn(PipelineState) + Sync)>,
    ) -> Result<PipelineTrace, PipelineError> {
        let template = self.template();
        let mut team = Orchestrator::new(&self.gateway, self.model.as_ref(), self.embedder.as_ref(), &template, clock)
            .with_fewshot(&self.fewshot);
        if let Some(observer) = observer {
            team = team.with_observer(observer);
        }
        team.run(question, session, &self.config)
    }
}

fn load_template(dir: Option<&PathBuf>, catalog: &SchemaCatalog) -> Result<PromptTemplate, PromptError> {
    match dir {
        Some(dir) => PromptTemplate::load_dir(dir, catalog),
        None => Ok(PromptTemplate::default_for(catalog)),
    }
}
