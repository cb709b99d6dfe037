//! Service configuration from a flat `key = value` file.
//!
//! ```text
//! bind = "127.0.0.1:8080"
//! seed = 7                      # or dataset_path = "traffic.db"
//! provider = "scripted"         # or "live" (reads TPGPT_LLM_* env vars)
//! fixture_path = "fixture.json"
//! template_dir = "templates"
//! fewshot_path = "fewshot.jsonl"
//! sessions_db = "sessions.db"
//! auth_token = "secret"
//! max_iterations = 5
//! fewshot_k = 3
//! recall_m = 2
//! max_rows = 1000
//! timeout_ms = 10000
//! prompt = true
//! fewshot = true
//! multiagent = true
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use loopchat_core::eval::REFERENCE_SEED;
use loopchat_core::orchestrator::{FeatureFlags, OrchestratorConfig};
use serde::Deserialize;
use thiserror::Error;

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    /// A store written by `loopchat ingest`.
    File(PathBuf),
    /// The synthetic reference network for this seed.
    Seed(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderMode {
    Scripted(PathBuf),
    Live,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub dataset: DatasetSource,
    pub template_dir: Option<PathBuf>,
    pub fewshot_path: Option<PathBuf>,
    pub sessions_db: Option<PathBuf>,
    pub orchestrator: OrchestratorConfig,
    pub provider: ProviderMode,
    pub auth_token: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    bind: Option<String>,
    dataset_path: Option<PathBuf>,
    seed: Option<u64>,
    template_dir: Option<PathBuf>,
    fewshot_path: Option<PathBuf>,
    sessions_db: Option<PathBuf>,
    provider: Option<String>,
    fixture_path: Option<PathBuf>,
    auth_token: Option<String>,
    max_iterations: Option<u32>,
    fewshot_k: Option<usize>,
    recall_m: Option<usize>,
    max_rows: Option<usize>,
    timeout_ms: Option<u64>,
    prompt: Option<bool>,
    fewshot: Option<bool>,
    multiagent: Option<bool>,
}

impl ServiceConfig {
    /// Scripted provider over the reference network with default settings.
    pub fn scripted(fixture: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            bind: DEFAULT_BIND.parse().expect("valid default address"),
            dataset: DatasetSource::Seed(REFERENCE_SEED),
            template_dir: None,
            fewshot_path: None,
            sessions_db: None,
            orchestrator: OrchestratorConfig::default(),
            provider: ProviderMode::Scripted(fixture.into()),
            auth_token: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        let bind = raw
            .bind
            .as_deref()
            .unwrap_or(DEFAULT_BIND)
            .parse()
            .map_err(|e| ConfigError::Invalid(format!("bind: {e}")))?;
        let dataset = match (raw.dataset_path, raw.seed) {
            (Some(_), Some(_)) => return Err(ConfigError::Invalid("set either dataset_path or seed, not both".into())),
            (Some(path), None) => DatasetSource::File(resolve(path)),
            (None, seed) => DatasetSource::Seed(seed.unwrap_or(REFERENCE_SEED)),
        };
        let provider = match (raw.provider.as_deref(), raw.fixture_path) {
            (Some("scripted") | None, Some(path)) => ProviderMode::Scripted(resolve(path)),
            (Some("live"), None) => ProviderMode::Live,
            (Some("live"), Some(_)) => {
                return Err(ConfigError::Invalid("fixture_path cannot be combined with provider = \"live\"".into()))
            }
            (Some("scripted") | None, None) => {
                return Err(ConfigError::Invalid("a scripted provider needs fixture_path; or set provider = \"live\"".into()))
            }
            (Some(other), _) => return Err(ConfigError::Invalid(format!("unknown provider '{other}'"))),
        };

        let defaults = OrchestratorConfig::default();
        let flags = FeatureFlags {
            prompt_on: raw.prompt.unwrap_or(true),
            fewshot_on: raw.fewshot.unwrap_or(true),
            multiagent_on: raw.multiagent.unwrap_or(true),
        };
        let orchestrator = OrchestratorConfig {
            max_iterations: raw.max_iterations.unwrap_or(defaults.max_iterations),
            fewshot_k: raw.fewshot_k.unwrap_or(defaults.fewshot_k),
            recall_m: raw.recall_m.unwrap_or(defaults.recall_m),
            flags,
            max_rows: raw.max_rows.unwrap_or(defaults.max_rows),
            timeout_ms: raw.timeout_ms.unwrap_or(defaults.timeout_ms),
        };
        orchestrator.check().map_err(|e| ConfigError::Invalid(e.to_string()))?;

        Ok(ServiceConfig {
            bind,
            dataset,
            template_dir: raw.template_dir.map(resolve),
            fewshot_path: raw.fewshot_path.map(resolve),
            sessions_db: raw.sessions_db.map(resolve),
            orchestrator,
            provider,
            auth_token: raw.auth_token.filter(|t| !t.is_empty()),
        })
    }
}
