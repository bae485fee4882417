//! `chatbci.json`: paths, provider selection, autonomy defaults, budgets.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use chatbci_assist::bridge::provider::{
    GenerationParams, MockProvider, OpenAiCompatible, Provider, RetryPolicy, API_KEY_ENV,
};
use chatbci_assist::ideation::{HttpLiterature, LiteratureClient, MockLiterature};
use chatbci_assist::AutonomyPolicy;

use crate::error::{from_value_at, Result, ServiceError};

pub const CONFIG_FILE: &str = "chatbci.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    #[default]
    Mock,
    OpenaiCompatible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub provider: ProviderKind,
    pub base_url: String,
    /// Canned replies for the mock provider.
    pub mock_table: Option<PathBuf>,
    /// Reply used by the mock provider when no entry matches.
    pub mock_fallback: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub retry: RetryPolicy,
    pub timeout_s: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Mock,
            base_url: "https://api.openai.com/v1".into(),
            mock_table: None,
            mock_fallback: None,
            model: GenerationParams::default().model,
            temperature: GenerationParams::default().temperature,
            max_tokens: GenerationParams::default().max_tokens,
            retry: RetryPolicy::default(),
            timeout_s: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiteratureConfig {
    pub endpoint: String,
    /// JSON list of `{title, year, abstract}` used offline.
    pub mock_corpus: Option<PathBuf>,
}

impl LlmConfig {
    pub fn params(&self) -> GenerationParams {
        GenerationParams { model: self.model.clone(), temperature: self.temperature, max_tokens: self.max_tokens }
    }
}

impl Default for LiteratureConfig {
    fn default() -> Self {
        Self { endpoint: "https://api.semanticscholar.org/graph/v1/paper/search".into(), mock_corpus: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Converted recordings, `<subject>/<session>/`.
    pub data_root: PathBuf,
    /// Runs, reports, figures and session transcripts.
    pub workspace: PathBuf,
    /// `*.kb.json` documents.
    pub knowledge_dir: PathBuf,
    pub llm: LlmConfig,
    pub literature: LiteratureConfig,
    pub autonomy: AutonomyPolicy,
    pub budget_tokens: usize,
    pub retrieval_k: usize,
    pub max_parallel_runs: usize,
    /// Timestamps from a counter instead of the wall clock.
    pub logical_clock: bool,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data_root: "data".into(),
            workspace: "workspace".into(),
            knowledge_dir: "knowledge".into(),
            llm: LlmConfig::default(),
            literature: LiteratureConfig::default(),
            autonomy: AutonomyPolicy::default(),
            budget_tokens: 2000,
            retrieval_k: 4,
            max_parallel_runs: 1,
            logical_clock: false,
        }
    }
}

impl Config {
    /// Relative paths inside the file are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_slice(&std::fs::read(path)?)?;
        let mut cfg: Config = from_value_at("", value)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data_root, &mut cfg.workspace, &mut cfg.knowledge_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for p in [cfg.llm.mock_table.as_mut(), cfg.literature.mock_corpus.as_mut()].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// `path` if given, else `./chatbci.json` if present, else defaults.
    pub fn discover(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None if Path::new(CONFIG_FILE).is_file() => Self::load(Path::new(CONFIG_FILE)),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_parallel_runs == 0 {
            return Err(ServiceError::field("max_parallel_runs", "must be at least 1"));
        }
        if self.budget_tokens == 0 {
            return Err(ServiceError::field("budget_tokens", "must be positive"));
        }
        Ok(())
    }

    pub fn provider(&self) -> Result<Arc<dyn Provider>> {
        match self.llm.provider {
            ProviderKind::Mock => {
                let mut p = match &self.llm.mock_table {
                    Some(path) => MockProvider::load(path)?,
                    None => MockProvider::new(),
                };
                if let Some(f) = &self.llm.mock_fallback {
                    p = p.with_fallback(f.clone());
                }
                Ok(Arc::new(p))
            }
            ProviderKind::OpenaiCompatible => {
                let key = std::env::var(API_KEY_ENV)
                    .map_err(|_| ServiceError::new(400, "ConfigError", format!("{API_KEY_ENV} is not set")))?;
                let timeout = Duration::from_secs(self.llm.timeout_s.max(1));
                Ok(Arc::new(OpenAiCompatible::new(self.llm.base_url.clone(), key, timeout)))
            }
        }
    }

    pub fn literature_client(&self, offline: bool) -> Result<Box<dyn LiteratureClient>> {
        match (&self.literature.mock_corpus, offline) {
            (Some(path), _) => Ok(Box::new(MockLiterature::load(path)?)),
            (None, true) => Ok(Box::new(MockLiterature::default())),
            (None, false) => Ok(Box::new(HttpLiterature::new(self.literature.endpoint.clone()))),
        }
    }
}
