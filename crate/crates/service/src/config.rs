//! Service configuration: JSON file, then environment, then command line.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// Offline: lexical heuristics, or canned completions from a fixture.
    #[default]
    Oracle,
    /// An OpenAI-compatible chat-completions endpoint.
    HttpLlm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingKind {
    #[default]
    Lexical,
    Http,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoint {
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub model: Option<String>,
}

impl Endpoint {
    fn redacted(&self) -> Endpoint {
        Endpoint {
            api_key: self.api_key.as_ref().map(|_| "***".into()),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub graph: PathBuf,
    pub nlu_backend: BackendKind,
    pub embedding: EmbeddingKind,
    pub retrieval_k: usize,
    pub relevance_threshold: u8,
    pub llm: Endpoint,
    pub embed: Endpoint,
    /// Canned completions for the oracle backend; lexical heuristics without.
    pub oracle_fixture: Option<PathBuf>,
    pub listen: String,
    pub session_idle_secs: u64,
    pub request_timeout_secs: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            graph: PathBuf::new(),
            nlu_backend: BackendKind::Oracle,
            embedding: EmbeddingKind::Lexical,
            retrieval_k: 15,
            relevance_threshold: 2,
            llm: Endpoint::default(),
            embed: Endpoint::default(),
            oracle_fixture: None,
            listen: "127.0.0.1:8080".into(),
            session_idle_secs: 30 * 60,
            request_timeout_secs: 60,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Invalid(String),
}

/// Values given on the command line; `None` leaves the lower layers alone.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    #[arg(skip)]
    pub graph: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long, value_enum)]
    pub embedding: Option<EmbeddingKind>,
    /// Pre-filter size.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub relevance_threshold: Option<u8>,
    #[arg(long)]
    pub llm_endpoint: Option<String>,
    #[arg(long)]
    pub llm_api_key: Option<String>,
    #[arg(long)]
    pub llm_model: Option<String>,
    #[arg(long)]
    pub embed_endpoint: Option<String>,
    #[arg(long)]
    pub embed_api_key: Option<String>,
    #[arg(long)]
    pub embed_model: Option<String>,
    #[arg(long)]
    pub oracle_fixture: Option<PathBuf>,
    #[arg(long)]
    pub listen: Option<String>,
    /// Idle seconds before a session expires.
    #[arg(long)]
    pub session_idle_secs: Option<u64>,
}

impl ServiceConfig {
    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: ServiceConfig = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        if !config.graph.as_os_str().is_empty() && config.graph.is_relative() {
            config.graph = base.join(&config.graph);
        }
        if let Some(f) = &config.oracle_fixture {
            if f.is_relative() {
                config.oracle_fixture = Some(base.join(f));
            }
        }
        Ok(config)
    }

    /// Applies `LLM_ENDPOINT`, `LLM_API_KEY`, `LLM_MODEL`, `EMBED_ENDPOINT`
    /// and `EMBED_API_KEY` as returned by `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        let get = |k: &str| lookup(k).filter(|v| !v.is_empty());
        if let Some(v) = get("LLM_ENDPOINT") {
            self.llm.endpoint = Some(v);
        }
        if let Some(v) = get("LLM_API_KEY") {
            self.llm.api_key = Some(v);
        }
        if let Some(v) = get("LLM_MODEL") {
            self.llm.model = Some(v);
        }
        if let Some(v) = get("EMBED_ENDPOINT") {
            self.embed.endpoint = Some(v);
        }
        if let Some(v) = get("EMBED_API_KEY") {
            self.embed.api_key = Some(v);
        }
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        fn set_opt<T: Clone>(slot: &mut Option<T>, v: &Option<T>) {
            if v.is_some() {
                slot.clone_from(v);
            }
        }
        set(&mut self.graph, &o.graph);
        set(&mut self.nlu_backend, &o.backend);
        set(&mut self.embedding, &o.embedding);
        set(&mut self.retrieval_k, &o.k);
        set(&mut self.relevance_threshold, &o.relevance_threshold);
        set_opt(&mut self.llm.endpoint, &o.llm_endpoint);
        set_opt(&mut self.llm.api_key, &o.llm_api_key);
        set_opt(&mut self.llm.model, &o.llm_model);
        set_opt(&mut self.embed.endpoint, &o.embed_endpoint);
        set_opt(&mut self.embed.api_key, &o.embed_api_key);
        set_opt(&mut self.embed.model, &o.embed_model);
        set_opt(&mut self.oracle_fixture, &o.oracle_fixture);
        set(&mut self.listen, &o.listen);
        set(&mut self.session_idle_secs, &o.session_idle_secs);
    }

    /// File (if any), then the process environment, then `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut config = match file {
            Some(p) => ServiceConfig::from_file(p)?,
            None => ServiceConfig::default(),
        };
        config.apply_env(|k| std::env::var(k).ok());
        config.apply_overrides(overrides);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.graph.as_os_str().is_empty() {
            return invalid("no graph configured".into());
        }
        if !self.graph.is_file() {
            return invalid(format!("graph file {} does not exist", self.graph.display()));
        }
        if self.retrieval_k < 1 {
            return invalid("retrieval_k must be at least 1".into());
        }
        if self.relevance_threshold > 2 {
            return invalid("relevance_threshold must be 0, 1 or 2".into());
        }
        if self.session_idle_secs == 0 {
            return invalid("session_idle_secs must be positive".into());
        }
        if let Some(f) = &self.oracle_fixture {
            if !f.is_file() {
                return invalid(format!("oracle fixture {} does not exist", f.display()));
            }
        }
        if self.nlu_backend == BackendKind::HttpLlm {
            if self.llm.endpoint.is_none() {
                return invalid("http-llm backend needs an endpoint (LLM_ENDPOINT)".into());
            }
            if self.llm.model.is_none() {
                return invalid("http-llm backend needs a model (LLM_MODEL)".into());
            }
        }
        if self.embedding == EmbeddingKind::Http && self.embed.endpoint.is_none() {
            return invalid("http embeddings need an endpoint (EMBED_ENDPOINT)".into());
        }
        Ok(())
    }

    pub fn idle_timeout(&self) -> Duration {
        Duration::from_secs(self.session_idle_secs)
    }

    /// The config with credentials masked, for logs and `--dry-run`.
    pub fn redacted(&self) -> ServiceConfig {
        ServiceConfig {
            llm: self.llm.redacted(),
            embed: self.embed.redacted(),
            ..self.clone()
        }
    }
}
