//! Application configuration: one TOML file, `${VAR}` environment
//! interpolation, paths resolved against the file's directory.

use std::path::{Path, PathBuf};
use std::sync::{Arc, LazyLock};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::TagCatalog;
use crate::llm::{
    Gateway, LlmBackend, MockBackend, MockReply, MockRule, RecordingBackend, RemoteBackend,
    ReplayBackend, RetryPolicy,
};
use crate::metrics::TOKENIZER_VERSION;
use crate::prompt::{DemoSelection, InstructionSet, Language, PromptOptions};
use crate::retrieval::{
    Embedder, HashEmbedder, PrecomputedEmbedder, ReasoningLibrary, RemoteEmbedder, DEFAULT_K,
    DEFAULT_N,
};
use crate::targeting::UserDb;

static ENV_REF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap());

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("environment variable `{0}` is not set")]
    MissingEnv(String),
    #[error("config: {0}")]
    Invalid(String),
    #[error("config: `{field}` is required for this command")]
    Missing { field: &'static str },
    #[error("config: file {0} does not exist")]
    MissingFile(PathBuf),
    #[error("loading {what}: {message}")]
    Load { what: &'static str, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub catalog: Option<PathBuf>,
    pub library: Option<PathBuf>,
    pub users: Option<PathBuf>,
    /// Instruction template file; the built-in set for `prompt.language`
    /// when absent.
    pub templates: Option<PathBuf>,
    /// Read by the replay backend, appended to by the record backend.
    pub cassette: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub k: usize,
    pub n: usize,
    pub selection: DemoSelection,
    pub include_reasoning: bool,
    pub max_chars: Option<usize>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: DEFAULT_K,
            n: DEFAULT_N,
            selection: DemoSelection::Analogical,
            include_reasoning: true,
            max_chars: None,
        }
    }
}

impl RetrievalConfig {
    pub fn prompt_options(&self) -> PromptOptions {
        PromptOptions {
            k: self.k,
            n: self.n,
            selection: self.selection.clone(),
            include_reasoning: self.include_reasoning,
            max_chars: self.max_chars,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptConfig {
    pub language: Language,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmBackendKind {
    Mock,
    Replay,
    Record,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    pub backend: LlmBackendKind,
    pub model: String,
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_tokens: u32,
    pub timeout_ms: u64,
    pub retry_attempts: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    /// Mock backend rules, first match wins. Empty means echo the last
    /// SELL answer in the prompt.
    pub mock: Vec<MockRule>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            backend: LlmBackendKind::Mock,
            model: "gpt-3.5-turbo-1106".into(),
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_tokens: 1024,
            timeout_ms: 60_000,
            retry_attempts: 3,
            backoff_ms: 500,
            max_in_flight: 4,
            mock: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Hash,
    Precomputed,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderConfig {
    pub backend: EmbedderKind,
    pub dim: usize,
    pub seed: u64,
    /// Precomputed `{text, embedding}` table.
    pub path: Option<PathBuf>,
    pub version: String,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub timeout_ms: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            backend: EmbedderKind::Hash,
            dim: 256,
            seed: 0,
            path: None,
            version: "v1".into(),
            endpoint: String::new(),
            model: "bge-large-zh".into(),
            api_key_env: None,
            timeout_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub bind: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub tokenizer: String,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            tokenizer: TOKENIZER_VERSION.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub paths: Paths,
    pub retrieval: RetrievalConfig,
    pub prompt: PromptConfig,
    pub llm: LlmConfig,
    pub embedder: EmbedderConfig,
    pub service: ServiceConfig,
    pub metrics: MetricsConfig,
}

/// Replaces every `${VAR}` with its value from `lookup`.
pub fn interpolate(
    text: &str,
    lookup: impl Fn(&str) -> Option<String>,
) -> Result<String, ConfigError> {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for cap in ENV_REF.captures_iter(text) {
        let whole = cap.get(0).unwrap();
        let name = &cap[1];
        out.push_str(&text[last..whole.start()]);
        out.push_str(&lookup(name).ok_or_else(|| ConfigError::MissingEnv(name.to_string()))?);
        last = whole.end();
    }
    out.push_str(&text[last..]);
    Ok(out)
}

fn env(name: &str) -> Option<String> {
    std::env::var(name).ok()
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        AppConfig::from_toml(&text, base)
    }

    /// Parses, interpolates, resolves relative paths against `base` and
    /// checks invariants.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let text = interpolate(text, env)?;
        let mut cfg: AppConfig = toml::from_str(&text)?;
        cfg.resolve(base);
        cfg.check()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.paths.catalog);
        fix(&mut self.paths.library);
        fix(&mut self.paths.users);
        fix(&mut self.paths.templates);
        fix(&mut self.paths.cassette);
        fix(&mut self.embedder.path);
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.retrieval.n == 0 {
            return Err(ConfigError::Invalid(
                "retrieval.n must be at least 1".into(),
            ));
        }
        if self.llm.retry_attempts == 0 {
            return Err(ConfigError::Invalid(
                "llm.retry_attempts must be at least 1".into(),
            ));
        }
        if self.embedder.dim == 0 {
            return Err(ConfigError::Invalid(
                "embedder.dim must be at least 1".into(),
            ));
        }
        if self.metrics.tokenizer != TOKENIZER_VERSION {
            return Err(ConfigError::Invalid(format!(
                "metrics.tokenizer `{}` is not supported (only `{TOKENIZER_VERSION}`)",
                self.metrics.tokenizer
            )));
        }
        Ok(())
    }

    /// Every configured input file exists. The service calls this at
    /// startup; single commands only need the files they read.
    pub fn check_files(&self) -> Result<(), ConfigError> {
        let inputs = [
            &self.paths.catalog,
            &self.paths.library,
            &self.paths.users,
            &self.paths.templates,
            &self.embedder.path,
        ];
        for p in inputs.into_iter().flatten() {
            if !p.exists() {
                return Err(ConfigError::MissingFile(p.clone()));
            }
        }
        if self.llm.backend == LlmBackendKind::Replay {
            Self::required(&self.paths.cassette, "paths.cassette")?;
        }
        Ok(())
    }

    fn required<'a>(p: &'a Option<PathBuf>, field: &'static str) -> Result<&'a Path, ConfigError> {
        let path = p.as_deref().ok_or(ConfigError::Missing { field })?;
        if !path.exists() {
            return Err(ConfigError::MissingFile(path.to_path_buf()));
        }
        Ok(path)
    }

    pub fn load_catalog(&self) -> Result<TagCatalog, ConfigError> {
        let path = Self::required(&self.paths.catalog, "paths.catalog")?;
        TagCatalog::load(path).map_err(|e| ConfigError::Load {
            what: "catalog",
            message: e.to_string(),
        })
    }

    pub fn load_library(&self) -> Result<ReasoningLibrary, ConfigError> {
        let path = Self::required(&self.paths.library, "paths.library")?;
        ReasoningLibrary::load(path).map_err(|e| ConfigError::Load {
            what: "library",
            message: e.to_string(),
        })
    }

    pub fn load_users(&self, catalog: TagCatalog) -> Result<UserDb, ConfigError> {
        let path = Self::required(&self.paths.users, "paths.users")?;
        UserDb::load(catalog, path).map_err(|e| ConfigError::Load {
            what: "user database",
            message: e.to_string(),
        })
    }

    pub fn instructions(&self) -> Result<InstructionSet, ConfigError> {
        match &self.paths.templates {
            None => Ok(InstructionSet::builtin(self.prompt.language)),
            Some(p) => {
                InstructionSet::load(p, self.prompt.language).map_err(|e| ConfigError::Load {
                    what: "instruction templates",
                    message: e.to_string(),
                })
            }
        }
    }

    pub fn embedder(&self) -> Result<Arc<dyn Embedder>, ConfigError> {
        let e = &self.embedder;
        Ok(match e.backend {
            EmbedderKind::Hash => Arc::new(HashEmbedder::new(e.dim, e.seed)),
            EmbedderKind::Precomputed => {
                let path = Self::required(&e.path, "embedder.path")?;
                Arc::new(
                    PrecomputedEmbedder::load(path, e.version.clone()).map_err(|err| {
                        ConfigError::Load {
                            what: "precomputed embeddings",
                            message: err.to_string(),
                        }
                    })?,
                )
            }
            EmbedderKind::Remote => {
                if e.endpoint.is_empty() {
                    return Err(ConfigError::Missing {
                        field: "embedder.endpoint",
                    });
                }
                let api_key = match &e.api_key_env {
                    None => None,
                    Some(var) => {
                        Some(env(var).ok_or_else(|| ConfigError::MissingEnv(var.clone()))?)
                    }
                };
                Arc::new(RemoteEmbedder {
                    endpoint: e.endpoint.clone(),
                    model: e.model.clone(),
                    api_key,
                    timeout: Duration::from_millis(e.timeout_ms),
                })
            }
        })
    }

    fn remote_backend(&self) -> Result<RemoteBackend, ConfigError> {
        let key = env(&self.llm.api_key_env)
            .ok_or_else(|| ConfigError::MissingEnv(self.llm.api_key_env.clone()))?;
        Ok(RemoteBackend::new(self.llm.endpoint.clone(), Some(key)))
    }

    pub fn gateway(&self) -> Result<Gateway, ConfigError> {
        let l = &self.llm;
        let backend: Arc<dyn LlmBackend> = match l.backend {
            LlmBackendKind::Mock if l.mock.is_empty() => {
                Arc::new(MockBackend::always(MockReply::EchoLastSell))
            }
            LlmBackendKind::Mock => Arc::new(MockBackend::new(l.mock.clone())),
            LlmBackendKind::Replay => {
                let path = Self::required(&self.paths.cassette, "paths.cassette")?;
                Arc::new(ReplayBackend::load(path).map_err(|e| ConfigError::Load {
                    what: "cassette",
                    message: e.to_string(),
                })?)
            }
            LlmBackendKind::Record => {
                let path = self.paths.cassette.as_deref().ok_or(ConfigError::Missing {
                    field: "paths.cassette",
                })?;
                Arc::new(RecordingBackend::new(
                    Arc::new(self.remote_backend()?),
                    path,
                ))
            }
            LlmBackendKind::Remote => Arc::new(self.remote_backend()?),
        };
        let mut gw = Gateway::new(backend, l.max_in_flight).with_model(l.model.clone());
        gw.max_tokens = l.max_tokens;
        gw.timeout_ms = l.timeout_ms;
        gw.retry = RetryPolicy {
            attempts: l.retry_attempts,
            backoff_ms: l.backoff_ms,
        };
        Ok(gw)
    }
}
