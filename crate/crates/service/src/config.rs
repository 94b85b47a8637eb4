//! Service configuration: a flat file of dotted `key = value` lines.
//!
//! ```text
//! store.path = "pubbie.db"
//! llm.endpoint = "https://example.openai.azure.com/openai/deployments/gpt"
//! llm.api_key_env = "OPENAI_API_KEY"
//! server.max_upload_bytes = 16777216
//! ```
//!
//! Relative paths resolve against the directory holding the config file.
//! The API key itself is only ever read from the environment.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use pubbie_core::llm::OpenAiConfig;
use pubbie_core::orchestrator::{BusyPolicy, OrchestratorConfig};
use serde::Deserialize;

pub const MIN_UPLOAD_BYTES: u64 = 1 << 20;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("CONFIG_INVALID: cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("CONFIG_INVALID: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    store: RawStore,
    #[serde(default)]
    llm: RawLlm,
    #[serde(default)]
    templates: RawTemplates,
    #[serde(default)]
    history: RawHistory,
    #[serde(default)]
    server: RawServer,
    #[serde(default)]
    classifier: RawClassifier,
    #[serde(default)]
    retrieval: RawRetrieval,
    #[serde(default)]
    session: RawSession,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawStore {
    path: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawLlm {
    endpoint: Option<String>,
    api_key_env: Option<String>,
    model: Option<String>,
    embed_model: Option<String>,
    timeout_ms: Option<u64>,
    retries: Option<u32>,
    mock_script: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawTemplates {
    dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawHistory {
    window: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawServer {
    bind_addr: Option<String>,
    max_upload_bytes: Option<u64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawClassifier {
    model_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawRetrieval {
    k: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSession {
    busy_policy: Option<String>,
}

/// Where chat completions come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ProviderChoice {
    Mock(PathBuf),
    OpenAi(OpenAiConfig),
    /// Nothing configured; commands that need a model fail.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub store_path: PathBuf,
    pub provider: ProviderChoice,
    /// Endpoint settings, also used for embeddings when a mock handles chat.
    pub openai: Option<OpenAiConfig>,
    pub templates_dir: Option<PathBuf>,
    pub bind_addr: SocketAddr,
    pub max_upload_bytes: u64,
    pub classifier_model_path: Option<PathBuf>,
    pub orchestrator: OrchestratorConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self::from_raw(RawConfig::default(), Path::new(".")).expect("defaults are valid")
    }
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn must_exist(what: &str, p: &Path) -> Result<(), ConfigError> {
    if p.exists() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{what} {} does not exist", p.display())))
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.message().to_string()))?;
        Self::from_raw(raw, base)
    }

    fn from_raw(raw: RawConfig, base: &Path) -> Result<Self, ConfigError> {
        let store_path = resolve(base, raw.store.path.unwrap_or_else(|| PathBuf::from("pubbie.db")));
        let store_dir = store_path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        must_exist("store directory", store_dir)?;

        let defaults = OpenAiConfig::default();
        let openai = raw.llm.endpoint.clone().map(|endpoint| OpenAiConfig {
            endpoint,
            api_key_env: raw.llm.api_key_env.clone().unwrap_or(defaults.api_key_env.clone()),
            model: raw.llm.model.clone().unwrap_or(defaults.model.clone()),
            embed_model: raw.llm.embed_model.clone().unwrap_or(defaults.embed_model.clone()),
            timeout_ms: raw.llm.timeout_ms.unwrap_or(defaults.timeout_ms),
            retries: raw.llm.retries.unwrap_or(defaults.retries),
        });
        let provider = match (raw.llm.mock_script, &openai) {
            (Some(script), _) => {
                let script = resolve(base, script);
                must_exist("mock script", &script)?;
                ProviderChoice::Mock(script)
            }
            (None, Some(openai)) => ProviderChoice::OpenAi(openai.clone()),
            (None, None) => ProviderChoice::None,
        };

        let templates_dir = raw.templates.dir.map(|d| resolve(base, d));
        if let Some(dir) = &templates_dir {
            must_exist("template directory", dir)?;
        }
        let classifier_model_path = raw.classifier.model_path.map(|p| resolve(base, p));

        let bind = raw.server.bind_addr.unwrap_or_else(|| "127.0.0.1:8080".into());
        let bind_addr = bind
            .parse()
            .map_err(|_| ConfigError::Invalid(format!("server.bind_addr {bind:?} is not host:port")))?;
        let max_upload_bytes = raw.server.max_upload_bytes.unwrap_or(16 * MIN_UPLOAD_BYTES);
        if max_upload_bytes < MIN_UPLOAD_BYTES {
            return Err(ConfigError::Invalid(format!(
                "server.max_upload_bytes must be at least {MIN_UPLOAD_BYTES}, got {max_upload_bytes}"
            )));
        }

        let mut orchestrator = OrchestratorConfig::default();
        if let Some(k) = raw.history.window {
            orchestrator.history_window = k;
        }
        if let Some(k) = raw.retrieval.k {
            if k == 0 {
                return Err(ConfigError::Invalid("retrieval.k must be positive".into()));
            }
            orchestrator.retrieval_k = k;
        }
        orchestrator.busy_policy = match raw.session.busy_policy.as_deref() {
            None | Some("wait") => BusyPolicy::Wait,
            Some("reject") => BusyPolicy::Reject,
            Some(other) => {
                return Err(ConfigError::Invalid(format!(
                    "session.busy_policy must be \"wait\" or \"reject\", got {other:?}"
                )))
            }
        };

        Ok(Config {
            store_path,
            provider,
            openai,
            templates_dir,
            bind_addr,
            max_upload_bytes,
            classifier_model_path,
            orchestrator,
        })
    }
}
