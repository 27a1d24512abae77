use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use convograph_core::gateway::{
    record_replay, ChatGateway, GatewayError, MockGateway, MockRule, MockScript, ModelConfig,
    OpenAiGateway, StoreMode,
};
use convograph_core::orchestrator::{InterventionPolicy, SessionConfig};
use convograph_core::templates::{TemplateError, TemplateSet};
use serde::Deserialize;
use thiserror::Error;

/// Environment variable holding the provider API key.
pub const API_KEY_ENV: &str = "CONVOGRAPH_API_KEY";

pub const DEFAULT_PORT: u16 = 8787;
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {message}")]
    Read { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Templates(#[from] TemplateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    /// OpenAI-compatible HTTP endpoint.
    Real,
    /// Scripted offline replies.
    Mock,
    /// Replies served from a record store.
    Replay,
}

/// Contents of the `--config` TOML file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub host: Option<String>,
    pub port: Option<u16>,
    pub provider: Option<Provider>,
    pub mock_script: Option<PathBuf>,
    pub record: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub base_url: Option<String>,
    pub timeout_secs: Option<u64>,
    pub fanout: Option<u32>,
    pub recent_interpretations: Option<usize>,
    pub model: Option<ModelConfig>,
    pub policy: Option<InterventionPolicy>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut config = Self::parse(&text).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut config.mock_script,
            &mut config.record,
            &mut config.data_dir,
            &mut config.templates_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

/// Command-line values, which win over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub host: Option<String>,
    pub port: Option<u16>,
    pub provider: Option<Provider>,
    pub mock_script: Option<PathBuf>,
    pub record: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub cooldown: Option<u32>,
    pub relevance_threshold: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub host: String,
    pub port: u16,
    pub provider: Provider,
    pub mock_script: Option<PathBuf>,
    /// Record store. Recorded into for `real`/`mock`, read for `replay`.
    pub record: Option<PathBuf>,
    pub data_dir: PathBuf,
    pub templates_dir: Option<PathBuf>,
    pub base_url: String,
    pub timeout: Duration,
    pub session: SessionConfig,
}

impl Settings {
    pub fn resolve(file: FileConfig, cli: Overrides) -> Result<Self, ConfigError> {
        let mut policy = file.policy.unwrap_or_default();
        if let Some(c) = cli.cooldown {
            policy.cooldown_actions = c;
        }
        if let Some(t) = cli.relevance_threshold {
            policy.relevance_threshold = t;
        }
        if !policy.is_valid() {
            return Err(ConfigError::Invalid(format!(
                "relevance threshold {} is outside [0, 1]",
                policy.relevance_threshold
            )));
        }
        let defaults = SessionConfig::default();
        let session = SessionConfig {
            model: file.model.unwrap_or(defaults.model),
            policy,
            fanout: file.fanout.unwrap_or(defaults.fanout),
            recent_interpretations: file
                .recent_interpretations
                .unwrap_or(defaults.recent_interpretations),
        };
        if session.fanout == 0 {
            return Err(ConfigError::Invalid("fanout must be at least 1".into()));
        }
        let provider = cli.provider.or(file.provider).unwrap_or(Provider::Mock);
        let record = cli.record.or(file.record);
        if provider == Provider::Replay && record.is_none() {
            return Err(ConfigError::Invalid(
                "--provider replay needs --record <store>".into(),
            ));
        }
        Ok(Self {
            host: cli.host.or(file.host).unwrap_or_else(|| "127.0.0.1".into()),
            port: cli.port.or(file.port).unwrap_or(DEFAULT_PORT),
            provider,
            mock_script: cli.mock_script.or(file.mock_script),
            record,
            data_dir: cli
                .data_dir
                .or(file.data_dir)
                .unwrap_or_else(|| PathBuf::from("convograph-data")),
            templates_dir: file.templates_dir,
            base_url: file.base_url.unwrap_or_else(|| DEFAULT_BASE_URL.into()),
            timeout: Duration::from_secs(file.timeout_secs.unwrap_or(60)),
            session,
        })
    }

    pub fn templates(&self) -> Result<TemplateSet, ConfigError> {
        Ok(match &self.templates_dir {
            Some(dir) => TemplateSet::load_dir(dir)?,
            None => TemplateSet::default(),
        })
    }

    pub fn build_gateway(
        &self,
        api_key: Option<String>,
    ) -> Result<Arc<dyn ChatGateway>, ConfigError> {
        let upstream: Arc<dyn ChatGateway> = match self.provider {
            Provider::Replay => {
                let store = self.record.as_deref().expect("checked in resolve");
                return Ok(record_replay(StoreMode::Replay, store, None)?);
            }
            Provider::Mock => {
                let script = match &self.mock_script {
                    Some(path) => MockScript::load(path)?,
                    None => default_mock_script(),
                };
                Arc::new(MockGateway::new(script))
            }
            Provider::Real => {
                let key = api_key.filter(|k| !k.is_empty()).ok_or_else(|| {
                    ConfigError::Invalid(format!("--provider real needs {API_KEY_ENV} to be set"))
                })?;
                Arc::new(OpenAiGateway::new(&self.base_url, &key, self.timeout)?)
            }
        };
        match &self.record {
            Some(store) => Ok(record_replay(StoreMode::Record, store, Some(upstream))?),
            None => Ok(upstream),
        }
    }
}

/// Script used by `--provider mock` without `--mock-script`.
pub fn default_mock_script() -> MockScript {
    MockScript::new("relevance: 0\ntext: (mock)")
        .rule(MockRule::contains(
            "TASK: respond",
            "Mock answer to: {last_user}",
        ))
        .rule(MockRule::contains(
            "TASK: interpret",
            "The user extended the canvas.",
        ))
}
