//! TOML configuration shared by the CLI and the service.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ashl::{AshlConfig, LabelConfig};
use crate::describer::{
    ChatClient, DescribeConfig, EchoClient, FixtureClient, HttpBackendConfig, HttpClient,
    ModelParams, ReaderConfig,
};
use crate::hierarchy::TreeConfig;
use crate::lens::{PathConfig, StyleOverrides};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config value {key} = {value} is outside {range}")]
    OutOfRange {
        key: &'static str,
        value: String,
        range: &'static str,
    },
    #[error("config value {key}: {message}")]
    Invalid { key: &'static str, message: String },
    #[error("fixture backend: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub global_conf_min: f64,
    pub local_conf_min: f64,
    pub merge_iou: f64,
    pub click_expand_px: i64,
    pub input_iou_local: f64,
    pub input_iou_global: f64,
    pub confidence_baseline: f64,
    pub relation_deadband: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            global_conf_min: 0.15,
            local_conf_min: 0.05,
            merge_iou: 0.9,
            click_expand_px: 50,
            input_iou_local: 0.4,
            input_iou_global: 0.1,
            confidence_baseline: 0.7,
            relation_deadband: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Mock,
    /// Canned replies by request digest; falls back to `mock`.
    Fixture,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backend: Backend,
    pub fixture_path: Option<PathBuf>,
    #[serde(flatten)]
    pub params: ModelParams,
    pub http: HttpBackendConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Mock,
            fixture_path: None,
            params: ModelParams::default(),
            http: HttpBackendConfig::default(),
        }
    }
}

impl ModelConfig {
    /// The API key, if any, is read from `http.api_key_env` at this point.
    pub fn client(&self) -> Result<Box<dyn ChatClient>, ConfigError> {
        Ok(match self.backend {
            Backend::Mock => Box::new(EchoClient),
            Backend::Fixture => {
                let path = self
                    .fixture_path
                    .as_ref()
                    .ok_or_else(|| ConfigError::Fixture("fixture_path is not set".into()))?;
                let client = FixtureClient::load(path)
                    .map_err(|e| ConfigError::Fixture(format!("{}: {e}", path.display())))?;
                Box::new(client.with_fallback(Box::new(EchoClient)))
            }
            Backend::Http => Box::new(HttpClient::from_env(self.http.clone())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    pub session_ttl_secs: u64,
    pub max_sessions: usize,
    /// Allowed CORS origin; `*` allows any.
    pub cors_origin: String,
    pub max_upload_bytes: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            session_ttl_secs: 1800,
            max_sessions: 256,
            cors_origin: "*".into(),
            max_upload_bytes: 32 * 1024 * 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub jobs: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { jobs: 4, seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub thresholds: Thresholds,
    pub model: ModelConfig,
    /// Text-only judge for eval and verify; same shape as `model`.
    pub auxiliary: ModelConfig,
    pub style: StyleOverrides,
    pub describe: DescribeConfig,
    pub labels: LabelConfig,
    pub server: ServerConfig,
    pub eval: EvalSettings,
}

fn check(
    key: &'static str,
    value: f64,
    lo: f64,
    hi: f64,
    range: &'static str,
) -> Result<(), ConfigError> {
    if value.is_finite() && (lo..=hi).contains(&value) {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange {
            key,
            value: value.to_string(),
            range,
        })
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Defaults when `path` is `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.thresholds;
        check(
            "thresholds.global_conf_min",
            t.global_conf_min,
            0.0,
            1.0,
            "[0, 1]",
        )?;
        check(
            "thresholds.local_conf_min",
            t.local_conf_min,
            0.0,
            1.0,
            "[0, 1]",
        )?;
        check("thresholds.merge_iou", t.merge_iou, 0.0, 1.0, "[0, 1]")?;
        check(
            "thresholds.input_iou_local",
            t.input_iou_local,
            0.0,
            1.0,
            "[0, 1]",
        )?;
        check(
            "thresholds.input_iou_global",
            t.input_iou_global,
            0.0,
            1.0,
            "[0, 1]",
        )?;
        check(
            "thresholds.confidence_baseline",
            t.confidence_baseline,
            0.0,
            1.0,
            "[0, 1]",
        )?;
        check(
            "thresholds.relation_deadband",
            t.relation_deadband,
            0.0,
            0.5,
            "[0, 0.5]",
        )?;
        if t.click_expand_px < 0 {
            return Err(ConfigError::OutOfRange {
                key: "thresholds.click_expand_px",
                value: t.click_expand_px.to_string(),
                range: "[0, inf)",
            });
        }
        if let Some(a) = self.style.dot_alpha {
            check("style.dot_alpha", a, 0.0, 1.0, "[0, 1]")?;
        }
        if self.style.line_width_px == Some(0) {
            return Err(ConfigError::Invalid {
                key: "style.line_width_px",
                message: "must be at least 1".into(),
            });
        }
        if self.describe.max_side == Some(0) {
            return Err(ConfigError::Invalid {
                key: "describe.max_side",
                message: "must be at least 1".into(),
            });
        }
        if self.eval.jobs == 0 {
            return Err(ConfigError::Invalid {
                key: "eval.jobs",
                message: "must be at least 1".into(),
            });
        }
        if self.server.session_ttl_secs == 0 {
            return Err(ConfigError::Invalid {
                key: "server.session_ttl_secs",
                message: "must be positive".into(),
            });
        }
        if self.server.max_sessions == 0 {
            return Err(ConfigError::Invalid {
                key: "server.max_sessions",
                message: "must be positive".into(),
            });
        }
        for (key, m) in [
            ("model.backend", &self.model),
            ("auxiliary.backend", &self.auxiliary),
        ] {
            if m.backend == Backend::Fixture && m.fixture_path.is_none() {
                return Err(ConfigError::Invalid {
                    key,
                    message: "fixture backend needs fixture_path".into(),
                });
            }
        }
        Ok(())
    }

    pub fn tree(&self) -> TreeConfig {
        TreeConfig {
            global_conf_min: self.thresholds.global_conf_min,
            local_conf_min: self.thresholds.local_conf_min,
            ..TreeConfig::default()
        }
    }

    pub fn paths(&self) -> PathConfig {
        PathConfig {
            click_expand_px: self.thresholds.click_expand_px,
            input_iou_local: self.thresholds.input_iou_local,
            input_iou_global: self.thresholds.input_iou_global,
        }
    }

    pub fn ashl(&self) -> AshlConfig {
        AshlConfig {
            merge_iou: self.thresholds.merge_iou,
            labels: self.labels,
        }
    }

    pub fn reader(&self) -> ReaderConfig {
        ReaderConfig {
            tree: self.tree(),
            style: self.style,
            params: self.model.params.clone(),
            describe: self.describe,
        }
    }
}
