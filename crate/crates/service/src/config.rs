//! Service configuration: a single TOML file, overridable by environment
//! variables with the `MONDEO_` prefix.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use mondeo::dga::{DEFAULT_LOWER, DEFAULT_REMOTE_TIMEOUT_MS, DEFAULT_UPPER};
use mondeo::rate::{DEFAULT_DELTA_F, DEFAULT_K, DEFAULT_MAX_IDLE_SECS};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8279";
pub const DEFAULT_MAX_BATCH_LINES: usize = 100_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid {key}: {message}")]
    Invalid { key: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// Bind address; loopback by default.
    pub listen: SocketAddr,
    pub lists: ListsConfig,
    pub models: ModelsConfig,
    pub rate: RateSection,
    pub dga: DgaSection,
    pub feedback: FeedbackSection,
    pub service: ServiceSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ListsConfig {
    pub whitelist: Option<PathBuf>,
    pub blacklist: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub forest: Option<PathBuf>,
    pub dga: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateSection {
    pub delta_f: f64,
    pub k: u32,
    pub max_idle_secs: u64,
}

impl Default for RateSection {
    fn default() -> Self {
        Self {
            delta_f: DEFAULT_DELTA_F,
            k: DEFAULT_K,
            max_idle_secs: DEFAULT_MAX_IDLE_SECS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgaSection {
    pub lower: f64,
    pub upper: f64,
    pub remote_url: Option<String>,
    pub timeout_ms: u64,
}

impl Default for DgaSection {
    fn default() -> Self {
        Self {
            lower: DEFAULT_LOWER,
            upper: DEFAULT_UPPER,
            remote_url: None,
            timeout_ms: DEFAULT_REMOTE_TIMEOUT_MS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackSection {
    pub enabled: bool,
    pub allow_whitelist: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub max_batch_lines: usize,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self {
            max_batch_lines: DEFAULT_MAX_BATCH_LINES,
        }
    }
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: DEFAULT_LISTEN.parse().expect("default listen address"),
            lists: ListsConfig::default(),
            models: ModelsConfig::default(),
            rate: RateSection::default(),
            dga: DgaSection::default(),
            feedback: FeedbackSection::default(),
            service: ServiceSection::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Applies `MONDEO_*` environment overrides from the process
    /// environment.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        self.apply_env_vars(std::env::vars())
    }

    /// Same as [`apply_env`](Self::apply_env) over an explicit variable
    /// set, used by tests.
    pub fn apply_env_vars<I>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        for (key, value) in vars {
            let Some(suffix) = key.strip_prefix("MONDEO_") else {
                continue;
            };
            let fail = |message: String| ConfigError::Invalid {
                key: key.clone(),
                message,
            };
            match suffix {
                "LISTEN" => self.listen = value.parse().map_err(|e| fail(format!("{e}")))?,
                "LISTS_WHITELIST" => self.lists.whitelist = Some(PathBuf::from(value)),
                "LISTS_BLACKLIST" => self.lists.blacklist = Some(PathBuf::from(value)),
                "MODELS_FOREST" => self.models.forest = Some(PathBuf::from(value)),
                "MODELS_DGA" => self.models.dga = Some(PathBuf::from(value)),
                "RATE_DELTA_F" => {
                    self.rate.delta_f = value.parse().map_err(|e| fail(format!("{e}")))?
                }
                "RATE_K" => self.rate.k = value.parse().map_err(|e| fail(format!("{e}")))?,
                "RATE_MAX_IDLE_SECS" => {
                    self.rate.max_idle_secs = value.parse().map_err(|e| fail(format!("{e}")))?
                }
                "DGA_LOWER" => self.dga.lower = value.parse().map_err(|e| fail(format!("{e}")))?,
                "DGA_UPPER" => self.dga.upper = value.parse().map_err(|e| fail(format!("{e}")))?,
                "DGA_REMOTE_URL" => self.dga.remote_url = Some(value),
                "DGA_TIMEOUT_MS" => {
                    self.dga.timeout_ms = value.parse().map_err(|e| fail(format!("{e}")))?
                }
                "FEEDBACK_ENABLED" => {
                    self.feedback.enabled = parse_bool(&value)
                        .ok_or_else(|| fail(format!("expected true/false, got {value:?}")))?
                }
                "FEEDBACK_ALLOW_WHITELIST" => {
                    self.feedback.allow_whitelist = parse_bool(&value)
                        .ok_or_else(|| fail(format!("expected true/false, got {value:?}")))?
                }
                "SERVICE_MAX_BATCH_LINES" => {
                    self.service.max_batch_lines =
                        value.parse().map_err(|e| fail(format!("{e}")))?
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn parse_bool(value: &str) -> Option<bool> {
    match value.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Some(true),
        "0" | "false" | "no" | "off" => Some(false),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_module_defaults() {
        let cfg = ServiceConfig::default();
        assert_eq!(cfg.rate.delta_f, 0.05);
        assert_eq!(cfg.rate.k, 20);
        assert_eq!(cfg.rate.max_idle_secs, 3600);
        assert_eq!(cfg.dga.lower, 0.1);
        assert_eq!(cfg.dga.upper, 0.9);
        assert_eq!(cfg.dga.timeout_ms, 200);
        assert!(cfg.listen.ip().is_loopback());
    }

    #[test]
    fn toml_roundtrip() {
        let text = r#"
listen = "127.0.0.1:9000"

[rate]
delta_f = 0.1
k = 5

[dga]
remote_url = "http://127.0.0.1:9100/score"

[feedback]
enabled = true
"#;
        let cfg = ServiceConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.listen.port(), 9000);
        assert_eq!(cfg.rate.delta_f, 0.1);
        assert_eq!(cfg.rate.k, 5);
        assert_eq!(cfg.rate.max_idle_secs, 3600); // untouched default
        assert_eq!(
            cfg.dga.remote_url.as_deref(),
            Some("http://127.0.0.1:9100/score")
        );
        assert!(cfg.feedback.enabled);
        assert!(!cfg.feedback.allow_whitelist);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ServiceConfig::from_toml_str("nonsense = 1").is_err());
    }

    #[test]
    fn env_overrides_take_precedence() {
        let mut cfg = ServiceConfig::from_toml_str("[rate]\nk = 5\n").unwrap();
        cfg.apply_env_vars([
            ("MONDEO_RATE_K".to_string(), "9".to_string()),
            ("MONDEO_DGA_UPPER".to_string(), "0.8".to_string()),
            ("MONDEO_FEEDBACK_ENABLED".to_string(), "true".to_string()),
            ("MONDEO_LISTEN".to_string(), "127.0.0.1:7000".to_string()),
            ("UNRELATED".to_string(), "x".to_string()),
        ])
        .unwrap();
        assert_eq!(cfg.rate.k, 9);
        assert_eq!(cfg.dga.upper, 0.8);
        assert!(cfg.feedback.enabled);
        assert_eq!(cfg.listen.port(), 7000);
    }

    #[test]
    fn bad_env_value_is_an_error() {
        let mut cfg = ServiceConfig::default();
        let err = cfg
            .apply_env_vars([("MONDEO_RATE_K".to_string(), "many".to_string())])
            .unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { .. }));
    }
}
