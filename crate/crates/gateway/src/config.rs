use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use atlas_core::orchestrator::PipelineLimits;
use atlas_core::router::TierPolicy;
use serde::{Deserialize, Serialize};

use crate::archive::DEFAULT_MAX_UNPACKED_BYTES;

pub const ENV_CONFIG: &str = "ATLAS_CONFIG";
pub const ENV_LISTEN: &str = "ATLAS_LISTEN";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    /// Required. A card without a name is not served.
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_description")]
    pub description: String,
    #[serde(default = "default_version")]
    pub version: String,
    /// Public base URL advertised on the card.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

fn default_description() -> String {
    "Spatial question answering over scene graphs and end-to-end ML competition pipelines".into()
}

fn default_version() -> String {
    env!("CARGO_PKG_VERSION").into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendSection {
    /// OpenAI-compatible chat-completions endpoints, one per tier, with
    /// credentials from `ATLAS_<TIER>_API_KEY` and `ATLAS_<TIER>_BASE_URL`.
    Http {
        #[serde(default = "default_request_timeout")]
        request_timeout_secs: u64,
    },
    /// Canned answers from a JSON file, for offline runs.
    Scripted { script: PathBuf },
}

fn default_request_timeout() -> u64 {
    120
}

impl Default for BackendSection {
    fn default() -> Self {
        Self::Http {
            request_timeout_secs: default_request_timeout(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Append-only task journal. In-memory only when absent.
    #[serde(default)]
    pub journal: Option<PathBuf>,
    /// Parent for per-task workspaces; the system temp dir when absent.
    #[serde(default)]
    pub workspace_root: Option<PathBuf>,
    #[serde(default)]
    pub keep_workspaces: bool,
    #[serde(default = "default_max_unpacked")]
    pub max_unpacked_bytes: u64,
    #[serde(default = "default_python")]
    pub python: PathBuf,
    #[serde(default)]
    pub agent: AgentSection,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub policy: TierPolicy,
    #[serde(default)]
    pub limits: PipelineLimits,
}

fn default_listen() -> String {
    DEFAULT_LISTEN.into()
}

fn default_max_unpacked() -> u64 {
    DEFAULT_MAX_UNPACKED_BYTES
}

fn default_python() -> PathBuf {
    "python3".into()
}

impl Default for AgentSection {
    fn default() -> Self {
        Self {
            name: String::new(),
            description: default_description(),
            version: default_version(),
            url: None,
        }
    }
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            listen: default_listen(),
            journal: None,
            workspace_root: None,
            keep_workspaces: false,
            max_unpacked_bytes: default_max_unpacked(),
            python: default_python(),
            agent: AgentSection {
                name: "atlas".into(),
                ..AgentSection::default()
            },
            backend: BackendSection::default(),
            policy: TierPolicy::default(),
            limits: PipelineLimits::default(),
        }
    }
}

impl GatewayConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        // relative paths in the file are relative to the file
        if let Some(base) = path.parent() {
            let rebase = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            cfg.journal.as_mut().map(rebase);
            cfg.workspace_root.as_mut().map(rebase);
            if let BackendSection::Scripted { script } = &mut cfg.backend {
                rebase(script);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.agent.name.trim().is_empty() {
            return Err(ConfigError::Invalid("agent.name is required".into()));
        }
        self.listen_addr()?;
        if self.max_unpacked_bytes == 0 {
            return Err(ConfigError::Invalid("max_unpacked_bytes must be positive".into()));
        }
        self.policy.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.limits.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn listen_addr(&self) -> Result<SocketAddr, ConfigError> {
        self.listen
            .parse()
            .map_err(|e| ConfigError::Invalid(format!("listen address `{}`: {e}", self.listen)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file() {
        let c = GatewayConfig::from_toml("[agent]\nname = \"atlas\"\n").unwrap();
        assert_eq!(c.listen, DEFAULT_LISTEN);
        assert_eq!(c.policy, TierPolicy::default());
        assert_eq!(c.limits.exec_timeout_secs, 300);
        assert_eq!(c.backend, BackendSection::default());
    }

    #[test]
    fn missing_or_blank_name_is_rejected() {
        for text in ["", "[agent]\nname = \"  \"\n", "listen = \"127.0.0.1:1\"\n"] {
            let err = GatewayConfig::from_toml(text).unwrap_err();
            assert!(err.to_string().contains("agent.name"), "{err}");
        }
    }

    #[test]
    fn full_file_and_bad_values() {
        let text = r#"
listen = "0.0.0.0:9000"
journal = "j.jsonl"
max_unpacked_bytes = 1024

[agent]
name = "atlas"
url = "https://atlas.example"

[backend]
kind = "scripted"
script = "answers.json"

[policy]
accept_fast = 0.9

[limits]
exec_timeout_secs = 60
"#;
        let c = GatewayConfig::from_toml(text).unwrap();
        assert_eq!(c.policy.accept_fast, 0.9);
        assert_eq!(c.policy.reflect_threshold, 0.6);
        assert_eq!(c.limits.exec_timeout_secs, 60);
        assert!(matches!(c.backend, BackendSection::Scripted { .. }));

        assert!(GatewayConfig::from_toml("listen = \"nope\"\n[agent]\nname = \"a\"\n").is_err());
        assert!(GatewayConfig::from_toml("[agent]\nname = \"a\"\n[limits]\nmax_heal_iterations = 9\n").is_err());
        assert!(GatewayConfig::from_toml("[agent]\nname = \"a\"\nextra = 1\n").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("atlas.toml");
        std::fs::write(&p, "journal = \"j.jsonl\"\n[agent]\nname = \"a\"\n[backend]\nkind = \"scripted\"\nscript = \"s.json\"\n").unwrap();
        let c = GatewayConfig::from_path(&p).unwrap();
        assert_eq!(c.journal.unwrap(), dir.path().join("j.jsonl"));
        assert_eq!(c.backend, BackendSection::Scripted { script: dir.path().join("s.json") });
    }
}
