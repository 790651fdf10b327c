//! Service configuration: a TOML file with environment overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use mindseek::{Method, SessionConfig};
use serde::{Deserialize, Serialize};

pub const ENV_PORT: &str = "MINDSEEK_PORT";
pub const ENV_CATALOG: &str = "MINDSEEK_CATALOG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub catalog: PathBuf,
    pub host: String,
    pub port: u16,
    /// Directory for the session event log and the results table. Nothing is
    /// persisted when unset.
    pub data_dir: Option<PathBuf>,
    pub n_display: usize,
    pub max_iters: usize,
    pub method: Method,
    /// Idle sessions are dropped from memory after this many seconds.
    pub ttl_secs: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            catalog: PathBuf::from("catalog.jsonl"),
            host: "127.0.0.1".into(),
            port: 8080,
            data_dir: None,
            n_display: 8,
            max_iters: 50,
            method: Method::Reweight,
            ttl_secs: 3600,
        }
    }
}

impl ServiceConfig {
    /// Reads `path` (defaults when `None`) and applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Self::parse(&text)?
            }
            None => Self::default(),
        };
        config.with_overrides(|key| std::env::var(key).ok())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).context("invalid service config")?;
        config.validate()?;
        Ok(config)
    }

    pub fn with_overrides(mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        if let Some(port) = lookup(ENV_PORT) {
            self.port = port.parse().with_context(|| format!("{ENV_PORT}={port:?} is not a port"))?;
        }
        if let Some(catalog) = lookup(ENV_CATALOG) {
            self.catalog = PathBuf::from(catalog);
        }
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        anyhow::ensure!(self.n_display > 0, "n_display must be positive");
        anyhow::ensure!(self.max_iters > 0, "max_iters must be positive");
        anyhow::ensure!(self.ttl_secs > 0, "ttl_secs must be positive");
        Ok(())
    }

    pub fn ttl(&self) -> Duration {
        Duration::from_secs(self.ttl_secs)
    }

    pub fn session_config(&self) -> SessionConfig {
        SessionConfig { n_display: self.n_display, max_iters: self.max_iters, method: self.method, ..SessionConfig::default() }
    }
}
