//! Service configuration: TOML file plus `ALKGP_*` environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    /// Campaign event logs and snapshots live under `<data_dir>/campaigns`.
    pub data_dir: PathBuf,
    /// Cap on threads used for selection and refits.
    pub workers: Option<usize>,
    /// Built UI bundle served at `/`.
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            data_dir: PathBuf::from("campaign-data"),
            workers: None,
            ui_dir: None,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path` when given, then applies overrides from the process
    /// environment.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::from_toml(&std::fs::read_to_string(p)?)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    /// Overrides from `ALKGP_BIND`, `ALKGP_PORT`, `ALKGP_DATA_DIR`,
    /// `ALKGP_WORKERS` and `ALKGP_UI_DIR`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> anyhow::Result<()> {
        if let Some(v) = var("ALKGP_BIND") {
            self.bind = v;
        }
        if let Some(v) = var("ALKGP_PORT") {
            self.port = v.parse().map_err(|e| anyhow::anyhow!("ALKGP_PORT={v:?}: {e}"))?;
        }
        if let Some(v) = var("ALKGP_DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = var("ALKGP_WORKERS") {
            let n: usize = v.parse().map_err(|e| anyhow::anyhow!("ALKGP_WORKERS={v:?}: {e}"))?;
            if n == 0 {
                anyhow::bail!("ALKGP_WORKERS must be at least 1");
            }
            self.workers = Some(n);
        }
        if let Some(v) = var("ALKGP_UI_DIR") {
            self.ui_dir = Some(v.into());
        }
        Ok(())
    }

    pub fn worker_threads(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}
