use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use harness_core::orchestration::SessionSpec;
use serde::Deserialize;

/// The TOML config file. Relative paths resolve against the file's directory.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    /// Memory store, one JSON entry per line. Must exist.
    pub store: PathBuf,
    /// Audit log. Created on first use; its payload file sits beside it.
    pub audit: PathBuf,
    /// Directory for trajectories and bench artifacts.
    #[serde(default)]
    pub workdir: Option<PathBuf>,
    /// Ground-truth facts used for verification.
    #[serde(default)]
    pub facts: BTreeMap<String, String>,
    pub session: SessionSpec,
    #[serde(skip)]
    pub base: PathBuf,
}

impl CliConfig {
    /// Loads and checks the config. The store must exist unless `allow_missing_store`.
    pub fn load(path: &Path, allow_missing_store: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config: CliConfig = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        config.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.store = config.base.join(&config.store);
        config.audit = config.base.join(&config.audit);
        config.workdir = Some(config.base.join(config.workdir.as_deref().unwrap_or(Path::new("."))));
        config.session.validate().context("invalid [session]")?;
        if !allow_missing_store && !config.store.is_file() {
            bail!("memory store not found: {}", config.store.display());
        }
        match config.audit.parent() {
            Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
                bail!("audit log directory not found: {}", dir.display())
            }
            _ => {}
        }
        Ok(config)
    }

    pub fn workdir(&self) -> &Path {
        self.workdir.as_deref().unwrap_or(&self.base)
    }
}
