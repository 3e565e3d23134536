//! Run manifest: version, resolved configuration, seeds and outputs.

use std::collections::BTreeMap;
use std::path::Path;

use deepchoice::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// Name of the configuration echo written next to the manifest.
pub const CONFIG_ECHO: &str = "config.toml";
pub const MANIFEST: &str = "manifest.json";

/// `v<package version>` followed by the build's `git describe` output when
/// one was available.
pub fn version() -> String {
    let pkg = env!("CARGO_PKG_VERSION");
    match option_env!("DEEPCHOICE_GIT_DESCRIBE") {
        Some(d) if !d.is_empty() => format!("v{pkg}-g{d}"),
        _ => format!("v{pkg}"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub threads: usize,
    pub seeds: BTreeMap<String, u64>,
    pub config: ExperimentConfig,
    pub outputs: Vec<OutputFile>,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig, command: &str, outputs: Vec<OutputFile>) -> Self {
        Self {
            tool: "deepchoice".into(),
            version: version(),
            command: command.into(),
            threads: rayon::current_num_threads(),
            seeds: cfg.seeds().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            config: cfg.clone(),
            outputs,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| Error::Corrupt(e.to_string()))?;
        deepchoice::util::write_atomic(&dir.join(MANIFEST), &json)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))
    }
}
