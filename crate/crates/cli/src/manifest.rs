//! `manifest.json`: what was run, with which configuration, and what it
//! produced.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vrfb_core::CaseConfig;

use crate::config_file;
use crate::error::{CliError, CliResult};

/// SHA-256 of the canonical text form of the configuration.
pub fn config_hash(cfg: &CaseConfig) -> String {
    hex::encode(Sha256::digest(config_file::to_string(cfg).as_bytes()))
}

/// Hash identifying the optimization a checkpoint belongs to. The iteration
/// cap is left out so an interrupted run can be resumed with a higher cap.
pub fn checkpoint_hash(cfg: &CaseConfig) -> String {
    let mut c = cfg.clone();
    c.numerics.opt_max_iter = 0;
    config_hash(&c)
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverCounts {
    pub optimizer_iterations: usize,
    pub flow_solves: usize,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: Option<f64>,
    pub software_version: String,
    pub solver: SolverCounts,
    /// Output files relative to the run directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn start(command: &str, cfg: &CaseConfig) -> Self {
        Self {
            command: command.to_string(),
            config_hash: config_hash(cfg),
            started: unix_now(),
            finished: None,
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            solver: SolverCounts::default(),
            outputs: Vec::new(),
        }
    }

    pub fn add_output(&mut self, name: impl Into<String>) {
        let name = name.into();
        if !self.outputs.contains(&name) {
            self.outputs.push(name);
        }
    }

    /// Stamps the end time, checks that every listed output exists and
    /// writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> CliResult<PathBuf> {
        self.outputs.sort();
        if let Some(missing) = self.outputs.iter().find(|o| !dir.join(o).is_file()) {
            return Err(CliError::Usage(format!("manifest lists missing output '{missing}'")));
        }
        self.finished = Some(unix_now());
        self.outputs.push("manifest.json".to_string());
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self).map_err(|e| CliError::format(&path, e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_deterministic_and_sensitive() {
        let a = CaseConfig::default();
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_eq!(config_hash(&a).len(), 64);
        assert_ne!(config_hash(&a), config_hash(&a.with_porosity(0.68)));
    }

    #[test]
    fn checkpoint_hash_ignores_the_iteration_cap_only() {
        let a = CaseConfig::default();
        let mut b = a.clone();
        b.numerics.opt_max_iter = 7;
        assert_eq!(checkpoint_hash(&a), checkpoint_hash(&b));
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_ne!(checkpoint_hash(&a), checkpoint_hash(&a.with_porosity(0.68)));
    }

    #[test]
    fn finish_requires_listed_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::start("evaluate", &CaseConfig::default());
        m.add_output("missing.csv");
        assert!(m.finish(dir.path()).is_err());

        std::fs::write(dir.path().join("a.csv"), "x\n").unwrap();
        let mut m = RunManifest::start("evaluate", &CaseConfig::default());
        m.add_output("a.csv");
        let p = m.finish(dir.path()).unwrap();
        let back = RunManifest::read(&p).unwrap();
        assert_eq!(back.outputs, vec!["a.csv", "manifest.json"]);
        assert!(back.finished.unwrap() >= back.started);
    }
}
