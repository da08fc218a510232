use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::thermal::ControlMode;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

/// Written before any result file and rewritten when the run ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario_name: String,
    pub scenario_hash: String,
    #[serde(default)]
    pub scenario_path: Option<String>,
    pub seed: u64,
    pub control: ControlMode,
    pub software_version: String,
    pub duration_s: f64,
    pub rounds: u64,
    pub started_at: String,
    #[serde(default)]
    pub finished_at: Option<String>,
    pub status: RunStatus,
    /// Set when the run failed after some outputs were written.
    #[serde(default)]
    pub partial: bool,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub outputs: Vec<String>,
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(MANIFEST_FILE), json + "\n")
    }

    pub fn read(dir: &Path) -> Result<Self, String> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn finish(&mut self, dir: &Path) -> std::io::Result<()> {
        self.status = RunStatus::Complete;
        self.finished_at = Some(now_rfc3339());
        self.write(dir)
    }

    pub fn fail(&mut self, dir: &Path, error: &str) -> std::io::Result<()> {
        self.status = RunStatus::Failed;
        self.partial = !self.outputs.is_empty();
        self.error = Some(error.to_string());
        self.finished_at = Some(now_rfc3339());
        self.write(dir)
    }
}
