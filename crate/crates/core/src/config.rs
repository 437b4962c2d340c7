//! Run configuration: one TOML file with flat dotted keys such as
//! `detector.radius = 1.0` or `scenario.bot_mixture.irc = 0.382`.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::botsim::ScenarioConfig;
use crate::pipeline::PipelineConfig;
use crate::stream::{DetectorParams, Mode};

pub const DEFAULT_RESERVOIR: usize = 32;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Exact,
    Approximate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSection {
    pub radius: f64,
    pub neighbor_threshold: usize,
    pub window_span: f64,
    pub mode: ModeName,
    pub reservoir_size: usize,
}

impl Default for DetectorSection {
    fn default() -> Self {
        let d = DetectorParams::default();
        Self {
            radius: d.radius,
            neighbor_threshold: d.neighbor_threshold,
            window_span: d.window_span,
            mode: ModeName::Exact,
            reservoir_size: DEFAULT_RESERVOIR,
        }
    }
}

impl DetectorSection {
    pub fn params(&self) -> DetectorParams {
        let mode = match self.mode {
            ModeName::Exact => Mode::Exact,
            ModeName::Approximate => Mode::Approximate {
                reservoir_size: self.reservoir_size,
            },
        };
        DetectorParams::new(self.radius, self.neighbor_threshold, self.window_span, mode)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub trace: Option<PathBuf>,
    pub verdicts: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub detector: DetectorSection,
    pub scenario: ScenarioConfig,
    pub pipeline: PipelineConfig,
    pub io: IoSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    pub fn seed(&self) -> u64 {
        self.scenario.seed
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(seed) = seed {
            self.scenario.seed = seed;
        }
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.detector
            .params()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.scenario
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.pipeline
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Parameters recorded in the evaluation report.
    pub fn report_params(&self) -> serde_json::Value {
        serde_json::json!({
            "detector": self.detector,
            "pipeline": self.pipeline,
        })
    }

    /// Renders the config in flat dotted-key form.
    pub fn to_dotted(&self) -> String {
        let value = toml::Value::try_from(self).expect("config is serializable");
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        lines.join("\n") + "\n"
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(table) => {
            for (k, v) in table {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("{prefix} = {other}")),
    }
}
