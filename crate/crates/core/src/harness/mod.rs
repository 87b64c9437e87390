//! Experiment runner: ingestion, optional pseudo-OOD generation, training,
//! scoring and metrics, with every artifact determined by the config.

mod compare;
mod run;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use compare::{compare, Comparison, DeltaRow};
pub use run::{
    emit_curves, execute, run, AdversarialSummary, DatasetInfo, ExperimentOutput, ExperimentReport, PogReport,
    Thresholds,
};

use crate::classifier::{ClassifierConfig, TrainConfig};
use crate::corpus::{DEFAULT_MAX_LEN, DEFAULT_MIN_FREQ};
use crate::error::{Error, Result};
use crate::pog::PogConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Mode {
    /// Cross-entropy on IND data only.
    #[default]
    #[serde(rename = "baseline")]
    Baseline,
    /// Entropy regularisation on the dataset's OOS training split.
    #[serde(rename = "entropy-oos")]
    EntropyOos,
    /// Entropy regularisation on generated pseudo-OOD utterances.
    #[serde(rename = "entropy-pog")]
    EntropyPog,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Baseline, Mode::EntropyOos, Mode::EntropyPog];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::EntropyOos => "entropy-oos",
            Mode::EntropyPog => "entropy-pog",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn invalid_mode(s: &str) -> Error {
    let valid: Vec<&str> = Mode::ALL.iter().map(|m| m.as_str()).collect();
    Error::Config(format!("invalid mode `{s}`; valid modes: {}", valid.join(", ")))
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| invalid_mode(s))
    }
}

/// Everything that determines a run. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Dataset file in the CLINC150 `data_full.json` layout.
    pub data: Option<PathBuf>,
    /// Output directory; not part of the report echo.
    pub output: Option<PathBuf>,
    /// Master seed, copied into the training and generation sections.
    pub seed: u64,
    pub max_len: usize,
    pub min_freq: usize,
    pub classifier: ClassifierConfig,
    pub train: TrainConfig,
    pub pog: PogConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Baseline,
            data: None,
            output: None,
            seed: 0,
            max_len: DEFAULT_MAX_LEN,
            min_freq: DEFAULT_MIN_FREQ,
            classifier: ClassifierConfig::default(),
            train: TrainConfig::default(),
            pog: PogConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        // Route a bad mode through the same message as the CLI flag.
        if let Ok(serde_json::Value::Object(map)) = serde_json::from_str::<serde_json::Value>(text) {
            if let Some(mode) = map.get("mode") {
                match mode.as_str() {
                    Some(s) => {
                        s.parse::<Mode>()?;
                    }
                    None => return Err(invalid_mode(&mode.to_string())),
                }
            }
        }
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The config with the master seed propagated into each section.
    pub fn resolved(&self) -> Self {
        let mut cfg = self.clone();
        cfg.train.seed = self.seed;
        cfg.pog.seed = self.seed;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.is_none() {
            return Err(Error::Config("no dataset path given".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        self.classifier.validate()?;
        self.train.validate()?;
        if self.mode == Mode::EntropyPog {
            self.pog.validate()?;
        }
        Ok(())
    }
}
