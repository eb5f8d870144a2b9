//! The run configuration document (TOML).
//!
//! Every section is optional and falls back to its defaults; unknown keys
//! anywhere in the document are rejected.
//!
//! ```
//! use fnirs_skill::config::RunConfig;
//!
//! let cfg = RunConfig::from_toml_str("seed = 7\n[eval]\nk = 5\n").unwrap();
//! assert_eq!((cfg.seed, cfg.eval.k), (7, 5));
//! assert!(RunConfig::from_toml_str("[eval]\nkk = 5\n").is_err());
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Region;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::preprocess::PreprocessConfig;
use crate::synth::ScenarioConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset manifest (JSON) to train and evaluate on.
    pub manifest: Option<PathBuf>,
    /// Optional second manifest scored by every fold's classifier.
    pub retention_manifest: Option<PathBuf>,
    /// Regions to run; every region of the montage when empty.
    pub regions: Vec<Region>,
    /// Apply the duration, score and length exclusion rules on load.
    pub apply_exclusions: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { manifest: None, retention_manifest: None, regions: Vec::new(), apply_exclusions: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k: usize,
    pub stratified: bool,
    /// Fraction held out by the single train/test split.
    pub holdout_fraction: f64,
    /// Pretrain inside every fold instead of once per region on all trials.
    pub pretrain_per_fold: bool,
    pub trial_curve_from_day: u32,
    pub trial_curve_k: usize,
    /// Folds trained at the same time.
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 15,
            stratified: true,
            holdout_fraction: 0.2,
            pretrain_per_fold: false,
            trial_curve_from_day: 10,
            trial_curve_k: 5,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every random stream of a run is derived from it.
    pub seed: u64,
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    pub synth: ScenarioConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 2024,
            data: DataConfig::default(),
            preprocess: PreprocessConfig::default(),
            synth: ScenarioConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        // Relative data paths are taken relative to the config file.
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.manifest, &mut cfg.data.retention_manifest].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.eval.k < 2 {
            return Err(Error::Config("eval.k must be at least 2".into()));
        }
        if self.eval.trial_curve_k < 2 {
            return Err(Error::Config("eval.trial_curve_k must be at least 2".into()));
        }
        if !(self.eval.holdout_fraction > 0.0 && self.eval.holdout_fraction < 1.0) {
            return Err(Error::Config("eval.holdout_fraction must lie in (0, 1)".into()));
        }
        if self.eval.workers == 0 {
            return Err(Error::Config("eval.workers must be at least 1".into()));
        }
        if self.model.encoder_filters[2] != crate::model::CONTEXT_DIM {
            return Err(Error::Config(format!("the bottleneck width must be {}", crate::model::CONTEXT_DIM)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected_in_every_section() {
        for section in ["data", "preprocess", "synth", "model", "train", "eval"] {
            let text = format!("[{section}]\nno_such_key = 1\n");
            assert!(RunConfig::from_toml_str(&text).is_err(), "{section}");
        }
        assert!(RunConfig::from_toml_str("sed = 1\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml_str("[eval]\nk = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[train]\nminority_weight = 1.5\n").is_err());
    }
}
