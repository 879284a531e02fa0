use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blocks::ModelSection;
use crate::error::{Error, Result};
use crate::harness::synth::SyntheticSceneConfig;

/// Patch/stride pairs in reporting order.
pub const PATCHING_PAIRS: [(usize, usize); 9] =
    [(4, 4), (8, 4), (8, 8), (16, 4), (16, 8), (16, 16), (32, 8), (32, 16), (32, 32)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    #[serde(flatten)]
    pub scene: SyntheticSceneConfig,
    pub n_train: usize,
    pub n_val: usize,
    pub augment: bool,
    /// Ground-truth class left out of the metrics and ignored by the loss (at most one).
    pub excluded_classes: Vec<usize>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            scene: SyntheticSceneConfig::default(),
            n_train: 300,
            n_val: 60,
            augment: true,
            excluded_classes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub poly_power: f64,
    pub log_every: usize,
    /// Mixed into every derived RNG stream.
    pub master_seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 8,
            lr: 3e-3,
            weight_decay: 0.01,
            warmup_frac: 0.05,
            poly_power: 1.0,
            log_every: 50,
            master_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub pairs: Vec<(usize, usize)>,
    /// Side length of the square input used for the FLOPs column.
    pub flops_input: usize,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self { pairs: PATCHING_PAIRS.to_vec(), flops_input: 512 }
    }
}

/// A whole experiment file: `[model]`, `[data]`, `[train]` and optionally `[ablation]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub data: DataSection,
    pub train: TrainSection,
    pub ablation: AblationSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.to_config()?;
        self.data.scene.validate()?;
        if self.data.scene.num_classes != self.model.num_classes {
            return Err(Error::Config(format!(
                "data generates {} classes, model predicts {}",
                self.data.scene.num_classes, self.model.num_classes
            )));
        }
        if self.data.n_train == 0 || self.train.batch_size == 0 || self.train.iterations == 0 {
            return Err(Error::Config("training split, batch size and iteration count must be positive".into()));
        }
        if !(self.train.lr >= 0.0 && self.train.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be non-negative", self.train.lr)));
        }
        if self.data.excluded_classes.len() > 1 {
            return Err(Error::Config("at most one class can be excluded".into()));
        }
        if let Some(&c) = self.data.excluded_classes.iter().find(|&&c| c >= self.model.num_classes) {
            return Err(Error::ClassOutOfRange { class: c, classes: self.model.num_classes });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.data.scene.image_size, 64);
        assert_eq!(cfg.train.iterations, 2000);
    }

    #[test]
    fn sections_parse() {
        let text = "[model]\nstrategy = \"Exp19\"\nstage_dims = [8, 8, 16, 16]\n\n[data]\nimage_size = 32\nn_train = 4\n\n[train]\nbatch_size = 2\n";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.model.strategy, "Exp19");
        assert_eq!(cfg.data.scene.image_size, 32);
        assert_eq!(cfg.data.n_train, 4);
        assert_eq!(cfg.train.batch_size, 2);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn rejects_inconsistent_files() {
        assert!(ExperimentConfig::from_toml("[train]\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("[data]\nnum_classes = 4\n").is_err());
        assert!(ExperimentConfig::from_toml("[model]\nstrategy = \"D1,D2,D3\"\n").is_err());
        assert!(ExperimentConfig::from_toml("[data]\nexcluded_classes = [9]\n").is_err());
    }
}
