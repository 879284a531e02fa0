use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_scan::{GridShape, StrategySpec};
use crate::harness::strategy_from_str;
use crate::patching::{grid_dims, PatchConfig};

pub const STAGES: usize = 4;

/// How the eight slot outputs of a scan block are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub stage_depths: [usize; STAGES],
    pub stage_dims: [usize; STAGES],
    pub state_dim: usize,
    /// `patch.embed_dim` equals `stage_dims[0]`.
    pub patch: PatchConfig,
    pub in_channels: usize,
    pub num_classes: usize,
    pub strategy: StrategySpec,
    pub merge: MergeMode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_dims.contains(&0) {
            return Err(Error::Config("stage widths must be positive".into()));
        }
        if self.patch.embed_dim != self.stage_dims[0] {
            return Err(Error::Config(format!(
                "patch embedding width {} differs from stage-1 width {}",
                self.patch.embed_dim, self.stage_dims[0]
            )));
        }
        if self.state_dim == 0 || self.num_classes == 0 || self.in_channels == 0 {
            return Err(Error::Config("state size, class count and input channels must be positive".into()));
        }
        Ok(())
    }

    /// Token grids of the four stages for an `h x w` input.
    pub fn stage_grids(&self, h: usize, w: usize) -> Result<[GridShape; STAGES]> {
        let first = grid_dims(h, w, &self.patch)?;
        let mut grids = [first; STAGES];
        for s in 1..STAGES {
            let prev = grids[s - 1];
            grids[s] = GridShape { rows: prev.rows.div_ceil(2), cols: prev.cols.div_ceil(2) };
        }
        Ok(grids)
    }

    pub fn with_strategy(mut self, strategy: StrategySpec) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn to_section(&self) -> ModelSection {
        ModelSection {
            stage_depths: self.stage_depths,
            stage_dims: self.stage_dims,
            state_dim: self.state_dim,
            patch_size: self.patch.patch_size,
            stride: self.patch.stride,
            in_channels: self.in_channels,
            num_classes: self.num_classes,
            strategy: self.strategy.label().to_string(),
            merge: self.merge,
        }
    }
}

/// Serialized form of [`ModelConfig`] (the `[model]` section of a config file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub stage_depths: [usize; STAGES],
    pub stage_dims: [usize; STAGES],
    pub state_dim: usize,
    pub patch_size: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    /// Experiment label (`"Exp19"`) or direction list (`"D1,D2"`).
    pub strategy: String,
    pub merge: MergeMode,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            stage_depths: [1, 1, 1, 1],
            stage_dims: [16, 32, 64, 128],
            state_dim: 8,
            patch_size: 4,
            stride: 4,
            in_channels: 3,
            num_classes: 6,
            strategy: "Exp1".into(),
            merge: MergeMode::Sum,
        }
    }
}

impl ModelSection {
    pub fn to_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            stage_depths: self.stage_depths,
            stage_dims: self.stage_dims,
            state_dim: self.state_dim,
            patch: PatchConfig::new(self.patch_size, self.stride, self.stage_dims[0])?,
            in_channels: self.in_channels,
            num_classes: self.num_classes,
            strategy: strategy_from_str(&self.strategy)?,
            merge: self.merge,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelSection::default().to_config().expect("default model config is valid")
    }
}
