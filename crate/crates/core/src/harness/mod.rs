//! Experiment driver: the strategy matrix, synthetic data, training and reports.

mod config;
mod matrix;
mod report;
mod synth;
mod train;

pub use config::{AblationSection, DataSection, ExperimentConfig, TrainSection, PATCHING_PAIRS};
pub use matrix::{build_experiment_matrix, strategy_from_str, ExperimentMatrix, LITERATURE};
pub use report::{
    ablate_patching, ablation_markdown, run_matrix, write_ablation, AblationRow, MatrixOptions, MatrixReport,
    RunOutcome, StrategyRow,
};
pub use synth::{
    augment, generate_dataset, generate_scene, load_sample, save_sample, write_dataset, Dataset, Sample,
    SyntheticSceneConfig, CLASS_NAMES,
};
pub use train::{derive_seed, evaluate, sample_gradients, train, RunResult, TrainConfig};
