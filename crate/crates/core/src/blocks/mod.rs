//! Encoder/decoder assembly: VMS blocks, the eight-slot scan, downsampling and the head.

mod checkpoint;
mod config;
mod model;
mod params;
mod vms;

pub use checkpoint::{read_checkpoint, write_checkpoint, MAGIC};
pub use config::{MergeMode, ModelConfig, ModelSection, STAGES};
pub use model::{argmax_rows, bilinear_map, model_forward, Model};
pub use params::{init_params, Bound, LinearParams, ModelParams, ParamId, ParamStore, ScanParamIds, VmsBlockParams};
pub use vms::{downsample, downsample_index, eight_d_scan, vms_block_forward};
