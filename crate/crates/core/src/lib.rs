//! Scan orders, selective state-space scans and 8-slot scan blocks for 2-D
//! segmentation, with a small reverse-mode autodiff engine and an experiment
//! harness on procedurally generated scenes.

pub mod autodiff;
pub mod blocks;
pub mod error;
pub mod grid_scan;
pub mod harness;
pub mod metrics;
pub mod patching;
pub mod ssm_core;

pub use error::{Error, Result};
