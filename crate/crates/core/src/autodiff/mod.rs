//! Reverse-mode differentiation over a fixed whitelist of dense primitives.

mod check;
pub(crate) mod kernels;
mod optim;
mod tape;
mod tensor;

pub use check::{finite_diff_check, finite_diff_report, FdReport};
pub use kernels::linear_forward;
pub use optim::{adamw_step, OptimizerState, PolySchedule};
pub use tape::{GatherIndex, Gradients, ResampleMap, ScanVars, Tape, Var};
pub use tensor::Tensor;
