//! Diagonal state-space machinery: discretization, recurrences and references.

mod chunked;
mod oracle;
mod recurrence;
mod selective;
mod zoh;

pub use chunked::{selective_scan_chunked, Affine};
pub use oracle::{ode_oracle, ContinuousParams, DEFAULT_SUBSTEPS};
pub use recurrence::{ssm_scan, DiscreteParams};
pub use selective::{selective_scan_backward, selective_scan_forward, ScanGrads, ScanSaved, SelectiveScanParams};
pub use zoh::{discretize_zoh, SERIES_LIMIT};

pub(crate) use selective::sigmoid;
#[cfg(test)]
pub(crate) use selective::softplus;
