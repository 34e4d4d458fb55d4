//! Scenario runner for the coexistence lab: scenario files, the end-to-end
//! pipeline, parameter sweeps, MAC validation and output files.

pub mod output;
pub mod pipeline;
pub mod scenario;
pub mod sweep;
pub mod validate;

pub use pipeline::{run, PipelineError, RunOutput, RunStatus};
pub use scenario::{ConfigError, Scenario};
