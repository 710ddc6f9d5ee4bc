//! Batch front end for the `weisslab` experiments: scenario configuration,
//! the stage pipeline, reports and plots.

pub mod calibrate;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod plot;

pub use config::{ScenarioConfig, StageName, OUT_ENV};
pub use error::{CliError, Stage};
pub use pipeline::{run_scenario, ProfileMeta, RunOutcome};
