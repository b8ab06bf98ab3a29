//! Scenario harness for the `hypodecay` toolkit: TOML configs in, CSV
//! series and JSON reports out.

pub mod config;
pub mod error;
pub mod fit;
pub mod scenario;

pub use config::{ScenarioConfig, ScenarioKind};
pub use error::CliError;
pub use fit::{fit_decay, DecayFit, Estimate};
pub use scenario::{run_scenario, write_outputs, DecayReport, ScenarioOutcome};
