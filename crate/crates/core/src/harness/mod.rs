//! Config files, named scenarios and result files.

pub mod config;
pub mod output;
pub mod scenario;
pub mod sequence;
pub mod svg;

pub use config::{OutputFormat, ScenarioConfig};
pub use output::emit_outputs;
pub use scenario::{run_scenario, ResultBundle, Scenario, Table};
pub use sequence::{validate_sequence, SequenceReport, SequenceTiming};
