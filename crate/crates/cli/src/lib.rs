//! Scenario runner for the foliation blow-up library: scenario parsing,
//! probe execution and report files.

pub mod builtins;
pub mod report;
pub mod runner;
pub mod scenario;

pub use builtins::{list_examples, BUILTINS};
pub use runner::{run, run_to_dir, RunOutcome};
pub use scenario::{Scenario, SchemaError};
