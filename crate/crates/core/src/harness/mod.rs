//! Configuration, seeding, output writers and the subcommand runner used by the binary.

pub mod config;
pub mod report;
pub mod run;
pub mod seeds;

pub use config::ExperimentConfig;
pub use run::{run, Check, RunOutcome, Subcommand};
