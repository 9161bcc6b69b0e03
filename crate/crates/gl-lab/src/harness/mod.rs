//! Experiment orchestration: configuration, seeding, replica fan-out,
//! persistence, and statistical summaries.

pub mod config;
pub mod experiments;
pub mod report;
pub mod seed;
pub mod summarize;

pub use config::{ExperimentConfig, ExperimentTag, PotentialSpec, SbeSpec, TestFunctionSpec};
pub use experiments::run;
pub use report::{CsvTable, RunArtifact};
pub use seed::SeedStream;
pub use summarize::{mean_se, wls_log_log, MeanSe, SlopeFit};
