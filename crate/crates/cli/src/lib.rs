//! Experiment harness around the core library: configuration, the staged
//! pipeline with persisted artifacts, run reports, model-zoo scoring, and
//! the analytical check suite.
//!
//! Everything here is deterministic given the configuration. Wall-clock
//! timings are confined to the run manifest so rerunning a config rewrites
//! every other artifact byte for byte.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod theory_suite;
pub mod zoo;

pub use config::{config_hash, load_config, ArchSpec, DatasetSpec, ExperimentConfig, TriggerSpec};
pub use pipeline::{run_pipeline, RunManifest, Stage, StageRecord};
pub use report::{build_report, RunReport};
pub use theory_suite::{run_theory_suite, TheoryConfig, TheorySummary};
pub use zoo::{score_zoo, write_zoo_csv, ZooEntry, ZooTable};
