//! Experiment orchestration: configuration files, seeded multi-seed runs,
//! the median-of-three protocol and result tables.

pub mod config;
pub mod report;
pub mod run;

pub use config::{parse_config, parse_pairs, parse_single, EnvConfig, ExperimentConfig, Method};
pub use report::{emit_report, parse_delimited, DelimitedRow, ReportFormat, DELIMITED_HEADER};
pub use run::{
    aggregate_all, aggregate_median3, run_experiment, run_experiment_cached, seed_for, BaseCache, Aggregate, RunRecord, SeedResult};
