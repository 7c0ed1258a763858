//! Error metrics, experiment orchestration, and result tables.

pub mod config;
pub mod experiment;
pub mod metrics;

pub use config::{ExperimentConfig, NetworkConfig, OperatorConfig, Seeds};
pub use experiment::{
    emit_cost_csv, emit_solution_plotdata, emit_table, evaluate_modno, generate_shards, init_modno, load_modno,
    run_experiment, save_modno, train_modno_once, CheckpointHeader, DataEncoding, ExperimentReport, ResultsTable, RunOptions, TableFormat,
};
pub use metrics::{mean_relative_l2, relative_l2};
