//! Experiment runner: builds the scenario for each repetition, plays the
//! rounds, aggregates per-node statistics and writes result files.

mod config;
mod experiment;
mod output;

pub use config::ExperimentConfig;
pub use experiment::{
    build_federation, compare_strategies, compare_strategies_with_threads, mean_std,
    percentage_delta, rep_seed, run_experiment, run_experiment_with_threads, FinalRow,
    PartitionHash, RepFailure, ResultTable, SummaryRow, TrajectoryRow,
};
pub use output::{
    emit_results, read_results_csv, read_results_json, read_summary_csv, OutputFormat,
    RESULTS_CSV, RESULTS_HEADER, RESULTS_JSON, SUMMARY_CSV, SUMMARY_HEADER,
};
