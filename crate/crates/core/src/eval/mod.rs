//! Metrics, configuration files, and the experiment harness.

pub mod config;
pub mod experiment;
pub mod metrics;

pub use config::{params_to_text, Config};
pub use experiment::{
    evaluate_queries, ranked_lists_csv, run_experiment, run_experiment_file, shared_word_fraction,
    train_models, CorpusSource, ExperimentConfig, ExperimentReport, Grid, MetricsReport,
    QueryMetrics, RowReport, Toggles,
};
pub use metrics::{
    average_precision, mean_average_precision, ns_score, top_k_precision, GroundTruth,
};
