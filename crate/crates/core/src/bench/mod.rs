//! Experiment configuration, execution, persistence and reporting.

mod checkpoint;
mod config;
mod records;
mod report;
mod run;

pub use checkpoint::{
    load_checkpoint, lstm_from_checkpoint, lstm_to_checkpoint, save_checkpoint, unrolled_from_checkpoint,
    unrolled_to_checkpoint, Checkpoint, NamedArray,
};
pub use config::{
    AnalyticMethod, ExperimentConfig, LassoConfig, MetaConfig, MetaFlavor, Method, MlpConfig, RastriginConfig,
    SparseConfig, Testbed,
};
pub use records::{format_float, log_grid, read_records, write_records, Metric, RunRecord, CSV_HEADER, SUITE_INSTANCE};
pub use report::{
    aggregate, mean_stderr, relative_loss, report, summary_table, write_summary_csv, RelativeLoss, SummaryRow,
    REFERENCE_METHOD, REFERENCE_TOLERANCE,
};
pub use run::{
    data_checkpoint, generate, generate_data, method_seed, model_path, run_experiment, thread_pool, train_model,
    ExperimentData, LassoData, MlpData, Model, RastriginData, RunOptions, RunSummary, Trained, THREADS_ENV,
};
