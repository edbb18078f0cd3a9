//! Experiment configuration, workflows, reports, and curves.

pub mod config;
pub mod curves;
pub mod report;
pub mod workflows;

pub use config::{ExperimentConfig, Workflow, SEED_ENV};
pub use curves::{channel_sum_map, emit_curves, write_curves, Axis, Series};
pub use report::{
    load_evaluation_csv, read_evaluation_csv, save_evaluation_csv, write_evaluation_csv, EvaluationRow,
    OutputLock, RunLog,
};
pub use workflows::{
    decode_split, load_dataset, run_anchor1, run_anchor2, run_anchor3, run_compressed, train_codec_for,
    RunContext, Trained,
};
