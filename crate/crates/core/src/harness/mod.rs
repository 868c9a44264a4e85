//! Orchestration: dataset and proposal files, configuration, synthetic
//! benchmarks, GP training-set assembly and the experiment drivers behind
//! the command-line tool.

mod config;
mod formats;
mod manifest;
mod run;
mod synth;

pub use config::{DataConfig, EvalConfig, ExperimentConfig, GpTrainingConfig, Method, OracleConfig};
pub use formats::{
    read_detections, read_model, sort_detections, write_detections, GpParams, ModelEntry, ModelFile, RunStamp,
};
pub use manifest::{ImageRecord, Manifest, ObjectRecord};
pub use run::{
    artifact, build_gp_training_sets, evaluate_sweep, feature_provider, fit_gp_params, load_dataset, oracle_experiment,
    postprocess, refine_detections, run_eval, run_gp_fit, run_oracle_experiment, run_refine, run_synth_gen, run_train,
    thread_pool, train_models, training_examples, Dataset, OracleReport, RefineReport, SearchStats, TrainSummary,
};
pub use synth::{generate_benchmark, generate_proposals, SynthConfig};
