//! Experiment driver: synthetic data, configuration, training, decoding,
//! scoring and reports.

mod config;
mod data;
mod manifest;
mod run;
mod synth;
mod train;

pub use config::{
    DecodeSection, ExperimentConfig, LengthPenalty, ModelSection, PathSection, TrainSection, VocabSection, SCHEMA_VERSION,
};
pub use data::{load_split, RunDir, Sample, Vocabularies};
pub use manifest::{Manifest, Utterance};
pub use run::{
    asr_table, build_vocab, decode_samples, evaluate, gen_data, load_manifest, load_systems, model_configs,
    read_hypotheses, recipe_table, record_artifacts, report, run_decode, run_eval, score_recipe, train, train_loaded,
    write_decode_files, write_hypotheses, write_split_references, DecodeFiles, DecodedUtterance, EvalMode, EvalReport,
    RecipeScores, SPLITS,
};
pub use synth::{generate_synthetic_task, shuffled, Rule, SyntheticTaskSpec};
pub use train::{dev_loss, objective_grads, train_model, CheckpointRecord, LogEntry, Objective, TrainOutcome};
