//! Staged experiment driver behind the `smoothfoley` binary.

mod compare;
mod config;
mod ledger;
mod pipeline;

pub use compare::{compare_report_files, compare_reports, Comparison};
pub use config::{
    apply_override, AblationConfig, ConditioningConfig, EvalConfig, ExperimentConfig, FilterConfig, LatentConfig, SamplerConfig, ScheduleConfig,
    Seeds, TemporalSource, Toggle,
};
pub use ledger::{artifact_version, LedgerEntry, RunLedger, LEDGER_FILE};
pub use pipeline::{
    InferRecord, Pipeline, DIAGNOSE_DETECTOR, EVALUATE, EVAL_SPLIT, FILTER_CONTINUOUS, GEN_CORPUS, INFER,
    TRAIN_EMBEDDER,
};
