//! Training, evaluation, ablation, benchmarking and the staged pipeline.

mod ablation;
mod bench;
mod config;
mod metrics;
mod model;
mod report;
mod stages;
pub mod synthetic;

pub use ablation::{run_ablation, run_mode, AblationSetup};
pub use bench::{bench_inference, BenchOptions, BenchVariant};
pub use config::{LlmBackend, RunConfig, Stage};
pub use metrics::{auc, logloss, EpochRecord, MetricsReport};
pub use model::{
    sample_set_hash, train, KnowledgeRows, KnowledgeSource, Model, ModelManifest, TrainOptions, Trainer,
    ADAPTOR_PREFIX, BACKBONE_PREFIX,
};
pub use report::{append_jsonl, metrics_table, read_jsonl, timing_table, TimingRecord};
pub use stages::*;
