//! Optimization, the pre-training loop and evaluation metrics.

mod metrics;
mod optim;
mod pretrain;
mod schedule;

pub use metrics::{
    f1_from_counts, metrics, metrics_with, MetricReport, BOOTSTRAP_RESAMPLES, BOOTSTRAP_SEED,
};
pub use optim::{adam_step, Adam, AdamConfig, AdamMoments};
pub use pretrain::{
    prepare_example, pretrain, pretrain_step, ExampleCounts, PhaseConfig, PretrainConfig,
    PretrainReport, StepLog, StepLosses,
};
pub use schedule::Schedule;
