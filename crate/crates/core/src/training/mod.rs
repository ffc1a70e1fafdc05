//! Training objective, optimizer, synthetic data, metrics and gradient checks.

pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod pipeline;
pub mod sgd;
pub mod synth;

pub use loss::{cross_entropy_loss, LossOutput};
pub use metrics::{mean_iou, trimap_iou, ConfusionMatrix, IouReport};
pub use pipeline::{
    evaluate, format_log, train_pipeline, train_pipeline_with, Arch, EpochLog, Metrics, Model, ModelConfig, Sample,
    TrainOutcome, LOG_HEADER,
};
pub use sgd::{sgd_step, Sgd, TrainConfig};
pub use synth::{make_synthetic_dataset, SyntheticConfig, SyntheticSample};
