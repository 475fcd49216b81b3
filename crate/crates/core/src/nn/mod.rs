//! Minimal CPU learner: small conv/dense classifiers with hand-written
//! backward passes, SGD with momentum on a cosine schedule, and the losses
//! and metrics needed by the desk experiments.

mod checkpoint;
mod loss;
mod metrics;
mod model;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use loss::{
    cross_entropy_smoothed, kl_divergence, log_softmax, smoothed_one_hot, softmax, softmax_kl, LOG_PROB_FLOOR,
};
pub use metrics::{argmax, ece, evaluate, predictions, Predictions};
pub use model::{images_to_input, Arch, Forward, LayerKind, Model, Shape, Tensor};
pub use optim::{cosine_lr, Sgd};
pub use train::{
    train, AugmentedSource, EpochRecord, Objective, TargetMode, TrainBatch, TrainConfig, TrainHistory, TrainSource,
};
