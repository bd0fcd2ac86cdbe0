pub mod bptt;
pub mod config;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod run;

pub use bptt::{bptt, Gradients};
pub use config::{Decay, TrainingConfig};
pub use gradcheck::{grad_check, GradCheckBatch, GradCheckReport};
pub use loss::{softmax_xent, squared_error};
pub use optim::{clip_global_norm, ClipOutcome, Optimizer, OptimizerState};
pub use run::{
    evaluate_language_model, evaluate_sequence_task, metrics_csv, train_language_model, train_sequence_task,
    EpochRecord, RunStatus, Split, TrainOutcome,
};
