//! Masked-reconstruction pretraining, reconstruction scoring and classifier
//! fine-tuning.

mod config;
mod eval;
mod finetune;
mod pretrain;

pub use config::TrainConfig;
pub use eval::{evaluate_reconstruction, token_pearson, ReconEval};
pub use finetune::{
    evaluate_predictions, finetune_classifier, permute_labels, predict_recordings, FinetuneOutcome, RecordingPrediction,
};
pub use pretrain::{
    pretrain, read_history_csv, sample_plan, validation_loss, EpochRecord, PretrainOutcome, StepRecord, TrainHistory,
};
