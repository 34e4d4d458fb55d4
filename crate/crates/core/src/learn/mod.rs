//! The RL-LSTM scheduling policy.
//!
//! A shared LSTM encoder reads the recent traffic of every SBS and every
//! WLAN channel, an MLP summarizes those encodings, and one LSTM decoder per
//! SBS emits a channel-selection vector and access probabilities for each
//! epoch of the prediction window. Decoders are trained with REINFORCE
//! against the penalized game utility and updated with RMSprop.

use thiserror::Error;

pub mod linalg;
pub mod lstm;
pub mod model;
pub mod persist;
pub mod reinforce;
pub mod rmsprop;
pub mod train;

pub use lstm::{param_count, LstmParams, LstmShape};
pub use model::{model_param_count, ModelShape, Policy, PolicyModel, Rollout};
pub use persist::{check_shape, load_model, read_model, save_model, write_model};
pub use reinforce::{gradient_check, reinforce_gradient, surrogate, BaselineMode, Episode, RunningMean};
pub use rmsprop::OptimizerState;
pub use train::{audit, infer, mix_seed, reward, train, train_from, variance_schedule, EpochLog, Example, TrainConfig, TrainError, TrainingLog};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no episodes to average")]
    NoEpisodes,
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
