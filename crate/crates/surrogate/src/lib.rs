//! Autoregressive dual-path Fourier transformer surrogate for the wave
//! datasets: overlapping tokenizer, model, training and evaluation.

pub mod config;
mod error;
pub mod eval;
pub mod model;
pub mod params;
pub mod tokenizer;
pub mod train;

pub use config::ModelConfig;
pub use error::{Result, SurrogateError};
pub use eval::{
    ablate, ablate_observed, error_curve, evaluate, rollout, rollout_many, spectrum, ErrorCurve, RolloutResult, Stepper,
};
pub use model::{forward, frequency_path, spatial_path, Surrogate};
pub use params::{load_checkpoint, save_checkpoint, CheckpointMeta, ModelParams, Normalization};
pub use tokenizer::{detokenize_overlap, tokenize_overlap, TokenGrid, TokenLayout};
pub use train::{
    grid_search, make_windows, train, train_on, GridSpec, TrainConfig, TrainData, TrainOutcome, TrainReport,
};
