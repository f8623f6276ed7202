//! The H-GPE model family: configuration, construction and forward pass.

mod config;
mod model;

pub use config::{stage_window_size, ModelConfig, Variant, DEFAULT_WINDOWS};
pub use model::{build_model, model_forward, Block, FeatureTrace, HGpeModel, Stage, INPUT_CHANNELS};
