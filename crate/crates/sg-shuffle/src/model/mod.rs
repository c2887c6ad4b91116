//! The predicate-prediction network: shared input projection, four
//! parallel per-category transformer encoders with pair heads, the
//! channel-shuffle fusion stage, and the final classifier over all
//! predicates plus background.

mod config;
mod encoder;
mod forward;
mod params;
mod shuffle;

pub use config::{ModelConfig, Protocol, ShuffleMode};
pub use encoder::{block_vars, encoder_block, encoder_stack, EncoderBlockVars, LAYER_NORM_EPS};
pub use forward::{
    active_objects, encode_inputs, forward_scene, pair_geometry_matrix, ModelContext,
    SceneForward,
};
pub use params::{
    expected_shapes, init_params, load_checkpoint, save_checkpoint, CATEGORY_KEYS,
};
pub use shuffle::{
    provenance_after, provenance_closure_layer, routing, routing_is_bijection, shuffle_stage,
    SourceSlice, N_PATHWAYS,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config error: {0}")]
    Config(String),
    #[error("scene has no objects")]
    EmptyScene,
    #[error("protocol requires detected_objects but the scene has none")]
    MissingDetections,
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;
