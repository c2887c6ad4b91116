//! Catalogs, scene ingestion, embeddings, box geometry, and the synthetic
//! long-tailed corpus generator that stands in for a detector stage.

mod catalog;
mod embedding;
mod geometry;
mod scene;
mod synthetic;

pub use catalog::{Category, PredicateCatalog, CATEGORIES};
pub use embedding::EmbeddingProvider;
pub use geometry::{
    box_geometry, pair_geometry_features, BoundingBox, BoxGeometry, PAIR_GEOMETRY_DIM,
};
pub use scene::{
    load_scenes_json, ordered_pairs, parse_scenes_json, save_scenes_json, scenes_to_json,
    ObjectInstance, ObjectVocab, SceneDataset, SceneRecord, DEFAULT_OBJECT_LABELS,
};
pub use synthetic::{
    generate_synthetic, geometric_constraint, has_geometric_constraint, synthesize_visual,
    SyntheticConfig,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{path}: {message}")]
    Validation { path: String, message: String },
    #[error("unknown predicate {0:?}")]
    UnknownPredicate(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;
