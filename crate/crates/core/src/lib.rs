//! Open-vocabulary object queries over grouped Gaussian-splat scenes.
//!
//! A [`GroupedScene`] holds Gaussians that each carry an identity encoding
//! and an optional object ID. Per-object bags of view embeddings
//! ([`EmbeddingBank`]) are scored against a text query with a
//! canonical-phrase relevancy, and the selected IDs drive either a rendered
//! 2D mask ([`tasks::segment_2d`]) or a filtered sub-scene
//! ([`tasks::extract_3d`]).

mod container;

pub mod classifier;
pub mod embedder;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod grouping;
pub mod gsg;
pub mod image;
pub mod relevancy;
pub mod render;
pub mod scene;
pub mod synthetic;
pub mod tasks;

pub use classifier::IdentityClassifier;
pub use embedder::{Embedder, Embedding, FileEmbedder, ToyEmbedder};
pub use embedding::{EmbeddingBag, EmbeddingBank, VisibilityStats};
pub use error::{Error, Result};
pub use image::RgbImage;
pub use relevancy::{QueryResult, RankedObject, SelectionRule};
pub use render::{RenderOptions, RenderedView};
pub use scene::{Camera, GroupedScene, ObjectId, ObjectInfo, SplatGaussian, IDENTITY_DIM};
pub use tasks::BinaryMask;
