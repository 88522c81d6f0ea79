//! Low-rank graph hypernetwork (LoGAH) for predicting transformer parameters.
//!
//! The pipeline: sample ViT-style or GPT-2-style architectures (`archspace`),
//! lower each one to a computational graph (`graphir`), embed the graph nodes
//! and run them through a Graphormer-style encoder (`encoder`), then decode
//! per-node low-rank factor pairs from which every target weight tensor is
//! sliced and realized (`decoder`). `trainer` fits the whole hypernetwork
//! end-to-end on a task dataset, `costmodel` carries the parameter-count
//! analysis that motivates the low-rank decoder, and `workflows` exposes the
//! user-facing initialization / transfer / diversity tooling.

pub mod archspace;
pub mod costmodel;
pub mod decoder;
pub mod encoder;
pub mod graphir;
pub mod tape;
pub mod tensorio;
pub mod trainer;
pub mod workflows;

pub use archspace::{ArchDataset, ArchKind, ArchSpec, GptSpec, ViTSpec};
pub use decoder::{DecoderConfig, DecoderWeights, LowRankFactors, PredictedParameterSet};
pub use encoder::{EncoderConfig, EncoderWeights, NodeFeatureMatrix};
pub use graphir::{CompGraph, OpType};
pub use trainer::{Checkpoint, TrainConfig};

use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum LogahError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("dataset generation failed: {0}")]
    Generation(String),
    #[error("graph build failed: unsupported op {0}")]
    UnsupportedOp(String),
    #[error("unknown op type: {0}")]
    UnknownOp(String),
    #[error("non-finite value in {context} (node {node})")]
    NonFinite { context: String, node: String },
    #[error("tensor {name} folded dims {dim} exceed max mask K={k}")]
    Oversize { name: String, dim: usize, k: usize },
    #[error("shape contract violation: {0}")]
    ShapeContract(String),
    #[error("missing tensor: {0}")]
    MissingTensor(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("recipe error: {0}")]
    Recipe(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LogahError>;
