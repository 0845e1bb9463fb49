//! Join discovery for tabular repositories.
//!
//! The pipeline ingests a directory of CSV tables, computes five pairwise
//! column similarity signals, keeps the top-k strongest edges per node and
//! per signal as a multi-relational graph, and trains a relational graph
//! convolutional network on self-generated join examples. The trained model
//! scores every cross-table column pair of the original repository.
//!
//! The numerical core ([`tensor`], [`model`], [`predict::metrics`]) is
//! generic over the scalar type; the aliases below fix it to `f64` (the
//! precision used by the pipeline) or `f32`.

pub mod benchmark;
pub mod error;
pub mod fabricate;
pub mod graph;
pub mod model;
pub mod pipeline;
pub mod predict;
pub mod profile;
pub mod repo;
pub mod scalar;
pub mod similarity;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::SimilarityGraph;
pub use repo::{Column, Repository, Table};
pub use scalar::Scalar;
pub use similarity::{SignalType, SimilarityRecord};

pub type Matrix64 = tensor::Matrix<f64>;
pub type Matrix32 = tensor::Matrix<f32>;
pub type Adam64 = tensor::Adam<f64>;
pub type Model64 = model::RgcnModel<f64>;
pub type Model32 = model::RgcnModel<f32>;
pub type Mlp64 = predict::baseline::Mlp<f64>;
