//! Core building blocks for localizing catalog products in livestreams:
//! catalog ingestion, tracking by detection, feature providers, fused
//! embeddings with triplet training, retrieval indexes and focus segments.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common instantiations.

pub mod catalog;
pub mod features;
pub mod focus;
pub mod fusion;
pub mod ids;
pub mod index;
pub mod records;
pub mod scalar;
pub mod text;
pub mod tracker;

pub use ids::{NodeId, ProductId, TrackletId};
pub use scalar::Scalar;
pub use text::TokenBag;

pub type Embedding32 = features::Embedding<f32>;
pub type Embedding64 = features::Embedding<f64>;
pub type FusionModel32 = fusion::FusionModel<f32>;
pub type FusionModel64 = fusion::FusionModel<f64>;
pub type FusedEmbedding32 = fusion::FusedEmbedding<f32>;
pub type FusedEmbedding64 = fusion::FusedEmbedding<f64>;
pub type ExactIndex32 = index::ExactIndex<f32>;
pub type ExactIndex64 = index::ExactIndex<f64>;
pub type LshIndex64 = index::LshIndex<f64>;
pub type Tracker32 = tracker::Tracker<f32>;
pub type Tracker64 = tracker::Tracker<f64>;
pub type Tracklet64 = tracker::Tracklet<f64>;
pub type Detection64 = tracker::Detection<f64>;
