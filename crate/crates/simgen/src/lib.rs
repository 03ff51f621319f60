//! Synthetic livestreams with known ground truth, and the retrieval
//! ablation benchmark run over them.

use thiserror::Error;

pub mod bench;
pub mod params;
pub mod render;
pub mod scenario;
pub mod training;
pub mod world;

pub use bench::{benchmark, BenchParams, BenchReport};
pub use params::{CatalogParams, NoiseParams, ScenarioParams, CATEGORIES};
pub use render::{render_streams, Rendered};
pub use scenario::{gen_scenario, Scenario, TruthItem};
pub use world::SimWorld;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("run {seed} ({mode}) failed: {reason}")]
    Run { seed: String, mode: String, reason: String },
    #[error(transparent)]
    Engine(#[from] shopfocus_engine::EngineError),
    #[error(transparent)]
    Catalog(#[from] shopfocus_core::catalog::CatalogError),
    #[error(transparent)]
    Record(#[from] shopfocus_core::records::RecordError),
    #[error(transparent)]
    Tracker(#[from] shopfocus_core::tracker::TrackerError),
    #[error(transparent)]
    Fusion(#[from] shopfocus_core::fusion::FusionError),
    #[error(transparent)]
    Index(#[from] shopfocus_core::index::IndexError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
