//! Streaming engine for livestream focus localization: a staged pipeline
//! from detections and text to focus segments, an offline equivalent, model
//! publishing, seller feedback and the HTTP service.

pub mod api;
pub mod config;
pub mod error;
pub mod events;
pub mod ingest;
pub mod offline;
pub mod pipeline;
pub mod queue;
pub mod service;
pub mod snapshot;
pub mod source;
pub mod windows;

pub use config::{EngineConfig, RetrievalMode};
pub use error::{EngineError, StreamKind};
pub use events::{PipelineEvent, PipelineSummary};
pub use pipeline::{run_pipeline, PipelineContext};
pub use source::StreamSource;
pub use service::{default_providers, Engine, FeedbackEvent, FeedbackRequest, LiveEvent, SegmentRecord, Verdict};
