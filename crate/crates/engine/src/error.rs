use shopfocus_core::catalog::CatalogError;
use shopfocus_core::features::FeatureError;
use shopfocus_core::fusion::FusionError;
use shopfocus_core::index::IndexError;
use shopfocus_core::records::RecordError;
use shopfocus_core::tracker::TrackerError;
use thiserror::Error;

use crate::config::ConfigError;

/// Input stream of a livestream source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Detections,
    Transcripts,
    Comments,
}

impl std::fmt::Display for StreamKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Detections => "detections",
            Self::Transcripts => "transcripts",
            Self::Comments => "comments",
        })
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{stream} stream out of order at line {line}: {found} after {previous}")]
    Ordering {
        stream: StreamKind,
        line: usize,
        previous: u64,
        found: u64,
    },
    #[error("{stream} stream: {source}")]
    Record { stream: StreamKind, source: RecordError },
    #[error("{stage} stage failed at {position}: {source}")]
    Provider {
        stage: &'static str,
        position: String,
        source: FeatureError,
    },
    #[error("tracker failed at frame {frame_index}: {source}")]
    Tracker { frame_index: u64, source: TrackerError },
    #[error("model has {what} dimension {model}, provider produces {provider}")]
    DimMismatch {
        what: &'static str,
        model: usize,
        provider: usize,
    },
    #[error("catalog product {product}: {reason}")]
    Product { product: String, reason: String },
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("pipeline stage {0} panicked")]
    StagePanic(&'static str),
    #[error("unknown stream {0}")]
    UnknownStream(String),
    #[error("stream {0} already exists")]
    DuplicateStream(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
