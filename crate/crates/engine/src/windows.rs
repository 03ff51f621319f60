//! Retrieval windows over a tracklet and the per-window matching step shared
//! by the streaming pipeline and the offline path.
//!
//! Window `k` of a tracklet starting at `t0` collects the observations with
//! `t0 + k·hop <= ts < t0 + (k+1)·hop`; its span runs from the first to the
//! last of those observation timestamps.

use std::sync::Arc;

use shopfocus_core::features::{aggregate_tracklet, Comment, Embedding, Modality, TextProvider, TextWindowParams, TranscriptSegment};
use shopfocus_core::features::align_text_window;
use shopfocus_core::focus::{vote, MatchVote};
use shopfocus_core::fusion::{fuse, FusionError, ModalPair};
use shopfocus_core::index::QueryResult;
use shopfocus_core::tracker::Observation;
use shopfocus_core::{NodeId, TokenBag, TrackletId};

use crate::config::{EngineConfig, RetrievalMode};
use crate::error::EngineError;
use crate::snapshot::ModelSnapshot;

pub fn window_index(ts: u64, t0: u64, hop: u64) -> u64 {
    ts.saturating_sub(t0) / hop
}

/// Visual evidence for one window.
#[derive(Debug, Clone, PartialEq)]
pub enum VisualInput {
    /// The single most confident observation.
    Frame(Embedding),
    /// Every observation of the tracklet up to the window end, weighted by
    /// detector confidence.
    Track { descriptors: Vec<Embedding>, weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowTask {
    pub tracklet_id: TrackletId,
    /// First window index covered (several when windows were merged).
    pub first_k: u64,
    pub last_k: u64,
    pub t0: u64,
    pub span: (u64, u64),
    pub category_path: Vec<NodeId>,
    pub visual: VisualInput,
}

impl WindowTask {
    /// Interval whose speech and comments describe this window: from the
    /// tracklet start to the window end.
    pub fn text_span(&self) -> (u64, u64) {
        (self.t0, self.span.1)
    }
}

/// Assembles window `[first_k, last_k]` from a tracklet's observations, or
/// `None` when no observation falls inside it.
pub fn build_window(
    tracklet_id: TrackletId,
    category_path: &[NodeId],
    observations: &[Observation],
    first_k: u64,
    last_k: u64,
    hop: u64,
    mode: RetrievalMode,
) -> Option<WindowTask> {
    let t0 = observations.first()?.timestamp_ms;
    let k_of = |o: &Observation| window_index(o.timestamp_ms, t0, hop);
    let inside: Vec<&Observation> = observations
        .iter()
        .filter(|o| (first_k..=last_k).contains(&k_of(o)))
        .collect();
    let first = inside.first()?;
    let last = inside.last()?;
    let visual = match mode {
        RetrievalMode::VisualFrame => {
            let mut best = inside[0];
            for o in &inside[1..] {
                if o.confidence > best.confidence {
                    best = o;
                }
            }
            VisualInput::Frame(best.appearance.clone())
        }
        RetrievalMode::VisualTrack | RetrievalMode::Multimodal => {
            let upto: Vec<&Observation> = observations.iter().filter(|o| k_of(o) <= last_k).collect();
            VisualInput::Track {
                descriptors: upto.iter().map(|o| o.appearance.clone()).collect(),
                weights: upto.iter().map(|o| o.confidence).collect(),
            }
        }
    };
    Some(WindowTask {
        tracklet_id,
        first_k,
        last_k,
        t0,
        span: (first.timestamp_ms, last.timestamp_ms),
        category_path: category_path.to_vec(),
        visual,
    })
}

/// Linguistic context for a window (empty unless the mode uses text).
pub fn window_text(
    task: &WindowTask,
    mode: RetrievalMode,
    transcripts: &[TranscriptSegment],
    comments: &[Comment],
    params: TextWindowParams,
) -> TokenBag {
    if !mode.uses_text() {
        return TokenBag::new();
    }
    align_text_window(task.text_span(), transcripts, comments, params)
}

/// Modality embeddings for a window.
pub fn embed_window(
    task: &WindowTask,
    bag: &TokenBag,
    mode: RetrievalMode,
    text: &dyn TextProvider<f64>,
) -> Result<ModalPair, EngineError> {
    let position = || format!("tracklet {} window {}", task.tracklet_id, task.first_k);
    let visual = match &task.visual {
        VisualInput::Frame(e) => e.clone(),
        VisualInput::Track { descriptors, weights } => {
            aggregate_tracklet(descriptors, Some(weights)).map_err(|source| EngineError::Provider {
                stage: "embed",
                position: position(),
                source,
            })?
        }
    };
    let text = if mode.uses_text() {
        text.embed_tokens(bag).map_err(|source| EngineError::Provider {
            stage: "embed",
            position: position(),
            source,
        })?
    } else {
        Embedding::missing(text.dim(), Modality::Text)
    };
    Ok(ModalPair::new(visual, text))
}

/// Outcome of fusing and querying one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMatch {
    pub result: QueryResult,
    pub votes: Vec<MatchVote>,
    /// The window could not be fused (zero projection); no votes.
    pub degenerate: bool,
}

/// Fuses `pair` with the snapshot's model and queries its index, restricted
/// to the tracklet's category subtree when configured.
pub fn match_window(
    task: &WindowTask,
    pair: &ModalPair,
    snapshot: &ModelSnapshot,
    config: &EngineConfig,
) -> Result<WindowMatch, EngineError> {
    let fused = match fuse(&pair.visual, &pair.text, &snapshot.model) {
        Ok(f) if !f.is_missing() => f,
        Ok(_) | Err(FusionError::Degenerate { .. }) => {
            return Ok(WindowMatch {
                result: QueryResult::default(),
                votes: Vec::new(),
                degenerate: true,
            })
        }
        Err(e) => return Err(e.into()),
    };
    let k = config.retrieval.k;
    let prefix: &[NodeId] = if config.retrieval.category_filter {
        &task.category_path
    } else {
        &[]
    };
    let result = snapshot
        .index
        .query_filtered(&fused, k, |e| e.category_path.starts_with(prefix))?;
    let votes = vote(task.tracklet_id, &[(task.span, result.clone())], k);
    Ok(WindowMatch {
        result,
        votes,
        degenerate: false,
    })
}

/// Shared handle used where a snapshot must outlive a single call.
pub type SnapshotRef = Arc<ModelSnapshot>;
