//! Records emitted by the pipeline and pushed to live subscribers.

use serde::{Deserialize, Serialize};
use shopfocus_core::focus::FocusSegment;
use shopfocus_core::fusion::ModalPair;
use shopfocus_core::index::QueryResult;
use shopfocus_core::tracker::{TrackEvent, TrackState, Tracklet};
use shopfocus_core::{NodeId, TrackletId};

use crate::queue::QueueReport;

/// Snapshot of one tracklet as seen by API clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackletSummary {
    pub tracklet_id: TrackletId,
    pub state: TrackState,
    pub category_path: Vec<NodeId>,
    pub first_ms: u64,
    pub last_ms: u64,
    pub observations: usize,
}

impl TrackletSummary {
    pub fn of(t: &Tracklet) -> Self {
        Self {
            tracklet_id: t.id(),
            state: t.state(),
            category_path: t.category_path().to_vec(),
            first_ms: t.first_timestamp(),
            last_ms: t.last_timestamp(),
            observations: t.observations().len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifecycleUpdate {
    pub event: TrackEvent,
    pub summary: TrackletSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PipelineEvent {
    /// A closed focus segment.
    Focus(FocusSegment),
    Lifecycle(LifecycleUpdate),
    /// One retrieval window was matched; carries the inputs used.
    Window {
        tracklet_id: TrackletId,
        span: (u64, u64),
        pair: ModalPair,
        result: QueryResult,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: u64,
    pub mean_us: f64,
    pub max_us: u64,
}

impl LatencyStats {
    pub fn record(&mut self, us: u64) {
        self.mean_us += (us as f64 - self.mean_us) / (self.count + 1) as f64;
        self.count += 1;
        self.max_us = self.max_us.max(us);
    }
}

/// Terminal report of one pipeline run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub stream_id: String,
    pub frames: u64,
    pub detections: u64,
    pub transcripts: u64,
    pub comments: u64,
    pub tracklets_created: u64,
    pub tracklets_confirmed: u64,
    pub windows_released: u64,
    /// Windows folded into a neighbour while widening the hop.
    pub windows_merged: u64,
    /// Windows discarded under overload.
    pub windows_dropped: u64,
    pub windows_queried: u64,
    pub windows_degenerate: u64,
    pub segments: u64,
    pub queues: Vec<QueueReport>,
    /// Release-to-match latency of retrieval windows.
    pub window_latency: LatencyStats,
    pub wall_ms: u64,
}
