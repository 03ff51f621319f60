//! Engine state shared by pipeline runs and the HTTP service: the published
//! model snapshot, per-stream results, seller feedback and the queue of
//! training examples derived from it.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use shopfocus_core::catalog::{Catalog, Taxonomy};
use shopfocus_core::features::{HashingTextProvider, HistogramProvider, TextProvider, VisualProvider};
use shopfocus_core::focus::FocusSegment;
use shopfocus_core::fusion::{FusionModel, LabeledAnchor, ModalPair, ProductSide, TrainingSet, Triplet};
use shopfocus_core::index::QueryResult;
use shopfocus_core::{ProductId, TrackletId};
use thiserror::Error;
use tokio::sync::broadcast;

use crate::config::EngineConfig;
use crate::error::EngineError;
use crate::events::{PipelineEvent, PipelineSummary, TrackletSummary};
use crate::pipeline::{run_pipeline, PipelineContext};
use crate::snapshot::{build_snapshot, catalog_pairs, check_model_dims, ungrouped, SnapshotHolder};
use crate::source::StreamSource;

const LIVE_BUFFER: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Confirm,
    Reject,
}

/// Body of a feedback submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRequest {
    pub segment_id: u64,
    pub verdict: Verdict,
    pub seller_id: String,
}

/// A stored seller verdict on an emitted segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub feedback_id: u64,
    pub stream_id: String,
    pub segment_id: u64,
    pub product_id: ProductId,
    pub verdict: Verdict,
    pub seller_id: String,
    /// Wall-clock receipt time, Unix milliseconds.
    pub timestamp_ms: u64,
}

/// An emitted segment with its stream-local id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment_id: u64,
    pub stream_id: String,
    #[serde(flatten)]
    pub segment: FocusSegment,
}

/// One record on the live push channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveEvent {
    /// Position in the stream's event history, from 1.
    pub seq: u64,
    /// `focus`, `tracklet` or `summary`.
    pub event_type: String,
    pub stream_id: String,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum StreamStatus {
    Running,
    Finished,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamInfo {
    pub stream_id: String,
    #[serde(flatten)]
    pub status: StreamStatus,
    pub segments: usize,
    pub tracklets: usize,
    pub events: u64,
}

/// A queued training example: the tracklet inputs a segment was matched on,
/// labeled with the segment's product.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingItem {
    pub feedback_id: u64,
    pub stream_id: String,
    pub segment_id: u64,
    pub tracklet_id: TrackletId,
    pub anchor: ModalPair,
    pub product_id: ProductId,
    pub verdict: Verdict,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown stream {0}")]
    UnknownStream(String),
    #[error("stream {stream_id} has no segment {segment_id}")]
    UnknownSegment { stream_id: String, segment_id: u64 },
    #[error("segment {segment_id} already has verdict {existing:?}")]
    Conflict { segment_id: u64, existing: Verdict },
    #[error("segment {segment_id} has no matched window to learn from")]
    NoAnchor { segment_id: u64 },
    #[error("seller id must not be empty")]
    EmptySeller,
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone)]
struct WindowRecord {
    span: (u64, u64),
    pair: ModalPair,
    result: QueryResult,
}

#[derive(Debug, Clone)]
struct StoredSegment {
    record: SegmentRecord,
    anchor: Option<(TrackletId, ModalPair)>,
}

#[derive(Debug)]
struct StreamData {
    status: StreamStatus,
    segments: Vec<StoredSegment>,
    tracklets: BTreeMap<TrackletId, TrackletSummary>,
    windows: BTreeMap<TrackletId, Vec<WindowRecord>>,
    history: Vec<LiveEvent>,
    feedback: Vec<FeedbackEvent>,
    summary: Option<PipelineSummary>,
}

/// Results and live channel of one stream.
#[derive(Debug)]
pub struct StreamState {
    stream_id: String,
    data: Mutex<StreamData>,
    live: broadcast::Sender<LiveEvent>,
}

impl StreamState {
    fn new(stream_id: String) -> Self {
        Self {
            stream_id,
            data: Mutex::new(StreamData {
                status: StreamStatus::Running,
                segments: Vec::new(),
                tracklets: BTreeMap::new(),
                windows: BTreeMap::new(),
                history: Vec::new(),
                feedback: Vec::new(),
                summary: None,
            }),
            live: broadcast::channel(LIVE_BUFFER).0,
        }
    }

    fn lock(&self) -> MutexGuard<'_, StreamData> {
        self.data.lock().expect("stream state poisoned")
    }

    pub fn stream_id(&self) -> &str {
        &self.stream_id
    }

    fn push(&self, data: &mut StreamData, event_type: &str, payload: serde_json::Value) {
        let ev = LiveEvent {
            seq: data.history.len() as u64 + 1,
            event_type: event_type.into(),
            stream_id: self.stream_id.clone(),
            payload,
        };
        data.history.push(ev.clone());
        // No subscribers is fine.
        let _ = self.live.send(ev);
    }

    /// Records one pipeline event and forwards it to live subscribers.
    pub fn apply(&self, event: PipelineEvent) {
        let mut data = self.lock();
        match event {
            PipelineEvent::Window {
                tracklet_id,
                span,
                pair,
                result,
            } => data.windows.entry(tracklet_id).or_default().push(WindowRecord { span, pair, result }),
            PipelineEvent::Lifecycle(update) => {
                data.tracklets.insert(update.summary.tracklet_id, update.summary.clone());
                let payload = serde_json::to_value(&update).expect("lifecycle serializes");
                self.push(&mut data, "tracklet", payload);
            }
            PipelineEvent::Focus(segment) => {
                let anchor = best_anchor(&data.windows, &segment);
                let record = SegmentRecord {
                    segment_id: data.segments.len() as u64 + 1,
                    stream_id: self.stream_id.clone(),
                    segment,
                };
                let payload = serde_json::to_value(&record).expect("segment serializes");
                data.segments.push(StoredSegment { record, anchor });
                self.push(&mut data, "focus", payload);
            }
        }
    }

    fn finish(&self, outcome: &Result<PipelineSummary, EngineError>) {
        let mut data = self.lock();
        match outcome {
            Ok(summary) => {
                data.summary = Some(summary.clone());
                let payload = serde_json::to_value(summary).expect("summary serializes");
                self.push(&mut data, "summary", payload);
                data.status = StreamStatus::Finished;
            }
            Err(e) => {
                data.status = StreamStatus::Failed(e.to_string());
                self.push(&mut data, "summary", serde_json::json!({ "error": e.to_string() }));
            }
        }
    }

    pub fn info(&self) -> StreamInfo {
        let data = self.lock();
        StreamInfo {
            stream_id: self.stream_id.clone(),
            status: data.status.clone(),
            segments: data.segments.len(),
            tracklets: data.tracklets.len(),
            events: data.history.len() as u64,
        }
    }

    pub fn status(&self) -> StreamStatus {
        self.lock().status.clone()
    }

    pub fn summary(&self) -> Option<PipelineSummary> {
        self.lock().summary.clone()
    }

    /// Segments starting at or after `since_ms`, in emission order.
    pub fn segments(&self, since_ms: u64) -> Vec<SegmentRecord> {
        self.lock()
            .segments
            .iter()
            .filter(|s| s.record.segment.start_ms >= since_ms)
            .map(|s| s.record.clone())
            .collect()
    }

    pub fn tracklets(&self) -> Vec<TrackletSummary> {
        self.lock().tracklets.values().cloned().collect()
    }

    pub fn feedback(&self) -> Vec<FeedbackEvent> {
        self.lock().feedback.clone()
    }

    /// Events with `seq > after`.
    pub fn history_after(&self, after: u64) -> Vec<LiveEvent> {
        let data = self.lock();
        data.history.iter().skip(after as usize).cloned().collect()
    }

    /// Subscribes to new events and returns the history after `after`
    /// atomically, so nothing is missed or duplicated.
    pub fn subscribe(&self, after: u64) -> (Vec<LiveEvent>, broadcast::Receiver<LiveEvent>) {
        let data = self.lock();
        let rx = self.live.subscribe();
        (data.history.iter().skip(after as usize).cloned().collect(), rx)
    }

    /// True once the stream ended and `seq` is its last event.
    pub fn is_drained(&self, seq: u64) -> bool {
        let data = self.lock();
        data.status != StreamStatus::Running && data.history.len() as u64 <= seq
    }
}

/// The matched window that best supports `segment`: a window of one of its
/// tracklets, overlapping the segment, scoring the segment's product highest.
fn best_anchor(windows: &BTreeMap<TrackletId, Vec<WindowRecord>>, segment: &FocusSegment) -> Option<(TrackletId, ModalPair)> {
    let mut best: Option<(f64, TrackletId, &WindowRecord)> = None;
    for id in &segment.tracklet_ids {
        for w in windows.get(id).into_iter().flatten() {
            if w.span.1 < segment.start_ms || w.span.0 > segment.end_ms {
                continue;
            }
            let Some(hit) = w.result.hits.iter().find(|h| h.product_id == segment.product_id) else {
                continue;
            };
            if best.as_ref().is_none_or(|(s, _, _)| hit.similarity > *s) {
                best = Some((hit.similarity, *id, w));
            }
        }
    }
    best.map(|(_, id, w)| (id, w.pair.clone()))
}

/// Providers matching the configured feature widths.
pub fn default_providers(config: &EngineConfig) -> (Arc<dyn VisualProvider<f64>>, Arc<dyn TextProvider<f64>>) {
    (
        Arc::new(HistogramProvider {
            bins: config.features.histogram_bins,
        }),
        Arc::new(HashingTextProvider {
            dim: config.features.text_dim,
        }),
    )
}

pub struct Engine {
    ctx: PipelineContext,
    catalog: Arc<Catalog>,
    products: Vec<ProductSide>,
    streams: RwLock<BTreeMap<String, Arc<StreamState>>>,
    training: Mutex<Vec<TrainingItem>>,
    next_feedback: Mutex<u64>,
}

impl Engine {
    pub fn new(
        config: EngineConfig,
        taxonomy: Taxonomy,
        catalog: Catalog,
        visual: Arc<dyn VisualProvider<f64>>,
        text: Arc<dyn TextProvider<f64>>,
        model: FusionModel,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        check_model_dims(&model, visual.dim(), text.dim())?;
        let uses_text = config.retrieval.mode.uses_text();
        let products = catalog_pairs(&catalog, visual.as_ref(), text.as_ref(), uses_text)?;
        let snapshot = build_snapshot(1, model, &catalog, &products, uses_text)?;
        Ok(Self {
            ctx: PipelineContext {
                config,
                taxonomy: Arc::new(taxonomy),
                visual,
                text,
                snapshots: Arc::new(SnapshotHolder::new(snapshot)),
            },
            catalog: Arc::new(catalog),
            products,
            streams: RwLock::new(BTreeMap::new()),
            training: Mutex::new(Vec::new()),
            next_feedback: Mutex::new(1),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.ctx.config
    }

    pub fn context(&self) -> &PipelineContext {
        &self.ctx
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    /// Catalog inputs as fused by the current snapshot.
    pub fn products(&self) -> &[ProductSide] {
        &self.products
    }

    pub fn snapshots(&self) -> &SnapshotHolder {
        &self.ctx.snapshots
    }

    /// Re-fuses the catalog with `model` and swaps in the new index. On error
    /// the current snapshot stays in place. Returns the new version.
    pub fn publish_model(&self, model: FusionModel) -> Result<u64, EngineError> {
        check_model_dims(&model, self.ctx.visual.dim(), self.ctx.text.dim())?;
        let current = self.ctx.snapshots.load();
        let snapshot = build_snapshot(current.version + 1, model, &self.catalog, &self.products, current.uses_text)?;
        Ok(self.ctx.snapshots.store(snapshot).version)
    }

    /// Registers a new stream id.
    pub fn open_stream(&self, stream_id: &str) -> Result<Arc<StreamState>, EngineError> {
        let mut streams = self.streams.write().expect("stream table poisoned");
        if streams.contains_key(stream_id) {
            return Err(EngineError::DuplicateStream(stream_id.into()));
        }
        let state = Arc::new(StreamState::new(stream_id.into()));
        streams.insert(stream_id.into(), state.clone());
        Ok(state)
    }

    pub fn stream(&self, stream_id: &str) -> Option<Arc<StreamState>> {
        self.streams.read().expect("stream table poisoned").get(stream_id).cloned()
    }

    pub fn streams(&self) -> Vec<StreamInfo> {
        let streams: Vec<_> = self.streams.read().expect("stream table poisoned").values().cloned().collect();
        streams.iter().map(|s| s.info()).collect()
    }

    /// Runs a source through the pipeline, recording results under its
    /// stream id. Blocks until the stream ends.
    pub fn run_stream(&self, source: StreamSource) -> Result<PipelineSummary, EngineError> {
        let state = self.open_stream(&source.stream_id)?;
        self.run_opened(&state, source)
    }

    /// Like [`Engine::run_stream`] for a stream registered with
    /// [`Engine::open_stream`].
    pub fn run_opened(&self, state: &StreamState, source: StreamSource) -> Result<PipelineSummary, EngineError> {
        let outcome = run_pipeline(source, &self.ctx, |ev| state.apply(ev));
        state.finish(&outcome);
        outcome
    }

    /// Stores a verdict. Repeating the same verdict returns the stored
    /// record; a different verdict on the same segment is a conflict.
    pub fn submit_feedback(&self, stream_id: &str, req: FeedbackRequest) -> Result<(FeedbackEvent, bool), ServiceError> {
        if req.seller_id.trim().is_empty() {
            return Err(ServiceError::EmptySeller);
        }
        let state = self
            .stream(stream_id)
            .ok_or_else(|| ServiceError::UnknownStream(stream_id.into()))?;
        let mut data = state.lock();
        let seg = data
            .segments
            .iter()
            .find(|s| s.record.segment_id == req.segment_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSegment {
                stream_id: stream_id.into(),
                segment_id: req.segment_id,
            })?;
        if let Some(existing) = data.feedback.iter().find(|f| f.segment_id == req.segment_id) {
            if existing.verdict != req.verdict {
                return Err(ServiceError::Conflict {
                    segment_id: req.segment_id,
                    existing: existing.verdict,
                });
            }
            return Ok((existing.clone(), false));
        }
        let (tracklet_id, anchor) = seg.anchor.ok_or(ServiceError::NoAnchor {
            segment_id: req.segment_id,
        })?;
        let feedback_id = {
            let mut next = self.next_feedback.lock().expect("feedback counter poisoned");
            *next += 1;
            *next - 1
        };
        let event = FeedbackEvent {
            feedback_id,
            stream_id: stream_id.into(),
            segment_id: req.segment_id,
            product_id: seg.record.segment.product_id.clone(),
            verdict: req.verdict,
            seller_id: req.seller_id,
            timestamp_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        };
        data.feedback.push(event.clone());
        self.training.lock().expect("training queue poisoned").push(TrainingItem {
            feedback_id,
            stream_id: stream_id.into(),
            segment_id: req.segment_id,
            tracklet_id,
            anchor,
            product_id: event.product_id.clone(),
            verdict: req.verdict,
        });
        Ok((event, true))
    }

    /// Queued training examples, one per stored feedback event.
    pub fn training_queue(&self) -> Vec<TrainingItem> {
        self.training.lock().expect("training queue poisoned").clone()
    }

    /// Training data from the queue. Confirmations become labeled anchors
    /// (negatives mined at training time). A rejection becomes a fixed
    /// triplet against each product confirmed for the same tracklet; a
    /// rejection with no such confirmation has no positive and is skipped.
    pub fn training_set(&self) -> TrainingSet {
        let queue = self.training_queue();
        let product = |id: &ProductId| self.products.iter().find(|p| &p.product_id == id);
        let anchors = queue
            .iter()
            .filter(|i| i.verdict == Verdict::Confirm)
            .map(|i| LabeledAnchor {
                pair: i.anchor.clone(),
                product_id: i.product_id.clone(),
            })
            .collect();
        let mut fixed = Vec::new();
        for r in queue.iter().filter(|i| i.verdict == Verdict::Reject) {
            let Some(neg) = product(&r.product_id) else { continue };
            for c in queue.iter().filter(|c| {
                c.verdict == Verdict::Confirm && c.stream_id == r.stream_id && c.tracklet_id == r.tracklet_id && c.product_id != r.product_id
            }) {
                let Some(pos) = product(&c.product_id) else { continue };
                fixed.push(Triplet {
                    anchor: r.anchor.clone(),
                    positive: pos.pair.clone(),
                    negative: neg.pair.clone(),
                    positive_id: pos.product_id.clone(),
                    negative_id: neg.product_id.clone(),
                });
            }
        }
        let products = if self.config().retrieval.category_filter {
            self.products.clone()
        } else {
            ungrouped(self.products.clone())
        };
        TrainingSet {
            products,
            anchors,
            fixed,
        }
    }
}
