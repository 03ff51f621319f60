//! Tracking by detection: Kalman motion prediction, appearance-aware
//! association and tracklet lifecycle management.

mod bbox;
mod category;
mod hungarian;
mod kalman;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bbox::{iou, BBox};
pub use category::resolve_category;
pub use hungarian::{hungarian, Assignment, CostMatrix};
pub use kalman::{kalman_predict, kalman_update, KalmanState, MotionModel, STATE_DIM};

use crate::catalog::{Patch, Taxonomy};
use crate::features::Embedding;
use crate::ids::{NodeId, TrackletId};
use crate::scalar::{cosine, normalize_in_place, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum TrackerError {
    #[error("frame {frame_index} is not after last processed frame {last}")]
    OutOfOrder { frame_index: u64, last: u64 },
    #[error("detection {index} belongs to frame {found}, expected {expected}")]
    MixedFrame { index: usize, expected: u64, found: u64 },
    #[error("timestamp {timestamp_ms} ms precedes previously seen {last_ms} ms")]
    TimestampRegression { timestamp_ms: u64, last_ms: u64 },
    #[error("detection {index} has no appearance descriptor")]
    MissingAppearance { index: usize },
    #[error("measurement height must be positive, got {height}")]
    InvalidMeasurement { height: f64 },
    #[error("innovation covariance is not positive definite")]
    SingularInnovation,
}

/// One detector output.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection<T: Scalar = f64> {
    pub frame_index: u64,
    pub timestamp_ms: u64,
    pub bbox: BBox<T>,
    /// Hierarchical classifier scores per taxonomy node, each in `[0, 1]`.
    pub node_scores: BTreeMap<NodeId, T>,
    pub appearance: Option<Embedding<T>>,
    pub patch: Option<Patch>,
}

impl<T: Scalar> Detection<T> {
    /// Detector confidence: the highest node score, or one when unscored.
    pub fn confidence(&self) -> T {
        self.node_scores
            .values()
            .copied()
            .fold(None, |m: Option<T>, s| Some(m.map_or(s, |m| m.max(s))))
            .unwrap_or(T::one())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T: Scalar = f64> {
    pub frame_index: u64,
    pub timestamp_ms: u64,
    pub bbox: BBox<T>,
    pub appearance: Embedding<T>,
    pub confidence: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackState {
    Tentative,
    Confirmed,
    Lost,
    Terminated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackEventKind {
    Created,
    Confirmed,
    Lost,
    Terminated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackEvent {
    pub kind: TrackEventKind,
    pub tracklet_id: TrackletId,
    pub frame_index: u64,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone)]
pub struct Tracklet<T: Scalar = f64> {
    id: TrackletId,
    observations: Vec<Observation<T>>,
    state: TrackState,
    kalman: KalmanState<T>,
    hit_streak: u32,
    miss_count: u32,
    ever_confirmed: bool,
    category_path: Vec<NodeId>,
    /// Running appearance (EMA of observation descriptors, unit length).
    appearance: Vec<T>,
    score_sums: BTreeMap<NodeId, T>,
    scored: u32,
}

impl<T: Scalar> Tracklet<T> {
    pub fn id(&self) -> TrackletId {
        self.id
    }

    pub fn state(&self) -> TrackState {
        self.state
    }

    pub fn observations(&self) -> &[Observation<T>] {
        &self.observations
    }

    pub fn kalman(&self) -> &KalmanState<T> {
        &self.kalman
    }

    /// Box of the current motion estimate (the prediction between `predict`
    /// and `update`).
    pub fn predicted_box(&self) -> BBox<T> {
        self.kalman.bbox()
    }

    pub fn hit_streak(&self) -> u32 {
        self.hit_streak
    }

    pub fn miss_count(&self) -> u32 {
        self.miss_count
    }

    /// Whether the track ever reached `Confirmed`.
    pub fn ever_confirmed(&self) -> bool {
        self.ever_confirmed
    }

    pub fn category_path(&self) -> &[NodeId] {
        &self.category_path
    }

    pub fn appearance(&self) -> &[T] {
        &self.appearance
    }

    pub fn first_timestamp(&self) -> u64 {
        self.observations.first().map_or(0, |o| o.timestamp_ms)
    }

    pub fn last_timestamp(&self) -> u64 {
        self.observations.last().map_or(0, |o| o.timestamp_ms)
    }

    fn is_live(&self) -> bool {
        self.state != TrackState::Terminated
    }
}

/// Motion/appearance blend and gates used to score track–detection pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociationParams<T: Scalar = f64> {
    /// Weight of appearance distance; `1 - lambda` weighs box overlap.
    pub lambda: T,
    pub min_iou: T,
    pub max_app_dist: T,
}

impl<T: Scalar> Default for AssociationParams<T> {
    fn default() -> Self {
        Self {
            lambda: T::lit(0.5),
            min_iou: T::lit(0.05),
            max_app_dist: T::lit(0.7),
        }
    }
}

/// `lambda·(1 − cos) + (1 − lambda)·(1 − IoU)`, or `None` when the pair fails
/// both the overlap gate and the appearance gate.
pub fn association_cost<T: Scalar>(
    track: &Tracklet<T>,
    det: &Detection<T>,
    params: &AssociationParams<T>,
) -> Option<T> {
    let app = det.appearance.as_ref()?;
    let app_dist = T::one() - cosine(&track.appearance, app.values());
    let overlap = iou(&track.predicted_box(), &det.bbox);
    if overlap < params.min_iou && app_dist > params.max_app_dist {
        return None;
    }
    Some(params.lambda * app_dist + (T::one() - params.lambda) * (T::one() - overlap))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig<T: Scalar = f64> {
    pub association: AssociationParams<T>,
    /// Consecutive hits needed to confirm a tentative track.
    pub confirm_hits: u32,
    /// Frames a track may go unmatched before termination.
    pub max_age: u32,
    pub descend_threshold: T,
    /// EMA momentum for the track appearance.
    pub appearance_momentum: T,
    pub motion: MotionModel<T>,
}

impl<T: Scalar> Default for TrackerConfig<T> {
    fn default() -> Self {
        Self {
            association: AssociationParams::default(),
            confirm_hits: 3,
            max_age: 30,
            descend_threshold: T::lit(0.5),
            appearance_momentum: T::lit(0.9),
            motion: MotionModel::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutput {
    pub events: Vec<TrackEvent>,
    /// Track that absorbed each detection, in input order.
    pub assignments: Vec<TrackletId>,
}

/// Per-stream tracker. Frames must arrive with strictly increasing indices.
#[derive(Debug, Clone)]
pub struct Tracker<T: Scalar = f64> {
    config: TrackerConfig<T>,
    taxonomy: Arc<Taxonomy>,
    live: Vec<Tracklet<T>>,
    finished: Vec<Tracklet<T>>,
    next_id: u64,
    last_frame: Option<u64>,
    last_timestamp: u64,
}

impl<T: Scalar> Tracker<T> {
    pub fn new(config: TrackerConfig<T>, taxonomy: Arc<Taxonomy>) -> Self {
        Self {
            config,
            taxonomy,
            live: Vec::new(),
            finished: Vec::new(),
            next_id: 0,
            last_frame: None,
            last_timestamp: 0,
        }
    }

    pub fn config(&self) -> &TrackerConfig<T> {
        &self.config
    }

    /// Tracks not yet terminated, in creation order.
    pub fn live(&self) -> &[Tracklet<T>] {
        &self.live
    }

    pub fn finished(&self) -> &[Tracklet<T>] {
        &self.finished
    }

    /// Removes and returns terminated tracks accumulated so far.
    pub fn take_finished(&mut self) -> Vec<Tracklet<T>> {
        std::mem::take(&mut self.finished)
    }

    pub fn last_frame(&self) -> Option<u64> {
        self.last_frame
    }

    /// Advances the tracker by one frame.
    pub fn step(&mut self, frame_index: u64, detections: &[Detection<T>]) -> Result<StepOutput, TrackerError> {
        if let Some(last) = self.last_frame {
            if frame_index <= last {
                return Err(TrackerError::OutOfOrder { frame_index, last });
            }
        }
        for (index, d) in detections.iter().enumerate() {
            if d.frame_index != frame_index {
                return Err(TrackerError::MixedFrame {
                    index,
                    expected: frame_index,
                    found: d.frame_index,
                });
            }
            if d.timestamp_ms < self.last_timestamp {
                return Err(TrackerError::TimestampRegression {
                    timestamp_ms: d.timestamp_ms,
                    last_ms: self.last_timestamp,
                });
            }
            if d.appearance.is_none() {
                return Err(TrackerError::MissingAppearance { index });
            }
            if !(d.bbox.h > T::zero()) {
                return Err(TrackerError::InvalidMeasurement { height: d.bbox.h.as_f64() });
            }
        }
        let timestamp_ms = detections
            .iter()
            .map(|d| d.timestamp_ms)
            .max()
            .unwrap_or(self.last_timestamp);
        let gap = self.last_frame.map_or(1, |l| frame_index - l);
        let mut out = StepOutput::default();
        let ev = |kind, id, out: &mut StepOutput| {
            out.events.push(TrackEvent {
                kind,
                tracklet_id: id,
                frame_index,
                timestamp_ms,
            })
        };

        // Predict; frames skipped entirely count as misses for every track.
        let max_age = self.config.max_age;
        let skipped = u32::try_from(gap - 1).unwrap_or(u32::MAX);
        let predict_steps = gap.min(u64::from(max_age) + 2);
        for t in &mut self.live {
            for _ in 0..predict_steps {
                t.kalman = self.config.motion.predict(&t.kalman);
            }
            if skipped > 0 {
                t.miss_count = t.miss_count.saturating_add(skipped);
                t.hit_streak = 0;
                match t.state {
                    TrackState::Tentative => t.state = TrackState::Terminated,
                    TrackState::Confirmed => {
                        t.state = TrackState::Lost;
                        ev(TrackEventKind::Lost, t.id, &mut out);
                    }
                    _ => {}
                }
                if t.miss_count > max_age {
                    t.state = TrackState::Terminated;
                }
                if t.state == TrackState::Terminated {
                    ev(TrackEventKind::Terminated, t.id, &mut out);
                }
            }
        }
        self.retire();

        let mut cost = CostMatrix::filled(self.live.len(), detections.len(), T::infinity());
        for (r, t) in self.live.iter().enumerate() {
            for (c, d) in detections.iter().enumerate() {
                if let Some(v) = association_cost(t, d, &self.config.association) {
                    cost.set(r, c, v);
                }
            }
        }
        let assignment = hungarian(&cost);
        let det_to_track = assignment.col_to_row(detections.len());
        out.assignments = vec![TrackletId(0); detections.len()];

        for (r, t) in self.live.iter_mut().enumerate() {
            match assignment.row_to_col[r] {
                Some(c) => {
                    let d = &detections[c];
                    t.kalman = self.config.motion.update(&t.kalman, &d.bbox)?;
                    let app = d.appearance.as_ref().expect("checked above");
                    blend_appearance(&mut t.appearance, app.values(), self.config.appearance_momentum);
                    t.observations.push(Observation {
                        frame_index,
                        timestamp_ms: d.timestamp_ms,
                        bbox: d.bbox,
                        appearance: app.clone(),
                        confidence: d.confidence(),
                    });
                    if t.scored < self.config.confirm_hits {
                        accumulate_scores(&mut t.score_sums, &d.node_scores);
                        t.scored += 1;
                    }
                    t.hit_streak += 1;
                    t.miss_count = 0;
                    out.assignments[c] = t.id;
                    let confirm = match t.state {
                        TrackState::Tentative => t.hit_streak >= self.config.confirm_hits,
                        TrackState::Lost => true,
                        _ => false,
                    };
                    if confirm {
                        t.state = TrackState::Confirmed;
                        if !t.ever_confirmed {
                            t.ever_confirmed = true;
                            t.category_path = resolve_track(t, &self.taxonomy, self.config.descend_threshold);
                        }
                        ev(TrackEventKind::Confirmed, t.id, &mut out);
                    }
                }
                None => {
                    t.miss_count = t.miss_count.saturating_add(1);
                    t.hit_streak = 0;
                    match t.state {
                        TrackState::Tentative => t.state = TrackState::Terminated,
                        TrackState::Confirmed => {
                            t.state = TrackState::Lost;
                            ev(TrackEventKind::Lost, t.id, &mut out);
                        }
                        _ => {}
                    }
                    if t.miss_count > max_age {
                        t.state = TrackState::Terminated;
                    }
                    if t.state == TrackState::Terminated {
                        ev(TrackEventKind::Terminated, t.id, &mut out);
                    }
                }
            }
        }
        self.retire();

        for (c, d) in detections.iter().enumerate() {
            if det_to_track[c].is_some() {
                continue;
            }
            let id = TrackletId(self.next_id);
            self.next_id += 1;
            let app = d.appearance.as_ref().expect("checked above");
            let mut score_sums = BTreeMap::new();
            accumulate_scores(&mut score_sums, &d.node_scores);
            let mut t = Tracklet {
                id,
                observations: vec![Observation {
                    frame_index,
                    timestamp_ms: d.timestamp_ms,
                    bbox: d.bbox,
                    appearance: app.clone(),
                    confidence: d.confidence(),
                }],
                state: TrackState::Tentative,
                kalman: self.config.motion.initiate(&d.bbox),
                hit_streak: 1,
                miss_count: 0,
                ever_confirmed: false,
                category_path: Vec::new(),
                appearance: app.values().to_vec(),
                score_sums,
                scored: 1,
            };
            ev(TrackEventKind::Created, id, &mut out);
            if self.config.confirm_hits <= 1 {
                t.state = TrackState::Confirmed;
                t.ever_confirmed = true;
                t.category_path = resolve_track(&t, &self.taxonomy, self.config.descend_threshold);
                ev(TrackEventKind::Confirmed, id, &mut out);
            }
            out.assignments[c] = id;
            self.live.push(t);
        }

        self.last_frame = Some(frame_index);
        self.last_timestamp = timestamp_ms;
        Ok(out)
    }

    /// Terminates every live track (end of stream).
    pub fn finish(&mut self) -> Vec<TrackEvent> {
        let frame_index = self.last_frame.unwrap_or(0);
        let mut events = Vec::new();
        for t in &mut self.live {
            t.state = TrackState::Terminated;
            events.push(TrackEvent {
                kind: TrackEventKind::Terminated,
                tracklet_id: t.id,
                frame_index,
                timestamp_ms: self.last_timestamp,
            });
        }
        self.retire();
        events
    }

    /// Every track seen so far (finished and live), ordered by id.
    pub fn all_tracklets(&self) -> Vec<&Tracklet<T>> {
        let mut all: Vec<_> = self.finished.iter().chain(&self.live).collect();
        all.sort_by_key(|t| t.id);
        all
    }

    fn retire(&mut self) {
        let (live, done): (Vec<_>, Vec<_>) = std::mem::take(&mut self.live).into_iter().partition(Tracklet::is_live);
        self.live = live;
        self.finished.extend(done);
    }
}

fn resolve_track<T: Scalar>(t: &Tracklet<T>, taxonomy: &Taxonomy, threshold: T) -> Vec<NodeId> {
    let n = T::lit(f64::from(t.scored.max(1)));
    let avg: BTreeMap<NodeId, T> = t.score_sums.iter().map(|(k, &v)| (k.clone(), v / n)).collect();
    resolve_category(&avg, taxonomy, threshold)
}

fn blend_appearance<T: Scalar>(running: &mut [T], new: &[T], momentum: T) {
    let rest = T::one() - momentum;
    for (r, &x) in running.iter_mut().zip(new) {
        *r = momentum * *r + rest * x;
    }
    normalize_in_place(running);
}

fn accumulate_scores<T: Scalar>(sums: &mut BTreeMap<NodeId, T>, scores: &BTreeMap<NodeId, T>) {
    for (k, &v) in scores {
        *sums.entry(k.clone()).or_insert_with(T::zero) += v;
    }
}
