//! Turning per-window retrieval matches into time-stamped focus segments,
//! and scoring them against ground-truth exhibitions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::{NodeId, ProductId, TrackletId};
use crate::index::{tally, IndexError, QueryResult, RecallReport};

/// One product suggestion for one retrieval window of a tracklet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchVote {
    pub tracklet_id: TrackletId,
    pub product_id: ProductId,
    pub similarity: f64,
    pub window: (u64, u64),
}

/// A stream interval attributed to one catalog product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusSegment {
    pub product_id: ProductId,
    pub start_ms: u64,
    pub end_ms: u64,
    pub confidence: f64,
    pub tracklet_ids: Vec<TrackletId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    /// Minimum vote similarity.
    pub tau: f64,
    pub max_gap_ms: u64,
    pub min_len_ms: u64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            tau: 0.6,
            max_gap_ms: 3000,
            min_len_ms: 1000,
        }
    }
}

/// Emits a vote for each of the top `k` products of every window, in window order.
pub fn vote(tracklet_id: TrackletId, results: &[((u64, u64), QueryResult)], k: usize) -> Vec<MatchVote> {
    results
        .iter()
        .flat_map(|(window, r)| {
            r.hits.iter().take(k).map(move |h| MatchVote {
                tracklet_id,
                product_id: h.product_id.clone(),
                similarity: h.similarity,
                window: *window,
            })
        })
        .collect()
}

/// Votes for one product merged into one interval, before length filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteGroup {
    pub product_id: ProductId,
    pub start_ms: u64,
    pub end_ms: u64,
    pub votes: Vec<MatchVote>,
}

impl VoteGroup {
    /// The segment for this group, or `None` when it is shorter than `min_len_ms`.
    pub fn to_segment(&self, min_len_ms: u64) -> Option<FocusSegment> {
        if self.end_ms <= self.start_ms || self.end_ms - self.start_ms < min_len_ms {
            return None;
        }
        let mean = self.votes.iter().map(|v| v.similarity).sum::<f64>() / self.votes.len() as f64;
        let mut tracklet_ids: Vec<TrackletId> = self.votes.iter().map(|v| v.tracklet_id).collect();
        tracklet_ids.sort_unstable();
        tracklet_ids.dedup();
        Some(FocusSegment {
            product_id: self.product_id.clone(),
            start_ms: self.start_ms,
            end_ms: self.end_ms,
            confidence: mean.clamp(0.0, 1.0),
            tracklet_ids,
        })
    }
}

/// Deterministic vote order: window start, window end, tracklet, similarity.
fn vote_order(a: &MatchVote, b: &MatchVote) -> std::cmp::Ordering {
    a.window
        .cmp(&b.window)
        .then(a.tracklet_id.cmp(&b.tracklet_id))
        .then(b.similarity.total_cmp(&a.similarity))
}

/// Per product, merges above-threshold votes whose windows are at most
/// `max_gap_ms` apart. Groups come out per product in start order; products
/// in id order.
pub fn group_votes(votes: &[MatchVote], tau: f64, max_gap_ms: u64) -> Vec<VoteGroup> {
    let mut by_product: BTreeMap<&ProductId, Vec<&MatchVote>> = BTreeMap::new();
    for v in votes.iter().filter(|v| v.similarity >= tau) {
        by_product.entry(&v.product_id).or_default().push(v);
    }
    let mut out = Vec::new();
    for (pid, mut vs) in by_product {
        vs.sort_by(|a, b| vote_order(a, b));
        let mut current: Option<VoteGroup> = None;
        for v in vs {
            match current.as_mut() {
                Some(g) if v.window.0 <= g.end_ms.saturating_add(max_gap_ms) => {
                    g.end_ms = g.end_ms.max(v.window.1);
                    g.votes.push(v.clone());
                }
                _ => {
                    out.extend(current.take());
                    current = Some(VoteGroup {
                        product_id: pid.clone(),
                        start_ms: v.window.0,
                        end_ms: v.window.1,
                        votes: vec![v.clone()],
                    });
                }
            }
        }
        out.extend(current);
    }
    out
}

/// Sorts segments by start, then product id, then end.
pub fn sort_segments(segs: &mut [FocusSegment]) {
    segs.sort_by(|a, b| {
        a.start_ms
            .cmp(&b.start_ms)
            .then_with(|| a.product_id.cmp(&b.product_id))
            .then(a.end_ms.cmp(&b.end_ms))
    });
}

/// Focus segments from a set of votes.
pub fn segments(votes: &[MatchVote], params: &SegmentParams) -> Vec<FocusSegment> {
    let mut segs: Vec<FocusSegment> = group_votes(votes, params.tau, params.max_gap_ms)
        .iter()
        .filter_map(|g| g.to_segment(params.min_len_ms))
        .collect();
    sort_segments(&mut segs);
    segs
}

/// Overlap length over union length; zero for empty intervals.
pub fn temporal_iou(a: (u64, u64), b: (u64, u64)) -> f64 {
    let inter = a.1.min(b.1).saturating_sub(a.0.max(b.0));
    let union = a.1.max(b.1) - a.0.min(b.0);
    if union == 0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    inter as f64 / union as f64
}

/// A scripted product exhibition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthExhibition {
    pub product_id: ProductId,
    pub category: NodeId,
    pub start_ms: u64,
    pub end_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvaluation {
    pub report: RecallReport,
    /// Mean best temporal IoU over recalled exhibitions.
    pub mean_tiou: Option<f64>,
    pub recalled: usize,
    pub total: usize,
    pub k_used: usize,
    pub min_tiou: f64,
}

/// Best temporal IoU of any same-product prediction with `t`.
pub fn best_tiou(predicted: &[FocusSegment], t: &TruthExhibition) -> Option<f64> {
    predicted
        .iter()
        .filter(|p| p.product_id == t.product_id)
        .map(|p| temporal_iou((p.start_ms, p.end_ms), (t.start_ms, t.end_ms)))
        .max_by(f64::total_cmp)
}

/// An exhibition is recalled when a same-product segment overlaps it with
/// temporal IoU at least `min_tiou`.
pub fn evaluate_run(
    predicted: &[FocusSegment],
    truth: &[TruthExhibition],
    categories: &[NodeId],
    k_used: usize,
    min_tiou: f64,
) -> Result<RunEvaluation, IndexError> {
    let best: Vec<Option<f64>> = truth.iter().map(|t| best_tiou(predicted, t)).collect();
    let hit = |b: &Option<f64>| b.is_some_and(|x| x >= min_tiou);
    let report = tally(truth.iter().zip(&best).map(|(t, b)| (&t.category, hit(b))), categories)?;
    let recalled: Vec<f64> = best.iter().filter(|b| hit(b)).map(|b| b.unwrap_or(0.0)).collect();
    Ok(RunEvaluation {
        report,
        mean_tiou: (!recalled.is_empty()).then(|| recalled.iter().sum::<f64>() / recalled.len() as f64),
        recalled: recalled.len(),
        total: truth.len(),
        k_used,
        min_tiou,
    })
}
