//! Labeled training windows from rendered scenarios, and the multimodal
//! model trained on them.

use std::collections::BTreeMap;

use shopfocus_core::features::{HashingTextProvider, HistogramProvider, TextProvider, VisualProvider};
use shopfocus_core::fusion::{train, FusionModel, LabeledAnchor, TrainParams, TrainingSet};
use shopfocus_core::tracker::{Detection, Tracker};
use shopfocus_core::{ProductId, TrackletId};
use shopfocus_engine::config::RetrievalMode;
use shopfocus_engine::snapshot::{catalog_pairs, ungrouped};
use shopfocus_engine::windows::{build_window, embed_window, window_index, window_text};
use shopfocus_engine::EngineConfig;

use crate::render::Rendered;
use crate::world::SimWorld;
use crate::SimError;

/// Share of a tracklet's detections that must come from one object for the
/// tracklet to be labeled with it.
const LABEL_PURITY: f64 = 0.8;

/// Tracklets of `r` labeled with the product they follow, as multimodal
/// window inputs. Only exhibited objects are labeled unless
/// `include_distractors` is set; false positives and mixed identities are
/// always skipped.
pub fn labeled_windows(world: &SimWorld, r: &Rendered, config: &EngineConfig, include_distractors: bool) -> Result<Vec<LabeledAnchor>, SimError> {
    let visual = HistogramProvider {
        bins: config.features.histogram_bins,
    };
    let text = HashingTextProvider {
        dim: config.features.text_dim,
    };
    let labels: BTreeMap<u32, ProductId> = if include_distractors {
        r.object_products.clone()
    } else {
        r.truth.iter().map(|t| (t.object_id, t.product_id.clone())).collect()
    };

    let mut tracker = Tracker::new(config.tracker.to_tracker_config(), std::sync::Arc::new(world.taxonomy.clone()));
    let mut votes: BTreeMap<TrackletId, BTreeMap<Option<u32>, usize>> = BTreeMap::new();
    let mut i = 0;
    while i < r.detections.len() {
        let frame = r.detections[i].frame_index;
        let end = i + r.detections[i..].iter().take_while(|d| d.frame_index == frame).count();
        let dets: Vec<Detection> = r.detections[i..end]
            .iter()
            .map(|d| d.to_detection(&visual as &dyn VisualProvider<f64>, 0))
            .collect::<Result<_, _>>()?;
        let out = tracker.step(frame, &dets)?;
        for (id, obj) in out.assignments.iter().zip(&r.objects[i..end]) {
            *votes.entry(*id).or_default().entry(*obj).or_default() += 1;
        }
        i = end;
    }
    tracker.finish();

    let hop = config.retrieval.window_hop_ms;
    let mode = RetrievalMode::Multimodal;
    let mut out = Vec::new();
    for t in tracker.all_tracklets().into_iter().filter(|t| t.ever_confirmed()) {
        let Some(counts) = votes.get(&t.id()) else { continue };
        let total: usize = counts.values().sum();
        let Some((Some(obj), n)) = counts.iter().max_by_key(|(_, &n)| n) else { continue };
        if (*n as f64) < LABEL_PURITY * total as f64 {
            continue;
        }
        let Some(product_id) = labels.get(obj) else { continue };
        let t0 = t.first_timestamp();
        let mut ks: Vec<u64> = t.observations().iter().map(|o| window_index(o.timestamp_ms, t0, hop)).collect();
        ks.dedup();
        for k in ks {
            let task = build_window(t.id(), t.category_path(), t.observations(), k, k, hop, mode).expect("window holds an observation");
            let bag = window_text(&task, mode, &r.transcripts, &r.comments, config.features.text_window());
            let pair = embed_window(&task, &bag, mode, &text as &dyn TextProvider<f64>)?;
            out.push(LabeledAnchor {
                pair,
                product_id: product_id.clone(),
            });
        }
    }
    Ok(out)
}

/// Visual descriptor and hashed text in separate output blocks:
/// `u = [v; text_weight·t]`. Training starts here.
pub fn late_fusion(dv: usize, dt: usize, text_weight: f64, margin: f64) -> FusionModel {
    let d = dv + dt;
    let mut wv = vec![0.0; d * dv];
    for i in 0..dv {
        wv[i * dv + i] = 1.0;
    }
    let mut wt = vec![0.0; d * dt];
    for j in 0..dt {
        wt[(dv + j) * dt + j] = text_weight;
    }
    FusionModel::new(d, dv, dt, wv, wt, margin).expect("valid by construction")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: FusionModel,
    pub curve: Vec<f64>,
    pub anchors: usize,
}

/// Trains the multimodal model on labeled windows from `scenes`.
pub fn train_multimodal(
    world: &SimWorld,
    scenes: &[Rendered],
    config: &EngineConfig,
    init: FusionModel,
    params: &TrainParams,
) -> Result<TrainedModel, SimError> {
    let mut anchors = Vec::new();
    for r in scenes {
        anchors.extend(labeled_windows(world, r, config, false)?);
    }
    let visual = HistogramProvider {
        bins: config.features.histogram_bins,
    };
    let text = HashingTextProvider {
        dim: config.features.text_dim,
    };
    let mut products = catalog_pairs(&world.catalog, &visual, &text, true)?;
    if !config.retrieval.category_filter {
        products = ungrouped(products);
    }
    let n = anchors.len();
    let data = TrainingSet {
        products,
        anchors,
        fixed: Vec::new(),
    };
    let (model, curve) = train(&init, &data, params)?;
    Ok(TrainedModel { model, curve, anchors: n })
}
