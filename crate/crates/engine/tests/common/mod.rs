//! A small two-category shop and a scripted stream over it.

#![allow(dead_code)]

use std::collections::BTreeMap;

use shopfocus_core::catalog::{Catalog, ProductEntry, Taxonomy};
use shopfocus_core::features::{Comment, TranscriptSegment};
use shopfocus_core::focus::FocusSegment;
use shopfocus_core::fusion::FusionModel;
use shopfocus_core::records::DetectionRecord;
use shopfocus_core::{NodeId, ProductId};
use shopfocus_engine::{default_providers, run_pipeline, Engine, EngineConfig, PipelineEvent, RetrievalMode, StreamSource};

/// Visual width with two histogram bins per channel.
pub const DV: usize = 8;
pub const DT: usize = 64;

fn basis(parts: &[(usize, f64)]) -> Vec<f64> {
    let mut v = vec![0.0; DV];
    for &(i, x) in parts {
        v[i] = x;
    }
    v
}

/// `(id, category, title, descriptor)`.
pub fn products() -> Vec<(&'static str, &'static str, &'static str, Vec<f64>)> {
    vec![
        ("shoe-a", "shoe", "zorba red runner shoe", basis(&[(0, 1.0), (1, 0.5)])),
        ("shoe-b", "shoe", "quill blue runner shoe", basis(&[(0, 1.0), (2, 0.5)])),
        ("shoe-c", "shoe", "mavo green boot shoe", basis(&[(3, 1.0), (4, 0.5)])),
        ("bag-a", "bag", "tessa black tote bag", basis(&[(5, 1.0), (6, 0.5)])),
        ("bag-b", "bag", "lumen white tote bag", basis(&[(5, 1.0), (7, 0.5)])),
    ]
}

pub fn taxonomy() -> Taxonomy {
    Taxonomy::flat("all", &["shoe", "bag"])
}

pub fn catalog() -> Catalog {
    let entries = products()
        .into_iter()
        .map(|(id, cat, title, descriptor)| ProductEntry {
            product_id: ProductId::from(id),
            category_path: vec![NodeId::from("all"), NodeId::from(cat)],
            title: title.into(),
            headline: None,
            patch: None,
            descriptor: Some(descriptor),
        })
        .collect();
    Catalog::new(entries, &taxonomy()).expect("valid catalog")
}

pub fn config(mode: RetrievalMode) -> EngineConfig {
    let mut c = EngineConfig::default();
    c.features.histogram_bins = 2;
    c.features.text_dim = DT;
    c.retrieval.mode = mode;
    c.retrieval.k = 1;
    c
}

/// Visual block as identity plus a down-weighted text block, side by side.
pub fn late_fusion() -> FusionModel {
    let d = DV + DT;
    let mut wv = vec![0.0; d * DV];
    for i in 0..DV {
        wv[i * DV + i] = 1.0;
    }
    let mut wt = vec![0.0; d * DT];
    for j in 0..DT {
        wt[(DV + j) * DT + j] = 0.5;
    }
    FusionModel::new(d, DV, DT, wv, wt, 0.2).expect("valid dims")
}

pub fn engine_with(config: EngineConfig) -> Engine {
    let model = if config.retrieval.mode.uses_text() {
        late_fusion()
    } else {
        FusionModel::identity_visual(DV, DT, 0.2)
    };
    let (visual, text) = default_providers(&config);
    Engine::new(config, taxonomy(), catalog(), visual, text, model).expect("engine builds")
}

pub fn engine(mode: RetrievalMode) -> Engine {
    engine_with(config(mode))
}

/// One scripted object: what it looks like, where, and when.
pub struct Shot {
    pub appearance: Vec<f64>,
    pub category: &'static str,
    pub x: f64,
    pub start_ms: u64,
    pub end_ms: u64,
}

pub const FRAME_MS: u64 = 200;

pub fn detections(shots: &[Shot]) -> Vec<DetectionRecord> {
    let end = shots.iter().map(|s| s.end_ms).max().unwrap_or(0);
    let mut out = Vec::new();
    for frame in 0..end / FRAME_MS {
        let t = frame * FRAME_MS;
        for s in shots.iter().filter(|s| s.start_ms <= t && t < s.end_ms) {
            let drift = (t - s.start_ms) as f64 * 0.002;
            out.push(DetectionRecord {
                frame_index: frame,
                timestamp_ms: t,
                bbox: [s.x + drift, 100.0, 60.0, 80.0],
                node_scores: BTreeMap::from([(NodeId::from(s.category), 0.9)]),
                appearance: Some(s.appearance.clone()),
                patch: None,
            });
        }
    }
    out
}

/// Three exhibitions, one after the other, each named by the host.
pub fn script() -> (Vec<Shot>, Vec<TranscriptSegment>, Vec<Comment>) {
    let p = products();
    let shot = |i: usize, x: f64, start_ms: u64| Shot {
        appearance: p[i].3.clone(),
        category: p[i].1,
        x,
        start_ms,
        end_ms: start_ms + 6000,
    };
    let shots = vec![shot(0, 50.0, 0), shot(4, 300.0, 10_000), shot(2, 500.0, 20_000)];
    let say = |start_ms: u64, text: &str| TranscriptSegment {
        start_ms,
        end_ms: start_ms + 2500,
        text: text.into(),
    };
    let transcripts = vec![
        say(1000, "zorba red runner shoe"),
        say(11_000, "lumen white tote bag"),
        say(21_000, "mavo green boot shoe"),
    ];
    let comments = vec![Comment {
        timestamp_ms: 12_500,
        text: "lumen tote please".into(),
    }];
    (shots, transcripts, comments)
}

pub fn source(stream_id: &str) -> StreamSource {
    let (shots, transcripts, comments) = script();
    StreamSource::from_records(stream_id, detections(&shots), transcripts, comments)
}

/// Runs `source` and returns the focus segments plus a Debug trace of every event.
pub fn run(engine: &Engine, source: StreamSource) -> (Vec<FocusSegment>, Vec<String>) {
    let mut segs = Vec::new();
    let mut trace = Vec::new();
    run_pipeline(source, engine.context(), |ev| {
        trace.push(format!("{ev:?}"));
        if let PipelineEvent::Focus(s) = ev {
            segs.push(s);
        }
    })
    .expect("pipeline runs");
    (segs, trace)
}
