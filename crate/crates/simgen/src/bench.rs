//! The retrieval ablation: the same rendered streams run through the engine
//! with frame-level visual, tracklet-level visual and tracklet-level
//! multimodal retrieval, scored per category.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use shopfocus_core::features::{HashingTextProvider, HistogramProvider};
use shopfocus_core::focus::{evaluate_run, FocusSegment, RunEvaluation, TruthExhibition};
use shopfocus_core::fusion::{FusionModel, MiningStrategy, TrainParams};
use shopfocus_core::index::unweighted_mean;
use shopfocus_core::NodeId;
use shopfocus_engine::config::RetrievalMode;
use shopfocus_engine::service::Engine;
use shopfocus_engine::{run_pipeline, EngineConfig, PipelineEvent};

use crate::params::{CatalogParams, ScenarioParams};
use crate::render::{render_streams, Rendered};
use crate::scenario::gen_scenario;
use crate::training::{late_fusion, train_multimodal};
use crate::world::SimWorld;
use crate::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchParams {
    pub seeds: Vec<u64>,
    /// Scenarios the multimodal model is trained on; disjoint from `seeds`.
    pub train_seeds: Vec<u64>,
    pub catalog: CatalogParams,
    pub scenario: ScenarioParams,
    pub engine: EngineConfig,
    pub train: TrainParams,
    /// Initial weight of the text block of the multimodal model.
    pub text_weight: f64,
    pub modes: Vec<RetrievalMode>,
}

impl Default for BenchParams {
    fn default() -> Self {
        let mut engine = EngineConfig::default();
        engine.retrieval.k = 1;
        engine.features.text_dim = 1024;
        Self {
            seeds: (1..=20).collect(),
            train_seeds: (1001..=1010).collect(),
            catalog: CatalogParams::default(),
            scenario: ScenarioParams::default(),
            engine,
            train: TrainParams {
                epochs: 15,
                lr: 0.01,
                batch_size: 32,
                strategy: MiningStrategy::SemiHard,
                seed: 0,
            },
            text_weight: 0.5,
            modes: RetrievalMode::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub mode: RetrievalMode,
    pub label: String,
    /// Recall per category averaged over seeds, in table column order.
    pub per_category: Vec<Option<f64>>,
    /// Unweighted mean of `per_category`.
    pub mean: f64,
    pub recalled: usize,
    pub total: usize,
    pub mean_tiou: Option<f64>,
    pub per_seed_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub categories: Vec<NodeId>,
    pub rows: Vec<BenchRow>,
    pub params: BenchParams,
    pub train_curve: Vec<f64>,
    pub train_anchors: usize,
}

/// Averages per-category recall over runs, skipping runs where a category
/// had no exhibitions, then takes the unweighted category mean.
pub fn average_runs(categories: &[NodeId], runs: &[RunEvaluation]) -> (Vec<Option<f64>>, f64) {
    let per_category: Vec<Option<f64>> = categories
        .iter()
        .map(|c| {
            let rates: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.report.categories.iter().find(|x| &x.category == c).and_then(|x| x.recall))
                .collect();
            (!rates.is_empty()).then(|| unweighted_mean(rates))
        })
        .collect();
    let mean = unweighted_mean(per_category.iter().flatten().copied());
    (per_category, mean)
}

/// Renders one scenario per seed, in parallel.
pub fn render_all(world: &SimWorld, seeds: &[u64], params: &ScenarioParams) -> Result<Vec<Rendered>, SimError> {
    seeds
        .par_iter()
        .map(|&seed| Ok(render_streams(world, &gen_scenario(world, seed, params)?)))
        .collect()
}

/// Runs one stream to completion and returns its focus segments in emission order.
pub fn run_segments(engine: &Engine, r: &Rendered) -> Result<Vec<FocusSegment>, SimError> {
    let mut segs = Vec::new();
    run_pipeline(r.source(), engine.context(), |ev| {
        if let PipelineEvent::Focus(s) = ev {
            segs.push(s);
        }
    })?;
    Ok(segs)
}

fn engine_for(world: &SimWorld, config: &EngineConfig, mode: RetrievalMode, model: FusionModel) -> Result<Engine, SimError> {
    let mut config = config.clone();
    config.retrieval.mode = mode;
    let visual = HistogramProvider {
        bins: config.features.histogram_bins,
    };
    let text = HashingTextProvider {
        dim: config.features.text_dim,
    };
    Ok(Engine::new(
        config,
        world.taxonomy.clone(),
        world.catalog.clone(),
        std::sync::Arc::new(visual),
        std::sync::Arc::new(text),
        model,
    )?)
}

/// Builds the engines for the requested modes: the visual modes score raw
/// descriptors, the multimodal mode uses a model trained on `train_seeds`.
pub fn bench_engines(world: &SimWorld, params: &BenchParams) -> Result<(Vec<(RetrievalMode, Engine)>, Vec<f64>, usize), SimError> {
    let cfg = &params.engine;
    let dv = cfg.visual_dim();
    let dt = cfg.features.text_dim;
    let margin = 0.2;
    let mut curve = Vec::new();
    let mut anchors = 0;
    let mut engines = Vec::new();
    for &mode in &params.modes {
        let model = if mode.uses_text() {
            let scenes = render_all(world, &params.train_seeds, &params.scenario)?;
            let trained = train_multimodal(world, &scenes, cfg, late_fusion(dv, dt, params.text_weight, margin), &params.train)?;
            curve = trained.curve;
            anchors = trained.anchors;
            trained.model
        } else {
            FusionModel::identity_visual(dv, dt, margin)
        };
        engines.push((mode, engine_for(world, cfg, mode, model)?));
    }
    Ok((engines, curve, anchors))
}

pub fn benchmark(params: &BenchParams) -> Result<BenchReport, SimError> {
    let world = SimWorld::generate(&params.catalog)?;
    let categories: Vec<NodeId> = params.catalog.categories.iter().map(|c| NodeId::from(c.as_str())).collect();
    let scenes = render_all(&world, &params.seeds, &params.scenario)?;
    let (engines, train_curve, train_anchors) = bench_engines(&world, params)?;
    let min_tiou = params.engine.focus.min_tiou;
    let k = params.engine.retrieval.k;

    let mut rows = Vec::new();
    for (mode, engine) in &engines {
        let runs: Vec<RunEvaluation> = scenes
            .par_iter()
            .map(|r| {
                let segs = run_segments(engine, r).map_err(|e| SimError::Run {
                    seed: r.stream_id.clone(),
                    mode: mode.label().into(),
                    reason: e.to_string(),
                })?;
                let truth: Vec<TruthExhibition> = r.truth.iter().map(|t| t.exhibition()).collect();
                Ok(evaluate_run(&segs, &truth, &categories, k, min_tiou)?)
            })
            .collect::<Result<_, SimError>>()?;
        let (per_category, mean) = average_runs(&categories, &runs);
        let recalled = runs.iter().map(|r| r.recalled).sum();
        let tious: Vec<f64> = runs.iter().filter_map(|r| r.mean_tiou.map(|m| m * r.recalled as f64)).collect();
        rows.push(BenchRow {
            mode: *mode,
            label: mode.label().into(),
            per_category,
            mean,
            recalled,
            total: runs.iter().map(|r| r.total).sum(),
            mean_tiou: (recalled > 0).then(|| tious.iter().sum::<f64>() / recalled as f64),
            per_seed_mean: runs.iter().map(|r| r.report.mean).collect(),
        });
    }
    Ok(BenchReport {
        categories,
        rows,
        params: params.clone(),
        train_curve,
        train_anchors,
    })
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{:.1}%", v * 100.0))
}

impl BenchReport {
    /// Aligned text table: one row per configuration, one column per
    /// category, then the mean.
    pub fn table(&self) -> String {
        let mut header = vec!["Method".to_string()];
        header.extend(self.categories.iter().map(|c| c.to_string()));
        header.push("mean".into());
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut cells = vec![r.label.clone()];
                cells.extend(r.per_category.iter().map(|&x| pct(x)));
                cells.push(pct(Some(r.mean)));
                cells
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| std::iter::once(&header).chain(&body).map(|row| row[i].len()).max().unwrap_or(0))
            .collect();
        let line = |row: &[String]| {
            row.iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let mut out = String::new();
        let _ = writeln!(out, "{}", line(&header));
        let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-"));
        for row in &body {
            let _ = writeln!(out, "{}", line(row));
        }
        let e = &self.params.engine;
        let _ = writeln!(
            out,
            "seeds={} k={} tau={} max_gap_ms={} min_len_ms={} min_tiou={} hop_ms={} category_filter={} train_seeds={} anchors={}",
            self.params.seeds.len(),
            e.retrieval.k,
            e.focus.tau,
            e.focus.max_gap_ms,
            e.focus.min_len_ms,
            e.focus.min_tiou,
            e.retrieval.window_hop_ms,
            e.retrieval.category_filter,
            self.params.train_seeds.len(),
            self.train_anchors,
        );
        out
    }

    pub fn row(&self, mode: RetrievalMode) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }
}
