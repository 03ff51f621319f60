//! Exhibition scripts.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use shopfocus_core::focus::TruthExhibition;
use shopfocus_core::{NodeId, ProductId};

use crate::params::ScenarioParams;
use crate::world::SimWorld;
use crate::SimError;

pub(crate) const SCRIPT_STREAM: u64 = 1;

/// Scripted box motion: a drift plus a slow horizontal sway.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    /// Box center at the exhibition start.
    pub start: (f64, f64),
    /// Pixels per second.
    pub velocity: (f64, f64),
    pub size: (f64, f64),
    pub sway_px: f64,
    pub sway_period_ms: f64,
}

impl Motion {
    /// Box `[x, y, w, h]` `elapsed_ms` after the start.
    pub fn bbox(&self, elapsed_ms: u64) -> [f64; 4] {
        let t = elapsed_ms as f64;
        let cx = self.start.0 + self.velocity.0 * t / 1000.0 + self.sway_px * (std::f64::consts::TAU * t / self.sway_period_ms).sin();
        let cy = self.start.1 + self.velocity.1 * t / 1000.0;
        [cx - self.size.0 / 2.0, cy - self.size.1 / 2.0, self.size.0, self.size.1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub object_id: u32,
    pub product_id: ProductId,
    pub motion: Motion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exhibition {
    pub object_id: u32,
    pub product_id: ProductId,
    pub category: NodeId,
    pub start_ms: u64,
    pub end_ms: u64,
    pub motion: Motion,
    /// Same-category lookalikes on screen during the exhibition.
    pub distractors: Vec<Distractor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub params: ScenarioParams,
    pub exhibitions: Vec<Exhibition>,
}

/// One ground-truth exhibition and the object that produces its detections.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthItem {
    pub product_id: ProductId,
    pub category: NodeId,
    pub start_ms: u64,
    pub end_ms: u64,
    pub object_id: u32,
}

impl TruthItem {
    pub fn exhibition(&self) -> TruthExhibition {
        TruthExhibition {
            product_id: self.product_id.clone(),
            category: self.category.clone(),
            start_ms: self.start_ms,
            end_ms: self.end_ms,
        }
    }
}

impl Scenario {
    pub fn ground_truth(&self) -> Vec<TruthItem> {
        self.exhibitions
            .iter()
            .map(|e| TruthItem {
                product_id: e.product_id.clone(),
                category: e.category.clone(),
                start_ms: e.start_ms,
                end_ms: e.end_ms,
                object_id: e.object_id,
            })
            .collect()
    }
}

/// Draws an exhibition script. Categories are visited in shuffled rounds so
/// every category appears once before any repeats.
pub fn gen_scenario(world: &SimWorld, seed: u64, params: &ScenarioParams) -> Result<Scenario, SimError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SCRIPT_STREAM);

    let lengths: Vec<u64> = (0..params.exhibitions)
        .map(|_| rng.random_range(params.min_exhibition_ms..=params.max_exhibition_ms))
        .collect();
    let gap = params.min_gap_ms();
    let slack = params.duration_ms - lengths.iter().sum::<u64>() - gap * params.exhibitions as u64;
    // Split the slack over the gaps with sorted uniform cut points.
    let mut cuts: Vec<u64> = (0..params.exhibitions).map(|_| rng.random_range(0..=slack)).collect();
    cuts.sort_unstable();

    let categories = &world.params.categories;
    let mut order: Vec<usize> = Vec::new();
    while order.len() < params.exhibitions {
        let mut round: Vec<usize> = (0..categories.len()).collect();
        round.shuffle(&mut rng);
        order.extend(round);
    }

    let (w, h) = (params.frame_width, params.frame_height);
    let mut exhibitions = Vec::with_capacity(params.exhibitions);
    let mut next_object = 1u32;
    let mut cursor = 0u64;
    let mut prev_cut = 0u64;
    for (i, len) in lengths.iter().enumerate() {
        let start = cursor + gap / 2 + (cuts[i] - prev_cut);
        prev_cut = cuts[i];
        let end = start + len;
        cursor = end + gap - gap / 2;

        let category = NodeId::from(categories[order[i]].as_str());
        let pool: Vec<_> = world.in_category(&category).collect();
        let product = *pool.choose(&mut rng).expect("category has products");
        let size = (w * 0.14 * rng.random_range(0.9..1.1), h * 0.33 * rng.random_range(0.9..1.1));
        let motion = Motion {
            start: (w * rng.random_range(0.42..0.58), h * rng.random_range(0.45..0.55)),
            velocity: (rng.random_range(-6.0..6.0), rng.random_range(-3.0..3.0)),
            size,
            sway_px: rng.random_range(0.0..w * 0.03),
            sway_period_ms: rng.random_range(3000.0..6000.0),
        };
        let object_id = next_object;
        next_object += 1;

        // Lookalikes first, then the rest of the category.
        let mut others: Vec<_> = pool.iter().filter(|p| p.product_id != product.product_id).collect();
        others.shuffle(&mut rng);
        others.sort_by_key(|p| p.group != product.group);
        let slots = [(0.12, 0.3), (0.88, 0.3), (0.12, 0.75), (0.88, 0.75)];
        let distractors = others
            .iter()
            .take(params.distractors.min(slots.len()))
            .zip(slots)
            .map(|(p, (fx, fy))| {
                let d = Distractor {
                    object_id: next_object,
                    product_id: p.product_id.clone(),
                    motion: Motion {
                        start: (w * fx, h * fy),
                        velocity: (0.0, 0.0),
                        size: (w * 0.1, h * 0.22),
                        sway_px: 0.0,
                        sway_period_ms: 1000.0,
                    },
                };
                next_object += 1;
                d
            })
            .collect();
        exhibitions.push(Exhibition {
            object_id,
            product_id: product.product_id.clone(),
            category,
            start_ms: start,
            end_ms: end,
            motion,
            distractors,
        });
    }
    Ok(Scenario {
        seed,
        params: params.clone(),
        exhibitions,
    })
}
