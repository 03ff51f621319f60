use serde::{Deserialize, Serialize};

use crate::SimError;

/// The six benchmark categories, in table column order.
pub const CATEGORIES: [&str; 6] = ["clothing", "shoe", "bag", "snack", "bottle", "beauty"];

/// Shape of the shared product catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogParams {
    pub categories: Vec<String>,
    pub products_per_category: usize,
    /// Products per lookalike group: same dominant colors, different titles.
    pub lookalike_group: usize,
    /// Pixel share of the color that tells lookalikes apart.
    pub signature_weight: f64,
    /// Give every product its own colors, so no two products look alike.
    pub unique_colors: bool,
    pub seed: u64,
}

impl Default for CatalogParams {
    fn default() -> Self {
        Self {
            categories: CATEGORIES.iter().map(|c| c.to_string()).collect(),
            products_per_category: 10,
            lookalike_group: 5,
            signature_weight: 0.06,
            unique_colors: false,
            seed: 7,
        }
    }
}

/// Rendering noise. All zero gives clean streams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    /// Box jitter standard deviation, pixels.
    pub jitter_px: f64,
    pub miss_prob: f64,
    /// Expected false-positive detections per frame.
    pub fp_rate: f64,
    /// Per-channel pixel noise standard deviation.
    pub pixel_sigma: f64,
    /// Standard deviation of the per-frame brightness gain around 1.
    pub lighting_sigma: f64,
    pub occlusion_prob: f64,
    /// Largest occluded fraction of the patch.
    pub occlusion_max: f64,
    /// Largest fraction of the patch showing background, a random color
    /// per frame.
    pub clutter_max: f64,
    /// Chance that a transcript segment during an exhibition names the product.
    pub mention_prob: f64,
    /// Filler phrases in the host's speech: alone between mentions and
    /// appended to them. Without filler the host only speaks to name products.
    pub filler_speech: bool,
    /// Viewer comments per second.
    pub comment_rate: f64,
    /// Chance that a comment is pure chatter.
    pub comment_noise: f64,
}

impl NoiseParams {
    /// No visual noise, no viewer comments, and a transcript that only
    /// names the exhibited products.
    pub fn clean() -> Self {
        Self {
            jitter_px: 0.0,
            miss_prob: 0.0,
            fp_rate: 0.0,
            pixel_sigma: 0.0,
            lighting_sigma: 0.0,
            occlusion_prob: 0.0,
            occlusion_max: 0.0,
            clutter_max: 0.0,
            mention_prob: 1.0,
            filler_speech: false,
            comment_rate: 0.0,
            comment_noise: 0.0,
        }
    }
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            jitter_px: 3.0,
            miss_prob: 0.1,
            fp_rate: 0.2,
            pixel_sigma: 10.0,
            lighting_sigma: 0.1,
            occlusion_prob: 0.5,
            occlusion_max: 0.4,
            clutter_max: 0.5,
            mention_prob: 0.5,
            filler_speech: true,
            comment_rate: 0.3,
            comment_noise: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub duration_ms: u64,
    pub fps: u32,
    pub exhibitions: usize,
    /// Exhibition length range, ms.
    pub min_exhibition_ms: u64,
    pub max_exhibition_ms: u64,
    /// Lookalikes shown next to each exhibited product.
    pub distractors: usize,
    pub frame_width: f64,
    pub frame_height: f64,
    pub patch_size: u32,
    pub noise: NoiseParams,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            duration_ms: 180_000,
            fps: 5,
            exhibitions: 10,
            min_exhibition_ms: 8_000,
            max_exhibition_ms: 10_000,
            distractors: 2,
            frame_width: 640.0,
            frame_height: 360.0,
            patch_size: 12,
            noise: NoiseParams::default(),
        }
    }
}

fn prob(name: &str, p: f64) -> Result<(), SimError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(SimError::InvalidParams(format!("{name} = {p} is not a probability")))
    }
}

fn non_negative(name: &str, x: f64) -> Result<(), SimError> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(SimError::InvalidParams(format!("{name} = {x} must be finite and non-negative")))
    }
}

impl CatalogParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.categories.is_empty() || self.products_per_category == 0 || self.lookalike_group == 0 {
            return Err(SimError::InvalidParams("catalog counts must be at least 1".into()));
        }
        prob("signature_weight", self.signature_weight)
    }
}

impl ScenarioParams {
    /// Gap left between exhibitions so the previous object's track has
    /// terminated before the next one appears.
    pub fn min_gap_ms(&self) -> u64 {
        7_000
    }

    pub fn frame_interval_ms(&self) -> u64 {
        1000 / u64::from(self.fps)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.fps == 0 || self.fps > 1000 || self.exhibitions == 0 || self.patch_size == 0 {
            return Err(SimError::InvalidParams("fps, exhibitions and patch size must be at least 1".into()));
        }
        if self.min_exhibition_ms == 0 || self.min_exhibition_ms > self.max_exhibition_ms {
            return Err(SimError::InvalidParams("exhibition length range is empty".into()));
        }
        let needed = self.exhibitions as u64 * (self.max_exhibition_ms + self.min_gap_ms());
        if needed > self.duration_ms {
            return Err(SimError::InvalidParams(format!(
                "{} exhibitions need {needed} ms, stream lasts {} ms",
                self.exhibitions, self.duration_ms
            )));
        }
        if !(self.frame_width >= 200.0 && self.frame_height >= 150.0) {
            return Err(SimError::InvalidParams("frame must be at least 200x150".into()));
        }
        let n = &self.noise;
        for (name, p) in [
            ("miss_prob", n.miss_prob),
            ("occlusion_prob", n.occlusion_prob),
            ("occlusion_max", n.occlusion_max),
            ("clutter_max", n.clutter_max),
            ("mention_prob", n.mention_prob),
            ("comment_noise", n.comment_noise),
        ] {
            prob(name, p)?;
        }
        for (name, x) in [
            ("jitter_px", n.jitter_px),
            ("fp_rate", n.fp_rate),
            ("pixel_sigma", n.pixel_sigma),
            ("lighting_sigma", n.lighting_sigma),
            ("comment_rate", n.comment_rate),
        ] {
            non_negative(name, x)?;
        }
        Ok(())
    }
}
