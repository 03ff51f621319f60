//! Engine configuration, loadable from TOML. Every field has a default, so
//! a config file only needs the values it overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use shopfocus_core::features::TextWindowParams;
use shopfocus_core::focus::SegmentParams;
use shopfocus_core::tracker::{AssociationParams, MotionModel, TrackerConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which inputs feed retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RetrievalMode {
    /// Best single frame per window, visual only.
    #[serde(rename = "vis_img")]
    VisualFrame,
    /// Aggregated tracklet appearance, visual only.
    #[serde(rename = "vis_trk")]
    VisualTrack,
    /// Aggregated tracklet appearance fused with transcript/comment text.
    #[serde(rename = "mlt_trk")]
    Multimodal,
}

impl RetrievalMode {
    pub const ALL: [RetrievalMode; 3] = [Self::VisualFrame, Self::VisualTrack, Self::Multimodal];

    pub fn uses_text(self) -> bool {
        self == Self::Multimodal
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::VisualFrame => "Vis_Img",
            Self::VisualTrack => "Vis_Trk",
            Self::Multimodal => "Mlt_Trk",
        }
    }
}

impl std::fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSection {
    pub lambda: f64,
    pub min_iou: f64,
    pub max_app_dist: f64,
    pub confirm_hits: u32,
    pub max_age: u32,
    pub descend_threshold: f64,
    pub appearance_momentum: f64,
    pub std_weight_position: f64,
    pub std_weight_velocity: f64,
}

impl Default for TrackerSection {
    fn default() -> Self {
        let t = TrackerConfig::<f64>::default();
        Self {
            lambda: t.association.lambda,
            min_iou: t.association.min_iou,
            max_app_dist: t.association.max_app_dist,
            confirm_hits: t.confirm_hits,
            max_age: t.max_age,
            descend_threshold: t.descend_threshold,
            appearance_momentum: t.appearance_momentum,
            std_weight_position: t.motion.std_weight_position,
            std_weight_velocity: t.motion.std_weight_velocity,
        }
    }
}

impl TrackerSection {
    pub fn to_tracker_config(&self) -> TrackerConfig<f64> {
        TrackerConfig {
            association: AssociationParams {
                lambda: self.lambda,
                min_iou: self.min_iou,
                max_app_dist: self.max_app_dist,
            },
            confirm_hits: self.confirm_hits,
            max_age: self.max_age,
            descend_threshold: self.descend_threshold,
            appearance_momentum: self.appearance_momentum,
            motion: MotionModel {
                std_weight_position: self.std_weight_position,
                std_weight_velocity: self.std_weight_velocity,
                ..MotionModel::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub histogram_bins: usize,
    pub text_dim: usize,
    pub pad_ms: u64,
    pub comment_lag_ms: u64,
}

impl Default for FeatureSection {
    fn default() -> Self {
        let w = TextWindowParams::default();
        Self {
            histogram_bins: 4,
            text_dim: 256,
            pad_ms: w.pad_ms,
            comment_lag_ms: w.comment_lag_ms,
        }
    }
}

impl FeatureSection {
    pub fn text_window(&self) -> TextWindowParams {
        TextWindowParams {
            pad_ms: self.pad_ms,
            comment_lag_ms: self.comment_lag_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub mode: RetrievalMode,
    /// Products voted per window.
    pub k: usize,
    pub window_hop_ms: u64,
    /// Restrict candidates to the tracklet's resolved category subtree.
    pub category_filter: bool,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            mode: RetrievalMode::Multimodal,
            k: 5,
            window_hop_ms: 2000,
            category_filter: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocusSection {
    pub tau: f64,
    pub max_gap_ms: u64,
    pub min_len_ms: u64,
    pub min_tiou: f64,
}

impl Default for FocusSection {
    fn default() -> Self {
        let s = SegmentParams::default();
        Self {
            tau: s.tau,
            max_gap_ms: s.max_gap_ms,
            min_len_ms: s.min_len_ms,
            min_tiou: 0.5,
        }
    }
}

impl FocusSection {
    pub fn segment_params(&self) -> SegmentParams {
        SegmentParams {
            tau: self.tau,
            max_gap_ms: self.max_gap_ms,
            min_len_ms: self.min_len_ms,
        }
    }
}

/// Capacity of each stage's input queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueueSection {
    pub track: usize,
    pub align: usize,
    pub embed: usize,
    pub retrieve: usize,
    pub focus: usize,
}

impl Default for QueueSection {
    fn default() -> Self {
        Self {
            track: 256,
            align: 256,
            embed: 64,
            retrieve: 64,
            focus: 64,
        }
    }
}

/// Overload handling, active only in real-time mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradeSection {
    /// Fill fraction of the embedding/retrieval queues at which pending
    /// windows are merged (at least doubling the hop).
    pub widen_at: f64,
    /// Fill fraction at which windows are dropped.
    pub drop_at: f64,
}

impl Default for DegradeSection {
    fn default() -> Self {
        Self {
            widen_at: 0.5,
            drop_at: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub tracker: TrackerSection,
    pub features: FeatureSection,
    pub retrieval: RetrievalSection,
    pub focus: FocusSection,
    pub queues: QueueSection,
    pub degrade: DegradeSection,
    /// Pace ingestion to record timestamps.
    pub realtime: bool,
    /// Playback speed multiplier in real-time mode.
    pub realtime_speed: f64,
    pub bind: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            tracker: TrackerSection::default(),
            features: FeatureSection::default(),
            retrieval: RetrievalSection::default(),
            focus: FocusSection::default(),
            queues: QueueSection::default(),
            degrade: DegradeSection::default(),
            realtime: false,
            realtime_speed: 1.0,
            bind: "127.0.0.1:8080".into(),
        }
    }
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let q = &self.queues;
        if [q.track, q.align, q.embed, q.retrieve, q.focus].contains(&0) {
            return bad("queue capacities must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.tracker.lambda) {
            return bad("tracker.lambda must be in [0, 1]");
        }
        if self.tracker.confirm_hits == 0 {
            return bad("tracker.confirm_hits must be at least 1");
        }
        if !(0.0..1.0).contains(&self.tracker.appearance_momentum) {
            return bad("tracker.appearance_momentum must be in [0, 1)");
        }
        if !(1..=256).contains(&self.features.histogram_bins) {
            return bad("features.histogram_bins must be in 1..=256");
        }
        if self.features.text_dim == 0 {
            return bad("features.text_dim must be at least 1");
        }
        if self.retrieval.k == 0 {
            return bad("retrieval.k must be at least 1");
        }
        if self.retrieval.window_hop_ms == 0 {
            return bad("retrieval.window_hop_ms must be positive");
        }
        if !(self.realtime_speed > 0.0) {
            return bad("realtime_speed must be positive");
        }
        if !(0.0..=1.0).contains(&self.degrade.widen_at) || !(0.0..=1.0).contains(&self.degrade.drop_at) {
            return bad("degrade thresholds are fractions in [0, 1]");
        }
        Ok(())
    }

    /// Visual descriptor width produced by the configured provider.
    pub fn visual_dim(&self) -> usize {
        self.features.histogram_bins.pow(3)
    }
}
