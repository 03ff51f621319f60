//! Turning a script into detection, transcript and comment streams.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::Serialize;
use shopfocus_core::catalog::InlinePatch;
use shopfocus_core::features::{Comment, TranscriptSegment};
use shopfocus_core::records::{write_jsonl, DetectionRecord};
use shopfocus_core::{NodeId, ProductId};
use shopfocus_engine::StreamSource;

use crate::scenario::{Exhibition, Motion, Scenario, TruthItem};
use crate::world::{level_color, Appearance, SimWorld, View};
use crate::SimError;

const DETECTION_STREAM: u64 = 2;
const TRANSCRIPT_STREAM: u64 = 3;
const COMMENT_STREAM: u64 = 4;

const FILLER: [&str; 10] = [
    "hello everyone welcome back",
    "look at this one",
    "it is really nice quality",
    "we have a great deal today",
    "check the details in the link",
    "add it to your cart now",
    "this is one of my favorites",
    "the price is very good",
    "let me show you closer",
    "stock is limited so hurry",
];
const CHATTER: [&str; 14] = [
    "wow", "price", "link", "please", "size", "love", "want", "hello", "nice", "how", "much", "ship", "today", "cute",
];

/// Streams of one scenario plus its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub stream_id: String,
    pub detections: Vec<DetectionRecord>,
    /// Scripted object behind each detection; `None` for false positives.
    pub objects: Vec<Option<u32>>,
    /// Product shown by each scripted object, distractors included.
    pub object_products: BTreeMap<u32, ProductId>,
    pub transcripts: Vec<TranscriptSegment>,
    pub comments: Vec<Comment>,
    pub truth: Vec<TruthItem>,
}

impl Rendered {
    pub fn source(&self) -> StreamSource {
        StreamSource::from_records(
            self.stream_id.clone(),
            self.detections.clone(),
            self.transcripts.clone(),
            self.comments.clone(),
        )
    }

    /// Writes `detections.jsonl`, `transcripts.jsonl`, `comments.jsonl` and
    /// `truth.jsonl` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), SimError> {
        std::fs::create_dir_all(dir)?;
        write_file(&dir.join("detections.jsonl"), &self.detections)?;
        write_file(&dir.join("transcripts.jsonl"), &self.transcripts)?;
        write_file(&dir.join("comments.jsonl"), &self.comments)?;
        write_file(&dir.join("truth.jsonl"), &self.truth)?;
        Ok(())
    }
}

fn write_file<R: Serialize>(path: &Path, items: &[R]) -> Result<(), SimError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_jsonl(&mut w, items)?;
    w.flush()?;
    Ok(())
}

/// One object on screen in one frame.
struct OnScreen<'a> {
    object_id: u32,
    appearance: &'a Appearance,
    category: &'a NodeId,
    motion: &'a Motion,
    since: u64,
}

fn visible<'a>(world: &'a SimWorld, exhibitions: &'a [Exhibition], t: u64) -> Vec<OnScreen<'a>> {
    let mut out = Vec::new();
    for e in exhibitions.iter().filter(|e| e.start_ms <= t && t < e.end_ms) {
        let product = world.product(&e.product_id).expect("scripted product exists");
        out.push(OnScreen {
            object_id: e.object_id,
            appearance: &product.appearance,
            category: &e.category,
            motion: &e.motion,
            since: e.start_ms,
        });
        for d in &e.distractors {
            let p = world.product(&d.product_id).expect("distractor exists");
            out.push(OnScreen {
                object_id: d.object_id,
                appearance: &p.appearance,
                category: &e.category,
                motion: &d.motion,
                since: e.start_ms,
            });
        }
    }
    out
}

fn gaussian(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"))
}

fn draw(n: &Option<Normal<f64>>, rng: &mut impl Rng) -> f64 {
    n.as_ref().map_or(0.0, |n| n.sample(rng))
}

fn render_detections(world: &SimWorld, s: &Scenario) -> (Vec<DetectionRecord>, Vec<Option<u32>>) {
    let p = &s.params;
    let noise = &p.noise;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    rng.set_stream(DETECTION_STREAM);
    let jitter = gaussian(noise.jitter_px);
    let light = gaussian(noise.lighting_sigma);
    let score_noise = gaussian(if noise.pixel_sigma > 0.0 { 0.04 } else { 0.0 });
    let fp = (noise.fp_rate > 0.0).then(|| Poisson::new(noise.fp_rate).expect("positive rate"));
    let categories: Vec<NodeId> = world.params.categories.iter().map(|c| NodeId::from(c.as_str())).collect();
    let size = p.patch_size;
    let interval = p.frame_interval_ms();
    let mut out = Vec::new();
    let mut objects = Vec::new();

    for frame in 0..p.duration_ms / interval {
        let t = frame * interval;
        for obj in visible(world, &s.exhibitions, t) {
            if rng.random::<f64>() < noise.miss_prob {
                continue;
            }
            let [x, y, w, h] = obj.motion.bbox(t - obj.since);
            let (dx, dy) = (draw(&jitter, &mut rng), draw(&jitter, &mut rng));
            let occlusion = (rng.random::<f64>() < noise.occlusion_prob && noise.occlusion_max > 0.0).then(|| {
                let rows = ((rng.random::<f64>() * noise.occlusion_max * f64::from(size)).round() as u32).min(size);
                (0, rng.random_range(0..=size - rows), size, rows)
            });
            let clutter = (noise.clutter_max > 0.0).then(|| {
                let cols = (rng.random::<f64>() * noise.clutter_max * f64::from(size)).round() as u32;
                let left = rng.random_range(0..=cols);
                (left, cols - left, level_color(rng.random_range(0..64)))
            });
            let covered = occlusion.map_or(0.0, |(_, _, _, rows)| f64::from(rows) / f64::from(size));
            let view = View {
                gain: (1.0 + draw(&light, &mut rng)).max(0.2),
                pixel_sigma: noise.pixel_sigma,
                occlusion,
                clutter,
            };
            let patch = obj.appearance.render(size, &view, &mut rng);
            let confidence = (0.92 - 0.5 * covered + draw(&score_noise, &mut rng)).clamp(0.55, 0.99);
            let mut node_scores = BTreeMap::from([(obj.category.clone(), round4(confidence))]);
            if noise.pixel_sigma > 0.0 {
                let other = categories.choose(&mut rng).expect("categories");
                if other != obj.category {
                    node_scores.insert(other.clone(), round4(rng.random_range(0.0..0.3)));
                }
            }
            objects.push(Some(obj.object_id));
            out.push(DetectionRecord {
                frame_index: frame,
                timestamp_ms: t,
                bbox: [round2(x + dx), round2(y + dy), round2(w), round2(h)],
                node_scores,
                appearance: None,
                patch: Some(InlinePatch::from(&patch)),
            });
        }
        let n_fp = fp.as_ref().map_or(0, |d| d.sample(&mut rng) as u64);
        for _ in 0..n_fp {
            let (w, h) = (rng.random_range(20.0..50.0), rng.random_range(20.0..50.0));
            let x = rng.random_range(0.0..p.frame_width - w);
            let y = rng.random_range(0.0..p.frame_height - h);
            let junk = Appearance {
                colors: [rng.random(), rng.random(), rng.random()],
                weights: [0.5, 0.3, 0.2],
                texture_seed: rng.random(),
            };
            let patch = junk.render(size, &View::clean(), &mut rng);
            let cat = categories.choose(&mut rng).expect("categories").clone();
            objects.push(None);
            out.push(DetectionRecord {
                frame_index: frame,
                timestamp_ms: t,
                bbox: [round2(x), round2(y), round2(w), round2(h)],
                node_scores: BTreeMap::from([(cat, round4(rng.random_range(0.3..0.7)))]),
                appearance: None,
                patch: Some(InlinePatch::from(&patch)),
            });
        }
    }
    (out, objects)
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn round4(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}

fn active(exhibitions: &[Exhibition], t: u64) -> Option<&Exhibition> {
    exhibitions.iter().find(|e| e.start_ms <= t && t < e.end_ms)
}

fn title_of<'a>(world: &'a SimWorld, e: &Exhibition) -> &'a str {
    &world.product(&e.product_id).expect("scripted product exists").title
}

fn render_transcripts(world: &SimWorld, s: &Scenario) -> Vec<TranscriptSegment> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    rng.set_stream(TRANSCRIPT_STREAM);
    let mut out = Vec::new();
    let mut t = rng.random_range(0..1000u64);
    loop {
        let len = rng.random_range(2000..3500u64);
        if t + len > s.params.duration_ms {
            break;
        }
        let filler = *FILLER.choose(&mut rng).expect("filler");
        let with_filler = s.params.noise.filler_speech;
        let text = match active(&s.exhibitions, t + len / 2) {
            Some(e) if rng.random::<f64>() < s.params.noise.mention_prob => {
                let title = title_of(world, e);
                Some(if with_filler { format!("{title} {filler}") } else { title.to_string() })
            }
            Some(e) if rng.random::<f64>() < 0.5 => with_filler.then(|| format!("{filler} {}", e.category)),
            _ => with_filler.then(|| filler.to_string()),
        };
        if let Some(text) = text {
            out.push(TranscriptSegment {
                start_ms: t,
                end_ms: t + len,
                text,
            });
        }
        t += len + rng.random_range(200..800u64);
    }
    out
}

fn render_comments(world: &SimWorld, s: &Scenario) -> Vec<Comment> {
    let noise = &s.params.noise;
    if noise.comment_rate <= 0.0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    rng.set_stream(COMMENT_STREAM);
    let mut out = Vec::new();
    let mean_gap = 1000.0 / noise.comment_rate;
    let mut t = 0.0f64;
    loop {
        t += -mean_gap * (1.0 - rng.random::<f64>()).ln();
        let ts = t as u64;
        if ts >= s.params.duration_ms {
            break;
        }
        // Viewers react to what was on screen a moment ago.
        let seen = ts.saturating_sub(rng.random_range(500..4000u64));
        let chatter = *CHATTER.choose(&mut rng).expect("chatter");
        let text = match active(&s.exhibitions, seen) {
            Some(e) if rng.random::<f64>() >= noise.comment_noise => {
                let words: Vec<&str> = title_of(world, e).split(' ').collect();
                let picked: Vec<&str> = words.choose_multiple(&mut rng, 2).copied().collect();
                format!("{} {chatter}", picked.join(" "))
            }
            _ => format!("{chatter} {}", CHATTER.choose(&mut rng).expect("chatter")),
        };
        out.push(Comment { timestamp_ms: ts, text });
    }
    out
}

/// Renders all three streams; each is sorted by time.
pub fn render_streams(world: &SimWorld, s: &Scenario) -> Rendered {
    let (detections, objects) = render_detections(world, s);
    Rendered {
        stream_id: format!("sim-{}", s.seed),
        detections,
        objects,
        object_products: s
            .exhibitions
            .iter()
            .flat_map(|e| {
                std::iter::once((e.object_id, e.product_id.clone()))
                    .chain(e.distractors.iter().map(|d| (d.object_id, d.product_id.clone())))
            })
            .collect(),
        transcripts: render_transcripts(world, s),
        comments: render_comments(world, s),
        truth: s.ground_truth(),
    }
}
