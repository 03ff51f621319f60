//! The synthetic product catalog: parametric appearances and titles.
//!
//! Colors sit near histogram bin centers. Products of one lookalike group
//! share two dominant colors and differ in a small signature color and in
//! their titles, so a clean view separates them but a noisy one may not.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use shopfocus_core::catalog::{Catalog, Patch, ProductEntry, Taxonomy};
use shopfocus_core::{NodeId, ProductId};

use crate::params::CatalogParams;
use crate::SimError;

pub const ROOT: &str = "all";
pub const CATALOG_PATCH: u32 = 16;
/// Color of the hand that covers part of an object.
pub const OCCLUDER: [u8; 3] = [224, 168, 120];

const LEVELS: [u8; 4] = [32, 96, 160, 224];

const SYLLABLES: [&str; 24] = [
    "ka", "ro", "vi", "len", "mo", "tas", "qu", "zen", "bri", "lo", "fa", "nix", "dor", "sel", "ta", "mu", "rin", "ve", "go",
    "pel", "sa", "tor", "lu", "kem",
];
const STYLES: [&str; 12] = [
    "classic", "urban", "vintage", "sport", "deluxe", "mini", "pro", "soft", "daily", "studio", "limited", "travel",
];

/// Pixel layout plus colors of one product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub colors: [[u8; 3]; 3],
    pub weights: [f64; 3],
    pub texture_seed: u64,
}

/// Per-view rendering conditions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct View {
    pub gain: f64,
    pub pixel_sigma: f64,
    /// Occluded rectangle in patch coordinates: x, y, w, h.
    pub occlusion: Option<(u32, u32, u32, u32)>,
    /// Background columns at the left and right edges, and their color.
    pub clutter: Option<(u32, u32, [u8; 3])>,
}

impl View {
    pub fn clean() -> Self {
        Self {
            gain: 1.0,
            ..Self::default()
        }
    }
}

impl Appearance {
    /// Color index of every pixel: exact shares by largest remainder, placed
    /// by the texture seed.
    pub fn layout(&self, size: u32) -> Vec<u8> {
        let n = (size * size) as usize;
        let exact: Vec<f64> = self.weights.iter().map(|w| w * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        let mut rest = n - counts.iter().sum::<usize>();
        for &i in order.iter().cycle() {
            if rest == 0 {
                break;
            }
            counts[i] += 1;
            rest -= 1;
        }
        let mut layout: Vec<u8> = counts.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat_n(i as u8, c)).collect();
        layout.shuffle(&mut ChaCha8Rng::seed_from_u64(self.texture_seed ^ u64::from(size)));
        layout
    }

    pub fn render(&self, size: u32, view: &View, rng: &mut impl Rng) -> Patch {
        let noise = (view.pixel_sigma > 0.0).then(|| Normal::new(0.0, view.pixel_sigma).expect("finite sigma"));
        let pixels = self
            .layout(size)
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let (x, y) = (i as u32 % size, i as u32 / size);
                let occluded = view
                    .occlusion
                    .is_some_and(|(ox, oy, w, h)| x >= ox && x < ox + w && y >= oy && y < oy + h);
                let background = view.clutter.filter(|&(l, r, _)| x < l || x >= size - r.min(size)).map(|(_, _, bg)| bg);
                let base = match background {
                    Some(bg) => bg,
                    None if occluded => OCCLUDER,
                    None => self.colors[c as usize],
                };
                base.map(|ch| {
                    let mut v = f64::from(ch) * view.gain;
                    if let Some(n) = &noise {
                        v += n.sample(rng);
                    }
                    v.round().clamp(0.0, 255.0) as u8
                })
            })
            .collect();
        Patch::new(size, size, pixels).expect("square patch")
    }

    pub fn catalog_patch(&self) -> Patch {
        self.render(CATALOG_PATCH, &View::clean(), &mut ChaCha8Rng::seed_from_u64(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimProduct {
    pub product_id: ProductId,
    pub category: NodeId,
    /// Lookalike group within the category.
    pub group: usize,
    pub title: String,
    pub appearance: Appearance,
}

/// Catalog shared by every scenario generated from the same parameters.
#[derive(Debug, Clone)]
pub struct SimWorld {
    pub params: CatalogParams,
    pub taxonomy: Taxonomy,
    pub catalog: Catalog,
    pub products: Vec<SimProduct>,
}

pub(crate) fn level_color(code: usize) -> [u8; 3] {
    [LEVELS[code / 16], LEVELS[code / 4 % 4], LEVELS[code % 4]]
}

fn color_name(c: [u8; 3]) -> &'static str {
    let [r, g, b] = c.map(|x| x >= 128);
    match (r, g, b) {
        (false, false, false) => "black",
        (true, false, false) => "red",
        (false, true, false) => "green",
        (false, false, true) => "blue",
        (true, true, false) => "yellow",
        (true, false, true) => "purple",
        (false, true, true) => "teal",
        (true, true, true) => "white",
    }
}

fn brand(rng: &mut impl Rng, used: &mut BTreeSet<String>) -> String {
    loop {
        let n = rng.random_range(2..=3);
        let word: String = (0..n).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect();
        if used.insert(word.clone()) {
            return word;
        }
    }
}

/// Small per-product offset that keeps a color inside its bin.
fn nudge(c: [u8; 3], rng: &mut impl Rng) -> [u8; 3] {
    c.map(|x| (i32::from(x) + rng.random_range(-10..=10)) as u8)
}

impl SimWorld {
    pub fn generate(params: &CatalogParams) -> Result<Self, SimError> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let leaves: Vec<&str> = params.categories.iter().map(String::as_str).collect();
        let taxonomy = Taxonomy::flat(ROOT, &leaves);
        let mut used = BTreeSet::new();
        let mut products = Vec::new();
        let mut unique_codes: Vec<usize> = (0..64).collect();
        unique_codes.shuffle(&mut rng);
        let mut unique_codes = unique_codes.into_iter().cycle();

        for category in &params.categories {
            // Category palette: six distinct colors.
            let mut codes: Vec<usize> = (0..64).collect();
            codes.shuffle(&mut rng);
            let palette = &codes[..6];
            let n_groups = params.products_per_category.div_ceil(params.lookalike_group);
            for i in 0..params.products_per_category {
                let group = i % n_groups;
                let member = i / n_groups;
                let mut grng = ChaCha8Rng::seed_from_u64(params.seed ^ (fnv(category) + group as u64 * 7919));
                let dom = [palette[group % 6], palette[(group + 1 + group / 6) % 6]];
                let share = grng.random_range(0.55..0.7);
                let sig = if params.unique_colors {
                    unique_codes.next().expect("cycle")
                } else {
                    // Signature colors differ within a group.
                    let others: Vec<usize> = (0..64).filter(|c| !dom.contains(c)).collect();
                    let start = grng.random_range(0..others.len());
                    others[(start + member * 5) % others.len()]
                };
                let codes = if params.unique_colors {
                    [unique_codes.next().expect("cycle"), unique_codes.next().expect("cycle"), sig]
                } else {
                    [dom[0], dom[1], sig]
                };
                let w3 = params.signature_weight;
                let jitter = rng.random_range(-0.03..0.03);
                let w1 = (1.0 - w3) * (share + jitter);
                let appearance = Appearance {
                    colors: codes.map(|c| nudge(level_color(c), &mut rng)),
                    weights: [w1, 1.0 - w3 - w1, w3],
                    texture_seed: rng.random(),
                };
                let title = format!(
                    "{} {} {} {}",
                    brand(&mut rng, &mut used),
                    color_name(appearance.colors[0]),
                    STYLES[rng.random_range(0..STYLES.len())],
                    category
                );
                products.push(SimProduct {
                    product_id: ProductId::from(format!("{category}-{i:02}")),
                    category: NodeId::from(category.as_str()),
                    group,
                    title,
                    appearance,
                });
            }
        }
        let entries = products
            .iter()
            .map(|p| ProductEntry {
                product_id: p.product_id.clone(),
                category_path: vec![NodeId::from(ROOT), p.category.clone()],
                title: p.title.clone(),
                headline: None,
                patch: Some(p.appearance.catalog_patch()),
                descriptor: None,
            })
            .collect();
        let catalog = Catalog::new(entries, &taxonomy)?;
        Ok(Self {
            params: params.clone(),
            taxonomy,
            catalog,
            products,
        })
    }

    pub fn product(&self, id: &ProductId) -> Option<&SimProduct> {
        self.products.iter().find(|p| &p.product_id == id)
    }

    pub fn in_category<'a>(&'a self, category: &'a NodeId) -> impl Iterator<Item = &'a SimProduct> + 'a {
        self.products.iter().filter(move |p| &p.category == category)
    }
}

fn fnv(s: &str) -> u64 {
    shopfocus_core::features::fnv1a64(s.as_bytes())
}
