//! Joint embedding space: per-modality linear projections summed and
//! L2-normalized, trained with a cosine-distance triplet hinge.
//!
//! Model file layout (all little-endian): `d`, `Dv`, `Dt` as `u64`, `margin`
//! as `f64`, then `W_v` (d×Dv, row-major) and `W_t` (d×Dt, row-major) as
//! `f64`. No magic number, no padding.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Embedding;
use crate::ids::{NodeId, ProductId, TrackletId};
use crate::scalar::{dot, Scalar};

/// Fused vectors shorter than this cannot be normalized.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("{what} dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("fused vector norm {norm:e} too small to normalize")]
    Degenerate { norm: f64 },
    #[error("margin must be positive and finite, got {0}")]
    InvalidMargin(f64),
    #[error("model contains non-finite entries")]
    NonFinite,
    #[error("need at least two products to form a negative")]
    NoNegative,
    #[error("anchor labeled with unknown product {0}")]
    UnknownProduct(ProductId),
    #[error("training set has no anchors or triplets")]
    EmptyDataset,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("invalid training parameter: {0}")]
    InvalidParameter(String),
    #[error("training diverged in epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
}

/// Linear two-tower fusion shared by tracklets and products.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel<T: Scalar = f64> {
    d: usize,
    dv: usize,
    dt: usize,
    /// d×Dv, row-major.
    wv: Vec<T>,
    /// d×Dt, row-major.
    wt: Vec<T>,
    margin: T,
}

impl<T: Scalar> FusionModel<T> {
    pub fn new(d: usize, dv: usize, dt: usize, wv: Vec<T>, wt: Vec<T>, margin: T) -> Result<Self, FusionError> {
        if wv.len() != d * dv {
            return Err(FusionError::DimMismatch {
                what: "W_v",
                expected: d * dv,
                actual: wv.len(),
            });
        }
        if wt.len() != d * dt {
            return Err(FusionError::DimMismatch {
                what: "W_t",
                expected: d * dt,
                actual: wt.len(),
            });
        }
        if !(margin > T::zero()) || !margin.is_finite() {
            return Err(FusionError::InvalidMargin(margin.as_f64()));
        }
        if wv.iter().chain(&wt).any(|x| !x.is_finite()) {
            return Err(FusionError::NonFinite);
        }
        Ok(Self { d, dv, dt, wv, wt, margin })
    }

    /// Entries i.i.d. uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, where
    /// `fan_in` is the input width of each projection.
    pub fn random(d: usize, dv: usize, dt: usize, margin: T, seed: u64) -> Result<Self, FusionError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |fan_in: usize, n: usize| -> Vec<T> {
            let a = 1.0 / (fan_in.max(1) as f64).sqrt();
            let dist = Uniform::new_inclusive(-a, a).expect("finite bounds");
            (0..n).map(|_| T::lit(dist.sample(&mut rng))).collect()
        };
        let wv = draw(dv, d * dv);
        let wt = draw(dt, d * dt);
        Self::new(d, dv, dt, wv, wt, margin)
    }

    /// `W_v = I`, `W_t = 0`: the fused vector is the visual descriptor itself.
    pub fn identity_visual(dv: usize, dt: usize, margin: T) -> Self {
        let mut wv = vec![T::zero(); dv * dv];
        for i in 0..dv {
            wv[i * dv + i] = T::one();
        }
        Self::new(dv, dv, dt, wv, vec![T::zero(); dv * dt], margin).expect("valid by construction")
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn visual_dim(&self) -> usize {
        self.dv
    }

    pub fn text_dim(&self) -> usize {
        self.dt
    }

    pub fn margin(&self) -> T {
        self.margin
    }

    pub fn wv(&self) -> &[T] {
        &self.wv
    }

    pub fn wt(&self) -> &[T] {
        &self.wt
    }

    pub fn wv_mut(&mut self) -> &mut [T] {
        &mut self.wv
    }

    pub fn wt_mut(&mut self) -> &mut [T] {
        &mut self.wt
    }

    /// Multiplies both projections by `c`.
    pub fn scaled(&self, c: T) -> Self {
        let mut m = self.clone();
        m.wv.iter_mut().chain(m.wt.iter_mut()).for_each(|x| *x *= c);
        m
    }

    /// `W -= lr * grad` for both projections.
    pub fn apply_gradient(&mut self, g: &Gradients<T>, lr: T) {
        for (w, &d) in self.wv.iter_mut().zip(&g.dwv) {
            *w -= lr * d;
        }
        for (w, &d) in self.wt.iter_mut().zip(&g.dwt) {
            *w -= lr * d;
        }
    }

    pub fn cast<U: Scalar>(&self) -> FusionModel<U> {
        let c = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect();
        FusionModel {
            d: self.d,
            dv: self.dv,
            dt: self.dt,
            wv: c(&self.wv),
            wt: c(&self.wt),
            margin: U::lit(self.margin.as_f64()),
        }
    }

    /// Unnormalized `W_v v + W_t t`. Missing inputs contribute zero.
    pub fn project(&self, v: &Embedding<T>, t: &Embedding<T>) -> Result<Vec<T>, FusionError> {
        self.check_inputs(v, t)?;
        let mut u = vec![T::zero(); self.d];
        accumulate(&mut u, &self.wv, self.dv, v);
        accumulate(&mut u, &self.wt, self.dt, t);
        Ok(u)
    }

    fn check_inputs(&self, v: &Embedding<T>, t: &Embedding<T>) -> Result<(), FusionError> {
        if v.dim() != self.dv {
            return Err(FusionError::DimMismatch {
                what: "visual input",
                expected: self.dv,
                actual: v.dim(),
            });
        }
        if t.dim() != self.dt {
            return Err(FusionError::DimMismatch {
                what: "text input",
                expected: self.dt,
                actual: t.dim(),
            });
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        for n in [self.d, self.dv, self.dt] {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        w.write_all(&self.margin.as_f64().to_le_bytes())?;
        for x in self.wv.iter().chain(&self.wt) {
            w.write_all(&x.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, FusionError> {
        let mut b8 = [0u8; 8];
        let mut dims = [0usize; 3];
        for d in &mut dims {
            r.read_exact(&mut b8)?;
            *d = usize::try_from(u64::from_le_bytes(b8))
                .map_err(|_| FusionError::InvalidParameter("dimension overflows usize".into()))?;
        }
        let [d, dv, dt] = dims;
        r.read_exact(&mut b8)?;
        let margin = f64::from_le_bytes(b8);
        let mut read_mat = |n: usize| -> std::io::Result<Vec<T>> {
            let mut out = Vec::with_capacity(n.min(1 << 24));
            for _ in 0..n {
                r.read_exact(&mut b8)?;
                out.push(T::lit(f64::from_le_bytes(b8)));
            }
            Ok(out)
        };
        let wv = read_mat(d * dv)?;
        let wt = read_mat(d * dt)?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(FusionError::InvalidParameter("trailing bytes after model".into()));
        }
        Self::new(d, dv, dt, wv, wt, T::lit(margin))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FusionError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FusionError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn accumulate<T: Scalar>(u: &mut [T], w: &[T], cols: usize, x: &Embedding<T>) {
    if x.is_missing() {
        return;
    }
    for (j, &xj) in x.values().iter().enumerate() {
        if xj == T::zero() {
            continue;
        }
        for (i, ui) in u.iter_mut().enumerate() {
            *ui += w[i * cols + j] * xj;
        }
    }
}

/// Owner of a fused vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Tracklet(TrackletId),
    Product(ProductId),
    Anonymous,
}

/// Unit vector in the joint space, or zero flagged missing.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedEmbedding<T: Scalar = f64> {
    values: Vec<T>,
    missing: bool,
    pub source: EmbeddingSource,
}

impl<T: Scalar> FusedEmbedding<T> {
    /// Wraps a vector that is already unit length.
    pub fn from_unit(values: Vec<T>, source: EmbeddingSource) -> Self {
        Self {
            values,
            missing: false,
            source,
        }
    }

    /// Normalizes `values`; returns `None` for a zero vector.
    pub fn normalized(mut values: Vec<T>, source: EmbeddingSource) -> Option<Self> {
        let n = crate::scalar::normalize_in_place(&mut values);
        (n.as_f64() >= DEGENERATE_NORM && n.is_finite()).then_some(Self::from_unit(values, source))
    }

    pub fn missing(dim: usize, source: EmbeddingSource) -> Self {
        Self {
            values: vec![T::zero(); dim],
            missing: true,
            source,
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn is_missing(&self) -> bool {
        self.missing
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn with_source(mut self, source: EmbeddingSource) -> Self {
        self.source = source;
        self
    }
}

/// `u = W_v v + W_t t`, returned as `u / |u|`.
///
/// Both inputs missing yields the missing fused embedding.
pub fn fuse<T: Scalar>(v: &Embedding<T>, t: &Embedding<T>, m: &FusionModel<T>) -> Result<FusedEmbedding<T>, FusionError> {
    let u = m.project(v, t)?;
    if v.is_missing() && t.is_missing() {
        return Ok(FusedEmbedding::missing(m.d(), EmbeddingSource::Anonymous));
    }
    let norm = crate::scalar::l2_norm(&u);
    if !(norm.as_f64() >= DEGENERATE_NORM) || !norm.is_finite() {
        return Err(FusionError::Degenerate { norm: norm.as_f64() });
    }
    Ok(FusedEmbedding::from_unit(
        u.into_iter().map(|x| x / norm).collect(),
        EmbeddingSource::Anonymous,
    ))
}

/// Cosine distance between unit vectors.
pub fn cosine_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    T::one() - dot(a, b)
}

/// `max(0, D(a,p) - D(a,n) + margin)` with `D = 1 - cos`.
pub fn triplet_loss<T: Scalar>(a: &[T], p: &[T], n: &[T], margin: T) -> T {
    (cosine_distance(a, p) - cosine_distance(a, n) + margin).max(T::zero())
}

/// Raw modality inputs for one side of a triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalPair<T: Scalar = f64> {
    pub visual: Embedding<T>,
    pub text: Embedding<T>,
}

impl<T: Scalar> ModalPair<T> {
    pub fn new(visual: Embedding<T>, text: Embedding<T>) -> Self {
        Self { visual, text }
    }

    pub fn fuse(&self, m: &FusionModel<T>) -> Result<FusedEmbedding<T>, FusionError> {
        fuse(&self.visual, &self.text, m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet<T: Scalar = f64> {
    pub anchor: ModalPair<T>,
    pub positive: ModalPair<T>,
    pub negative: ModalPair<T>,
    pub positive_id: ProductId,
    pub negative_id: ProductId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Scalar = f64> {
    /// d×Dv, row-major.
    pub dwv: Vec<T>,
    /// d×Dt, row-major.
    pub dwt: Vec<T>,
    pub mean_loss: T,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros(m: &FusionModel<T>) -> Self {
        Self {
            dwv: vec![T::zero(); m.d * m.dv],
            dwt: vec![T::zero(); m.d * m.dt],
            mean_loss: T::zero(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.dwv
            .iter()
            .chain(&self.dwt)
            .fold(T::zero(), |m, x| m.max(x.abs()))
    }
}

struct Forward<T> {
    u_norm: T,
    x: Vec<T>,
}

fn forward<T: Scalar>(m: &FusionModel<T>, pair: &ModalPair<T>) -> Result<Forward<T>, FusionError> {
    let u = m.project(&pair.visual, &pair.text)?;
    let n = crate::scalar::l2_norm(&u);
    if !(n.as_f64() >= DEGENERATE_NORM) || !n.is_finite() {
        return Err(FusionError::Degenerate { norm: n.as_f64() });
    }
    Ok(Forward {
        u_norm: n,
        x: u.into_iter().map(|v| v / n).collect(),
    })
}

/// Pushes `dL/dx` back through `x = u/|u|` and `u = W_v v + W_t t`.
fn backprop<T: Scalar>(g: &mut Gradients<T>, m: &FusionModel<T>, pair: &ModalPair<T>, f: &Forward<T>, dx: &[T]) {
    let proj = dot(&f.x, dx);
    let du: Vec<T> = f.x.iter().zip(dx).map(|(&x, &d)| (d - x * proj) / f.u_norm).collect();
    for (input, dw, cols) in [(&pair.visual, &mut g.dwv, m.dv), (&pair.text, &mut g.dwt, m.dt)] {
        if input.is_missing() {
            continue;
        }
        for (j, &xj) in input.values().iter().enumerate() {
            if xj == T::zero() {
                continue;
            }
            for (i, &dui) in du.iter().enumerate() {
                dw[i * cols + j] += dui * xj;
            }
        }
    }
}

/// Analytic gradient of the mean triplet loss over `batch`.
pub fn grad_fusion<T: Scalar>(m: &FusionModel<T>, batch: &[Triplet<T>]) -> Result<Gradients<T>, FusionError> {
    if batch.is_empty() {
        return Err(FusionError::EmptyBatch);
    }
    let mut g = Gradients::zeros(m);
    let mut total = T::zero();
    for t in batch {
        let fa = forward(m, &t.anchor)?;
        let fp = forward(m, &t.positive)?;
        let fne = forward(m, &t.negative)?;
        let loss = triplet_loss(&fa.x, &fp.x, &fne.x, m.margin);
        total += loss;
        if loss <= T::zero() {
            continue;
        }
        // L = a·n - a·p + margin
        let da: Vec<T> = fne.x.iter().zip(&fp.x).map(|(&n, &p)| n - p).collect();
        let dp: Vec<T> = fa.x.iter().map(|&a| -a).collect();
        backprop(&mut g, m, &t.anchor, &fa, &da);
        backprop(&mut g, m, &t.positive, &fp, &dp);
        backprop(&mut g, m, &t.negative, &fne, &fa.x);
    }
    let n = T::lit(batch.len() as f64);
    g.dwv.iter_mut().chain(g.dwt.iter_mut()).for_each(|x| *x /= n);
    g.mean_loss = total / n;
    Ok(g)
}

/// Mean triplet loss over `batch` without gradients.
pub fn batch_loss<T: Scalar>(m: &FusionModel<T>, batch: &[Triplet<T>]) -> Result<T, FusionError> {
    if batch.is_empty() {
        return Err(FusionError::EmptyBatch);
    }
    let mut total = T::zero();
    for t in batch {
        let a = forward(m, &t.anchor)?;
        let p = forward(m, &t.positive)?;
        let n = forward(m, &t.negative)?;
        total += triplet_loss(&a.x, &p.x, &n.x, m.margin);
    }
    Ok(total / T::lit(batch.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiningStrategy {
    Random,
    SemiHard,
}

/// Tracklet-side inputs labeled with the product they show.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledAnchor<T: Scalar = f64> {
    pub pair: ModalPair<T>,
    pub product_id: ProductId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductSide<T: Scalar = f64> {
    pub product_id: ProductId,
    pub pair: ModalPair<T>,
    /// Products with a group draw negatives only from their own group,
    /// e.g. the leaf category when retrieval is category-filtered.
    pub group: Option<NodeId>,
}

/// Indices of the products that may serve as negatives for `pos`: the rest
/// of its group, or every other product when the group has no other member.
fn rivals<T: Scalar>(catalog: &[ProductSide<T>], pos: usize) -> Vec<usize> {
    let group = &catalog[pos].group;
    let same: Vec<usize> = (0..catalog.len())
        .filter(|&j| j != pos && group.is_some() && &catalog[j].group == group)
        .collect();
    if same.is_empty() {
        (0..catalog.len()).filter(|&j| j != pos).collect()
    } else {
        same
    }
}

/// Builds one triplet per anchor. The positive is the labeled product; the
/// negative is drawn according to `strategy`.
pub fn mine_triplets<T: Scalar, R: Rng + ?Sized>(
    anchors: &[LabeledAnchor<T>],
    catalog: &[ProductSide<T>],
    m: &FusionModel<T>,
    strategy: MiningStrategy,
    rng: &mut R,
) -> Result<Vec<Triplet<T>>, FusionError> {
    if catalog.len() < 2 {
        return Err(FusionError::NoNegative);
    }
    let fused: Vec<Vec<T>> = match strategy {
        MiningStrategy::Random => Vec::new(),
        MiningStrategy::SemiHard => catalog
            .iter()
            .map(|p| forward(m, &p.pair).map(|f| f.x))
            .collect::<Result<_, _>>()?,
    };
    let mut out = Vec::with_capacity(anchors.len());
    let mut candidates = Vec::with_capacity(catalog.len());
    for a in anchors {
        let pos = catalog
            .iter()
            .position(|p| p.product_id == a.product_id)
            .ok_or_else(|| FusionError::UnknownProduct(a.product_id.clone()))?;
        let pool = rivals(catalog, pos);
        let neg = match strategy {
            MiningStrategy::Random => *pool.choose(rng).expect("catalog has another product"),
            MiningStrategy::SemiHard => {
                let ax = forward(m, &a.pair)?.x;
                let dap = cosine_distance(&ax, &fused[pos]);
                candidates.clear();
                let mut hardest: Option<(usize, T)> = None;
                for &j in &pool {
                    let dan = cosine_distance(&ax, &fused[j]);
                    if dan > dap && dan < dap + m.margin {
                        candidates.push(j);
                    }
                    if hardest.is_none_or(|(_, h)| dan < h) {
                        hardest = Some((j, dan));
                    }
                }
                match candidates.choose(rng) {
                    Some(&j) => j,
                    None => hardest.expect("catalog has another product").0,
                }
            }
        };
        out.push(Triplet {
            anchor: a.pair.clone(),
            positive: catalog[pos].pair.clone(),
            negative: catalog[neg].pair.clone(),
            positive_id: catalog[pos].product_id.clone(),
            negative_id: catalog[neg].product_id.clone(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet<T: Scalar = f64> {
    pub products: Vec<ProductSide<T>>,
    pub anchors: Vec<LabeledAnchor<T>>,
    /// Triplets used as-is every epoch (e.g. from seller feedback).
    pub fixed: Vec<Triplet<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub strategy: MiningStrategy,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.05,
            batch_size: 32,
            strategy: MiningStrategy::SemiHard,
            seed: 0,
        }
    }
}

/// Mean loss of every anchor against each of its possible negatives plus
/// the fixed triplets. Deterministic, used for the loss curve.
pub fn dataset_loss<T: Scalar>(m: &FusionModel<T>, data: &TrainingSet<T>) -> Result<T, FusionError> {
    let fused: Vec<Vec<T>> = data
        .products
        .iter()
        .map(|p| forward(m, &p.pair).map(|f| f.x))
        .collect::<Result<_, _>>()?;
    let mut total = T::zero();
    let mut count = 0usize;
    for a in &data.anchors {
        let pos = data
            .products
            .iter()
            .position(|p| p.product_id == a.product_id)
            .ok_or_else(|| FusionError::UnknownProduct(a.product_id.clone()))?;
        let ax = forward(m, &a.pair)?.x;
        for j in rivals(&data.products, pos) {
            total += triplet_loss(&ax, &fused[pos], &fused[j], m.margin);
            count += 1;
        }
    }
    if !data.fixed.is_empty() {
        total += batch_loss(m, &data.fixed)? * T::lit(data.fixed.len() as f64);
        count += data.fixed.len();
    }
    if count == 0 {
        return Err(FusionError::EmptyDataset);
    }
    Ok(total / T::lit(count as f64))
}

/// Mini-batch gradient descent on mined triplets.
///
/// The returned curve has `epochs + 1` entries: [`dataset_loss`] before
/// training and after each epoch.
pub fn train<T: Scalar>(
    model: &FusionModel<T>,
    data: &TrainingSet<T>,
    params: &TrainParams,
) -> Result<(FusionModel<T>, Vec<T>), FusionError> {
    if data.anchors.is_empty() && data.fixed.is_empty() {
        return Err(FusionError::EmptyDataset);
    }
    if !(params.lr >= 0.0) || !params.lr.is_finite() {
        return Err(FusionError::InvalidParameter(format!("learning rate {}", params.lr)));
    }
    if params.batch_size == 0 {
        return Err(FusionError::InvalidParameter("batch size 0".into()));
    }
    let mut m = model.clone();
    let lr = T::lit(params.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let initial = dataset_loss(&m, data)?;
    if !initial.is_finite() {
        return Err(FusionError::Diverged {
            epoch: 0,
            loss: initial.as_f64(),
        });
    }
    let mut curve = vec![initial];
    for epoch in 1..=params.epochs {
        let mut triplets = if data.anchors.is_empty() {
            Vec::new()
        } else {
            mine_triplets(&data.anchors, &data.products, &m, params.strategy, &mut rng)?
        };
        triplets.extend(data.fixed.iter().cloned());
        triplets.shuffle(&mut rng);
        for batch in triplets.chunks(params.batch_size) {
            let g = grad_fusion(&m, batch)?;
            if !g.mean_loss.is_finite() {
                return Err(FusionError::Diverged {
                    epoch,
                    loss: g.mean_loss.as_f64(),
                });
            }
            m.apply_gradient(&g, lr);
        }
        let loss = dataset_loss(&m, data).or_else(|e| match e {
            FusionError::Degenerate { norm } => Err(FusionError::Diverged { epoch, loss: norm }),
            other => Err(other),
        })?;
        if !loss.is_finite() || m.wv.iter().chain(&m.wt).any(|x| !x.is_finite()) {
            return Err(FusionError::Diverged {
                epoch,
                loss: loss.as_f64(),
            });
        }
        curve.push(loss);
    }
    Ok((m, curve))
}
