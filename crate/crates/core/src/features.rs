//! Per-modality feature providers and tracklet-level aggregation.
//!
//! The baseline providers are deterministic: a joint RGB histogram for the
//! visual side and signed feature hashing for text. Either can be swapped for
//! an external service through [`VisualProvider`] / [`TextProvider`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Patch;
use crate::scalar::{l2_norm, Scalar};
use crate::text::TokenBag;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("no descriptors to aggregate")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("weights length {weights} does not match {descriptors} descriptors")]
    WeightCount { weights: usize, descriptors: usize },
    #[error("invalid weight {0}")]
    InvalidWeight(f64),
    #[error("provider failure: {0}")]
    Provider(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Visual,
    Text,
}

/// Unit-length feature vector, or the all-zero vector flagged as missing.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T: Scalar = f64> {
    values: Vec<T>,
    modality: Modality,
    missing: bool,
}

impl<T: Scalar> Embedding<T> {
    /// Scales `values` to unit length; a zero or non-finite norm yields the
    /// missing embedding of the same dimension.
    pub fn normalized(mut values: Vec<T>, modality: Modality) -> Self {
        let n = l2_norm(&values);
        if n > T::zero() && n.is_finite() {
            for v in &mut values {
                *v /= n;
            }
            Self {
                values,
                modality,
                missing: false,
            }
        } else {
            Self::missing(values.len(), modality)
        }
    }

    pub fn missing(dim: usize, modality: Modality) -> Self {
        Self {
            values: vec![T::zero(); dim],
            modality,
            missing: true,
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn is_missing(&self) -> bool {
        self.missing
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn cast<U: Scalar>(&self) -> Embedding<U> {
        Embedding {
            values: self.values.iter().map(|&v| U::lit(v.as_f64())).collect(),
            modality: self.modality,
            missing: self.missing,
        }
    }
}

/// Joint RGB histogram with `bins`³ cells, L1 then L2 normalized.
///
/// Channel value `c` falls into bin `c * bins / 256`; cell index is
/// `(r_bin * bins + g_bin) * bins + b_bin`.
pub fn visual_descriptor<T: Scalar>(patch: &Patch, bins: usize) -> Embedding<T> {
    assert!((1..=256).contains(&bins), "bins per channel must be in 1..=256");
    let mut hist = vec![0u64; bins * bins * bins];
    for px in patch.pixels() {
        let b = |c: u8| c as usize * bins / 256;
        hist[(b(px[0]) * bins + b(px[1])) * bins + b(px[2])] += 1;
    }
    let total = T::lit(patch.pixels().len() as f64);
    let l1: Vec<T> = hist.iter().map(|&c| T::lit(c as f64) / total).collect();
    Embedding::normalized(l1, Modality::Visual)
}

/// 64-bit FNV-1a over the token's UTF-8 bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Bucket and sign for one token: index is `hash mod dim`, the sign is
/// negative when bit 63 of the hash is set.
pub fn token_slot(token: &str, dim: usize) -> (usize, bool) {
    let h = fnv1a64(token.as_bytes());
    ((h % dim as u64) as usize, h >> 63 == 1)
}

/// Signed hashed bag-of-words weighted by token count, L2 normalized.
/// An empty bag gives the missing embedding.
pub fn text_embed<T: Scalar>(bag: &TokenBag, dim: usize) -> Embedding<T> {
    assert!(dim >= 1, "text dimension must be positive");
    let mut v = vec![T::zero(); dim];
    for (token, count) in bag.iter() {
        let (idx, negative) = token_slot(token, dim);
        let w = T::lit(f64::from(count));
        if negative {
            v[idx] -= w;
        } else {
            v[idx] += w;
        }
    }
    Embedding::normalized(v, Modality::Text)
}

/// Weighted mean of unit descriptors re-normalized to unit length.
///
/// Weights default to uniform. A mean that cancels to zero (or all-zero
/// weights) returns the missing embedding.
pub fn aggregate_tracklet<T: Scalar>(
    descriptors: &[Embedding<T>],
    weights: Option<&[T]>,
) -> Result<Embedding<T>, FeatureError> {
    let first = descriptors.first().ok_or(FeatureError::Empty)?;
    let dim = first.dim();
    if let Some(w) = weights {
        if w.len() != descriptors.len() {
            return Err(FeatureError::WeightCount {
                weights: w.len(),
                descriptors: descriptors.len(),
            });
        }
        if let Some(&bad) = w.iter().find(|&&x| !(x >= T::zero()) || !x.is_finite()) {
            return Err(FeatureError::InvalidWeight(bad.as_f64()));
        }
    }
    let mut acc = vec![T::zero(); dim];
    let mut wsum = T::zero();
    for (i, d) in descriptors.iter().enumerate() {
        if d.dim() != dim {
            return Err(FeatureError::DimMismatch {
                expected: dim,
                actual: d.dim(),
            });
        }
        let w = weights.map_or(T::one(), |w| w[i]);
        wsum += w;
        for (a, &x) in acc.iter_mut().zip(d.values()) {
            *a += w * x;
        }
    }
    if wsum > T::zero() {
        for a in &mut acc {
            *a /= wsum;
        }
    }
    Ok(Embedding::normalized(acc, first.modality()))
}

/// Speech-to-text output covering `[start_ms, end_ms]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptSegment {
    pub start_ms: u64,
    pub end_ms: u64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub timestamp_ms: u64,
    pub text: String,
}

/// Padding applied around a window when collecting linguistic context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextWindowParams {
    /// Symmetric transcript padding.
    pub pad_ms: u64,
    /// How long after the window comments still count.
    pub comment_lag_ms: u64,
}

impl Default for TextWindowParams {
    fn default() -> Self {
        Self {
            pad_ms: 2000,
            comment_lag_ms: 5000,
        }
    }
}

impl TextWindowParams {
    /// Event time after which no further text can affect a window ending at `end_ms`.
    pub fn settle_time(&self, end_ms: u64) -> u64 {
        end_ms.saturating_add(self.pad_ms.max(self.comment_lag_ms))
    }
}

/// Whether a transcript segment lies inside the padded span.
pub fn transcript_in_window(seg: &TranscriptSegment, span: (u64, u64), pad_ms: u64) -> bool {
    seg.start_ms >= span.0.saturating_sub(pad_ms) && seg.end_ms <= span.1.saturating_add(pad_ms)
}

pub fn comment_in_window(c: &Comment, span: (u64, u64), lag_ms: u64) -> bool {
    c.timestamp_ms >= span.0 && c.timestamp_ms <= span.1.saturating_add(lag_ms)
}

/// Tokens from transcript segments contained in `[start - pad, end + pad]`
/// and comments stamped in `[start, end + lag]`.
pub fn align_text_window(
    span: (u64, u64),
    transcripts: &[TranscriptSegment],
    comments: &[Comment],
    params: TextWindowParams,
) -> TokenBag {
    let mut bag = TokenBag::new();
    for s in transcripts.iter().filter(|s| transcript_in_window(s, span, params.pad_ms)) {
        bag.add_text(&s.text);
    }
    for c in comments.iter().filter(|c| comment_in_window(c, span, params.comment_lag_ms)) {
        bag.add_text(&c.text);
    }
    bag
}

/// Source of visual descriptors. Implementations must be safe to call from
/// several threads.
pub trait VisualProvider<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_patch(&self, patch: &Patch) -> Result<Embedding<T>, FeatureError>;
}

pub trait TextProvider<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_tokens(&self, bag: &TokenBag) -> Result<Embedding<T>, FeatureError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HistogramProvider {
    pub bins: usize,
}

impl Default for HistogramProvider {
    fn default() -> Self {
        Self { bins: 4 }
    }
}

impl<T: Scalar> VisualProvider<T> for HistogramProvider {
    fn dim(&self) -> usize {
        self.bins.pow(3)
    }

    fn embed_patch(&self, patch: &Patch) -> Result<Embedding<T>, FeatureError> {
        Ok(visual_descriptor(patch, self.bins))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingTextProvider {
    pub dim: usize,
}

impl Default for HashingTextProvider {
    fn default() -> Self {
        Self { dim: 256 }
    }
}

impl<T: Scalar> TextProvider<T> for HashingTextProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_tokens(&self, bag: &TokenBag) -> Result<Embedding<T>, FeatureError> {
        Ok(text_embed(bag, self.dim))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RED: [u8; 3] = [255, 0, 0];
    const BLUE: [u8; 3] = [0, 0, 255];

    #[test]
    fn uniform_red_is_one_hot() {
        let p = Patch::uniform(3, 2, RED).unwrap();
        let d: Embedding = visual_descriptor(&p, 4);
        assert_eq!(d.dim(), 64);
        // red bin 3, green 0, blue 0 -> (3*4+0)*4+0 = 48
        for (i, &v) in d.values().iter().enumerate() {
            assert_eq!(v, if i == 48 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn half_red_half_blue() {
        let p = Patch::new(2, 2, vec![RED, BLUE, RED, BLUE]).unwrap();
        let d: Embedding = visual_descriptor(&p, 4);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((d.values()[48] - h).abs() < 1e-15);
        assert!((d.values()[3] - h).abs() < 1e-15);
        assert_eq!(d.values().iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn histogram_ignores_pixel_order() {
        let a = Patch::new(3, 1, vec![RED, BLUE, [10, 200, 30]]).unwrap();
        let b = Patch::new(1, 3, vec![[10, 200, 30], RED, BLUE]).unwrap();
        assert_eq!(visual_descriptor::<f64>(&a, 8), visual_descriptor::<f64>(&b, 8));
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn empty_bag_is_missing() {
        let e: Embedding = text_embed(&TokenBag::new(), 16);
        assert!(e.is_missing());
        assert!(e.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn text_embed_is_deterministic_and_unit() {
        let bag = TokenBag::from_text("red leather bag");
        let a: Embedding = text_embed(&bag, 32);
        let b: Embedding = text_embed(&bag, 32);
        assert_eq!(a, b);
        assert!((l2_norm(a.values()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_of_copies_is_identity() {
        let d: Embedding = Embedding::normalized(vec![0.6, 0.8], Modality::Visual);
        let agg = aggregate_tracklet(&vec![d.clone(); 5], None).unwrap();
        for (a, b) in agg.values().iter().zip(d.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn aggregate_orthogonal_pair() {
        let a = Embedding::normalized(vec![1.0, 0.0], Modality::Visual);
        let b = Embedding::normalized(vec![0.0, 1.0], Modality::Visual);
        let agg = aggregate_tracklet(&[a.clone(), b.clone()], None).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((agg.values()[0] - h).abs() < 1e-15 && (agg.values()[1] - h).abs() < 1e-15);
        let first = aggregate_tracklet(&[a.clone(), b], Some(&[1.0, 0.0])).unwrap();
        assert_eq!(first, a);
    }

    #[test]
    fn aggregate_cancellation_is_missing() {
        let a = Embedding::normalized(vec![1.0, 0.0], Modality::Visual);
        let b = Embedding::normalized(vec![-1.0, 0.0], Modality::Visual);
        assert!(aggregate_tracklet(&[a.clone(), b], None).unwrap().is_missing());
        assert!(aggregate_tracklet(&[a], Some(&[0.0])).unwrap().is_missing());
    }

    #[test]
    fn aggregate_errors() {
        let a = Embedding::<f64>::normalized(vec![1.0, 0.0], Modality::Visual);
        let b = Embedding::normalized(vec![1.0, 0.0, 0.0], Modality::Visual);
        assert_eq!(aggregate_tracklet::<f64>(&[], None), Err(FeatureError::Empty));
        assert!(matches!(
            aggregate_tracklet(&[a.clone(), b], None),
            Err(FeatureError::DimMismatch { .. })
        ));
        assert!(matches!(
            aggregate_tracklet(&[a], Some(&[1.0, 2.0])),
            Err(FeatureError::WeightCount { .. })
        ));
    }

    fn seg(s: u64, e: u64, text: &str) -> TranscriptSegment {
        TranscriptSegment {
            start_ms: s,
            end_ms: e,
            text: text.into(),
        }
    }

    #[test]
    fn transcript_equal_to_span_included() {
        let bag = align_text_window(
            (1000, 3000),
            &[seg(1000, 3000, "silk dress")],
            &[],
            TextWindowParams { pad_ms: 0, comment_lag_ms: 0 },
        );
        assert_eq!(bag.total(), 2);
    }

    #[test]
    fn padded_window_selects_contained_segment() {
        let params = TextWindowParams { pad_ms: 2000, comment_lag_ms: 5000 };
        let bag = align_text_window(
            (10_000, 20_000),
            &[seg(7500, 9000, "early"), seg(8500, 11_000, "late")],
            &[],
            params,
        );
        assert_eq!(bag.count("early"), 0);
        assert_eq!(bag.count("late"), 1);
    }

    #[test]
    fn comment_lag_boundary() {
        let params = TextWindowParams { pad_ms: 0, comment_lag_ms: 5000 };
        let c = |t: u64, s: &str| Comment { timestamp_ms: t, text: s.into() };
        let bag = align_text_window(
            (0, 1000),
            &[],
            &[c(6000, "inside"), c(6001, "outside"), c(0, "start")],
            params,
        );
        assert_eq!(bag.count("inside"), 1);
        assert_eq!(bag.count("outside"), 0);
        assert_eq!(bag.count("start"), 1);
    }
}
