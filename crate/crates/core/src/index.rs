//! Catalog-side retrieval over fused embeddings: exact cosine top-K, a
//! random-hyperplane LSH candidate generator, and recall@K reporting.
//!
//! Results are ordered by similarity descending, ties by ascending product id.
//!
//! Snapshot layout (little-endian): `d: u64`, `count: u64`,
//! `tie_rule: u32`, then per entry `id_len: u32`, id bytes, `path_len: u32`,
//! slash-joined category path bytes, `d` × `f64`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{join_path, split_path};
use crate::fusion::{EmbeddingSource, FusedEmbedding};
use crate::ids::{NodeId, ProductId};
use crate::scalar::{dot, Scalar};

/// Version of the ordering rule recorded in snapshots.
pub const TIE_RULE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate product id {0}")]
    DuplicateId(ProductId),
    #[error("embedding dimension {actual} does not match index dimension {expected}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("entry {0} has a missing embedding")]
    MissingEntry(ProductId),
    #[error("query embedding is missing")]
    InvalidQuery,
    #[error("K must be at least 1")]
    ZeroK,
    #[error("LSH needs at least one table and 1..=64 bits (got {tables} tables, {bits} bits)")]
    LshParams { tables: usize, bits: usize },
    #[error("unknown category {0}")]
    UnknownCategory(NodeId),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("snapshot io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry<T: Scalar = f64> {
    pub product_id: ProductId,
    pub fused: FusedEmbedding<T>,
    pub category_path: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub product_id: ProductId,
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub hits: Vec<Hit>,
}

impl QueryResult {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ProductId> {
        self.hits.iter().map(|h| &h.product_id)
    }

    pub fn contains(&self, id: &str, k: usize) -> bool {
        self.hits.iter().take(k).any(|h| h.product_id.as_str() == id)
    }
}

/// Descending similarity, then ascending product id.
pub fn rank_order(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1))
}

/// Brute-force cosine index. Immutable after build.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactIndex<T: Scalar = f64> {
    dim: usize,
    entries: Vec<IndexEntry<T>>,
}

pub fn build_exact<T: Scalar>(entries: Vec<IndexEntry<T>>) -> Result<ExactIndex<T>, IndexError> {
    ExactIndex::build(entries)
}

impl<T: Scalar> ExactIndex<T> {
    pub fn build(entries: Vec<IndexEntry<T>>) -> Result<Self, IndexError> {
        let dim = entries.first().map_or(0, |e| e.fused.dim());
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.product_id.as_str()) {
                return Err(IndexError::DuplicateId(e.product_id.clone()));
            }
            if e.fused.dim() != dim {
                return Err(IndexError::DimMismatch {
                    expected: dim,
                    actual: e.fused.dim(),
                });
            }
            if e.fused.is_missing() {
                return Err(IndexError::MissingEntry(e.product_id.clone()));
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[IndexEntry<T>] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&IndexEntry<T>> {
        self.entries.iter().find(|e| e.product_id.as_str() == id)
    }

    fn check_query(&self, q: &FusedEmbedding<T>, k: usize) -> Result<(), IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if q.is_missing() {
            return Err(IndexError::InvalidQuery);
        }
        if !self.entries.is_empty() && q.dim() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                actual: q.dim(),
            });
        }
        Ok(())
    }

    /// Exact top-`k` by cosine similarity.
    pub fn query(&self, q: &FusedEmbedding<T>, k: usize) -> Result<QueryResult, IndexError> {
        self.query_filtered(q, k, |_| true)
    }

    /// Exact top-`k` among entries accepted by `keep`.
    pub fn query_filtered(
        &self,
        q: &FusedEmbedding<T>,
        k: usize,
        keep: impl Fn(&IndexEntry<T>) -> bool,
    ) -> Result<QueryResult, IndexError> {
        self.check_query(q, k)?;
        Ok(self.rank(q, self.entries.iter().enumerate().filter(|(_, e)| keep(e)).map(|(i, _)| i), k))
    }

    fn rank(&self, q: &FusedEmbedding<T>, candidates: impl Iterator<Item = usize>, k: usize) -> QueryResult {
        let mut scored: Vec<(f64, usize)> = candidates
            .map(|i| (similarity(q.values(), self.entries[i].fused.values()), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            rank_order(
                (a.0, self.entries[a.1].product_id.as_str()),
                (b.0, self.entries[b.1].product_id.as_str()),
            )
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        QueryResult {
            hits: scored
                .into_iter()
                .map(|(s, i)| Hit {
                    product_id: self.entries[i].product_id.clone(),
                    similarity: s,
                })
                .collect(),
        }
    }

    pub fn write_snapshot(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        w.write_all(&TIE_RULE_VERSION.to_le_bytes())?;
        for e in &self.entries {
            for s in [e.product_id.as_str(), &join_path(&e.category_path)] {
                w.write_all(&(s.len() as u32).to_le_bytes())?;
                w.write_all(s.as_bytes())?;
            }
            for x in e.fused.values() {
                w.write_all(&x.as_f64().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_snapshot(mut r: impl Read) -> Result<Self, IndexError> {
        let mut b8 = [0u8; 8];
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b8)?;
        let dim = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != TIE_RULE_VERSION {
            return Err(IndexError::Snapshot(format!("unsupported tie rule version {version}")));
        }
        let mut read_str = |r: &mut dyn Read| -> Result<String, IndexError> {
            r.read_exact(&mut b4)?;
            let mut buf = vec![0u8; u32::from_le_bytes(b4) as usize];
            r.read_exact(&mut buf)?;
            String::from_utf8(buf).map_err(|e| IndexError::Snapshot(e.to_string()))
        };
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let id = read_str(&mut r)?;
            let path = read_str(&mut r)?;
            let mut values = Vec::with_capacity(dim);
            for _ in 0..dim {
                r.read_exact(&mut b8)?;
                values.push(T::lit(f64::from_le_bytes(b8)));
            }
            let product_id = ProductId::from(id);
            entries.push(IndexEntry {
                fused: FusedEmbedding::from_unit(values, EmbeddingSource::Product(product_id.clone())),
                product_id,
                category_path: split_path(&path),
            });
        }
        Self::build(entries)
    }
}

/// Dot product of unit vectors clamped to `[-1, 1]`.
pub fn similarity<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    dot(a, b).as_f64().clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
struct LshTable<T: Scalar> {
    /// `n_bits` hyperplane normals of length `d`.
    planes: Vec<Vec<T>>,
    buckets: HashMap<u64, Vec<usize>>,
}

impl<T: Scalar> LshTable<T> {
    fn signature(&self, v: &[T]) -> u64 {
        self.planes
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, h)| if dot(h, v) >= T::zero() { acc | (1 << i) } else { acc })
    }
}

/// Random-hyperplane LSH over an [`ExactIndex`]; candidates are re-ranked
/// exactly.
///
/// Hyperplanes are drawn table after table from one seeded stream, so an
/// index with fewer tables uses a prefix of the tables of a larger one.
#[derive(Debug, Clone, PartialEq)]
pub struct LshIndex<T: Scalar = f64> {
    base: ExactIndex<T>,
    tables: Vec<LshTable<T>>,
    n_bits: usize,
}

pub fn build_lsh<T: Scalar>(
    entries: Vec<IndexEntry<T>>,
    n_tables: usize,
    n_bits: usize,
    seed: u64,
) -> Result<LshIndex<T>, IndexError> {
    LshIndex::build(ExactIndex::build(entries)?, n_tables, n_bits, seed)
}

impl<T: Scalar> LshIndex<T> {
    pub fn build(base: ExactIndex<T>, n_tables: usize, n_bits: usize, seed: u64) -> Result<Self, IndexError> {
        if n_tables == 0 || n_bits == 0 || n_bits > 64 {
            return Err(IndexError::LshParams {
                tables: n_tables,
                bits: n_bits,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tables = Vec::with_capacity(n_tables);
        for _ in 0..n_tables {
            let planes: Vec<Vec<T>> = (0..n_bits)
                .map(|_| {
                    (0..base.dim())
                        .map(|_| T::lit(StandardNormal.sample(&mut rng)))
                        .collect()
                })
                .collect();
            let mut table = LshTable {
                planes,
                buckets: HashMap::new(),
            };
            for (i, e) in base.entries().iter().enumerate() {
                let sig = table.signature(e.fused.values());
                table.buckets.entry(sig).or_default().push(i);
            }
            tables.push(table);
        }
        Ok(Self { base, tables, n_bits })
    }

    pub fn exact(&self) -> &ExactIndex<T> {
        &self.base
    }

    pub fn n_tables(&self) -> usize {
        self.tables.len()
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn hyperplanes(&self, table: usize) -> &[Vec<T>] {
        &self.tables[table].planes
    }

    /// Signature of `v` in `table`.
    pub fn bucket_of(&self, table: usize, v: &[T]) -> u64 {
        self.tables[table].signature(v)
    }

    /// Sorted indices of entries sharing at least one bucket with `v`.
    pub fn candidates(&self, v: &[T]) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .tables
            .iter()
            .filter_map(|t| t.buckets.get(&t.signature(v)))
            .flatten()
            .copied()
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Exact ranking restricted to the query's buckets. Empty when no entry
    /// collides with the query.
    pub fn query_approx(&self, q: &FusedEmbedding<T>, k: usize) -> Result<QueryResult, IndexError> {
        self.base.check_query(q, k)?;
        let cands = self.candidates(q.values());
        Ok(self.base.rank(q, cands.into_iter(), k))
    }
}

pub fn query_approx<T: Scalar>(index: &LshIndex<T>, q: &FusedEmbedding<T>, k: usize) -> Result<QueryResult, IndexError> {
    index.query_approx(q, k)
}

/// One ground-truth item with its retrieval result.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub category: NodeId,
    pub truth: ProductId,
    pub result: QueryResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRecall {
    pub category: NodeId,
    pub recalled: usize,
    pub total: usize,
    /// `None` when the category has no items.
    pub recall: Option<f64>,
}

/// Per-category recall plus their unweighted mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub categories: Vec<CategoryRecall>,
    pub mean: f64,
}

/// Unweighted mean over the given values; zero when empty.
pub fn unweighted_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl RecallReport {
    /// Builds a report from per-category rates; the mean skips empty categories.
    pub fn from_rates(rates: impl IntoIterator<Item = (NodeId, Option<f64>)>) -> Self {
        let categories: Vec<CategoryRecall> = rates
            .into_iter()
            .map(|(category, recall)| CategoryRecall {
                category,
                recalled: 0,
                total: 0,
                recall,
            })
            .collect();
        let mean = unweighted_mean(categories.iter().filter_map(|c| c.recall));
        Self { categories, mean }
    }

    fn from_counts(categories: &[NodeId], counts: &BTreeMap<&NodeId, (usize, usize)>) -> Self {
        let categories: Vec<CategoryRecall> = categories
            .iter()
            .map(|c| {
                let (recalled, total) = counts.get(c).copied().unwrap_or((0, 0));
                CategoryRecall {
                    category: c.clone(),
                    recalled,
                    total,
                    recall: (total > 0).then(|| recalled as f64 / total as f64),
                }
            })
            .collect();
        let mean = unweighted_mean(categories.iter().filter_map(|c| c.recall));
        Self { categories, mean }
    }

    pub fn recall(&self, category: &str) -> Option<f64> {
        self.categories
            .iter()
            .find(|c| c.category.as_str() == category)
            .and_then(|c| c.recall)
    }
}

/// Counts items whose true product appears in the top `k` of their result.
pub(crate) fn tally<'a>(
    items: impl IntoIterator<Item = (&'a NodeId, bool)>,
    categories: &'a [NodeId],
) -> Result<RecallReport, IndexError> {
    let mut counts: BTreeMap<&NodeId, (usize, usize)> = categories.iter().map(|c| (c, (0, 0))).collect();
    for (cat, hit) in items {
        let slot = counts.get_mut(cat).ok_or_else(|| IndexError::UnknownCategory(cat.clone()))?;
        slot.1 += 1;
        if hit {
            slot.0 += 1;
        }
    }
    Ok(RecallReport::from_counts(categories, &counts))
}

pub fn recall_at_k(items: &[EvalItem], k: usize, categories: &[NodeId]) -> Result<RecallReport, IndexError> {
    if k == 0 {
        return Err(IndexError::ZeroK);
    }
    tally(
        items.iter().map(|it| (&it.category, it.result.contains(it.truth.as_str(), k))),
        categories,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, v: &[f64]) -> IndexEntry {
        IndexEntry {
            product_id: id.into(),
            fused: FusedEmbedding::normalized(v.to_vec(), EmbeddingSource::Product(id.into())).unwrap(),
            category_path: vec!["root".into(), "bag".into()],
        }
    }

    fn q(v: &[f64]) -> FusedEmbedding {
        FusedEmbedding::normalized(v.to_vec(), EmbeddingSource::Anonymous).unwrap()
    }

    #[test]
    fn empty_and_single() {
        let idx = build_exact::<f64>(Vec::new()).unwrap();
        assert!(idx.query(&q(&[1.0, 0.0]), 3).unwrap().is_empty());
        let idx = build_exact(vec![entry("a", &[0.0, 1.0])]).unwrap();
        assert_eq!(idx.query(&q(&[1.0, 0.0]), 3).unwrap().hits[0].product_id.as_str(), "a");
    }

    #[test]
    fn duplicate_rejected() {
        assert!(matches!(
            build_exact(vec![entry("a", &[1.0]), entry("a", &[1.0])]),
            Err(IndexError::DuplicateId(_))
        ));
    }

    #[test]
    fn orthogonal_query_orders_by_id() {
        let idx = build_exact(vec![entry("c", &[0.0, 1.0, 0.0]), entry("a", &[0.0, 0.0, 1.0]), entry("b", &[0.0, 1.0, 0.0])])
            .unwrap();
        let r = idx.query(&q(&[1.0, 0.0, 0.0]), 3).unwrap();
        let ids: Vec<_> = r.ids().map(|p| p.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(r.hits.iter().all(|h| h.similarity == 0.0));
    }

    #[test]
    fn self_query_first() {
        let idx = build_exact(vec![entry("a", &[0.3, 0.4]), entry("b", &[1.0, 0.0])]).unwrap();
        let r = idx.query(&q(&[0.3, 0.4]), 1).unwrap();
        assert_eq!(r.hits[0].product_id.as_str(), "a");
        assert!((r.hits[0].similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn query_errors() {
        let idx = build_exact(vec![entry("a", &[1.0, 0.0])]).unwrap();
        assert!(matches!(
            idx.query(&FusedEmbedding::missing(2, EmbeddingSource::Anonymous), 1),
            Err(IndexError::InvalidQuery)
        ));
        assert!(matches!(idx.query(&q(&[1.0, 0.0]), 0), Err(IndexError::ZeroK)));
    }

    #[test]
    fn lsh_parameters() {
        assert!(matches!(
            build_lsh(vec![entry("a", &[1.0])], 1, 0, 0),
            Err(IndexError::LshParams { .. })
        ));
    }

    #[test]
    fn lsh_one_bit_half_spaces() {
        let probe = build_lsh(vec![entry("x", &[1.0, 0.0, 0.0])], 1, 1, 77).unwrap();
        let h = probe.hyperplanes(0)[0].clone();
        let neg: Vec<f64> = h.iter().map(|x| -x).collect();
        let idx = build_lsh(vec![entry("up", &h), entry("down", &neg)], 1, 1, 77).unwrap();
        let near_up: Vec<f64> = h.iter().map(|x| x + 0.01).collect();
        let r = idx.query_approx(&q(&near_up), 5).unwrap();
        let ids: Vec<_> = r.ids().map(|p| p.as_str()).collect();
        assert_eq!(ids, ["up"]);
    }

    #[test]
    fn lsh_self_collision() {
        let entries: Vec<_> = (0..20)
            .map(|i| entry(&format!("p{i}"), &[(i as f64).sin(), (i as f64).cos(), 0.5]))
            .collect();
        let idx = build_lsh(entries.clone(), 3, 6, 1).unwrap();
        for e in &entries {
            assert!(idx.candidates(e.fused.values()).contains(
                &idx.exact().entries().iter().position(|x| x.product_id == e.product_id).unwrap()
            ));
        }
        let again = build_lsh(entries, 3, 6, 1).unwrap();
        assert_eq!(idx, again);
    }

    #[test]
    fn snapshot_round_trip() {
        let idx = build_exact(vec![entry("a", &[0.3, 0.4]), entry("b", &[1.0, 0.0])]).unwrap();
        let mut buf = Vec::new();
        idx.write_snapshot(&mut buf).unwrap();
        let back = ExactIndex::<f64>::read_snapshot(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.entries()[0].fused.values(), idx.entries()[0].fused.values());
        assert_eq!(back.entries()[1].category_path, idx.entries()[1].category_path);
    }

    fn item(cat: &str, truth: &str, ranked: &[&str]) -> EvalItem {
        EvalItem {
            category: cat.into(),
            truth: truth.into(),
            result: QueryResult {
                hits: ranked
                    .iter()
                    .map(|id| Hit {
                        product_id: (*id).into(),
                        similarity: 0.5,
                    })
                    .collect(),
            },
        }
    }

    #[test]
    fn recall_per_category_and_mean() {
        let cats: Vec<NodeId> = vec!["bag".into(), "shoe".into()];
        let items = vec![
            item("bag", "a", &["a", "b"]),
            item("bag", "b", &["a", "b"]),
            item("shoe", "s", &["x", "y"]),
        ];
        let r1 = recall_at_k(&items, 1, &cats).unwrap();
        assert_eq!(r1.recall("bag"), Some(0.5));
        assert_eq!(r1.recall("shoe"), Some(0.0));
        assert_eq!(r1.mean, 0.25);
        let r2 = recall_at_k(&items, 2, &cats).unwrap();
        assert_eq!(r2.recall("bag"), Some(1.0));
        assert!(matches!(
            recall_at_k(&[item("hat", "a", &[])], 1, &cats),
            Err(IndexError::UnknownCategory(_))
        ));
    }
}
