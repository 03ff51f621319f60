//! The published model and the catalog index built from it, swapped as one
//! immutable unit.

use std::sync::{Arc, RwLock};

use shopfocus_core::catalog::{product_text, Catalog};
use shopfocus_core::features::{Embedding, Modality, TextProvider, VisualProvider};
use shopfocus_core::fusion::{EmbeddingSource, FusionModel, ModalPair, ProductSide};
use shopfocus_core::index::{ExactIndex, IndexEntry};

use crate::error::EngineError;

#[derive(Debug, Clone)]
pub struct ModelSnapshot {
    pub version: u64,
    pub model: FusionModel,
    pub index: ExactIndex,
    pub uses_text: bool,
}

/// Holder for the current snapshot. Readers clone the `Arc` and keep using
/// it even if a newer snapshot is published meanwhile.
#[derive(Debug)]
pub struct SnapshotHolder {
    current: RwLock<Arc<ModelSnapshot>>,
}

impl SnapshotHolder {
    pub fn new(snapshot: ModelSnapshot) -> Self {
        Self {
            current: RwLock::new(Arc::new(snapshot)),
        }
    }

    pub fn load(&self) -> Arc<ModelSnapshot> {
        self.current.read().expect("snapshot lock poisoned").clone()
    }

    pub fn store(&self, snapshot: ModelSnapshot) -> Arc<ModelSnapshot> {
        let snap = Arc::new(snapshot);
        *self.current.write().expect("snapshot lock poisoned") = snap.clone();
        snap
    }
}

/// Visual and text inputs for every catalog product, in catalog order.
/// Products contribute text only when `uses_text` is set. Each product is
/// grouped under its leaf category; see [`ungrouped`].
pub fn catalog_pairs(
    catalog: &Catalog,
    visual: &dyn VisualProvider<f64>,
    text: &dyn TextProvider<f64>,
    uses_text: bool,
) -> Result<Vec<ProductSide>, EngineError> {
    catalog
        .iter()
        .map(|e| {
            let product = || e.product_id.to_string();
            let v = match (&e.descriptor, &e.patch) {
                (Some(d), _) => {
                    if d.len() != visual.dim() {
                        return Err(EngineError::Product {
                            product: product(),
                            reason: format!("descriptor length {} != visual dimension {}", d.len(), visual.dim()),
                        });
                    }
                    Embedding::normalized(d.clone(), Modality::Visual)
                }
                (None, Some(p)) => visual.embed_patch(p).map_err(|source| EngineError::Provider {
                    stage: "catalog",
                    position: product(),
                    source,
                })?,
                (None, None) => {
                    return Err(EngineError::Product {
                        product: product(),
                        reason: "no appearance".into(),
                    })
                }
            };
            let t = if uses_text {
                text.embed_tokens(&product_text(e)).map_err(|source| EngineError::Provider {
                    stage: "catalog",
                    position: product(),
                    source,
                })?
            } else {
                Embedding::missing(text.dim(), Modality::Text)
            };
            Ok(ProductSide {
                product_id: e.product_id.clone(),
                pair: ModalPair::new(v, t),
                group: e.category_path.last().cloned(),
            })
        })
        .collect()
}

/// Clears the category groups, so training draws negatives from the whole
/// catalog. Matches retrieval without the category filter.
pub fn ungrouped(mut pairs: Vec<ProductSide>) -> Vec<ProductSide> {
    for p in &mut pairs {
        p.group = None;
    }
    pairs
}

/// Fuses every product with `model` and builds the exact index.
pub fn build_snapshot(
    version: u64,
    model: FusionModel,
    catalog: &Catalog,
    pairs: &[ProductSide],
    uses_text: bool,
) -> Result<ModelSnapshot, EngineError> {
    let mut entries = Vec::with_capacity(pairs.len());
    for (entry, side) in catalog.iter().zip(pairs) {
        let fused = side.pair.fuse(&model)?;
        entries.push(IndexEntry {
            product_id: entry.product_id.clone(),
            fused: fused.with_source(EmbeddingSource::Product(entry.product_id.clone())),
            category_path: entry.category_path.clone(),
        });
    }
    Ok(ModelSnapshot {
        version,
        index: ExactIndex::build(entries)?,
        model,
        uses_text,
    })
}

/// Checks that `model` accepts the providers' output widths.
pub fn check_model_dims(model: &FusionModel, visual_dim: usize, text_dim: usize) -> Result<(), EngineError> {
    if model.visual_dim() != visual_dim {
        return Err(EngineError::DimMismatch {
            what: "visual",
            model: model.visual_dim(),
            provider: visual_dim,
        });
    }
    if model.text_dim() != text_dim {
        return Err(EngineError::DimMismatch {
            what: "text",
            model: model.text_dim(),
            provider: text_dim,
        });
    }
    Ok(())
}
