//! Product catalog and category taxonomy.
//!
//! The catalog file is line-delimited JSON, one product per line:
//!
//! ```text
//! {"product_id":"p1","category_path":"root/clothing","title":"Red Silk Dress","headline":"new in","patch_file":"p1.ppm"}
//! {"product_id":"p2","category_path":"root/shoe","title":"Canvas Sneaker","descriptor":[0.6,0.8]}
//! {"product_id":"p3","category_path":"root/bag","title":"Tote","patch":{"width":1,"height":1,"rgb":"ff0000"}}
//! ```
//!
//! `patch_file` is resolved relative to the catalog file and must be a binary
//! PPM. The taxonomy file is tab separated: `id`, `parent_id` (empty for the
//! root), `name`.

mod patch;
mod taxonomy;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use patch::{Patch, PatchError};
pub use taxonomy::{validate_taxonomy, Taxonomy, TaxonomyNode, TaxonomyViolation};

use crate::ids::{NodeId, ProductId};
use crate::text::TokenBag;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate product id {id}")]
    DuplicateId { id: ProductId },
    #[error("duplicate taxonomy node {node}")]
    DuplicateNode { node: NodeId },
    #[error("product {product}: unknown taxonomy node {node}")]
    UnknownNode { product: ProductId, node: NodeId },
    #[error("product {product}: category path is not a root-to-node chain")]
    InvalidPath { product: ProductId },
    #[error("product {product}: neither patch nor descriptor given")]
    MissingAppearance { product: ProductId },
    #[error("product {product}: {source}")]
    Patch {
        product: ProductId,
        #[source]
        source: PatchError,
    },
    #[error("invalid taxonomy: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidTaxonomy(Vec<TaxonomyViolation>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductEntry {
    pub product_id: ProductId,
    /// Root-to-node taxonomy path.
    pub category_path: Vec<NodeId>,
    pub title: String,
    pub headline: Option<String>,
    pub patch: Option<Patch>,
    pub descriptor: Option<Vec<f64>>,
}

impl ProductEntry {
    /// Deepest node of the category path.
    pub fn category(&self) -> Option<&NodeId> {
        self.category_path.last()
    }
}

/// Tokens of title plus headline.
pub fn product_text(entry: &ProductEntry) -> TokenBag {
    let mut bag = TokenBag::from_text(&entry.title);
    if let Some(h) = &entry.headline {
        bag.add_text(h);
    }
    bag
}

/// Validated, immutable product list in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    entries: Vec<ProductEntry>,
    by_id: HashMap<ProductId, usize>,
}

impl Catalog {
    /// Checks id uniqueness, category paths and appearance presence.
    pub fn new(entries: Vec<ProductEntry>, taxonomy: &Taxonomy) -> Result<Self, CatalogError> {
        let mut by_id = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            check_entry(e, taxonomy)?;
            if by_id.insert(e.product_id.clone(), i).is_some() {
                return Err(CatalogError::DuplicateId {
                    id: e.product_id.clone(),
                });
            }
        }
        Ok(Self { entries, by_id })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ProductEntry] {
        &self.entries
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ProductEntry> {
        self.entries.iter()
    }

    pub fn get(&self, id: &str) -> Option<&ProductEntry> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for e in &self.entries {
            let record = CatalogRecord {
                product_id: e.product_id.to_string(),
                category_path: join_path(&e.category_path),
                title: e.title.clone(),
                headline: e.headline.clone(),
                patch_file: None,
                patch: e.patch.as_ref().map(|p| InlinePatch {
                    width: p.width(),
                    height: p.height(),
                    rgb: p.to_hex(),
                }),
                descriptor: e.descriptor.clone(),
            };
            serde_json::to_writer(&mut w, &record)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a Catalog {
    type Item = &'a ProductEntry;
    type IntoIter = std::slice::Iter<'a, ProductEntry>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

fn check_entry(e: &ProductEntry, taxonomy: &Taxonomy) -> Result<(), CatalogError> {
    if let Some(node) = e.category_path.iter().find(|n| !taxonomy.contains(n.as_str())) {
        return Err(CatalogError::UnknownNode {
            product: e.product_id.clone(),
            node: node.clone(),
        });
    }
    if !taxonomy.is_valid_path(&e.category_path) {
        return Err(CatalogError::InvalidPath {
            product: e.product_id.clone(),
        });
    }
    if e.patch.is_none() && e.descriptor.is_none() {
        return Err(CatalogError::MissingAppearance {
            product: e.product_id.clone(),
        });
    }
    Ok(())
}

pub fn split_path(path: &str) -> Vec<NodeId> {
    path.split('/')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(NodeId::from)
        .collect()
}

pub fn join_path(path: &[NodeId]) -> String {
    path.iter().map(NodeId::as_str).collect::<Vec<_>>().join("/")
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogRecord {
    product_id: String,
    category_path: String,
    title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    headline: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    patch_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    patch: Option<InlinePatch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    descriptor: Option<Vec<f64>>,
}

/// Patch embedded in a JSON record as hex-encoded RGB bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlinePatch {
    pub width: u32,
    pub height: u32,
    pub rgb: String,
}

impl InlinePatch {
    pub fn to_patch(&self) -> Result<Patch, PatchError> {
        Patch::from_hex(self.width, self.height, &self.rgb)
    }
}

impl From<&Patch> for InlinePatch {
    fn from(p: &Patch) -> Self {
        Self {
            width: p.width(),
            height: p.height(),
            rgb: p.to_hex(),
        }
    }
}

pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<Taxonomy, CatalogError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CatalogError::Io {
        path: path.to_owned(),
        source,
    })?;
    Taxonomy::read_tsv(BufReader::new(file))
}

/// Loads a catalog file, verifying every entry against `taxonomy`.
pub fn load_catalog(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Catalog, CatalogError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CatalogError::Io {
        path: path.to_owned(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_catalog(BufReader::new(file), base, taxonomy)
}

pub fn parse_catalog(
    reader: impl BufRead,
    base_dir: &Path,
    taxonomy: &Taxonomy,
) -> Result<Catalog, CatalogError> {
    let violations = validate_taxonomy(taxonomy);
    if !violations.is_empty() {
        return Err(CatalogError::InvalidTaxonomy(violations));
    }
    let mut entries = Vec::new();
    let mut by_id: HashMap<ProductId, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CatalogError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CatalogRecord = serde_json::from_str(&line).map_err(|e| CatalogError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        let entry = record_to_entry(rec, base_dir)?;
        check_entry(&entry, taxonomy)?;
        if by_id.insert(entry.product_id.clone(), entries.len()).is_some() {
            return Err(CatalogError::DuplicateId {
                id: entry.product_id,
            });
        }
        entries.push(entry);
    }
    Ok(Catalog { entries, by_id })
}

fn record_to_entry(rec: CatalogRecord, base_dir: &Path) -> Result<ProductEntry, CatalogError> {
    let product_id = ProductId::new(rec.product_id);
    let patch_err = |source| CatalogError::Patch {
        product: product_id.clone(),
        source,
    };
    let patch = match (rec.patch, rec.patch_file) {
        (Some(inline), _) => Some(inline.to_patch().map_err(patch_err)?),
        (None, Some(file)) => {
            let p = base_dir.join(file);
            let f = File::open(&p).map_err(|source| CatalogError::Io { path: p, source })?;
            Some(Patch::read_ppm(BufReader::new(f)).map_err(patch_err)?)
        }
        (None, None) => None,
    };
    Ok(ProductEntry {
        category_path: split_path(&rec.category_path),
        product_id,
        title: rec.title,
        headline: rec.headline.filter(|h| !h.is_empty()),
        patch,
        descriptor: rec.descriptor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taxonomy() -> Taxonomy {
        Taxonomy::flat("root", &["clothing", "shoe"])
    }

    fn parse(text: &str) -> Result<Catalog, CatalogError> {
        parse_catalog(text.as_bytes(), Path::new("."), &taxonomy())
    }

    const TWO: &str = r#"{"product_id":"p1","category_path":"root/clothing","title":"Red Dress","descriptor":[1.0]}
{"product_id":"p2","category_path":"root/shoe","title":"Sneaker","patch":{"width":1,"height":1,"rgb":"00ff00"}}
"#;

    #[test]
    fn loads_two_entries_in_order() {
        let c = parse(TWO).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.entries()[0].product_id.as_str(), "p1");
        assert_eq!(c.get("p2").unwrap().patch.as_ref().unwrap().pixels(), &[[0, 255, 0]]);
    }

    #[test]
    fn duplicate_id_names_the_id() {
        let text = format!("{}{}", TWO, TWO.lines().next().unwrap());
        let err = parse(&text).unwrap_err();
        assert!(matches!(&err, CatalogError::DuplicateId { id } if id.as_str() == "p1"));
        assert!(err.to_string().contains("p1"));
    }

    #[test]
    fn unknown_node_names_entry_and_node() {
        let err = parse(r#"{"product_id":"p9","category_path":"root/hat","title":"x","descriptor":[1]}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("p9") && msg.contains("hat"), "{msg}");
    }

    #[test]
    fn malformed_line_has_number() {
        let text = format!("{}not json\n", TWO);
        assert!(matches!(parse(&text), Err(CatalogError::Malformed { line: 3, .. })));
    }

    #[test]
    fn appearance_required() {
        let err = parse(r#"{"product_id":"p","category_path":"root/shoe","title":"x"}"#).unwrap_err();
        assert!(matches!(err, CatalogError::MissingAppearance { .. }));
    }

    #[test]
    fn path_must_start_at_root() {
        let err = parse(r#"{"product_id":"p","category_path":"shoe","title":"x","descriptor":[1]}"#).unwrap_err();
        assert!(matches!(err, CatalogError::InvalidPath { .. }));
    }

    #[test]
    fn invalid_taxonomy_rejected() {
        let bad = Taxonomy::new(vec![
            TaxonomyNode { id: "a".into(), parent: None, name: "a".into() },
            TaxonomyNode { id: "b".into(), parent: None, name: "b".into() },
        ])
        .unwrap();
        let err = parse_catalog(TWO.as_bytes(), Path::new("."), &bad).unwrap_err();
        assert!(matches!(err, CatalogError::InvalidTaxonomy(_)));
    }

    #[test]
    fn write_then_parse_is_identity() {
        let c = parse(TWO).unwrap();
        let mut buf = Vec::new();
        c.write_jsonl(&mut buf).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), c);
    }

    #[test]
    fn product_text_uses_title_and_headline() {
        let mut e = parse(TWO).unwrap().entries()[0].clone();
        e.headline = Some("  RED hot!  ".into());
        let bag = product_text(&e);
        assert_eq!(bag.count("red"), 2);
        assert_eq!(bag.count("dress"), 1);
        assert_eq!(bag.count("hot"), 1);
        e.title.clear();
        e.headline = None;
        assert!(product_text(&e).is_empty());
    }
}
