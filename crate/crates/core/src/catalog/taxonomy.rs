use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::CatalogError;
use crate::ids::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub name: String,
}

/// Category hierarchy. Construction only rejects duplicate ids; structural
/// problems are reported by [`validate_taxonomy`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Taxonomy {
    nodes: BTreeMap<NodeId, TaxonomyNode>,
    children: BTreeMap<NodeId, Vec<NodeId>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaxonomyViolation {
    NoRoot,
    MultipleRoots { roots: Vec<NodeId> },
    MissingParent { node: NodeId, parent: NodeId },
    Cycle { nodes: Vec<NodeId> },
    DuplicateSiblingName { parent: Option<NodeId>, name: String },
}

impl fmt::Display for TaxonomyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NoRoot => write!(f, "taxonomy has no root"),
            Self::MultipleRoots { roots } => {
                let ids: Vec<_> = roots.iter().map(NodeId::as_str).collect();
                write!(f, "multiple roots: {}", ids.join(", "))
            }
            Self::MissingParent { node, parent } => {
                write!(f, "node {node} references missing parent {parent}")
            }
            Self::Cycle { nodes } => {
                let ids: Vec<_> = nodes.iter().map(NodeId::as_str).collect();
                write!(f, "cycle through {}", ids.join(" -> "))
            }
            Self::DuplicateSiblingName { parent, name } => match parent {
                Some(p) => write!(f, "duplicate child name {name:?} under {p}"),
                None => write!(f, "duplicate root name {name:?}"),
            },
        }
    }
}

impl Taxonomy {
    pub fn new(nodes: impl IntoIterator<Item = TaxonomyNode>) -> Result<Self, CatalogError> {
        let mut map = BTreeMap::new();
        for node in nodes {
            if map.contains_key(&node.id) {
                return Err(CatalogError::DuplicateNode { node: node.id });
            }
            map.insert(node.id.clone(), node);
        }
        let mut children: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for node in map.values() {
            if let Some(p) = &node.parent {
                children.entry(p.clone()).or_default().push(node.id.clone());
            }
        }
        // BTreeMap iteration already yields ids in order.
        Ok(Self { nodes: map, children })
    }

    /// Builds a two-level taxonomy: one root with the given leaves.
    pub fn flat(root: &str, leaves: &[&str]) -> Self {
        let mut nodes = vec![TaxonomyNode {
            id: root.into(),
            parent: None,
            name: root.to_owned(),
        }];
        nodes.extend(leaves.iter().map(|&l| TaxonomyNode {
            id: l.into(),
            parent: Some(root.into()),
            name: l.to_owned(),
        }));
        Self::new(nodes).expect("leaf ids are distinct")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&TaxonomyNode> {
        self.nodes.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TaxonomyNode> {
        self.nodes.values()
    }

    /// The unique root, if there is exactly one.
    pub fn root(&self) -> Option<&NodeId> {
        let mut roots = self.nodes.values().filter(|n| n.parent.is_none());
        match (roots.next(), roots.next()) {
            (Some(r), None) => Some(&r.id),
            _ => None,
        }
    }

    /// Children of `id`, ordered by id.
    pub fn children(&self, id: &str) -> &[NodeId] {
        self.children.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_leaf(&self, id: &str) -> bool {
        self.children(id).is_empty()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.keys().filter(|id| self.is_leaf(id.as_str()))
    }

    /// Root-to-node path. `None` for unknown nodes or broken parent chains.
    pub fn path_to(&self, id: &str) -> Option<Vec<NodeId>> {
        let mut path = Vec::new();
        let mut cur = self.nodes.get(id)?;
        loop {
            path.push(cur.id.clone());
            if path.len() > self.nodes.len() {
                return None;
            }
            match &cur.parent {
                None => break,
                Some(p) => cur = self.nodes.get(p)?,
            }
        }
        path.reverse();
        Some(path)
    }

    /// Whether `path` starts at the root and follows parent/child links.
    pub fn is_valid_path(&self, path: &[NodeId]) -> bool {
        let Some(first) = path.first() else {
            return false;
        };
        if self.root() != Some(first) {
            return false;
        }
        path.windows(2).all(|w| {
            self.nodes
                .get(&w[1])
                .is_some_and(|n| n.parent.as_ref() == Some(&w[0]))
        })
    }

    pub fn read_tsv(reader: impl BufRead) -> Result<Self, CatalogError> {
        let mut nodes = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| CatalogError::Malformed {
                line: line_no,
                reason: e.to_string(),
            })?;
            let trimmed = line.trim_end_matches(['\r', '\n']);
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() != 3 {
                return Err(CatalogError::Malformed {
                    line: line_no,
                    reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let id = fields[0].trim();
            if id.is_empty() {
                return Err(CatalogError::Malformed {
                    line: line_no,
                    reason: "empty node id".into(),
                });
            }
            let parent = fields[1].trim();
            nodes.push(TaxonomyNode {
                id: id.into(),
                parent: (!parent.is_empty()).then(|| parent.into()),
                name: fields[2].trim().to_owned(),
            });
        }
        Self::new(nodes)
    }

    pub fn write_tsv(&self, mut w: impl Write) -> std::io::Result<()> {
        // Parents before children keeps the file readable top-down.
        let mut order: Vec<&TaxonomyNode> = self.nodes.values().collect();
        order.sort_by_key(|n| (self.path_to(n.id.as_str()).map_or(usize::MAX, |p| p.len()), &n.id));
        for n in order {
            let parent = n.parent.as_ref().map_or("", NodeId::as_str);
            writeln!(w, "{}\t{}\t{}", n.id, parent, n.name)?;
        }
        Ok(())
    }
}

/// Lists every structural violation; empty iff the taxonomy is well formed.
pub fn validate_taxonomy(taxonomy: &Taxonomy) -> Vec<TaxonomyViolation> {
    let mut report = Vec::new();

    let roots: Vec<NodeId> = taxonomy
        .nodes()
        .filter(|n| n.parent.is_none())
        .map(|n| n.id.clone())
        .collect();
    match roots.len() {
        0 => report.push(TaxonomyViolation::NoRoot),
        1 => {}
        _ => report.push(TaxonomyViolation::MultipleRoots { roots }),
    }

    for n in taxonomy.nodes() {
        if let Some(p) = &n.parent {
            if !taxonomy.contains(p.as_str()) {
                report.push(TaxonomyViolation::MissingParent {
                    node: n.id.clone(),
                    parent: p.clone(),
                });
            }
        }
    }

    // Parent-pointer walk with three-colour marking; each cycle reported once.
    let mut done: BTreeSet<&NodeId> = BTreeSet::new();
    for start in taxonomy.nodes() {
        let mut path: Vec<&NodeId> = Vec::new();
        let mut cur = Some(&start.id);
        while let Some(id) = cur {
            if done.contains(id) {
                break;
            }
            if let Some(pos) = path.iter().position(|&p| p == id) {
                let mut members: Vec<NodeId> = path[pos..].iter().map(|&n| n.clone()).collect();
                members.sort();
                report.push(TaxonomyViolation::Cycle { nodes: members });
                break;
            }
            path.push(id);
            cur = taxonomy.get(id.as_str()).and_then(|n| n.parent.as_ref());
        }
        done.extend(path);
    }

    let mut seen: BTreeSet<(Option<&NodeId>, &str)> = BTreeSet::new();
    let mut dup: BTreeSet<(Option<&NodeId>, &str)> = BTreeSet::new();
    for n in taxonomy.nodes() {
        let key = (n.parent.as_ref(), n.name.as_str());
        if !seen.insert(key) {
            dup.insert(key);
        }
    }
    for (parent, name) in dup {
        report.push(TaxonomyViolation::DuplicateSiblingName {
            parent: parent.cloned(),
            name: name.to_owned(),
        });
    }

    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: &str, parent: Option<&str>) -> TaxonomyNode {
        TaxonomyNode {
            id: id.into(),
            parent: parent.map(Into::into),
            name: id.to_owned(),
        }
    }

    #[test]
    fn single_root_two_leaves_is_valid() {
        let t = Taxonomy::flat("root", &["a", "b"]);
        assert!(validate_taxonomy(&t).is_empty());
        assert_eq!(t.root().map(NodeId::as_str), Some("root"));
        assert_eq!(t.children("root"), &[NodeId::from("a"), NodeId::from("b")]);
    }

    #[test]
    fn self_parent_is_a_cycle() {
        let t = Taxonomy::new(vec![node("root", None), node("x", Some("x"))]).unwrap();
        let report = validate_taxonomy(&t);
        assert_eq!(
            report,
            vec![TaxonomyViolation::Cycle {
                nodes: vec!["x".into()]
            }]
        );
    }

    #[test]
    fn longer_cycle_reported_once() {
        let t = Taxonomy::new(vec![
            node("root", None),
            node("a", Some("c")),
            node("b", Some("a")),
            node("c", Some("b")),
            node("d", Some("a")),
        ])
        .unwrap();
        let cycles: Vec<_> = validate_taxonomy(&t)
            .into_iter()
            .filter(|v| matches!(v, TaxonomyViolation::Cycle { .. }))
            .collect();
        assert_eq!(cycles.len(), 1);
    }

    #[test]
    fn two_roots_reported() {
        let t = Taxonomy::new(vec![node("r1", None), node("r2", None)]).unwrap();
        assert!(matches!(
            validate_taxonomy(&t).as_slice(),
            [TaxonomyViolation::MultipleRoots { roots }] if roots.len() == 2
        ));
        assert!(t.root().is_none());
    }

    #[test]
    fn missing_parent_and_duplicate_names() {
        let mut b = node("b", Some("root"));
        b.name = "a".into();
        let t = Taxonomy::new(vec![node("root", None), node("a", Some("root")), b, node("z", Some("ghost"))])
            .unwrap();
        let report = validate_taxonomy(&t);
        assert!(report.contains(&TaxonomyViolation::MissingParent {
            node: "z".into(),
            parent: "ghost".into()
        }));
        assert!(report.contains(&TaxonomyViolation::DuplicateSiblingName {
            parent: Some("root".into()),
            name: "a".into()
        }));
    }

    #[test]
    fn tsv_round_trip() {
        let text = "root\t\tAll\nclothing\troot\tClothing\ndress\tclothing\tDress\n";
        let t = Taxonomy::read_tsv(text.as_bytes()).unwrap();
        assert_eq!(
            t.path_to("dress").unwrap(),
            vec![NodeId::from("root"), "clothing".into(), "dress".into()]
        );
        let mut out = Vec::new();
        t.write_tsv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn tsv_rejects_bad_field_count() {
        let err = Taxonomy::read_tsv("root\t\tAll\nbad line\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CatalogError::Malformed { line: 2, .. }));
    }

    #[test]
    fn path_validation() {
        let t = Taxonomy::read_tsv("root\t\tAll\nc\troot\tC\nd\tc\tD\ne\troot\tE\n".as_bytes()).unwrap();
        assert!(t.is_valid_path(&["root".into(), "c".into(), "d".into()]));
        assert!(t.is_valid_path(&["root".into()]));
        assert!(!t.is_valid_path(&["root".into(), "d".into()]));
        assert!(!t.is_valid_path(&["c".into(), "d".into()]));
        assert!(!t.is_valid_path(&["root".into(), "e".into(), "d".into()]));
    }
}
