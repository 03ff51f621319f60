use std::collections::BTreeMap;

use crate::catalog::Taxonomy;
use crate::ids::NodeId;
use crate::scalar::Scalar;

/// Greedy root-to-leaf descent over classifier scores.
///
/// At each level the highest scoring child is taken (ties go to the smallest
/// id). Descent stops at the current node when no child has a score or the
/// best score is below `descend_threshold`, so ambiguous detections resolve to
/// an interior node rather than a guessed leaf.
pub fn resolve_category<T: Scalar>(
    node_scores: &BTreeMap<NodeId, T>,
    taxonomy: &Taxonomy,
    descend_threshold: T,
) -> Vec<NodeId> {
    let Some(root) = taxonomy.root() else {
        return Vec::new();
    };
    let mut path = vec![root.clone()];
    loop {
        let cur = path.last().expect("path starts with root");
        let mut best: Option<(&NodeId, T)> = None;
        // children() is id-ordered, so strict > keeps the smallest id on ties
        for child in taxonomy.children(cur.as_str()) {
            if let Some(&s) = node_scores.get(child) {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((child, s));
                }
            }
        }
        match best {
            Some((child, s)) if s >= descend_threshold => {
                if path.contains(child) {
                    break;
                }
                path.push(child.clone());
            }
            _ => break,
        }
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(pairs: &[(&str, f64)]) -> BTreeMap<NodeId, f64> {
        pairs.iter().map(|&(k, v)| (k.into(), v)).collect()
    }

    #[test]
    fn argmax_child() {
        let t = Taxonomy::flat("root", &["clothing", "shoe"]);
        let p = resolve_category(&scores(&[("clothing", 0.9), ("shoe", 0.1)]), &t, 0.5);
        assert_eq!(p, vec![NodeId::from("root"), "clothing".into()]);
    }

    #[test]
    fn low_score_stops_at_root() {
        let t = Taxonomy::flat("root", &["clothing", "shoe"]);
        let p = resolve_category(&scores(&[("clothing", 0.3), ("shoe", 0.1)]), &t, 0.5);
        assert_eq!(p, vec![NodeId::from("root")]);
    }

    #[test]
    fn ties_pick_smallest_id() {
        let t = Taxonomy::flat("root", &["c", "a", "b"]);
        let p = resolve_category(&scores(&[("b", 0.5), ("a", 0.5), ("c", 0.5)]), &t, 0.5);
        assert_eq!(p, vec![NodeId::from("root"), "a".into()]);
    }

    #[test]
    fn descends_multiple_levels_and_stops_without_scores() {
        let t = Taxonomy::read_tsv(
            "root\t\tAll\nclothing\troot\tC\ndress\tclothing\tD\nshirt\tclothing\tS\nshoe\troot\tSh\n".as_bytes(),
        )
        .unwrap();
        let deep = resolve_category(&scores(&[("clothing", 0.8), ("dress", 0.7), ("shirt", 0.2)]), &t, 0.5);
        assert_eq!(deep.last().unwrap().as_str(), "dress");
        let shallow = resolve_category(&scores(&[("clothing", 0.8)]), &t, 0.5);
        assert_eq!(shallow.last().unwrap().as_str(), "clothing");
        assert!(t.is_valid_path(&deep) && t.is_valid_path(&shallow));
    }
}
