use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use shopfocus_core::features::{Comment, TranscriptSegment};
use shopfocus_core::focus::{evaluate_run, FocusSegment, TruthExhibition};
use shopfocus_core::records::{read_jsonl, DetectionRecord};
use shopfocus_core::{NodeId, TrackletId};
use shopfocus_engine::RetrievalMode;
use shopfocus_simgen::scenario::Motion;
use shopfocus_simgen::{
    benchmark, gen_scenario, render_streams, BenchParams, CatalogParams, NoiseParams, ScenarioParams, SimWorld, TruthItem,
    CATEGORIES,
};

fn world() -> SimWorld {
    SimWorld::generate(&CatalogParams::default()).unwrap()
}

fn clean() -> ScenarioParams {
    ScenarioParams {
        noise: NoiseParams::clean(),
        ..ScenarioParams::default()
    }
}

#[test]
fn same_seed_same_streams() {
    let w = world();
    let p = ScenarioParams::default();
    let a = render_streams(&w, &gen_scenario(&w, 3, &p).unwrap());
    let b = render_streams(&w, &gen_scenario(&w, 3, &p).unwrap());
    let c = render_streams(&w, &gen_scenario(&w, 4, &p).unwrap());
    assert_eq!(a, b);
    assert_ne!(a.detections, c.detections);
    assert_ne!(a.truth, c.truth);
}

#[test]
fn catalog_is_shared_and_well_formed() {
    let w = world();
    let again = world();
    assert_eq!(w.products, again.products);
    assert_eq!(w.products.len(), 60);
    let titles: BTreeSet<&str> = w.products.iter().map(|p| p.title.as_str()).collect();
    assert_eq!(titles.len(), w.products.len());
    for c in CATEGORIES {
        assert_eq!(w.in_category(&NodeId::from(c)).count(), 10, "{c}");
    }
    // Lookalikes share their two dominant colors up to the per-product nudge.
    for c in CATEGORIES {
        let cat = NodeId::from(c);
        let mut groups: BTreeMap<usize, Vec<[[u8; 3]; 3]>> = BTreeMap::new();
        for p in w.in_category(&cat) {
            groups.entry(p.group).or_default().push(p.appearance.colors);
        }
        for members in groups.values() {
            for m in members {
                for k in 0..2 {
                    let close = m[k].iter().zip(&members[0][k]).all(|(a, b)| a.abs_diff(*b) <= 20);
                    assert!(close, "{c}: {m:?} vs {:?}", members[0]);
                }
            }
        }
    }
}

#[test]
fn every_category_is_exhibited() {
    let w = world();
    for seed in 1..=5 {
        let s = gen_scenario(&w, seed, &ScenarioParams::default()).unwrap();
        let seen: BTreeSet<&str> = s.exhibitions.iter().map(|e| e.category.as_str()).collect();
        assert_eq!(seen.len(), CATEGORIES.len(), "seed {seed}");
    }
}

fn sorted_by<T>(items: &[T], key: impl Fn(&T) -> u64) -> bool {
    items.windows(2).all(|w| key(&w[0]) <= key(&w[1]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scripts_are_well_separated(seed in any::<u64>(), n in 1..=10usize) {
        let w = world();
        let p = ScenarioParams { exhibitions: n, ..ScenarioParams::default() };
        let s = gen_scenario(&w, seed, &p).unwrap();
        prop_assert_eq!(s.exhibitions.len(), n);
        for e in &s.exhibitions {
            prop_assert!(e.end_ms - e.start_ms >= p.min_exhibition_ms && e.end_ms - e.start_ms <= p.max_exhibition_ms);
            prop_assert!(e.end_ms <= p.duration_ms);
            prop_assert_eq!(&w.product(&e.product_id).unwrap().category, &e.category);
            for d in &e.distractors {
                prop_assert_eq!(&w.product(&d.product_id).unwrap().category, &e.category);
                prop_assert!(d.product_id != e.product_id);
            }
        }
        for pair in s.exhibitions.windows(2) {
            prop_assert!(pair[1].start_ms >= pair[0].end_ms + p.min_gap_ms());
        }
    }

    #[test]
    fn streams_are_time_ordered(seed in 0..1000u64) {
        let w = world();
        let r = render_streams(&w, &gen_scenario(&w, seed, &ScenarioParams::default()).unwrap());
        prop_assert!(sorted_by(&r.detections, |d| d.timestamp_ms));
        prop_assert!(sorted_by(&r.transcripts, |t| t.start_ms));
        prop_assert!(sorted_by(&r.comments, |c| c.timestamp_ms));
        prop_assert_eq!(r.objects.len(), r.detections.len());
        for t in &r.transcripts {
            prop_assert!(t.start_ms < t.end_ms);
        }
    }
}

#[test]
fn clean_streams_show_every_object_in_every_frame() {
    let w = world();
    let p = clean();
    let s = gen_scenario(&w, 9, &p).unwrap();
    let r = render_streams(&w, &s);
    assert!(r.objects.iter().all(Option::is_some), "no false positives");
    assert!(r.comments.is_empty());
    let motions: BTreeMap<u32, (u64, Motion)> = s
        .exhibitions
        .iter()
        .flat_map(|e| {
            std::iter::once((e.object_id, (e.start_ms, e.motion))).chain(e.distractors.iter().map(move |d| (d.object_id, (e.start_ms, d.motion))))
        })
        .collect();
    let interval = p.frame_interval_ms();
    let expected: u64 = s
        .exhibitions
        .iter()
        .map(|e| (e.end_ms.div_ceil(interval) - e.start_ms.div_ceil(interval)) * (1 + e.distractors.len() as u64))
        .sum();
    assert_eq!(r.detections.len() as u64, expected);
    for (d, obj) in r.detections.iter().zip(&r.objects) {
        let (start, motion) = motions[&obj.unwrap()];
        let want = motion.bbox(d.timestamp_ms - start);
        for k in 0..4 {
            assert!((d.bbox[k] - want[k]).abs() <= 0.005 + 1e-9, "{:?} vs {want:?}", d.bbox);
        }
    }
    // Without filler the host only names products.
    let titles: BTreeSet<&str> = w.products.iter().map(|p| p.title.as_str()).collect();
    assert!(!r.transcripts.is_empty());
    assert!(r.transcripts.iter().all(|t| titles.contains(t.text.as_str())));
}

#[test]
fn certain_misses_leave_no_detections() {
    let w = world();
    let mut p = clean();
    p.noise.miss_prob = 1.0;
    let r = render_streams(&w, &gen_scenario(&w, 2, &p).unwrap());
    assert!(r.detections.is_empty());
    assert_eq!(r.truth.len(), p.exhibitions);
}

#[test]
fn box_jitter_has_the_configured_spread() {
    let w = world();
    let mut p = clean();
    p.noise.jitter_px = 3.0;
    p.distractors = 0;
    let s = gen_scenario(&w, 5, &p).unwrap();
    let r = render_streams(&w, &s);
    let by_object: BTreeMap<u32, (u64, Motion)> = s.exhibitions.iter().map(|e| (e.object_id, (e.start_ms, e.motion))).collect();
    let residuals: Vec<f64> = r
        .detections
        .iter()
        .zip(&r.objects)
        .flat_map(|(d, o)| {
            let (start, m) = by_object[&o.unwrap()];
            let want = m.bbox(d.timestamp_ms - start);
            [d.bbox[0] - want[0], d.bbox[1] - want[1]]
        })
        .collect();
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let sd = (residuals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    // With n around 900, the standard error of the mean is about 0.1 px and of the sd about 0.07 px.
    assert!(n > 800.0);
    assert!(mean.abs() < 0.4, "mean {mean}");
    assert!((sd - 3.0).abs() < 0.3, "sd {sd}");
}

#[test]
fn written_files_parse_back() {
    let w = world();
    let r = render_streams(&w, &gen_scenario(&w, 1, &ScenarioParams::default()).unwrap());
    let dir = tempfile::tempdir().unwrap();
    r.write_dir(dir.path()).unwrap();
    let open = |f: &str| std::io::BufReader::new(std::fs::File::open(dir.path().join(f)).unwrap());
    assert_eq!(read_jsonl::<DetectionRecord>(open("detections.jsonl")).unwrap(), r.detections);
    assert_eq!(read_jsonl::<TranscriptSegment>(open("transcripts.jsonl")).unwrap(), r.transcripts);
    assert_eq!(read_jsonl::<Comment>(open("comments.jsonl")).unwrap(), r.comments);
    assert_eq!(read_jsonl::<TruthItem>(open("truth.jsonl")).unwrap(), r.truth);
}

#[test]
fn invalid_parameters_are_rejected() {
    let w = world();
    let crowded = ScenarioParams {
        exhibitions: 40,
        ..ScenarioParams::default()
    };
    assert!(gen_scenario(&w, 1, &crowded).is_err());
    let mut bad = ScenarioParams::default();
    bad.noise.miss_prob = 1.5;
    assert!(gen_scenario(&w, 1, &bad).is_err());
    assert!(SimWorld::generate(&CatalogParams {
        products_per_category: 0,
        ..CatalogParams::default()
    })
    .is_err());
}

#[test]
fn truth_scores_perfectly_against_itself() {
    let w = world();
    let r = render_streams(&w, &gen_scenario(&w, 6, &ScenarioParams::default()).unwrap());
    let truth: Vec<TruthExhibition> = r.truth.iter().map(TruthItem::exhibition).collect();
    let as_segments: Vec<FocusSegment> = truth
        .iter()
        .map(|t| FocusSegment {
            product_id: t.product_id.clone(),
            start_ms: t.start_ms,
            end_ms: t.end_ms,
            confidence: 1.0,
            tracklet_ids: vec![TrackletId(0)],
        })
        .collect();
    let cats: Vec<NodeId> = CATEGORIES.iter().map(|c| NodeId::from(*c)).collect();
    let run = evaluate_run(&as_segments, &truth, &cats, 1, 1.0).unwrap();
    assert_eq!(run.recalled, run.total);
    assert_eq!(run.report.mean, 1.0);
}

#[test]
fn distinct_products_without_distractors_are_all_found() {
    let mut params = BenchParams::default();
    params.seeds = vec![1, 2, 3];
    params.train_seeds = vec![1001, 1002];
    params.catalog.unique_colors = true;
    params.scenario.distractors = 0;
    params.scenario.noise = NoiseParams::clean();
    params.modes = vec![RetrievalMode::VisualFrame, RetrievalMode::VisualTrack];
    let report = benchmark(&params).unwrap();
    for row in &report.rows {
        assert_eq!(row.recalled, row.total, "{}", row.label);
        assert_eq!(row.mean, 1.0);
    }
}
