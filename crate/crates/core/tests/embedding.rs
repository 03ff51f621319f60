use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shopfocus_core::features::{Embedding, Modality};
use shopfocus_core::fusion::{
    batch_loss, dataset_loss, grad_fusion, mine_triplets, train, FusionModel, LabeledAnchor, MiningStrategy, ModalPair,
    ProductSide, TrainParams, TrainingSet, Triplet,
};
use shopfocus_core::{NodeId, ProductId};

fn unit(values: Vec<f64>, m: Modality) -> Embedding {
    Embedding::normalized(values, m)
}

fn modal_pair(dv: usize, dt: usize) -> impl Strategy<Value = ModalPair> {
    (
        prop::collection::vec(-1.0..1.0f64, dv),
        prop::collection::vec(-1.0..1.0f64, dt),
        prop::bool::weighted(0.2),
    )
        .prop_filter("nonzero", |(v, t, _)| v.iter().any(|x| x.abs() > 0.1) && t.iter().any(|x| x.abs() > 0.1))
        .prop_map(move |(v, t, drop)| {
            let text = if drop { Embedding::missing(dt, Modality::Text) } else { unit(t, Modality::Text) };
            ModalPair::new(unit(v, Modality::Visual), text)
        })
}

fn problem() -> impl Strategy<Value = (FusionModel, Vec<Triplet>)> {
    (2..5usize, 1..4usize, 1..4usize, any::<u64>()).prop_flat_map(|(d, dv, dt, seed)| {
        let triplet = (modal_pair(dv, dt), modal_pair(dv, dt), modal_pair(dv, dt)).prop_map(|(a, p, n)| Triplet {
            anchor: a,
            positive: p,
            negative: n,
            positive_id: "p".into(),
            negative_id: "n".into(),
        });
        let model = FusionModel::random(d, dv, dt, 0.3, seed).expect("valid dims");
        (Just(model), prop::collection::vec(triplet, 1..4))
    })
}

proptest! {
    #[test]
    fn gradient_matches_central_differences((m, batch) in problem()) {
        // Hinge corners are not differentiable; skip batches that sit on one.
        let l0 = batch_loss(&m, &batch).unwrap();
        let per: Vec<f64> = batch.iter().map(|t| batch_loss(&m, std::slice::from_ref(t)).unwrap()).collect();
        prop_assume!(per.iter().all(|&l| l == 0.0 || l > 1e-3));
        let g = grad_fusion(&m, &batch).unwrap();
        let h = 1e-6;
        for block in 0..2 {
            let n = if block == 0 { m.wv().len() } else { m.wt().len() };
            for i in 0..n {
                let mut up = m.clone();
                let mut down = m.clone();
                if block == 0 {
                    up.wv_mut()[i] += h;
                    down.wv_mut()[i] -= h;
                } else {
                    up.wt_mut()[i] += h;
                    down.wt_mut()[i] -= h;
                }
                let fd = (batch_loss(&up, &batch).unwrap() - batch_loss(&down, &batch).unwrap()) / (2.0 * h);
                let an = if block == 0 { g.dwv[i] } else { g.dwt[i] };
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
                prop_assert!(rel <= 1e-4, "block {block} entry {i}: analytic {an}, numeric {fd}");
            }
        }
        prop_assert!((g.mean_loss - l0).abs() < 1e-12);
    }
}

fn side(id: &str, group: Option<&str>, v: Vec<f64>) -> ProductSide {
    ProductSide {
        product_id: ProductId::from(id),
        pair: ModalPair::new(unit(v, Modality::Visual), Embedding::missing(2, Modality::Text)),
        group: group.map(NodeId::from),
    }
}

fn grouped_catalog() -> Vec<ProductSide> {
    vec![
        side("shoe-a", Some("shoe"), vec![1.0, 0.0, 0.0]),
        side("shoe-b", Some("shoe"), vec![0.9, 0.1, 0.0]),
        side("bag-a", Some("bag"), vec![1.0, 0.01, 0.0]),
        side("bag-b", Some("bag"), vec![0.0, 0.0, 1.0]),
        side("solo", Some("snack"), vec![0.0, 1.0, 0.0]),
    ]
}

#[test]
fn negatives_come_from_the_positive_group() {
    let catalog = grouped_catalog();
    let anchors: Vec<LabeledAnchor> = catalog
        .iter()
        .flat_map(|p| std::iter::repeat_n(LabeledAnchor { pair: p.pair.clone(), product_id: p.product_id.clone() }, 20))
        .collect();
    let m = FusionModel::random(3, 3, 2, 0.2, 1).unwrap();
    for strategy in [MiningStrategy::Random, MiningStrategy::SemiHard] {
        let triplets = mine_triplets(&anchors, &catalog, &m, strategy, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for t in &triplets {
            let group = |id: &ProductId| catalog.iter().find(|p| &p.product_id == id).unwrap().group.clone();
            assert_ne!(t.positive_id, t.negative_id);
            if t.positive_id.as_str() != "solo" {
                assert_eq!(group(&t.positive_id), group(&t.negative_id), "{strategy:?}: {} vs {}", t.positive_id, t.negative_id);
            }
        }
        // A product alone in its group falls back to the whole catalog.
        assert!(triplets.iter().any(|t| t.positive_id.as_str() == "solo"));
    }
}

#[test]
fn ungrouped_catalog_draws_from_everyone() {
    let catalog: Vec<ProductSide> = grouped_catalog().into_iter().map(|p| ProductSide { group: None, ..p }).collect();
    let anchors = vec![LabeledAnchor { pair: catalog[0].pair.clone(), product_id: catalog[0].product_id.clone() }; 200];
    let m = FusionModel::random(3, 3, 2, 0.2, 1).unwrap();
    let triplets = mine_triplets(&anchors, &catalog, &m, MiningStrategy::Random, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let mut negatives: Vec<&str> = triplets.iter().map(|t| t.negative_id.as_str()).collect();
    negatives.sort_unstable();
    negatives.dedup();
    assert_eq!(negatives, ["bag-a", "bag-b", "shoe-b", "solo"]);
}

#[test]
fn training_lowers_dataset_loss_and_is_deterministic() {
    let products = grouped_catalog().into_iter().map(|p| ProductSide { group: None, ..p }).collect::<Vec<_>>();
    let anchors: Vec<LabeledAnchor> = products
        .iter()
        .map(|p| LabeledAnchor { pair: p.pair.clone(), product_id: p.product_id.clone() })
        .collect();
    let data = TrainingSet { products, anchors, fixed: Vec::new() };
    let init = FusionModel::random(3, 3, 2, 0.4, 9).unwrap();
    let params = TrainParams { epochs: 40, lr: 0.3, batch_size: 4, strategy: MiningStrategy::SemiHard, seed: 2 };
    let (a, curve) = train(&init, &data, &params).unwrap();
    let (b, _) = train(&init, &data, &params).unwrap();
    assert_eq!(a, b);
    assert_eq!(curve.len(), params.epochs + 1);
    assert_eq!(curve[0], dataset_loss(&init, &data).unwrap());
    assert!(curve.last().unwrap() < &curve[0], "{curve:?}");
}

#[test]
fn f32_and_f64_models_agree() {
    let m = FusionModel::<f64>::random(4, 3, 2, 0.2, 5).unwrap();
    let v = vec![0.2, -0.5, 0.7];
    let t = vec![0.6, 0.8];
    let fused64 = ModalPair::new(unit(v.clone(), Modality::Visual), unit(t.clone(), Modality::Text)).fuse(&m).unwrap();
    let v32: Vec<f32> = v.iter().map(|&x| x as f32).collect();
    let t32: Vec<f32> = t.iter().map(|&x| x as f32).collect();
    let pair32 = ModalPair::new(Embedding::normalized(v32, Modality::Visual), Embedding::normalized(t32, Modality::Text));
    let fused32 = pair32.fuse(&m.cast::<f32>()).unwrap();
    for (a, b) in fused64.values().iter().zip(fused32.values()) {
        assert!((a - f64::from(*b)).abs() < 1e-5);
    }
}

#[test]
fn saved_model_reloads_identically() {
    let m = FusionModel::<f64>::random(5, 4, 3, 0.25, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    m.save(&path).unwrap();
    assert_eq!(FusionModel::<f64>::load(&path).unwrap(), m);
}
