mod common;

use memnorm::gbdt::{
    self, best_split, evaluate_binary, fit, fit_with, FeatureMatrix, GbdtParams, Node,
    SplitCandidate, TreeEnsemble,
};
use memnorm::tensor::sigmoid;
use proptest::prelude::*;
use rand::Rng;

fn assert_same_split(a: Option<SplitCandidate>, b: Option<SplitCandidate>) {
    if let Err(msg) = common::oracles::same_split(&a, &b, 1e-9) {
        panic!("{msg}");
    }
}

#[test]
fn four_point_stump_matches_enumeration() {
    let x = FeatureMatrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]).unwrap();
    let y = [0.0, 0.0, 1.0, 1.0];
    // min_child_weight 0: with four rows at p = 0.5 the whole node holds H = 1
    let params = GbdtParams {
        max_depth: 1,
        lambda: 1.0,
        gamma: 0.0,
        min_child_weight: 0.0,
        n_estimators: 1,
        ..Default::default()
    };
    let e = fit(&x, &y, &params).unwrap();
    assert_eq!(e.base_score, 0.0);

    let g: Vec<f64> = y.iter().map(|y| 0.5 - y).collect();
    let h = vec![0.25; 4];
    let rows: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
    let oracle = common::oracles::exhaustive_split(&rows, &g, &h, &params).unwrap();
    assert_eq!(oracle.threshold, 1.5);
    let wl = -oracle.left_grad / (oracle.left_hess + 1.0);
    let wr = -oracle.right_grad / (oracle.right_hess + 1.0);
    assert!((wl + 2.0 / 3.0).abs() < 1e-12 && (wr - 2.0 / 3.0).abs() < 1e-12);

    match &e.trees[0].nodes[..] {
        [Node::Split {
            feature: 0,
            threshold,
            left,
            right,
            gain,
        }, ..] => {
            assert_eq!(*threshold, oracle.threshold);
            assert!((gain - oracle.gain).abs() < 1e-12);
            assert_eq!(e.trees[0].nodes[*left], Node::Leaf { weight: wl });
            assert_eq!(e.trees[0].nodes[*right], Node::Leaf { weight: wr });
        }
        other => panic!("{other:?}"),
    }
    for (i, expected) in [wl, wl, wr, wr].iter().enumerate() {
        let p = e.predict_proba(&[i as f64]).unwrap();
        assert!((p - sigmoid(0.3 * expected)).abs() < 1e-15);
    }
}

#[test]
fn all_positive_labels_grow_no_trees() {
    let x = FeatureMatrix::from_rows(&[[0.0], [5.0]]).unwrap();
    let e = fit(&x, &[1.0, 1.0], &GbdtParams::default()).unwrap();
    assert!(e.trees.is_empty());
    assert_eq!(e.base_score, gbdt::logit(1.0 - gbdt::PROB_CLIP));
    assert_eq!(GbdtParams::default().n_estimators, 361);
}

fn split_case() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, GbdtParams)> {
    (1usize..=4, 2usize..=32).prop_flat_map(|(features, rows)| {
        (
            prop::collection::vec(
                prop::collection::vec((0u8..6).prop_map(f64::from), features),
                rows,
            ),
            prop::collection::vec(-1.0f64..1.0, rows),
            prop::collection::vec(0.01f64..1.0, rows),
            (
                prop_oneof![Just(0.0), Just(0.5)],
                prop_oneof![Just(0.0), Just(1.0)],
                prop_oneof![Just(0.0), Just(0.05)],
            ),
        )
            .prop_map(|(x, g, h, (mcw, lambda, gamma))| {
                let p = GbdtParams {
                    min_child_weight: mcw,
                    lambda,
                    gamma,
                    ..Default::default()
                };
                (x, g, h, p)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn split_search_matches_enumeration((rows, g, h, p) in split_case()) {
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let all: Vec<usize> = (0..rows.len()).collect();
        assert_same_split(best_split(&x, &g, &h, &all, &p), common::oracles::exhaustive_split(&rows, &g, &h, &p));
    }

    #[test]
    fn prediction_is_monotone_in_leaf_weights(delta in 0.0f64..3.0, seed in 0u64..50) {
        let mut r = common::rng(seed);
        let rows: Vec<[f64; 3]> = (0..60).map(|_| [r.gen_range(0.0..4.0), r.gen_range(0.0..4.0), r.gen_range(0.0..4.0)]).collect();
        let y: Vec<f64> = rows.iter().map(|x| ((x[0] + x[1] > 4.0) ^ r.gen_bool(0.1)) as u8 as f64).collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let e = fit(&x, &y, &GbdtParams { n_estimators: 3, max_depth: 3, ..Default::default() }).unwrap();
        let mut bumped = e.clone();
        let leaf = bumped.trees[1].nodes.iter().position(|n| matches!(n, Node::Leaf { .. })).unwrap();
        if let Node::Leaf { weight } = &mut bumped.trees[1].nodes[leaf] {
            *weight += delta;
        }
        for row in &rows {
            prop_assert!(bumped.predict_proba(row).unwrap() >= e.predict_proba(row).unwrap());
        }
    }
}

fn noisy_dataset(seed: u64, n: usize, cols: usize) -> (FeatureMatrix, Vec<f64>) {
    let mut r = common::rng(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..cols).map(|_| r.gen_range(-2.0..2.0)).collect())
        .collect();
    let y = rows
        .iter()
        .map(|x| {
            let score = x[0] * 1.5 - x[1] + 0.5 * x[2] * x[0];
            (r.gen_range(0.0..1.0) < sigmoid(score)) as u8 as f64
        })
        .collect();
    (FeatureMatrix::from_rows(&rows).unwrap(), y)
}

#[test]
fn training_log_loss_never_increases() {
    for seed in 0..3 {
        let (x, y) = noisy_dataset(seed, 300, 4);
        let mut losses = Vec::new();
        fit_with(
            &x,
            &y,
            &GbdtParams {
                n_estimators: 40,
                ..Default::default()
            },
            |_, l| losses.push(l),
        )
        .unwrap();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{losses:?}");
        }
    }
}

#[test]
fn permuting_columns_permutes_importance() {
    let (x, y) = noisy_dataset(8, 400, 4);
    let perm = [2, 0, 3, 1];
    let permuted: Vec<Vec<f64>> = (0..x.rows())
        .map(|i| perm.iter().map(|&c| x.get(i, c)).collect())
        .collect();
    let params = GbdtParams {
        n_estimators: 10,
        ..Default::default()
    };
    let a = fit(&x, &y, &params).unwrap().feature_importance();
    let b = fit(&FeatureMatrix::from_rows(&permuted).unwrap(), &y, &params)
        .unwrap()
        .feature_importance();
    let by_feature = |imp: &[(usize, f64)]| {
        let mut v = vec![0.0; 4];
        for &(f, g) in imp {
            v[f] = g;
        }
        v
    };
    let (a, b) = (by_feature(&a), by_feature(&b));
    for (new, &old) in perm.iter().enumerate() {
        assert!((b[new] - a[old]).abs() <= 1e-9 * a[old].abs().max(1.0));
    }
}

#[test]
fn random_scores_have_auc_near_half() {
    let mut r = common::rng(10);
    let labels: Vec<bool> = (0..10_000).map(|i| i % 2 == 0).collect();
    let scores: Vec<f64> = (0..10_000).map(|_| r.gen_range(0.0..1.0)).collect();
    let auc = evaluate_binary(&scores, &labels).unwrap().auc.unwrap();
    assert!((auc - 0.5).abs() < 0.05, "{auc}");
}

#[test]
fn learns_a_separable_rule() {
    let (x, y) = noisy_dataset(4, 500, 3);
    let e = fit(
        &x,
        &y,
        &GbdtParams {
            n_estimators: 30,
            ..Default::default()
        },
    )
    .unwrap();
    let probs = e.predict_all(&x).unwrap();
    let labels: Vec<bool> = y.iter().map(|&v| v == 1.0).collect();
    assert!(evaluate_binary(&probs, &labels).unwrap().auc.unwrap() > 0.9);
    let back = TreeEnsemble::from_text(&e.to_text(), "mem").unwrap();
    assert_eq!(back.predict_all(&x).unwrap(), probs);
}
