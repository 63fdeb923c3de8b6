use ndarray::{Array1, Array2};
use proptest::prelude::*;

use lac_core::data_model::Dataset;
use lac_core::evaluation::{
    accuracy, apply_rule, auc, confusion_matrix, evaluate, macro_f1, predict, predict_ovr_threshold,
    predict_softmax_threshold, report, PredictionRule,
};
use lac_core::models_optim::{LinearModel, Model};

/// Pairwise count of positive-over-negative wins, ties one half.
fn pairwise_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if positive[i] && !positive[j] {
                pairs += 1.0;
                wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

fn labeled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    // coarse values so ties are common
    prop::collection::vec(((-20i32..20).prop_map(|v| v as f64 / 4.0), any::<bool>()), 2..60)
        .prop_filter("both classes", |v| v.iter().any(|x| x.1) && v.iter().any(|x| !x.1))
        .prop_map(|v| v.into_iter().unzip())
}

fn predictions(k: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    prop::collection::vec((0..=k, 0..=k), 1..80).prop_map(|v| v.into_iter().unzip())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn auc_matches_pairwise_count((scores, pos) in labeled_scores()) {
        let a = auc(&scores, &pos).unwrap();
        prop_assert!((a - pairwise_auc(&scores, &pos)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn auc_ignores_monotone_transforms((scores, pos) in labeled_scores(), scale in 0.1f64..10.0) {
        let a = auc(&scores, &pos).unwrap();
        let moved: Vec<f64> = scores.iter().map(|s| scale * s.powi(3) - 7.0).collect();
        prop_assert!((a - auc(&moved, &pos).unwrap()).abs() <= 1e-12);
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((a + auc(&flipped, &pos).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn argmax_ignores_common_shifts(scores in prop::collection::vec(-10.0f64..10.0, 1..8), shift in -50.0f64..50.0) {
        let moved: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let best = predict(&scores);
        prop_assert_eq!(predict(&moved), best);
        prop_assert!(scores.iter().all(|&s| s <= scores[best]));
        prop_assert!(scores[..best].iter().all(|&s| s < scores[best]));
    }

    #[test]
    fn confusion_accounts_for_every_row(
        (k, (preds, truths)) in (1usize..6).prop_flat_map(|k| (Just(k), predictions(k))),
    ) {
        let cm = confusion_matrix(&preds, &truths, k + 1).unwrap();
        for (c, row) in cm.iter().enumerate() {
            prop_assert_eq!(row.iter().sum::<usize>(), truths.iter().filter(|&&t| t == c).count());
        }
        prop_assert_eq!(cm.iter().flatten().sum::<usize>(), preds.len());
        let diag: usize = (0..=k).map(|c| cm[c][c]).sum();
        prop_assert_eq!(accuracy(&preds, &truths).unwrap(), diag as f64 / preds.len() as f64);
        let f1 = macro_f1(&preds, &truths, k + 1).unwrap();
        prop_assert!((0.0..=1.0).contains(&f1));
    }

    #[test]
    fn perfect_predictions_score_one(truths in prop::collection::vec(0usize..4, 1..50)) {
        let present: std::collections::BTreeSet<_> = truths.iter().copied().collect();
        prop_assert_eq!(accuracy(&truths, &truths).unwrap(), 1.0);
        // absent classes count as zero in the macro average
        let f1 = macro_f1(&truths, &truths, 4).unwrap();
        prop_assert!((f1 - present.len() as f64 / 4.0).abs() <= 1e-15);
        if present.len() == 4 {
            prop_assert_eq!(f1, 1.0);
        }
    }
}

/// Features are the one-hot true class, so the identity model is exact.
fn one_hot_split(labels: &[usize], classes: usize) -> Dataset {
    let x = Array2::from_shape_fn((labels.len(), classes), |(i, j)| if labels[i] == j { 1.0 } else { 0.0 });
    Dataset::new(x, Some(labels.to_vec()), classes).unwrap()
}

#[test]
fn oracle_and_constant_models() {
    let labels: Vec<usize> = (0..40).map(|i| [0, 1, 2, 3, 3, 2, 0, 3][i % 8]).collect();
    let test = one_hot_split(&labels, 4);

    let oracle = Model::Linear(LinearModel::from_parts(Array2::eye(4) * 5.0, Array1::zeros(4)).unwrap());
    let r = evaluate(&oracle, PredictionRule::Argmax, &test).unwrap();
    assert_eq!((r.accuracy, r.macro_f1, r.auc), (1.0, 1.0, 1.0));
    assert_eq!((r.k, r.n_test), (3, 40));

    let constant = Model::Linear(LinearModel::from_parts(Array2::zeros((4, 4)), Array1::zeros(4)).unwrap());
    let r = evaluate(&constant, PredictionRule::Argmax, &test).unwrap();
    let share0 = labels.iter().filter(|&&l| l == 0).count() as f64 / 40.0;
    assert_eq!(r.accuracy, share0);
    assert!((r.macro_f1 - 2.0 * share0 / (1.0 + share0) / 4.0).abs() <= 1e-15);
    assert_eq!(r.auc, 0.5);
    assert!(r.confusion.iter().all(|row| row[1..].iter().all(|&c| c == 0)));
}

#[test]
fn threshold_rules() {
    assert_eq!(predict_ovr_threshold(&[-0.2, -1.0]), 2);
    assert_eq!(predict_ovr_threshold(&[-0.2, 0.0]), 1);
    assert_eq!(predict_softmax_threshold(&[0.5, 0.5], 0.95).unwrap(), 2);
    assert_eq!(predict_softmax_threshold(&[0.96, 0.04], 0.95).unwrap(), 0);
    assert!(predict_softmax_threshold(&[1.0], 0.0).is_err());

    let (p, s) = apply_rule(PredictionRule::OvrThreshold, &[-1.0, -2.0, 9.0]).unwrap();
    assert_eq!((p, s), (2, 1.0));
    let (p, s) = apply_rule(PredictionRule::SoftmaxThreshold { tau: 0.6 }, &[0.0, 0.0, 9.0]).unwrap();
    assert_eq!((p, s), (2, -0.5));
    let (p, s) = apply_rule(PredictionRule::Argmax, &[0.0, 0.0]).unwrap();
    assert_eq!((p, s), (0, 0.5));
}

#[test]
fn report_examples() {
    let truths = [0, 0, 1, 2, 2, 2];
    let preds = [0, 1, 1, 2, 2, 0];
    let scores = [0.1, 0.2, 0.3, 0.9, 0.8, 0.25];
    let r = report(&preds, &scores, &truths, 2).unwrap();
    assert_eq!(r.confusion, vec![vec![1, 1, 0], vec![0, 1, 0], vec![1, 0, 2]]);
    assert_eq!(r.accuracy, 4.0 / 6.0);
    // per-class F1: 2/4, 2/3, 4/5
    assert!((r.macro_f1 - (0.5 + 2.0 / 3.0 + 0.8) / 3.0).abs() <= 1e-15);
    // ac scores 0.9, 0.8, 0.25 against 0.1, 0.2, 0.3: 8 of 9 pairs
    assert!((r.auc - 8.0 / 9.0).abs() <= 1e-15);
}

#[test]
fn metric_errors() {
    assert!(accuracy(&[], &[]).is_err());
    assert!(accuracy(&[0], &[0, 1]).is_err());
    assert!(confusion_matrix(&[3], &[0], 3).is_err());
    assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
    assert!(auc(&[f64::NAN, 0.2], &[true, false]).is_err());
    let unlabeled = Dataset::new(Array2::zeros((3, 2)), None, 2).unwrap();
    let model = Model::Linear(LinearModel::from_parts(Array2::zeros((3, 2)), Array1::zeros(3)).unwrap());
    assert!(evaluate(&model, PredictionRule::Argmax, &unlabeled).is_err());
}
