use compseg_core::metrics::{
    balanced_accuracy, bootstrap_ci, case_prediction_from_counts, confusion, f1_per_class, SegScores,
};
use compseg_core::{Dims, LabelMask};
use proptest::prelude::*;

fn masks() -> impl Strategy<Value = (usize, Vec<u8>, Vec<u8>)> {
    (2usize..=5, 1usize..=64).prop_flat_map(|(k, n)| {
        (Just(k), prop::collection::vec(0u8..=k as u8, n), prop::collection::vec(0u8..=k as u8, n))
    })
}

fn mask(k: usize, l: Vec<u8>) -> LabelMask {
    LabelMask::new(Dims::new(1, 1, l.len()), k, l).unwrap()
}

proptest! {
    #[test]
    fn confusion_margins_are_class_counts((k, pred, gt) in masks()) {
        let both: Vec<(u8, u8)> = pred.iter().copied().zip(gt.iter().copied())
            .filter(|&(p, g)| (p as usize) < k && (g as usize) < k).collect();
        let c = confusion(&mask(k, pred), &mask(k, gt)).unwrap();
        for i in 0..k {
            let row: u64 = c[i].iter().sum();
            let col: u64 = c.iter().map(|r| r[i]).sum();
            prop_assert_eq!(row as usize, both.iter().filter(|&&(_, g)| g as usize == i).count());
            prop_assert_eq!(col as usize, both.iter().filter(|&&(p, _)| p as usize == i).count());
        }
    }

    #[test]
    fn macro_f1_is_mean_of_per_class((k, pred, gt) in masks()) {
        let s: SegScores = f1_per_class(&mask(k, pred), &mask(k, gt)).unwrap();
        let finite: Vec<f64> = s.per_class_f1.iter().copied().filter(|v| !v.is_nan()).collect();
        let mean = finite.iter().sum::<f64>() / finite.len() as f64;
        prop_assert!((s.macro_f1 - mean).abs() < 1e-12);
        prop_assert!(s.per_class_f1.iter().all(|v| v.is_nan() || (0.0..=1.0).contains(v)));
    }

    #[test]
    fn perfect_prediction_scores_one((k, _p, gt) in masks()) {
        let s = f1_per_class(&mask(k, gt.clone()), &mask(k, gt)).unwrap();
        prop_assert_eq!(s.macro_f1, 1.0);
    }

    #[test]
    fn case_prediction_ignores_slide_order_and_scale(
        slides in prop::collection::vec(prop::collection::vec(0u64..500, 3), 1..5),
        scale in 1u64..7,
    ) {
        let tumor = [0usize, 1];
        let a = case_prediction_from_counts("c", &slides, &tumor).unwrap();
        let mut rev = slides.clone();
        rev.reverse();
        let b = case_prediction_from_counts("c", &rev, &tumor).unwrap();
        prop_assert_eq!(&a, &b);
        let scaled: Vec<Vec<u64>> = slides.iter().map(|s| s.iter().map(|v| v * scale).collect()).collect();
        let c = case_prediction_from_counts("c", &scaled, &tumor).unwrap();
        prop_assert_eq!(a.predicted_class, c.predicted_class);
        prop_assert_eq!(a.tie, c.tie);
    }

    #[test]
    fn balanced_accuracy_is_invariant_to_case_order(
        pairs in prop::collection::vec((0usize..2, 0usize..2), 2..40),
        rot in 0usize..40,
    ) {
        prop_assume!(pairs.iter().any(|p| p.1 == 0) && pairs.iter().any(|p| p.1 == 1));
        let (preds, labels): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let mut rotated = pairs.clone();
        let n = rotated.len();
        rotated.rotate_left(rot % n);
        let (rp, rl): (Vec<usize>, Vec<usize>) = rotated.into_iter().unzip();
        let a = balanced_accuracy(&preds, &labels, &[0, 1]).unwrap();
        let b = balanced_accuracy(&rp, &rl, &[0, 1]).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn bootstrap_interval_brackets_constant_metric(n in 1usize..50, seed in any::<u64>()) {
        let preds = vec![0usize; n];
        let ci = bootstrap_ci(&preds, &preds, |_, _| Ok(0.7), 200, 0.95, seed).unwrap();
        prop_assert_eq!((ci.low, ci.high, ci.rejected), (0.7, 0.7, 0));
    }
}

#[test]
fn single_resample_gives_a_degenerate_interval() {
    let preds = [0usize, 1, 1, 0];
    let labels = [0usize, 1, 0, 1];
    let ci = bootstrap_ci(&preds, &labels, |p, l| Ok(p.iter().zip(l).filter(|(a, b)| a == b).count() as f64), 1, 0.95, 3)
        .unwrap();
    assert_eq!(ci.low, ci.high);
}
