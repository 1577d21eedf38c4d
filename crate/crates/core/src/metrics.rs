//! Segmentation and case-level evaluation.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::rng_for;
use crate::types::LabelMask;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no input to aggregate")]
    EmptyInput,
    #[error("class {0} does not occur in the labels")]
    MissingClass(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("all {0} bootstrap resamples were rejected")]
    AllResamplesRejected(usize),
}

/// F1 of a class that occurs in neither prediction nor ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbsentClassPolicy {
    #[default]
    One,
    /// Reported as NaN and left out of averages.
    Skip,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegScores {
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    /// `confusion[truth][predicted]` pixel counts.
    pub confusion: Vec<Vec<u64>>,
}

impl SegScores {
    pub fn from_confusion(confusion: Vec<Vec<u64>>, policy: AbsentClassPolicy) -> SegScores {
        let k = confusion.len();
        let per_class_f1: Vec<f64> = (0..k)
            .map(|c| {
                let tp = confusion[c][c];
                let fn_: u64 = confusion[c].iter().sum::<u64>() - tp;
                let fp: u64 = (0..k).map(|r| confusion[r][c]).sum::<u64>() - tp;
                let denom = 2 * tp + fp + fn_;
                if denom == 0 {
                    match policy {
                        AbsentClassPolicy::One => 1.0,
                        AbsentClassPolicy::Skip => f64::NAN,
                        AbsentClassPolicy::Zero => 0.0,
                    }
                } else {
                    2.0 * tp as f64 / denom as f64
                }
            })
            .collect();
        let macro_f1 = nan_mean(&per_class_f1);
        SegScores { per_class_f1, macro_f1, confusion }
    }

    pub fn evaluated_pixels(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

fn nan_mean(values: &[f64]) -> f64 {
    let kept: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    if kept.is_empty() {
        f64::NAN
    } else {
        kept.iter().sum::<f64>() / kept.len() as f64
    }
}

/// Pixel confusion counts. Pixels unannotated in either mask are skipped.
pub fn confusion(pred: &LabelMask, gt: &LabelMask) -> Result<Vec<Vec<u64>>, MetricsError> {
    if pred.dims() != gt.dims() || pred.k() != gt.k() {
        return Err(MetricsError::ShapeMismatch(format!(
            "pred {:?} (k={}) vs gt {:?} (k={})",
            pred.dims(),
            pred.k(),
            gt.dims(),
            gt.k()
        )));
    }
    let k = gt.k();
    let mut m = vec![vec![0u64; k]; k];
    for (&p, &t) in pred.labels().iter().zip(gt.labels()) {
        if (p as usize) < k && (t as usize) < k {
            m[t as usize][p as usize] += 1;
        }
    }
    Ok(m)
}

pub fn f1_per_class(pred: &LabelMask, gt: &LabelMask) -> Result<SegScores, MetricsError> {
    f1_per_class_with(pred, gt, AbsentClassPolicy::One)
}

pub fn f1_per_class_with(pred: &LabelMask, gt: &LabelMask, policy: AbsentClassPolicy) -> Result<SegScores, MetricsError> {
    Ok(SegScores::from_confusion(confusion(pred, gt)?, policy))
}

/// Unweighted mean of per-case F1 per class; NaN entries are skipped.
pub fn case_averaged_f1(per_case: &[SegScores]) -> Result<Vec<f64>, MetricsError> {
    let first = per_case.first().ok_or(MetricsError::EmptyInput)?;
    let k = first.per_class_f1.len();
    if per_case.iter().any(|s| s.per_class_f1.len() != k) {
        return Err(MetricsError::ShapeMismatch("cases disagree on class count".into()));
    }
    Ok((0..k)
        .map(|c| nan_mean(&per_case.iter().map(|s| s.per_class_f1[c]).collect::<Vec<_>>()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasePrediction {
    pub case_id: String,
    /// `None` when no tumor pixel was predicted.
    pub predicted_class: Option<usize>,
    pub class_pixel_shares: Vec<f64>,
    pub class_pixel_counts: Vec<u64>,
    /// Two tumor classes had the same top count.
    pub tie: bool,
    pub no_tumor_pixels: bool,
}

/// Case prediction from per-slide predicted class counts.
pub fn case_prediction_from_counts(
    case_id: &str,
    slide_counts: &[Vec<u64>],
    tumor_classes: &[usize],
) -> Result<CasePrediction, MetricsError> {
    let first = slide_counts.first().ok_or(MetricsError::EmptyInput)?;
    let k = first.len();
    if slide_counts.iter().any(|c| c.len() != k) {
        return Err(MetricsError::ShapeMismatch("slides disagree on class count".into()));
    }
    if let Some(&c) = tumor_classes.iter().find(|&&c| c >= k) {
        return Err(MetricsError::InvalidArgument(format!("tumor class {c} >= k = {k}")));
    }
    let mut counts = vec![0u64; k];
    for slide in slide_counts {
        for (acc, &v) in counts.iter_mut().zip(slide) {
            *acc += v;
        }
    }
    let total: u64 = counts.iter().sum();
    let class_pixel_shares =
        counts.iter().map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 }).collect();
    let mut sorted = tumor_classes.to_vec();
    sorted.sort_unstable();
    let best = sorted.iter().map(|&c| counts[c]).max().unwrap_or(0);
    let winners: Vec<usize> = sorted.iter().copied().filter(|&c| counts[c] == best).collect();
    let no_tumor_pixels = best == 0;
    Ok(CasePrediction {
        case_id: case_id.to_string(),
        predicted_class: if no_tumor_pixels { None } else { winners.first().copied() },
        class_pixel_shares,
        class_pixel_counts: counts,
        tie: !no_tumor_pixels && winners.len() > 1,
        no_tumor_pixels,
    })
}

/// Case prediction from the predicted segmentation maps of its slides.
/// Unevaluated (sentinel) pixels are not counted.
pub fn case_prediction(
    case_id: &str,
    seg_maps: &[&LabelMask],
    tumor_classes: &[usize],
) -> Result<CasePrediction, MetricsError> {
    let counts: Vec<Vec<u64>> = seg_maps.iter().map(|m| m.class_counts()).collect();
    case_prediction_from_counts(case_id, &counts, tumor_classes)
}

/// Fraction of evaluated pixels predicted as the class the diagnosis rules out.
pub fn complementary_area_share(seg_map: &LabelMask, diagnosis: usize, complement_class: usize) -> Result<f64, MetricsError> {
    if diagnosis == complement_class {
        return Err(MetricsError::InvalidArgument("diagnosis equals complement class".into()));
    }
    let counts = seg_map.class_counts();
    let total: u64 = counts.iter().sum();
    let hit = counts.get(complement_class).copied().unwrap_or(0);
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

/// Mean per-class recall over `classes`. Predictions outside `classes`
/// count as misses.
pub fn balanced_accuracy(preds: &[usize], labels: &[usize], classes: &[usize]) -> Result<f64, MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} predictions, {} labels", preds.len(), labels.len())));
    }
    if classes.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut total = 0.0;
    for &c in classes {
        let (mut n, mut hit) = (0usize, 0usize);
        for (&p, &l) in preds.iter().zip(labels) {
            if l == c {
                n += 1;
                hit += (p == c) as usize;
            }
        }
        if n == 0 {
            return Err(MetricsError::MissingClass(c));
        }
        total += hit as f64 / n as f64;
    }
    Ok(total / classes.len() as f64)
}

/// Percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub low: f64,
    pub high: f64,
    /// Resamples on which the metric failed and which were left out.
    pub rejected: usize,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Resamples cases with replacement and reports the central `confidence`
/// percentile interval of `metric`, interpolating linearly between order
/// statistics.
pub fn bootstrap_ci<F>(
    preds: &[usize],
    labels: &[usize],
    metric: F,
    n_resamples: usize,
    confidence: f64,
    seed: u64,
) -> Result<BootstrapCi, MetricsError>
where
    F: Fn(&[usize], &[usize]) -> Result<f64, MetricsError>,
{
    if n_resamples == 0 {
        return Err(MetricsError::InvalidArgument("n_resamples must be >= 1".into()));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(MetricsError::InvalidArgument("confidence must be in (0, 1)".into()));
    }
    if preds.len() != labels.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} predictions, {} labels", preds.len(), labels.len())));
    }
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = preds.len();
    let mut rng = rng_for(seed, &[0xb007]);
    let mut values = Vec::with_capacity(n_resamples);
    let mut rejected = 0;
    let (mut p, mut l) = (vec![0; n], vec![0; n]);
    for _ in 0..n_resamples {
        for i in 0..n {
            let j = rng.gen_range(0..n);
            p[i] = preds[j];
            l[i] = labels[j];
        }
        match metric(&p, &l) {
            Ok(v) => values.push(v),
            Err(_) => rejected += 1,
        }
    }
    if values.is_empty() {
        return Err(MetricsError::AllResamplesRejected(rejected));
    }
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - confidence) / 2.0;
    Ok(BootstrapCi { low: percentile(&values, tail), high: percentile(&values, 1.0 - tail), rejected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Dims;

    fn mask(labels: &[u8]) -> LabelMask {
        LabelMask::new(Dims::new(1, 1, labels.len()), 3, labels.to_vec()).unwrap()
    }

    #[test]
    fn perfect_and_hopeless() {
        let gt = mask(&[0, 1, 2, 2]);
        let s = f1_per_class(&gt, &gt).unwrap();
        assert_eq!(s.per_class_f1, vec![1.0; 3]);
        let wrong = mask(&[1, 2, 0, 0]);
        assert_eq!(f1_per_class(&wrong, &gt).unwrap().per_class_f1, vec![0.0; 3]);
    }

    #[test]
    fn hand_counted_f1() {
        // Class 0: 3 TP, 1 FP (truth 1), 1 FN (predicted 2).
        let gt = mask(&[0, 0, 0, 1, 0]);
        let pred = mask(&[0, 0, 0, 0, 2]);
        let s = f1_per_class(&pred, &gt).unwrap();
        assert_eq!(s.per_class_f1[0], 0.75);
        assert_eq!(s.evaluated_pixels(), 5);
    }

    #[test]
    fn absent_class_policies() {
        let gt = mask(&[0, 2]);
        let pred = mask(&[0, 2]);
        let c = confusion(&pred, &gt).unwrap();
        assert_eq!(SegScores::from_confusion(c.clone(), AbsentClassPolicy::One).per_class_f1[1], 1.0);
        assert_eq!(SegScores::from_confusion(c.clone(), AbsentClassPolicy::Zero).per_class_f1[1], 0.0);
        let skip = SegScores::from_confusion(c, AbsentClassPolicy::Skip);
        assert!(skip.per_class_f1[1].is_nan());
        assert_eq!(skip.macro_f1, 1.0);
    }

    #[test]
    fn sentinel_pixels_are_excluded() {
        let gt = mask(&[0, 3, 1]);
        let pred = mask(&[0, 1, 3]);
        let c = confusion(&pred, &gt).unwrap();
        assert_eq!(c.iter().flatten().sum::<u64>(), 1);
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(f1_per_class(&mask(&[0]), &mask(&[0, 1])), Err(MetricsError::ShapeMismatch(_))));
    }

    #[test]
    fn case_average() {
        let a = SegScores { per_class_f1: vec![1.0, 0.2], macro_f1: 0.6, confusion: vec![] };
        let b = SegScores { per_class_f1: vec![0.5, 0.4], macro_f1: 0.45, confusion: vec![] };
        let avg = case_averaged_f1(&[a.clone(), b]).unwrap();
        assert_eq!(avg[0], 0.75);
        assert!((avg[1] - 0.3).abs() < 1e-15);
        assert_eq!(case_averaged_f1(&[a.clone()]).unwrap(), a.per_class_f1);
        assert_eq!(case_averaged_f1(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn case_average_differs_from_pooling() {
        // Small case: perfect on class 0. Large case: class 0 half missed.
        let small_gt = mask(&[0, 0]);
        let large_gt = mask(&[0, 0, 0, 0, 0, 0, 0, 0]);
        let large_pred = mask(&[0, 0, 0, 0, 2, 2, 2, 2]);
        let s1 = f1_per_class(&small_gt, &small_gt).unwrap();
        let s2 = f1_per_class(&large_pred, &large_gt).unwrap();
        let averaged = case_averaged_f1(&[s1, s2]).unwrap()[0];
        let pooled = f1_per_class(&mask(&[0, 0, 0, 0, 0, 0, 2, 2, 2, 2]), &mask(&[0; 10])).unwrap().per_class_f1[0];
        // 2·4/(2·4+4) = 2/3 for the large case, so (1 + 2/3)/2; pooled 2·6/(12+4) = 0.75.
        assert!((averaged - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(pooled, 0.75);
        assert!((averaged - pooled).abs() > 0.05);
    }

    #[test]
    fn dominance() {
        let p = case_prediction_from_counts("c", &[vec![60, 40, 900]], &[0, 1]).unwrap();
        assert_eq!(p.predicted_class, Some(0));
        let p = case_prediction_from_counts("c", &[vec![100, 0, 5], vec![0, 150, 5]], &[0, 1]).unwrap();
        assert_eq!(p.predicted_class, Some(1));
        assert!((p.class_pixel_shares.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let p = case_prediction_from_counts("c", &[vec![0, 0, 10]], &[0, 1]).unwrap();
        assert!(p.no_tumor_pixels && p.predicted_class.is_none() && !p.tie);
        let p = case_prediction_from_counts("c", &[vec![7, 7, 1]], &[1, 0]).unwrap();
        assert_eq!(p.predicted_class, Some(0));
        assert!(p.tie);
        assert_eq!(case_prediction_from_counts("c", &[], &[0, 1]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn prediction_from_maps_skips_unevaluated() {
        let m = mask(&[0, 1, 1, 3, 3, 3]);
        let p = case_prediction("c", &[&m], &[0, 1]).unwrap();
        assert_eq!(p.predicted_class, Some(1));
        assert_eq!(p.class_pixel_counts, vec![1, 2, 0]);
    }

    #[test]
    fn area_share() {
        let mut labels = vec![2u8; 100];
        labels[..6].fill(1);
        assert_eq!(complementary_area_share(&mask(&labels), 0, 1).unwrap(), 0.06);
        assert_eq!(complementary_area_share(&mask(&[0, 0, 2]), 0, 1).unwrap(), 0.0);
        assert!(complementary_area_share(&mask(&[0]), 1, 1).is_err());
    }

    #[test]
    fn balanced_accuracy_by_hand() {
        assert_eq!(balanced_accuracy(&[0, 1, 1], &[0, 1, 1], &[0, 1]).unwrap(), 1.0);
        // 77 class-0 cases with 5 called class 1; 88 class-1 cases with 8 called class 0.
        let mut labels = vec![0; 77];
        labels.extend(vec![1; 88]);
        let mut preds = vec![0; 72];
        preds.extend(vec![1; 5]);
        preds.extend(vec![0; 8]);
        preds.extend(vec![1; 80]);
        let expected = (72.0 / 77.0 + 80.0 / 88.0) / 2.0;
        assert!((balanced_accuracy(&preds, &labels, &[0, 1]).unwrap() - expected).abs() < 1e-15);
        assert_eq!(balanced_accuracy(&[0, 0, 0, 0], &[0, 0, 1, 1], &[0, 1]).unwrap(), 0.5);
        assert_eq!(balanced_accuracy(&[0], &[0], &[0, 1]), Err(MetricsError::MissingClass(1)));
    }

    fn ba(p: &[usize], l: &[usize]) -> Result<f64, MetricsError> {
        balanced_accuracy(p, l, &[0, 1])
    }

    #[test]
    fn bootstrap_perfect_and_single() {
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let ci = bootstrap_ci(&labels, &labels, ba, 1000, 0.95, 1).unwrap();
        assert_eq!((ci.low, ci.high), (1.0, 1.0));
        let mut preds = labels.clone();
        preds[0] = 1;
        preds[3] = 0;
        let one = bootstrap_ci(&preds, &labels, ba, 1, 0.95, 4).unwrap();
        assert_eq!(one.low, one.high);
        let again = bootstrap_ci(&preds, &labels, ba, 1000, 0.95, 4).unwrap();
        assert_eq!(again, bootstrap_ci(&preds, &labels, ba, 1000, 0.95, 4).unwrap());
        let point = ba(&preds, &labels).unwrap();
        assert!(again.low <= point && point <= again.high);
    }

    #[test]
    fn degenerate_resamples_are_counted() {
        let ci = bootstrap_ci(&[0, 1], &[0, 1], ba, 200, 0.9, 0).unwrap();
        assert!(ci.rejected > 0);
        assert!(bootstrap_ci(&[0], &[0], ba, 10, 0.9, 0).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[0.0, 1.0, 2.0, 3.0], 0.5), 1.5);
        assert_eq!(percentile(&[5.0], 0.025), 5.0);
    }
}
