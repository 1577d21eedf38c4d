//! Three-class MNIST segmentation: digit "3", digit "4", and everything else.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::idx::IdxImages;
use super::MnistError;
use crate::rng::{derive_seed, rng_for};
use crate::transition::TransitionMatrix;
use crate::types::{ComplementaryMask, Dims, LabelMask};

pub const CLASS_THREE: u8 = 0;
pub const CLASS_FOUR: u8 = 1;
pub const CLASS_OTHER: u8 = 2;
pub const NUM_CLASSES: usize = 3;
pub const SIDE: usize = 28;

/// Class of a digit's foreground pixels.
pub fn digit_group(digit: u8) -> u8 {
    match digit {
        3 => CLASS_THREE,
        4 => CLASS_FOUR,
        _ => CLASS_OTHER,
    }
}

/// How complementary labels are drawn from the transition matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Every pixel draws independently from the row of its own class.
    #[default]
    PerPixel,
    /// One draw per image from the row of the image's class, broadcast to
    /// every pixel whose class differs from the drawn label.
    PerImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistSegConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_supervised_fraction")]
    pub supervised_fraction: f64,
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
    #[serde(default)]
    pub sampling: SamplingMode,
    #[serde(default = "default_threshold")]
    pub foreground_threshold: f32,
}

fn default_n() -> usize {
    1000
}
fn default_supervised_fraction() -> f64 {
    0.1
}
fn default_eval_fraction() -> f64 {
    0.2
}
fn default_threshold() -> f32 {
    0.5
}

impl Default for MnistSegConfig {
    fn default() -> Self {
        Self {
            n: default_n(),
            supervised_fraction: default_supervised_fraction(),
            eval_fraction: default_eval_fraction(),
            sampling: SamplingMode::default(),
            foreground_threshold: default_threshold(),
        }
    }
}

impl MnistSegConfig {
    pub fn validate(&self) -> Result<(), MnistError> {
        if self.n == 0 {
            return Err(MnistError::InvalidConfig("n must be >= 1".into()));
        }
        if !(self.supervised_fraction > 0.0 && self.supervised_fraction <= 1.0) {
            return Err(MnistError::InvalidConfig("supervised_fraction must be in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(MnistError::InvalidConfig("eval_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MnistSegSample {
    /// Index into the source corpus.
    pub source_index: usize,
    pub digit: u8,
    pub image: Vec<f32>,
    pub gt_mask: Vec<u8>,
    pub compl_mask: Vec<u8>,
    pub supervised: bool,
    pub split: Split,
}

impl MnistSegSample {
    pub fn group(&self) -> u8 {
        digit_group(self.digit)
    }

    /// Labels the trainer may see: the ground truth for supervised samples,
    /// all-sentinel otherwise.
    pub fn training_labels(&self) -> Vec<u8> {
        if self.supervised {
            self.gt_mask.clone()
        } else {
            vec![NUM_CLASSES as u8; self.gt_mask.len()]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MnistSegDataset {
    pub samples: Vec<MnistSegSample>,
}

impl MnistSegDataset {
    pub fn train(&self) -> impl Iterator<Item = &MnistSegSample> {
        self.samples.iter().filter(|s| s.split == Split::Train)
    }

    pub fn eval(&self) -> impl Iterator<Item = &MnistSegSample> {
        self.samples.iter().filter(|s| s.split == Split::Eval)
    }

    pub fn supervised_count(&self) -> usize {
        self.samples.iter().filter(|s| s.supervised).count()
    }
}

/// Foreground pixels take the digit's class, background is "other".
pub fn ground_truth_mask(image: &[f32], digit: u8, threshold: f32) -> Vec<u8> {
    let group = digit_group(digit);
    image.iter().map(|&v| if v > threshold { group } else { CLASS_OTHER }).collect()
}

/// Picks `total` items with per-group quotas proportional to group sizes
/// (largest-remainder rounding), uniformly at random within each group.
fn stratified_pick<R: Rng>(groups: &[u8], total: usize, rng: &mut R) -> Vec<bool> {
    let n = groups.len();
    let mut members: [Vec<usize>; NUM_CLASSES] = Default::default();
    for (i, &g) in groups.iter().enumerate() {
        members[g as usize].push(i);
    }
    let exact: Vec<f64> = members.iter().map(|m| total as f64 * m.len() as f64 / n.max(1) as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = total - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &g in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        if quota[g] < members[g].len() {
            quota[g] += 1;
            rest -= 1;
        }
    }
    let mut picked = vec![false; n];
    for (g, m) in members.iter_mut().enumerate() {
        m.shuffle(rng);
        for &i in m.iter().take(quota[g]) {
            picked[i] = true;
        }
    }
    picked
}

/// Builds the segmentation dataset from raw digits.
///
/// Draws a seeded subset of `n` images, holds out a stratified evaluation
/// split, marks `round(n · supervised_fraction)` training samples as
/// supervised (stratified by digit group, capped at the training size) and
/// samples complementary labels for every sample from `q`.
pub fn build_dataset(
    images: &IdxImages,
    digits: &[u8],
    cfg: &MnistSegConfig,
    q: &TransitionMatrix,
    seed: u64,
) -> Result<MnistSegDataset, MnistError> {
    cfg.validate()?;
    if images.rows != SIDE || images.cols != SIDE {
        return Err(MnistError::InvalidConfig(format!(
            "expected {SIDE}x{SIDE} images, got {}x{}",
            images.rows, images.cols
        )));
    }
    if q.k() != NUM_CLASSES {
        return Err(MnistError::InvalidConfig(format!("transition matrix must be 3x3, got k = {}", q.k())));
    }
    let available = images.count.min(digits.len());
    if cfg.n > available {
        return Err(MnistError::InsufficientData { requested: cfg.n, available });
    }
    let mut order: Vec<usize> = (0..available).collect();
    order.shuffle(&mut rng_for(seed, &[1]));
    order.truncate(cfg.n);

    let groups: Vec<u8> = order.iter().map(|&i| digit_group(digits[i])).collect();
    let n_eval = (cfg.n as f64 * cfg.eval_fraction).round() as usize;
    let is_eval = stratified_pick(&groups, n_eval, &mut rng_for(seed, &[2]));

    let train_idx: Vec<usize> = (0..cfg.n).filter(|&i| !is_eval[i]).collect();
    let train_groups: Vec<u8> = train_idx.iter().map(|&i| groups[i]).collect();
    let n_sup = ((cfg.n as f64 * cfg.supervised_fraction).round() as usize).min(train_idx.len());
    let sup_pick = stratified_pick(&train_groups, n_sup, &mut rng_for(seed, &[3]));
    let mut supervised = vec![false; cfg.n];
    for (t, &i) in train_idx.iter().enumerate() {
        supervised[i] = sup_pick[t];
    }

    let mut samples: Vec<MnistSegSample> = order
        .iter()
        .enumerate()
        .map(|(pos, &src)| {
            let image = images.image_f32(src);
            let gt_mask = ground_truth_mask(&image, digits[src], cfg.foreground_threshold);
            MnistSegSample {
                source_index: src,
                digit: digits[src],
                image,
                gt_mask,
                compl_mask: Vec::new(),
                supervised: supervised[pos],
                split: if is_eval[pos] { Split::Eval } else { Split::Train },
            }
        })
        .collect();

    let gt = LabelMask::stack(NUM_CLASSES, SIDE, SIDE, samples.iter().map(|s| &s.gt_mask[..]))
        .map_err(|e| MnistError::InvalidConfig(e.to_string()))?;
    let compl = sample_complementary(&gt, q, derive_seed(seed, 4), cfg.sampling);
    for (i, s) in samples.iter_mut().enumerate() {
        s.compl_mask = compl.image(i).to_vec();
    }
    Ok(MnistSegDataset { samples })
}

/// Index of the first entry whose cumulative probability exceeds `u`.
/// Zero-probability entries are never returned.
fn draw_from_row(row: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last_positive = j;
            if u < cum {
                return j;
            }
        }
    }
    last_positive
}

/// The class an image is labelled with in per-image mode: the most frequent
/// class other than the catch-all last class, or the catch-all if none.
fn image_class(labels: &[u8], k: usize) -> usize {
    let mut counts = vec![0usize; k];
    for &l in labels {
        if (l as usize) < k {
            counts[l as usize] += 1;
        }
    }
    let catch_all = k - 1;
    (0..catch_all)
        .filter(|&c| counts[c] > 0)
        .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
        .unwrap_or(catch_all)
}

/// Draws complementary labels for a ground-truth mask. Sentinel pixels in
/// `gt_mask` stay unlabelled in per-pixel mode.
pub fn sample_complementary(
    gt_mask: &LabelMask,
    q: &TransitionMatrix,
    seed: u64,
    mode: SamplingMode,
) -> ComplementaryMask {
    let k = gt_mask.k();
    assert_eq!(q.k(), k, "transition matrix size");
    let mut rng = rng_for(seed, &[0]);
    let sentinel = k as u8;
    let dims: Dims = gt_mask.dims();
    let labels: Vec<u8> = match mode {
        SamplingMode::PerPixel => gt_mask
            .labels()
            .iter()
            .map(|&y| {
                if (y as usize) < k {
                    draw_from_row(q.row(y as usize), rng.gen::<f64>()) as u8
                } else {
                    sentinel
                }
            })
            .collect(),
        SamplingMode::PerImage => {
            let mut out = Vec::with_capacity(dims.pixels());
            for i in 0..dims.n {
                let img = gt_mask.image(i);
                let drawn = draw_from_row(q.row(image_class(img, k)), rng.gen::<f64>()) as u8;
                out.extend(img.iter().map(|&y| if y == drawn || y == sentinel { sentinel } else { drawn }));
            }
            out
        }
    };
    ComplementaryMask::new(dims, k, labels).expect("drawn labels are class indices")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mnist::synth_digits;

    fn corpus(count: usize) -> (IdxImages, Vec<u8>) {
        synth_digits::generate(count, 11)
    }

    #[test]
    fn supervised_count_matches_fraction() {
        let (imgs, digits) = corpus(1200);
        let cfg = MnistSegConfig::default();
        let ds = build_dataset(&imgs, &digits, &cfg, &TransitionMatrix::mnist_q1(), 5).unwrap();
        assert_eq!(ds.samples.len(), 1000);
        assert_eq!(ds.supervised_count(), 100);
        assert_eq!(ds.eval().count(), 200);
        assert!(ds.eval().all(|s| !s.supervised));
    }

    #[test]
    fn full_fraction_supervises_everything() {
        let (imgs, digits) = corpus(50);
        let cfg = MnistSegConfig { n: 10, supervised_fraction: 1.0, eval_fraction: 0.0, ..Default::default() };
        let ds = build_dataset(&imgs, &digits, &cfg, &TransitionMatrix::mnist_q1(), 1).unwrap();
        assert_eq!(ds.supervised_count(), 10);
        let cfg = MnistSegConfig { n: 10, supervised_fraction: 1.0, ..Default::default() };
        let ds = build_dataset(&imgs, &digits, &cfg, &TransitionMatrix::mnist_q1(), 1).unwrap();
        assert!(ds.train().all(|s| s.supervised));
    }

    #[test]
    fn supervised_split_is_stratified() {
        let (imgs, digits) = corpus(1500);
        let cfg = MnistSegConfig::default();
        for seed in 0..3 {
            let ds = build_dataset(&imgs, &digits, &cfg, &TransitionMatrix::mnist_q1(), seed).unwrap();
            let n = ds.samples.len() as f64;
            let sup = ds.supervised_count() as f64;
            for g in 0..3u8 {
                let full = ds.samples.iter().filter(|s| s.group() == g).count() as f64;
                let picked = ds.samples.iter().filter(|s| s.supervised && s.group() == g).count() as f64;
                assert!((picked - sup * full / n).abs() <= 1.0, "group {g}: {picked} vs {}", sup * full / n);
            }
        }
    }

    #[test]
    fn insufficient_data() {
        let (imgs, digits) = corpus(5);
        let cfg = MnistSegConfig { n: 6, ..Default::default() };
        assert_eq!(
            build_dataset(&imgs, &digits, &cfg, &TransitionMatrix::mnist_q1(), 0).unwrap_err(),
            MnistError::InsufficientData { requested: 6, available: 5 }
        );
    }

    #[test]
    fn masks_follow_foreground_threshold() {
        let img = [0.0, 0.5, 0.51, 1.0];
        assert_eq!(ground_truth_mask(&img, 3, 0.5), vec![2, 2, 0, 0]);
        assert_eq!(ground_truth_mask(&img, 4, 0.5), vec![2, 2, 1, 1]);
        assert_eq!(ground_truth_mask(&img, 7, 0.5), vec![2, 2, 2, 2]);
    }

    #[test]
    fn same_seed_same_dataset() {
        let (imgs, digits) = corpus(300);
        let cfg = MnistSegConfig { n: 200, ..Default::default() };
        let a = build_dataset(&imgs, &digits, &cfg, &TransitionMatrix::mnist_q2(), 9).unwrap();
        let b = build_dataset(&imgs, &digits, &cfg, &TransitionMatrix::mnist_q2(), 9).unwrap();
        assert_eq!(a, b);
        for s in &a.samples {
            for (&c, &y) in s.compl_mask.iter().zip(&s.gt_mask) {
                assert_ne!(c, y);
                assert_ne!(c, CLASS_OTHER, "Q2 never emits the last class");
            }
        }
    }

    fn frequencies(mask: &ComplementaryMask) -> Vec<f64> {
        let counts = mask.class_counts();
        let total: u64 = counts.iter().sum();
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    }

    #[test]
    fn per_pixel_frequencies_match_rows() {
        let dims = Dims::new(1, 1, 100_000);
        let other = LabelMask::new(dims, 3, vec![2; 100_000]).unwrap();
        let f = frequencies(&sample_complementary(&other, &TransitionMatrix::mnist_q2(), 1, SamplingMode::PerPixel));
        assert!((f[0] - 0.5).abs() < 0.01 && (f[1] - 0.5).abs() < 0.01 && f[2] == 0.0);

        let zero = LabelMask::new(dims, 3, vec![0; 100_000]).unwrap();
        let f = frequencies(&sample_complementary(&zero, &TransitionMatrix::mnist_q1(), 2, SamplingMode::PerPixel));
        assert!(f[0] == 0.0 && (f[1] - 0.7).abs() < 0.01 && (f[2] - 0.3).abs() < 0.01);
    }

    #[test]
    fn deterministic_row_always_draws_its_label() {
        let q = TransitionMatrix::mnist_q2();
        let gt = LabelMask::new(Dims::new(1, 1, 1000), 3, vec![0; 1000]).unwrap();
        let c = sample_complementary(&gt, &q, 3, SamplingMode::PerPixel);
        assert!(c.labels().iter().all(|&l| l == 1));
    }

    #[test]
    fn per_image_mode_broadcasts_one_label() {
        let q = TransitionMatrix::mnist_q1();
        // Two images: a "3" on background and an all-other image.
        let mut labels = vec![2u8; 8];
        labels[1] = 0;
        labels[2] = 0;
        let gt = LabelMask::new(Dims::new(2, 2, 2), 3, labels).unwrap();
        for seed in 0..20 {
            let c = sample_complementary(&gt, &q, seed, SamplingMode::PerImage);
            c.check_against(&gt).unwrap();
            let first: Vec<u8> = c.image(0).iter().copied().filter(|&l| l != 3).collect();
            assert!(first.windows(2).all(|w| w[0] == w[1]));
            assert!(first[0] == 1 || first[0] == 2);
            let second = c.image(1);
            assert!(second.iter().all(|&l| l == second[0] && l != 2));
        }
    }

    #[test]
    fn sentinel_pixels_stay_unlabelled() {
        let gt = LabelMask::new(Dims::new(1, 1, 3), 3, vec![3, 0, 3]).unwrap();
        let c = sample_complementary(&gt, &TransitionMatrix::mnist_q1(), 0, SamplingMode::PerPixel);
        assert_eq!(c.labels()[0], 3);
        assert_eq!(c.labels()[2], 3);
    }
}
