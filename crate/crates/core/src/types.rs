//! Shared array types: image batches, label masks and per-pixel probability maps.
//!
//! All spatial arrays are stored row-major in `N × H × W (× C)` order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypeError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} at index {index} is not a class index or the sentinel (k = {k})")]
    LabelOutOfRange { index: usize, label: u8, k: usize },
    #[error("class count {0} is not supported (must be 2..=254)")]
    UnsupportedClassCount(usize),
    #[error("complementary label equals ground truth {label} at pixel {index}")]
    ComplementEqualsTruth { index: usize, label: u8 },
    #[error("intensity {value} at index {index} is outside [0, 1]")]
    IntensityOutOfRange { index: usize, value: f32 },
    #[error("probabilities at pixel {pixel} sum to {sum}")]
    NotAProbability { pixel: usize, sum: f64 },
    #[error("invalid loss config: {0}")]
    InvalidLossConfig(String),
    #[error("invalid case: {0}")]
    InvalidCase(String),
}

/// Spatial extent shared by masks and maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(n: usize, h: usize, w: usize) -> Self {
        Self { n, h, w }
    }

    pub fn pixels(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn per_image(&self) -> usize {
        self.h * self.w
    }
}

/// A batch of square patches with intensities in `[0, 1]`, `N × P × P × C`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    n: usize,
    p: usize,
    c: usize,
    data: Vec<f32>,
}

impl PatchBatch {
    pub fn new(n: usize, p: usize, c: usize, data: Vec<f32>) -> Result<Self, TypeError> {
        if n == 0 || p == 0 || c == 0 {
            return Err(TypeError::ShapeMismatch(format!("empty batch {n}x{p}x{p}x{c}")));
        }
        if data.len() != n * p * p * c {
            return Err(TypeError::ShapeMismatch(format!(
                "batch {n}x{p}x{p}x{c} needs {} values, got {}",
                n * p * p * c,
                data.len()
            )));
        }
        if let Some((index, &value)) =
            data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(TypeError::IntensityOutOfRange { index, value });
        }
        Ok(Self { n, p, c, data })
    }

    /// Concatenates single patches (each `P × P × C`).
    pub fn from_patches<'a>(
        p: usize,
        c: usize,
        patches: impl IntoIterator<Item = &'a [f32]>,
    ) -> Result<Self, TypeError> {
        let mut data = Vec::new();
        let mut n = 0;
        for patch in patches {
            if patch.len() != p * p * c {
                return Err(TypeError::ShapeMismatch(format!(
                    "patch has {} values, expected {}",
                    patch.len(),
                    p * p * c
                )));
            }
            data.extend_from_slice(patch);
            n += 1;
        }
        Self::new(n, p, c, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn side(&self) -> usize {
        self.p
    }
    pub fn channels(&self) -> usize {
        self.c
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn patch(&self, i: usize) -> &[f32] {
        let len = self.p * self.p * self.c;
        &self.data[i * len..(i + 1) * len]
    }
    pub fn dims(&self) -> Dims {
        Dims::new(self.n, self.p, self.p)
    }
}

/// Integer class labels with a reserved "unannotated" sentinel equal to `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskGrid {
    dims: Dims,
    k: usize,
    labels: Vec<u8>,
}

impl MaskGrid {
    fn new(dims: Dims, k: usize, labels: Vec<u8>) -> Result<Self, TypeError> {
        if !(2..=254).contains(&k) {
            return Err(TypeError::UnsupportedClassCount(k));
        }
        if labels.len() != dims.pixels() {
            return Err(TypeError::ShapeMismatch(format!(
                "mask {}x{}x{} needs {} labels, got {}",
                dims.n,
                dims.h,
                dims.w,
                dims.pixels(),
                labels.len()
            )));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as usize > k) {
            return Err(TypeError::LabelOutOfRange { index, label, k });
        }
        Ok(Self { dims, k, labels })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
    /// The sentinel value marking pixels without a label.
    pub fn sentinel(&self) -> u8 {
        self.k as u8
    }
    /// Class at flat pixel index, `None` for sentinel pixels.
    #[inline]
    pub fn class_at(&self, idx: usize) -> Option<usize> {
        let l = self.labels[idx] as usize;
        (l < self.k).then_some(l)
    }
    pub fn annotated_count(&self) -> usize {
        self.labels.iter().filter(|&&l| (l as usize) < self.k).count()
    }
    pub fn image(&self, i: usize) -> &[u8] {
        let len = self.dims.per_image();
        &self.labels[i * len..(i + 1) * len]
    }
    /// Pixel count per class, sentinel excluded.
    pub fn class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.k];
        for &l in &self.labels {
            if (l as usize) < self.k {
                counts[l as usize] += 1;
            }
        }
        counts
    }
}

macro_rules! mask_newtype {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq)]
        pub struct $name(MaskGrid);

        impl $name {
            pub fn new(dims: Dims, k: usize, labels: Vec<u8>) -> Result<Self, TypeError> {
                MaskGrid::new(dims, k, labels).map(Self)
            }

            /// A mask where every pixel carries the sentinel.
            pub fn all_unannotated(dims: Dims, k: usize) -> Result<Self, TypeError> {
                Self::new(dims, k, vec![k as u8; dims.pixels()])
            }

            /// Stacks single-image masks of equal size.
            pub fn stack<'a>(
                k: usize,
                h: usize,
                w: usize,
                images: impl IntoIterator<Item = &'a [u8]>,
            ) -> Result<Self, TypeError> {
                let mut labels = Vec::new();
                let mut n = 0;
                for img in images {
                    if img.len() != h * w {
                        return Err(TypeError::ShapeMismatch(format!(
                            "mask image has {} pixels, expected {}",
                            img.len(),
                            h * w
                        )));
                    }
                    labels.extend_from_slice(img);
                    n += 1;
                }
                Self::new(Dims::new(n, h, w), k, labels)
            }

            pub fn into_labels(self) -> Vec<u8> {
                self.0.labels
            }
        }

        impl std::ops::Deref for $name {
            type Target = MaskGrid;
            fn deref(&self) -> &MaskGrid {
                &self.0
            }
        }
    };
}

mask_newtype!(LabelMask);
mask_newtype!(ComplementaryMask);

impl ComplementaryMask {
    /// Checks that no pixel's complementary label equals its ground-truth label.
    pub fn check_against(&self, gt: &LabelMask) -> Result<(), TypeError> {
        if self.dims() != gt.dims() || self.k() != gt.k() {
            return Err(TypeError::ShapeMismatch("complementary and label masks differ".into()));
        }
        for (index, (&c, &y)) in self.labels().iter().zip(gt.labels()).enumerate() {
            if (c as usize) < self.k() && c == y {
                return Err(TypeError::ComplementEqualsTruth { index, label: c });
            }
        }
        Ok(())
    }
}

/// Per-pixel class probabilities, `N × H × W × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxMap {
    dims: Dims,
    k: usize,
    probs: Vec<f64>,
}

impl SoftmaxMap {
    /// Validates that every pixel holds a probability vector (tolerance 1e-6).
    pub fn new(dims: Dims, k: usize, probs: Vec<f64>) -> Result<Self, TypeError> {
        let map = Self::new_unchecked(dims, k, probs)?;
        for (pixel, v) in map.probs.chunks(k).enumerate() {
            let sum: f64 = v.iter().sum();
            if v.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
                return Err(TypeError::NotAProbability { pixel, sum });
            }
        }
        Ok(map)
    }

    /// Shape-checked construction without the per-pixel probability check.
    pub(crate) fn new_unchecked(dims: Dims, k: usize, probs: Vec<f64>) -> Result<Self, TypeError> {
        if k < 2 || probs.len() != dims.pixels() * k {
            return Err(TypeError::ShapeMismatch(format!(
                "softmax map {}x{}x{}x{k} needs {} values, got {}",
                dims.n,
                dims.h,
                dims.w,
                dims.pixels() * k,
                probs.len()
            )));
        }
        Ok(Self { dims, k, probs })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
    #[inline]
    pub fn pixel(&self, idx: usize) -> &[f64] {
        &self.probs[idx * self.k..(idx + 1) * self.k]
    }

    /// Arg-max class per pixel; ties resolve to the lowest class index.
    pub fn argmax(&self) -> LabelMask {
        let labels = self
            .probs
            .chunks(self.k)
            .map(|v| {
                let mut best = 0;
                for (c, &p) in v.iter().enumerate() {
                    if p > v[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        LabelMask::new(self.dims, self.k, labels).expect("argmax labels are in range")
    }
}

/// How the per-class weights of the supervised term are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassWeights {
    /// `"inverse-frequency"` or `"uniform"`.
    Named(String),
    Explicit(Vec<f64>),
}

impl Default for ClassWeights {
    fn default() -> Self {
        ClassWeights::Named("inverse-frequency".into())
    }
}

impl ClassWeights {
    /// Resolves to a `k`-vector; `counts` are annotated pixel counts of the training split.
    pub fn resolve(&self, k: usize, counts: &[u64]) -> Result<Vec<f64>, TypeError> {
        let weights = match self {
            ClassWeights::Explicit(w) => w.clone(),
            ClassWeights::Named(n) if n == "uniform" => vec![1.0; k],
            ClassWeights::Named(n) if n == "inverse-frequency" => inverse_frequency_weights(counts),
            ClassWeights::Named(n) => {
                return Err(TypeError::InvalidLossConfig(format!("unknown class weighting {n:?}")))
            }
        };
        if weights.len() != k {
            return Err(TypeError::InvalidLossConfig(format!(
                "{} class weights for {k} classes",
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(TypeError::InvalidLossConfig("class weights must be positive".into()));
        }
        Ok(weights)
    }
}

/// Inverse pixel frequency, rescaled to mean one. Classes without pixels get
/// the largest weight observed among present classes (or 1 if none are present).
pub fn inverse_frequency_weights(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return vec![1.0; counts.len()];
    }
    let raw: Vec<Option<f64>> = counts
        .iter()
        .map(|&c| (c > 0).then(|| total as f64 / c as f64))
        .collect();
    let fill = raw.iter().flatten().cloned().fold(0.0, f64::max);
    let w: Vec<f64> = raw.into_iter().map(|v| v.unwrap_or(fill)).collect();
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    w.into_iter().map(|v| v / mean).collect()
}

/// Loss settings as written in experiment configs; class weights may be a
/// named rule that is resolved against the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSettings {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub class_weights: ClassWeights,
    #[serde(default)]
    pub use_focal: bool,
}

fn default_alpha() -> f64 {
    0.3
}
fn default_gamma() -> f64 {
    2.0
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            gamma: default_gamma(),
            class_weights: ClassWeights::default(),
            use_focal: false,
        }
    }
}

impl LossSettings {
    pub fn resolve(&self, k: usize, counts: &[u64]) -> Result<LossConfig, TypeError> {
        LossConfig::new(self.alpha, self.gamma, self.class_weights.resolve(k, counts)?, self.use_focal)
    }
}

/// Weights and switches of the combined objective `L_s + α·L_compl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub class_weights: Vec<f64>,
    pub use_focal: bool,
}

impl LossConfig {
    pub fn new(
        alpha: f64,
        gamma: f64,
        class_weights: Vec<f64>,
        use_focal: bool,
    ) -> Result<Self, TypeError> {
        let cfg = Self { alpha, gamma, class_weights, use_focal };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `α = 0.3`, `γ = 2`, unit class weights, focal term off.
    pub fn with_uniform_weights(k: usize) -> Self {
        Self { alpha: default_alpha(), gamma: default_gamma(), class_weights: vec![1.0; k], use_focal: false }
    }

    pub fn validate(&self) -> Result<(), TypeError> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(TypeError::InvalidLossConfig(format!("alpha = {} must be >= 0", self.alpha)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(TypeError::InvalidLossConfig(format!("gamma = {} must be >= 0", self.gamma)));
        }
        if self.class_weights.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(TypeError::InvalidLossConfig("class weights must be positive".into()));
        }
        Ok(())
    }
}

/// Predicted class pixel counts of one slide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideCounts {
    pub slide_id: String,
    pub class_counts: Vec<u64>,
}

/// A patient case: one diagnosis shared by all of its slides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub case_id: String,
    pub diagnosis: usize,
    pub slides: Vec<SlideCounts>,
}

impl Case {
    pub fn new(
        case_id: impl Into<String>,
        diagnosis: usize,
        k: usize,
        slides: Vec<SlideCounts>,
    ) -> Result<Self, TypeError> {
        if diagnosis >= k {
            return Err(TypeError::InvalidCase(format!("diagnosis {diagnosis} >= k = {k}")));
        }
        if slides.is_empty() {
            return Err(TypeError::InvalidCase("a case needs at least one slide".into()));
        }
        if slides.iter().any(|s| s.class_counts.len() != k) {
            return Err(TypeError::InvalidCase("slide count vectors must have length k".into()));
        }
        Ok(Self { case_id: case_id.into(), diagnosis, slides })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentinel_is_k_and_rejected_above() {
        let m = LabelMask::new(Dims::new(1, 1, 3), 3, vec![0, 2, 3]).unwrap();
        assert_eq!(m.sentinel(), 3);
        assert_eq!(m.class_at(2), None);
        assert_eq!(m.annotated_count(), 2);
        assert_eq!(
            LabelMask::new(Dims::new(1, 1, 2), 3, vec![0, 4]),
            Err(TypeError::LabelOutOfRange { index: 1, label: 4, k: 3 })
        );
    }

    #[test]
    fn complementary_mask_must_differ_from_truth() {
        let d = Dims::new(1, 1, 3);
        let gt = LabelMask::new(d, 3, vec![0, 1, 2]).unwrap();
        let ok = ComplementaryMask::new(d, 3, vec![1, 3, 0]).unwrap();
        assert!(ok.check_against(&gt).is_ok());
        let bad = ComplementaryMask::new(d, 3, vec![1, 1, 0]).unwrap();
        assert_eq!(
            bad.check_against(&gt),
            Err(TypeError::ComplementEqualsTruth { index: 1, label: 1 })
        );
    }

    #[test]
    fn softmax_map_validates_rows() {
        let d = Dims::new(1, 1, 2);
        assert!(SoftmaxMap::new(d, 2, vec![0.5, 0.5, 1.0, 0.0]).is_ok());
        assert!(matches!(
            SoftmaxMap::new(d, 2, vec![0.5, 0.5, 0.9, 0.0]),
            Err(TypeError::NotAProbability { pixel: 1, .. })
        ));
        let map = SoftmaxMap::new(d, 2, vec![0.5, 0.5, 0.2, 0.8]).unwrap();
        assert_eq!(map.argmax().labels(), &[0, 1]);
    }

    #[test]
    fn patch_batch_rejects_out_of_range() {
        assert!(PatchBatch::new(1, 1, 1, vec![0.5]).is_ok());
        assert!(matches!(
            PatchBatch::new(1, 1, 1, vec![1.5]),
            Err(TypeError::IntensityOutOfRange { .. })
        ));
        assert!(PatchBatch::new(0, 1, 1, vec![]).is_err());
    }

    #[test]
    fn inverse_frequency_has_mean_one() {
        let w = inverse_frequency_weights(&[10, 30, 60]);
        assert!((w.iter().sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
        assert!(w[0] > w[1] && w[1] > w[2]);
        let w = inverse_frequency_weights(&[0, 10]);
        assert_eq!(w, vec![1.0, 1.0]);
    }

    #[test]
    fn loss_config_validation() {
        assert!(LossConfig::with_uniform_weights(3).validate().is_ok());
        assert!(LossConfig::new(-1.0, 2.0, vec![1.0; 3], false).is_err());
        assert!(LossConfig::new(0.3, f64::NAN, vec![1.0; 3], false).is_err());
        assert!(LossConfig::new(0.3, 2.0, vec![1.0, 0.0], false).is_err());
        let resolved = LossSettings::default().resolve(2, &[10, 30]).unwrap();
        assert_eq!(resolved.class_weights, vec![1.5, 0.5]);
    }

    #[test]
    fn case_invariants() {
        let s = SlideCounts { slide_id: "s".into(), class_counts: vec![1, 2, 3] };
        assert!(Case::new("c", 1, 3, vec![s.clone()]).is_ok());
        assert!(Case::new("c", 3, 3, vec![s]).is_err());
        assert!(Case::new("c", 0, 3, vec![]).is_err());
    }
}
