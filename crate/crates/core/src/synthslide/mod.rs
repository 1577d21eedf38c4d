//! Synthetic stand-in for stained tissue slides.
//!
//! A slide shows blob-shaped tumor regions of its case's diagnosis over an
//! "other" background. Tumor classes differ in stripe texture (period and
//! orientation); their separation is set by `texture_distance`. Each case
//! gets its own color cast so that color augmentation has something to do.

pub mod color;
pub mod corpus;
pub mod geometry;

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use color::{lab_color_augment, lab_to_rgb, rgb_to_lab, ColorPopulation, ColorStats};
pub use corpus::{
    build_corpus, load_corpus, load_slide, save_slide, write_corpus, write_rgb_png, write_rgba_png, Corpus, CorpusConfig,
    CorpusRole, MissingSlide, SyntheticCase,
};
pub use geometry::Dihedral;

use crate::rng::rng_for;
use crate::types::{Dims, LabelMask, PatchBatch};

pub const CLASS_A: u8 = 0;
pub const CLASS_B: u8 = 1;
pub const CLASS_OTHER: u8 = 2;
pub const NUM_CLASSES: usize = 3;
pub const CHANNELS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum SlideError {
    #[error("patch size {patch} does not fit in a {height}x{width} slide")]
    PatchLargerThanSlide { patch: usize, height: usize, width: usize },
    #[error("stride must be at least one patch length")]
    InvalidStride,
    #[error("case std {std} on axis {axis} is too small to normalize")]
    DegenerateStd { axis: usize, std: f64 },
    #[error("invalid slide config: {0}")]
    InvalidConfig(String),
    #[error("io: {0}")]
    Io(String),
    #[error("bad corpus file {path}: {reason}")]
    Format { path: String, reason: String },
}

impl From<std::io::Error> for SlideError {
    fn from(e: std::io::Error) -> Self {
        SlideError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Diagnosis {
    ClassA,
    ClassB,
}

impl Diagnosis {
    pub fn tumor_class(self) -> u8 {
        match self {
            Diagnosis::ClassA => CLASS_A,
            Diagnosis::ClassB => CLASS_B,
        }
    }

    /// The tumor class this diagnosis rules out.
    pub fn complement_class(self) -> u8 {
        match self {
            Diagnosis::ClassA => CLASS_B,
            Diagnosis::ClassB => CLASS_A,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Diagnosis::ClassA => "class-a",
            Diagnosis::ClassB => "class-b",
        }
    }

    pub fn parse(s: &str) -> Option<Diagnosis> {
        match s {
            "class-a" => Some(Diagnosis::ClassA),
            "class-b" => Some(Diagnosis::ClassB),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub fn texture_distance(self) -> f64 {
        match self {
            Difficulty::Easy => 1.0,
            Difficulty::Medium => 0.5,
            Difficulty::Hard => 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextureParams {
    /// Range the tumor pixel share is drawn from.
    pub tumor_share: (f64, f64),
    /// 0 makes both tumor classes look alike, 1 is maximally separated.
    pub texture_distance: f64,
    /// Std of the per-case multiplicative color cast.
    pub color_cast: f64,
    /// Std of per-pixel noise.
    pub noise: f64,
    /// Number of bumps in the blob field.
    pub blobs: usize,
}

impl Default for TextureParams {
    fn default() -> Self {
        Self { tumor_share: (0.2, 0.5), texture_distance: 1.0, color_cast: 0.06, noise: 0.04, blobs: 6 }
    }
}

impl TextureParams {
    pub fn for_difficulty(d: Difficulty) -> Self {
        Self { texture_distance: d.texture_distance(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SlideError> {
        let (lo, hi) = self.tumor_share;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(SlideError::InvalidConfig(format!("tumor_share ({lo}, {hi}) is not a range in [0, 1]")));
        }
        if !(0.0..=1.0).contains(&self.texture_distance) {
            return Err(SlideError::InvalidConfig("texture_distance must be in [0, 1]".into()));
        }
        if !(self.color_cast >= 0.0 && self.noise >= 0.0) || self.blobs == 0 {
            return Err(SlideError::InvalidConfig("color_cast and noise must be >= 0, blobs >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSlide {
    pub case_id: String,
    pub diagnosis: Diagnosis,
    pub height: usize,
    pub width: usize,
    /// Interleaved RGB in `[0, 1]`, quantized to multiples of 1/255.
    pub image: Vec<f32>,
    pub gt_mask: Vec<u8>,
}

impl SyntheticSlide {
    pub fn tumor_share(&self) -> f64 {
        let tumor = self.gt_mask.iter().filter(|&&c| c != CLASS_OTHER).count();
        tumor as f64 / self.gt_mask.len() as f64
    }
}

struct StripeTexture {
    period: f64,
    angle: f64,
}

fn stripe_texture(class: u8, distance: f64, jitter: f64) -> StripeTexture {
    let (period, angle) = if class == CLASS_A { (5.0, 0.0) } else { (5.0 + 7.0 * distance, 90.0 * distance) };
    StripeTexture { period, angle: (angle + jitter).to_radians() }
}

fn smooth_field<R: Rng>(size: usize, bumps: usize, rng: &mut R) -> Vec<f64> {
    let s = size as f64;
    let params: Vec<(f64, f64, f64, f64)> = (0..bumps)
        .map(|_| {
            let sigma = rng.gen_range(0.08..0.2) * s;
            (rng.gen_range(0.0..s), rng.gen_range(0.0..s), sigma, rng.gen_range(0.6..1.0))
        })
        .collect();
    let wobble = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
    let mut field = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64, y as f64);
            let mut v = 0.08 * ((fx / s * 9.0 + wobble.0).sin() + (fy / s * 7.0 + wobble.1).sin());
            for &(cx, cy, sigma, amp) in &params {
                v += amp * (-((fx - cx).powi(2) + (fy - cy).powi(2)) / (2.0 * sigma * sigma)).exp();
            }
            field[y * size + x] = v;
        }
    }
    field
}

/// Generates one square slide.
pub fn generate_slide(
    seed: u64,
    case_id: &str,
    diagnosis: Diagnosis,
    size: usize,
    params: &TextureParams,
) -> SyntheticSlide {
    assert!(size > 0, "slide size must be positive");
    let mut rng = rng_for(seed, &[0x511de]);
    let n = size * size;

    let field = smooth_field(size, params.blobs, &mut rng);
    let (lo, hi) = params.tumor_share;
    let target = rng.gen_range(lo..=hi);
    let lo_count = (lo * n as f64).ceil() as usize;
    let hi_count = ((hi * n as f64).floor() as usize).max(lo_count);
    let tumor_count = ((target * n as f64).round() as usize).clamp(lo_count, hi_count).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| field[b].total_cmp(&field[a]).then(a.cmp(&b)));
    let tumor = diagnosis.tumor_class();
    let mut gt_mask = vec![CLASS_OTHER; n];
    for &i in &order[..tumor_count] {
        gt_mask[i] = tumor;
    }

    let texture = stripe_texture(tumor, params.texture_distance, rng.gen_range(-20.0..20.0));
    let phase = rng.gen_range(0.0..2.0 * PI);
    let cast_dist = Normal::new(0.0, params.color_cast.max(1e-12)).expect("finite");
    let cast: [f64; 3] = [0, 1, 2].map(|_| 1.0 + cast_dist.sample(&mut rng));
    let noise = Normal::new(0.0, params.noise.max(1e-12)).expect("finite");
    let tumor_rgb = [0.52, 0.28, 0.58];
    let other_rgb = [0.9, 0.68, 0.8];
    let (sin, cos) = texture.angle.sin_cos();
    let background = smooth_field(size, 4, &mut rng);
    let bg_max = background.iter().cloned().fold(f64::MIN, f64::max).max(1e-12);

    let mut image = Vec::with_capacity(n * CHANNELS);
    for y in 0..size {
        for x in 0..size {
            let i = y * size + x;
            let shade = if gt_mask[i] == CLASS_OTHER {
                0.88 + 0.12 * background[i] / bg_max
            } else {
                let u = x as f64 * cos + y as f64 * sin;
                0.72 + 0.28 * (0.5 + 0.5 * (2.0 * PI * u / texture.period + phase).sin())
            };
            let base = if gt_mask[i] == CLASS_OTHER { other_rgb } else { tumor_rgb };
            for c in 0..CHANNELS {
                let v = (base[c] * shade * cast[c] + noise.sample(&mut rng)).clamp(0.0, 1.0);
                image.push(((v * 255.0).round() / 255.0) as f32);
            }
        }
    }
    SyntheticSlide { case_id: case_id.to_string(), diagnosis, height: size, width: size, image, gt_mask }
}

/// Patches cut from a slide on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPatches {
    /// Top-left corners `(y, x)`, row-major.
    pub coords: Vec<(usize, usize)>,
    pub images: PatchBatch,
    pub masks: LabelMask,
}

/// Number of grid positions along an axis of `len` pixels.
pub fn grid_positions(len: usize, patch: usize, stride: usize) -> usize {
    if patch > len {
        0
    } else {
        (len - patch) / (stride * patch) + 1
    }
}

/// Cuts fully contained `patch × patch` tiles whose corners lie at
/// multiples of `stride · patch`.
pub fn grid_patches(slide: &SyntheticSlide, patch: usize, stride: usize) -> Result<GridPatches, SlideError> {
    if stride == 0 {
        return Err(SlideError::InvalidStride);
    }
    if patch == 0 || patch > slide.height || patch > slide.width {
        return Err(SlideError::PatchLargerThanSlide { patch, height: slide.height, width: slide.width });
    }
    let step = stride * patch;
    let (ny, nx) = (grid_positions(slide.height, patch, stride), grid_positions(slide.width, patch, stride));
    let mut coords = Vec::with_capacity(ny * nx);
    let mut pixels = Vec::with_capacity(ny * nx * patch * patch * CHANNELS);
    let mut labels = Vec::with_capacity(ny * nx * patch * patch);
    for gy in 0..ny {
        for gx in 0..nx {
            let (y0, x0) = (gy * step, gx * step);
            coords.push((y0, x0));
            for y in y0..y0 + patch {
                let row = y * slide.width;
                pixels.extend_from_slice(&slide.image[(row + x0) * CHANNELS..(row + x0 + patch) * CHANNELS]);
                labels.extend_from_slice(&slide.gt_mask[row + x0..row + x0 + patch]);
            }
        }
    }
    let n = coords.len();
    let images = PatchBatch::new(n, patch, CHANNELS, pixels).map_err(|e| SlideError::InvalidConfig(e.to_string()))?;
    let masks = LabelMask::new(Dims::new(n, patch, patch), NUM_CLASSES, labels)
        .map_err(|e| SlideError::InvalidConfig(e.to_string()))?;
    Ok(GridPatches { coords, images, masks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank(size: usize) -> SyntheticSlide {
        SyntheticSlide {
            case_id: "x".into(),
            diagnosis: Diagnosis::ClassA,
            height: size,
            width: size,
            image: vec![0.0; size * size * 3],
            gt_mask: vec![CLASS_OTHER; size * size],
        }
    }

    #[test]
    fn grid_counts() {
        assert_eq!(grid_positions(3400, 340, 10), 1);
        assert_eq!(grid_positions(1000, 100, 1), 10);
        assert_eq!(grid_positions(999, 100, 1), 9);
        let g = grid_patches(&blank(100), 10, 1).unwrap();
        assert_eq!(g.coords.len(), 100);
        assert_eq!(g.coords[11], (10, 10));
        assert_eq!(grid_patches(&blank(99), 10, 2).unwrap().coords.len(), 25);
    }

    #[test]
    fn grid_errors() {
        assert_eq!(
            grid_patches(&blank(8), 9, 1).unwrap_err(),
            SlideError::PatchLargerThanSlide { patch: 9, height: 8, width: 8 }
        );
        assert_eq!(grid_patches(&blank(8), 4, 0).unwrap_err(), SlideError::InvalidStride);
    }

    #[test]
    fn patches_copy_the_right_pixels() {
        let mut s = blank(8);
        for (i, v) in s.image.iter_mut().enumerate() {
            *v = (i % 251) as f32 / 255.0;
        }
        for (i, m) in s.gt_mask.iter_mut().enumerate() {
            *m = (i % 3) as u8;
        }
        let g = grid_patches(&s, 4, 1).unwrap();
        let (y0, x0) = g.coords[3];
        assert_eq!((y0, x0), (4, 4));
        let p = g.images.patch(3);
        for y in 0..4 {
            for x in 0..4 {
                let src = (y0 + y) * 8 + x0 + x;
                assert_eq!(g.masks.image(3)[y * 4 + x], s.gt_mask[src]);
                assert_eq!(&p[(y * 4 + x) * 3..(y * 4 + x) * 3 + 3], &s.image[src * 3..src * 3 + 3]);
            }
        }
    }

    #[test]
    fn slides_respect_diagnosis_and_share() {
        let params = TextureParams::default();
        for (seed, dx) in [(1, Diagnosis::ClassA), (2, Diagnosis::ClassB), (3, Diagnosis::ClassA)] {
            let s = generate_slide(seed, "c", dx, 96, &params);
            assert!(!s.gt_mask.contains(&dx.complement_class()));
            let share = s.tumor_share();
            assert!((0.2..=0.5).contains(&share), "share {share}");
            assert!(s.image.iter().all(|v| (0.0..=1.0).contains(v) && (v * 255.0 - (v * 255.0).round()).abs() < 1e-3));
        }
    }

    #[test]
    fn slides_are_seeded() {
        let p = TextureParams::default();
        assert_eq!(generate_slide(4, "c", Diagnosis::ClassB, 48, &p), generate_slide(4, "c", Diagnosis::ClassB, 48, &p));
        assert_ne!(generate_slide(4, "c", Diagnosis::ClassB, 48, &p), generate_slide(5, "c", Diagnosis::ClassB, 48, &p));
    }

    #[test]
    fn narrow_share_range_is_hit() {
        let p = TextureParams { tumor_share: (0.3, 0.3), ..TextureParams::default() };
        let s = generate_slide(9, "c", Diagnosis::ClassA, 50, &p);
        assert_eq!(s.tumor_share(), 0.3);
    }

    #[test]
    fn diagnosis_names_round_trip() {
        for d in [Diagnosis::ClassA, Diagnosis::ClassB] {
            assert_eq!(Diagnosis::parse(d.as_str()), Some(d));
            assert_ne!(d.tumor_class(), d.complement_class());
        }
    }
}
