//! Lαβ color space (log-LMS decorrelated axes) and statistics-based color
//! augmentation.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SlideError;
use crate::rng::rng_for;

const RGB_TO_LMS: [[f64; 3]; 3] = [
    [0.3811, 0.5783, 0.0402],
    [0.1967, 0.7244, 0.0782],
    [0.0241, 0.1288, 0.8444],
];

/// Floor applied to LMS responses before the logarithm.
pub const LMS_FLOOR: f64 = 1e-6;

/// Case std below this on any axis cannot be normalized.
pub const MIN_CASE_STD: f64 = 1e-6;

type Mat3 = [[f64; 3]; 3];

fn mul(a: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| a[r][0] * v[0] + a[r][1] * v[1] + a[r][2] * v[2])
}

fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = (0..3).map(|i| a[r][i] * b[i][c]).sum();
        }
    }
    out
}

fn invert(m: &Mat3) -> Mat3 {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            // Cofactor of (c, r), i.e. the adjugate.
            let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
            let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
            out[r][c] = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / det;
        }
    }
    out
}

fn log_lms_to_lab() -> Mat3 {
    let (a, b, c) = (1.0 / 3f64.sqrt(), 1.0 / 6f64.sqrt(), 1.0 / 2f64.sqrt());
    matmul(&[[a, 0.0, 0.0], [0.0, b, 0.0], [0.0, 0.0, c]], &[[1.0, 1.0, 1.0], [1.0, 1.0, -2.0], [1.0, -1.0, 0.0]])
}

struct Chain {
    lab_from_log: Mat3,
    log_from_lab: Mat3,
    rgb_from_lms: Mat3,
}

fn chain() -> &'static Chain {
    static CHAIN: std::sync::OnceLock<Chain> = std::sync::OnceLock::new();
    CHAIN.get_or_init(|| {
        let lab_from_log = log_lms_to_lab();
        Chain { log_from_lab: invert(&lab_from_log), lab_from_log, rgb_from_lms: invert(&RGB_TO_LMS) }
    })
}

pub fn rgb_to_lab_pixel(rgb: [f64; 3]) -> [f64; 3] {
    let lms = mul(&RGB_TO_LMS, rgb).map(|v| v.max(LMS_FLOOR).log10());
    mul(&chain().lab_from_log, lms)
}

/// Inverse of [`rgb_to_lab_pixel`]; the result is not clamped.
pub fn lab_to_rgb_pixel(lab: [f64; 3]) -> [f64; 3] {
    let c = chain();
    let lms = mul(&c.log_from_lab, lab).map(|v| 10f64.powf(v));
    mul(&c.rgb_from_lms, lms)
}

/// Converts an interleaved RGB image to interleaved Lαβ.
pub fn rgb_to_lab(rgb: &[f32]) -> Vec<f64> {
    rgb.chunks_exact(3)
        .flat_map(|p| rgb_to_lab_pixel([p[0] as f64, p[1] as f64, p[2] as f64]))
        .collect()
}

/// Converts interleaved Lαβ back to RGB clamped to `[0, 1]`.
pub fn lab_to_rgb(lab: &[f64]) -> Vec<f32> {
    lab.chunks_exact(3)
        .flat_map(|p| lab_to_rgb_pixel([p[0], p[1], p[2]]).map(|v| v.clamp(0.0, 1.0) as f32))
        .collect()
}

/// Per-axis mean and standard deviation in Lαβ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ColorStats {
    /// Population statistics over the Lαβ pixels of one or more RGB images.
    pub fn of_images<'a>(images: impl IntoIterator<Item = &'a [f32]>) -> ColorStats {
        let lab: Vec<f64> = images.into_iter().flat_map(rgb_to_lab).collect();
        Self::of_lab(&lab)
    }

    pub fn of_lab(lab: &[f64]) -> ColorStats {
        let n = (lab.len() / 3).max(1) as f64;
        let mut mean = [0.0; 3];
        for p in lab.chunks_exact(3) {
            for a in 0..3 {
                mean[a] += p[a];
            }
        }
        mean = mean.map(|m| m / n);
        let mut var = [0.0; 3];
        for p in lab.chunks_exact(3) {
            for a in 0..3 {
                var[a] += (p[a] - mean[a]).powi(2);
            }
        }
        ColorStats { mean, std: var.map(|v| (v / n).sqrt()) }
    }
}

/// Gaussian fits over per-case color statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorPopulation {
    /// Distribution of case means: (mean, std) per axis.
    pub mean: ColorStats,
    /// Distribution of case stds: (mean, std) per axis.
    pub std: ColorStats,
}

impl ColorPopulation {
    pub fn fit(cases: &[ColorStats]) -> ColorPopulation {
        let means: Vec<f64> = cases.iter().flat_map(|c| c.mean).collect();
        let stds: Vec<f64> = cases.iter().flat_map(|c| c.std).collect();
        ColorPopulation { mean: ColorStats::of_lab(&means), std: ColorStats::of_lab(&stds) }
    }

    /// Draws target statistics. Drawn stds are floored at a tenth of the
    /// population's mean std.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> ColorStats {
        let gauss = |mu: f64, sigma: f64, rng: &mut R| {
            if sigma > 0.0 {
                Normal::new(mu, sigma).expect("finite sigma").sample(rng)
            } else {
                mu
            }
        };
        let mut out = ColorStats { mean: [0.0; 3], std: [0.0; 3] };
        for a in 0..3 {
            out.mean[a] = gauss(self.mean.mean[a], self.mean.std[a], rng);
            let s = gauss(self.std.mean[a], self.std.std[a], rng);
            out.std[a] = s.max(0.1 * self.std.mean[a]);
        }
        out
    }
}

/// Maps the patch's Lαβ values from the case statistics onto `target`.
pub fn lab_transfer(patch: &[f32], case: &ColorStats, target: &ColorStats) -> Result<Vec<f32>, SlideError> {
    if let Some(axis) = (0..3).find(|&a| !(case.std[a] >= MIN_CASE_STD)) {
        return Err(SlideError::DegenerateStd { axis, std: case.std[axis] });
    }
    let mut lab = rgb_to_lab(patch);
    for p in lab.chunks_exact_mut(3) {
        for a in 0..3 {
            p[a] = (p[a] - case.mean[a]) / case.std[a] * target.std[a] + target.mean[a];
        }
    }
    Ok(lab_to_rgb(&lab))
}

/// Normalizes with the case statistics and rescales to statistics drawn
/// from the population.
pub fn lab_color_augment(
    patch: &[f32],
    case: &ColorStats,
    population: &ColorPopulation,
    seed: u64,
) -> Result<Vec<f32>, SlideError> {
    let target = population.draw(&mut rng_for(seed, &[0xc0]));
    lab_transfer(patch, case, &target)
}
