//! Procedural handwritten-digit images for running without the MNIST files.
//!
//! Each digit is a set of stroke skeletons in the unit square. A sample
//! jitters the control points, applies a random affine transform, and renders
//! anti-aliased strokes of random thickness into the central 20×20 box of a
//! 28×28 canvas, the same framing MNIST uses.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::idx::IdxImages;
use crate::rng::rng_for;

pub const SIDE: usize = 28;

type Stroke = Vec<(f64, f64)>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64, steps: usize) -> Stroke {
    (0..=steps)
        .map(|i| {
            let a = (from_deg + (to_deg - from_deg) * i as f64 / steps as f64) * PI / 180.0;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

fn line(points: &[(f64, f64)]) -> Stroke {
    points.to_vec()
}

fn skeleton(digit: u8) -> Vec<Stroke> {
    match digit {
        0 => vec![arc(0.5, 0.5, 0.28, 0.4, 0.0, 360.0, 24)],
        1 => vec![line(&[(0.36, 0.24), (0.52, 0.1), (0.52, 0.9)])],
        2 => {
            let mut s = arc(0.5, 0.33, 0.24, 0.2, -170.0, 20.0, 12);
            s.extend([(0.24, 0.88), (0.8, 0.88)]);
            vec![s]
        }
        3 => {
            let mut s = arc(0.48, 0.31, 0.22, 0.19, -160.0, 90.0, 14);
            s.extend(arc(0.48, 0.69, 0.25, 0.2, -90.0, 160.0, 14));
            vec![s]
        }
        4 => vec![
            line(&[(0.26, 0.1), (0.22, 0.58), (0.8, 0.58)]),
            line(&[(0.66, 0.12), (0.66, 0.92)]),
        ],
        5 => {
            let mut s = line(&[(0.74, 0.12), (0.32, 0.12), (0.3, 0.48)]);
            s.extend(arc(0.47, 0.66, 0.25, 0.21, -130.0, 150.0, 14));
            vec![s]
        }
        6 => vec![
            arc(0.62, 0.6, 0.35, 0.5, -110.0, -180.0, 8),
            arc(0.5, 0.67, 0.22, 0.2, 0.0, 360.0, 20),
        ],
        7 => vec![line(&[(0.22, 0.12), (0.78, 0.12), (0.42, 0.9)])],
        8 => vec![
            arc(0.5, 0.3, 0.18, 0.18, 0.0, 360.0, 18),
            arc(0.5, 0.68, 0.22, 0.21, 0.0, 360.0, 20),
        ],
        9 => vec![
            arc(0.5, 0.33, 0.2, 0.19, 0.0, 360.0, 20),
            line(&[(0.7, 0.33), (0.64, 0.9)]),
        ],
        _ => panic!("digit out of range"),
    }
}

fn seg_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Renders one digit into a 28×28 byte image.
pub fn render_digit<R: Rng>(digit: u8, rng: &mut R) -> Vec<u8> {
    let jitter = Normal::new(0.0, 0.022).expect("valid sigma");
    let angle = rng.gen_range(-15.0f64..15.0).to_radians();
    let (sx, sy) = (rng.gen_range(0.78..1.04), rng.gen_range(0.86..1.04));
    let shear = rng.gen_range(-0.25..0.25);
    let (tx, ty) = (rng.gen_range(-0.07..0.07), rng.gen_range(-0.06..0.06));
    let (cos, sin) = (angle.cos(), angle.sin());
    let radius = rng.gen_range(0.9..1.8);
    let peak = rng.gen_range(0.85..1.0);

    let to_pixel = |(u, v): (f64, f64)| -> (f64, f64) {
        let (x, y) = ((u - 0.5) * sx + shear * (v - 0.5), (v - 0.5) * sy);
        let (x, y) = (cos * x - sin * y + tx, sin * x + cos * y + ty);
        (14.0 + 20.0 * x, 14.0 + 20.0 * y)
    };
    let strokes: Vec<Vec<(f64, f64)>> = skeleton(digit)
        .into_iter()
        .map(|s| {
            s.into_iter()
                .map(|(u, v)| to_pixel((u + jitter.sample(rng), v + jitter.sample(rng))))
                .collect()
        })
        .collect();

    let mut out = vec![0u8; SIDE * SIDE];
    for y in 0..SIDE {
        for x in 0..SIDE {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut d = f64::INFINITY;
            for s in &strokes {
                for w in s.windows(2) {
                    d = d.min(seg_distance(px, py, w[0], w[1]));
                }
            }
            let v = ((radius + 0.6 - d) / 1.2).clamp(0.0, 1.0) * peak;
            out[y * SIDE + x] = (v * 255.0).round() as u8;
        }
    }
    out
}

/// Generates `count` labelled digits; labels are uniform over 0..=9.
pub fn generate(count: usize, seed: u64) -> (IdxImages, Vec<u8>) {
    let mut rng = rng_for(seed, &[0x5d16_1750]);
    let mut pixels = Vec::with_capacity(count * SIDE * SIDE);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let digit = rng.gen_range(0..10u8);
        pixels.extend(render_digit(digit, &mut rng));
        labels.push(digit);
    }
    (IdxImages { count, rows: SIDE, cols: SIDE, pixels }, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let (a, la) = generate(20, 3);
        let (b, lb) = generate(20, 3);
        assert_eq!((a, la), (b, lb));
        let (c, _) = generate(20, 4);
        assert_ne!(generate(20, 3).0, c);
    }

    #[test]
    fn digits_have_ink_inside_the_frame() {
        let (imgs, labels) = generate(200, 1);
        for i in 0..imgs.count {
            let img = imgs.image(i);
            let ink = img.iter().filter(|&&v| v > 127).count();
            assert!(ink > 25 && ink < 400, "digit {} has {ink} ink pixels", labels[i]);
            // Border rows stay empty, as in MNIST.
            assert!(img[..SIDE].iter().all(|&v| v == 0));
        }
        let mut seen = [false; 10];
        labels.iter().for_each(|&l| seen[l as usize] = true);
        assert!(seen.iter().all(|&s| s));
    }
}
