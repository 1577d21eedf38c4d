//! The segmentation network and its numeric building blocks.

pub mod checkpoint;
pub mod layers;
pub mod real;
pub mod unet;

use thiserror::Error;

use crate::types::{Dims, LabelMask, PatchBatch, SoftmaxMap};
pub use layers::{Act, ConvGrad};
pub use real::Real;
pub use unet::{ForwardCache, ModelConfig, UNet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("input {h}x{w} is not divisible by {divisor}")]
    IndivisibleSpatialSize { h: usize, w: usize, divisor: usize },
    #[error("input has {got} channels, model expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("non-finite logit at index {0}")]
    NonFiniteLogits(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Pre-softmax class scores, `N × H × W × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub dims: Dims,
    pub k: usize,
    pub values: Vec<f64>,
}

impl Logits {
    pub fn from_act<T: Real>(act: &Act<T>) -> Self {
        Self {
            dims: Dims::new(act.n, act.h, act.w),
            k: act.c,
            values: act.data.iter().map(|v| v.as_f64()).collect(),
        }
    }
}

/// Per-pixel softmax, computed with the max-shift for stability.
pub fn softmax_map(logits: &Logits) -> Result<SoftmaxMap, ModelError> {
    if let Some(i) = logits.values.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteLogits(i));
    }
    let k = logits.k;
    let mut probs = Vec::with_capacity(logits.values.len());
    for z in logits.values.chunks(k) {
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = probs.len();
        let mut sum = 0.0;
        for &v in z {
            let e = (v - max).exp();
            sum += e;
            probs.push(e);
        }
        for p in &mut probs[start..] {
            *p /= sum;
        }
    }
    SoftmaxMap::new_unchecked(logits.dims, k, probs)
        .map_err(|e| ModelError::InvalidConfig(e.to_string()))
}

impl<T: Real> Act<T> {
    pub fn from_batch(batch: &PatchBatch) -> Self {
        Act::from_vec(
            batch.n(),
            batch.side(),
            batch.side(),
            batch.channels(),
            batch.data().iter().map(|&v| T::from_f64_lossy(v as f64)).collect(),
        )
    }
}

/// Anything that turns image patches into per-pixel class predictions.
pub trait Segmenter: Sync {
    fn num_classes(&self) -> usize;
    fn predict(&self, batch: &PatchBatch) -> Result<LabelMask, ModelError>;
}

impl<T: Real> Segmenter for UNet<T> {
    fn num_classes(&self) -> usize {
        self.config().num_classes
    }

    fn predict(&self, batch: &PatchBatch) -> Result<LabelMask, ModelError> {
        let logits = self.forward(&Act::from_batch(batch))?;
        let k = logits.c;
        let labels = logits
            .data
            .chunks(k)
            .map(|z| {
                let mut best = 0;
                for c in 1..k {
                    if z[c] > z[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        LabelMask::new(batch.dims(), k, labels).map_err(|e| ModelError::InvalidConfig(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(values: Vec<f64>, k: usize) -> Logits {
        Logits { dims: Dims::new(1, 1, values.len() / k), k, values }
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_map(&logits(vec![0.0; 6], 3)).unwrap();
        assert!(s.probs().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));

        let s = softmax_map(&logits(vec![20.0, 0.0, 0.0], 3)).unwrap();
        assert!((s.probs()[0] - 1.0).abs() < 1e-8);

        let a = softmax_map(&logits(vec![0.3, -1.2, 2.5], 3)).unwrap();
        let b = softmax_map(&logits(vec![100.3, 98.8, 102.5], 3)).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(
            softmax_map(&logits(vec![0.0, f64::NAN], 2)).unwrap_err(),
            ModelError::NonFiniteLogits(1)
        );
    }

    #[test]
    fn softmax_output_is_a_valid_map() {
        let s = softmax_map(&logits(vec![700.0, -700.0, 3.0, 1.0, 2.0, 3.0], 3)).unwrap();
        assert!(SoftmaxMap::new(s.dims(), 3, s.probs().to_vec()).is_ok());
    }
}
