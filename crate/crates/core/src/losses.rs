//! Supervised and complementary segmentation losses.
//!
//! Every loss is a mean over the pixels that carry the relevant label and
//! comes with an analytic gradient with respect to the pre-softmax logits.
//! Gradients are laid out like the softmax map (`N × H × W × k`).

use thiserror::Error;

use crate::transition::TransitionMatrix;
use crate::types::{ComplementaryMask, LabelMask, LossConfig, SoftmaxMap};

/// Lower clamp applied to a probability before taking its logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// A mean loss and the number of pixels it averages over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub pixel_count: usize,
}

impl LossValue {
    pub const ZERO: LossValue = LossValue { value: 0.0, pixel_count: 0 };

    fn mean(sum: f64, count: usize) -> Self {
        if count == 0 {
            Self::ZERO
        } else {
            Self { value: sum / count as f64, pixel_count: count }
        }
    }
}

/// The parts of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub supervised: LossValue,
    pub complementary: LossValue,
    pub total: LossValue,
}

fn check_mask(y_hat: &SoftmaxMap, dims: crate::types::Dims, k: usize) -> Result<(), LossError> {
    if y_hat.dims() != dims {
        return Err(LossError::ShapeMismatch(format!(
            "prediction {:?} vs mask {:?}",
            y_hat.dims(),
            dims
        )));
    }
    if y_hat.k() != k {
        return Err(LossError::ShapeMismatch(format!(
            "prediction has {} classes, mask has {k}",
            y_hat.k()
        )));
    }
    Ok(())
}

fn check_weights(y_hat: &SoftmaxMap, w: &[f64]) -> Result<(), LossError> {
    if w.len() != y_hat.k() {
        return Err(LossError::ShapeMismatch(format!(
            "{} class weights for {} classes",
            w.len(),
            y_hat.k()
        )));
    }
    Ok(())
}

fn check_q(y_hat: &SoftmaxMap, q: &TransitionMatrix) -> Result<(), LossError> {
    if q.k() != y_hat.k() {
        return Err(LossError::ShapeMismatch(format!(
            "transition matrix has k = {}, prediction has {}",
            q.k(),
            y_hat.k()
        )));
    }
    Ok(())
}

/// Class-weighted cross-entropy averaged over annotated pixels.
pub fn masked_weighted_ce(
    y_hat: &SoftmaxMap,
    y: &LabelMask,
    class_weights: &[f64],
) -> Result<LossValue, LossError> {
    supervised_pass(y_hat, y, class_weights, None)
}

/// [`masked_weighted_ce`] plus its gradient with respect to the logits.
pub fn masked_weighted_ce_with_grad(
    y_hat: &SoftmaxMap,
    y: &LabelMask,
    class_weights: &[f64],
) -> Result<(LossValue, Vec<f64>), LossError> {
    let mut grad = vec![0.0; y_hat.probs().len()];
    let loss = supervised_pass(y_hat, y, class_weights, Some((&mut grad, 1.0)))?;
    Ok((loss, grad))
}

fn supervised_pass(
    y_hat: &SoftmaxMap,
    y: &LabelMask,
    w: &[f64],
    grad: Option<(&mut [f64], f64)>,
) -> Result<LossValue, LossError> {
    check_mask(y_hat, y.dims(), y.k())?;
    check_weights(y_hat, w)?;
    let k = y_hat.k();
    let mut sum = 0.0;
    let mut count = 0usize;
    for idx in 0..y.dims().pixels() {
        if let Some(c) = y.class_at(idx) {
            let p = y_hat.pixel(idx)[c];
            sum += w[c] * -p.max(PROB_FLOOR).ln();
            count += 1;
        }
    }
    let loss = LossValue::mean(sum, count);
    if let Some((grad, scale)) = grad {
        if count > 0 {
            let inv = scale / count as f64;
            for idx in 0..y.dims().pixels() {
                let Some(c) = y.class_at(idx) else { continue };
                let probs = y_hat.pixel(idx);
                if probs[c] < PROB_FLOOR {
                    continue;
                }
                let g = &mut grad[idx * k..(idx + 1) * k];
                let wc = w[c] * inv;
                for (m, gm) in g.iter_mut().enumerate() {
                    let target = if m == c { 1.0 } else { 0.0 };
                    *gm += wc * (probs[m] - target);
                }
            }
        }
    }
    Ok(loss)
}

/// Complementary loss: mean over labelled pixels of `−log (Qᵀŷ)_j` where `j`
/// is the pixel's complementary label.
pub fn complementary_loss(
    y_hat: &SoftmaxMap,
    y_bar: &ComplementaryMask,
    q: &TransitionMatrix,
) -> Result<LossValue, LossError> {
    complementary_pass(y_hat, y_bar, q, 0.0, None)
}

pub fn complementary_loss_with_grad(
    y_hat: &SoftmaxMap,
    y_bar: &ComplementaryMask,
    q: &TransitionMatrix,
) -> Result<(LossValue, Vec<f64>), LossError> {
    let mut grad = vec![0.0; y_hat.probs().len()];
    let loss = complementary_pass(y_hat, y_bar, q, 0.0, Some((&mut grad, 1.0)))?;
    Ok((loss, grad))
}

/// Focal complementary loss with per-pixel term `(1 − s)^γ · (−log s)`,
/// `s = (Qᵀŷ)_j`. With `gamma == 0` this is [`complementary_loss`].
pub fn focal_complementary_loss(
    y_hat: &SoftmaxMap,
    y_bar: &ComplementaryMask,
    q: &TransitionMatrix,
    gamma: f64,
) -> Result<LossValue, LossError> {
    complementary_pass(y_hat, y_bar, q, gamma, None)
}

pub fn focal_complementary_loss_with_grad(
    y_hat: &SoftmaxMap,
    y_bar: &ComplementaryMask,
    q: &TransitionMatrix,
    gamma: f64,
) -> Result<(LossValue, Vec<f64>), LossError> {
    let mut grad = vec![0.0; y_hat.probs().len()];
    let loss = complementary_pass(y_hat, y_bar, q, gamma, Some((&mut grad, 1.0)))?;
    Ok((loss, grad))
}

/// Value and derivative in `s` of `(1 − s)^γ · (−ln s)` with `s` clamped to `[PROB_FLOOR, 1]`.
/// The derivative is zero where the lower clamp is active.
#[inline]
fn focal_term(s_raw: f64, gamma: f64) -> (f64, f64) {
    let clamped_low = s_raw < PROB_FLOOR;
    let s = s_raw.clamp(PROB_FLOOR, 1.0);
    let nll = -s.ln();
    if gamma == 0.0 {
        let d = if clamped_low { 0.0 } else { -1.0 / s };
        return (nll, d);
    }
    let one_minus = 1.0 - s;
    let factor = one_minus.powf(gamma);
    let value = factor * nll;
    if clamped_low {
        return (value, 0.0);
    }
    // d/ds [(1-s)^γ] · (−ln s) = −γ (1-s)^(γ-1) · (−ln s) = γ (1-s)^(γ-1) ln s
    let first = if one_minus > 0.0 { gamma * one_minus.powf(gamma - 1.0) * s.ln() } else { 0.0 };
    (value, first - factor / s)
}

fn complementary_pass(
    y_hat: &SoftmaxMap,
    y_bar: &ComplementaryMask,
    q: &TransitionMatrix,
    gamma: f64,
    grad: Option<(&mut [f64], f64)>,
) -> Result<LossValue, LossError> {
    check_mask(y_hat, y_bar.dims(), y_bar.k())?;
    check_q(y_hat, q)?;
    let k = y_hat.k();
    let pixels = y_bar.dims().pixels();
    let count = y_bar.annotated_count();
    let mut sum = 0.0;
    let mut dprob = vec![0.0; k];
    let (mut grad, scale) = match grad {
        Some((g, s)) => (Some(g), s),
        None => (None, 0.0),
    };
    let inv = if count > 0 { scale / count as f64 } else { 0.0 };
    for idx in 0..pixels {
        let Some(j) = y_bar.class_at(idx) else { continue };
        let probs = y_hat.pixel(idx);
        let s = q.column_dot(j, probs);
        let (value, ds) = focal_term(s, gamma);
        sum += value;
        if let Some(g) = grad.as_deref_mut() {
            if ds == 0.0 {
                continue;
            }
            // dℓ/dŷ_i = dℓ/ds · q[i][j], then back through the softmax.
            let mut dot = 0.0;
            for (i, d) in dprob.iter_mut().enumerate() {
                *d = ds * q.get(i, j);
                dot += probs[i] * *d;
            }
            let g = &mut g[idx * k..(idx + 1) * k];
            for i in 0..k {
                g[i] += inv * probs[i] * (dprob[i] - dot);
            }
        }
    }
    Ok(LossValue::mean(sum, count))
}

fn compl_gamma(cfg: &LossConfig) -> f64 {
    if cfg.use_focal {
        cfg.gamma
    } else {
        0.0
    }
}

/// `L_s + α·L_compl`, each part averaged over its own labelled pixels.
pub fn combined_loss(
    y_hat: &SoftmaxMap,
    y: &LabelMask,
    y_bar: &ComplementaryMask,
    q: &TransitionMatrix,
    cfg: &LossConfig,
) -> Result<LossValue, LossError> {
    Ok(combined_breakdown(y_hat, y, y_bar, q, cfg)?.total)
}

pub fn combined_breakdown(
    y_hat: &SoftmaxMap,
    y: &LabelMask,
    y_bar: &ComplementaryMask,
    q: &TransitionMatrix,
    cfg: &LossConfig,
) -> Result<LossBreakdown, LossError> {
    let supervised = supervised_pass(y_hat, y, &cfg.class_weights, None)?;
    let complementary = complementary_pass(y_hat, y_bar, q, compl_gamma(cfg), None)?;
    Ok(combine(supervised, complementary, y, y_bar, cfg.alpha))
}

pub fn combined_loss_with_grad(
    y_hat: &SoftmaxMap,
    y: &LabelMask,
    y_bar: &ComplementaryMask,
    q: &TransitionMatrix,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<f64>), LossError> {
    let mut grad = vec![0.0; y_hat.probs().len()];
    let supervised = supervised_pass(y_hat, y, &cfg.class_weights, Some((&mut grad, 1.0)))?;
    let complementary = if cfg.alpha > 0.0 {
        complementary_pass(y_hat, y_bar, q, compl_gamma(cfg), Some((&mut grad, cfg.alpha)))?
    } else {
        complementary_pass(y_hat, y_bar, q, compl_gamma(cfg), None)?
    };
    Ok((combine(supervised, complementary, y, y_bar, cfg.alpha), grad))
}

fn combine(
    supervised: LossValue,
    complementary: LossValue,
    y: &LabelMask,
    y_bar: &ComplementaryMask,
    alpha: f64,
) -> LossBreakdown {
    let value = if alpha == 0.0 {
        supervised.value
    } else {
        supervised.value + alpha * complementary.value
    };
    let union = y
        .labels()
        .iter()
        .zip(y_bar.labels())
        .filter(|(&a, &b)| (a as usize) < y.k() || (alpha > 0.0 && (b as usize) < y_bar.k()))
        .count();
    LossBreakdown { supervised, complementary, total: LossValue { value, pixel_count: union } }
}
