//! The training loop.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{Condition, ExperimentConfig, Precision};
use super::data::{prepare, TrainingData};
use super::optim::AdamW;
use super::TrainError;
use crate::losses::{combined_loss_with_grad, LossBreakdown};
use crate::metrics::{confusion, AbsentClassPolicy, SegScores};
use crate::nn::{checkpoint, softmax_map, Act, Logits, ModelConfig, ModelError, Real, Segmenter, UNet};
use crate::rng::{derive_path, rng_for, stream_id};
use crate::synthslide::{lab_color_augment, Dihedral};
use crate::types::{ComplementaryMask, Dims, LabelMask, LossConfig, PatchBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_supervised: f64,
    pub loss_complementary: f64,
    pub loss_total: f64,
    /// Set on evaluation rounds.
    pub eval_macro_f1: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub condition: Condition,
    pub seed: u64,
    pub alpha: f64,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_macro_f1: f64,
    pub stop_reason: StopReason,
    /// Scores of the returned (best) model on the evaluation split.
    pub final_scores: Option<SegScores>,
    /// Not serialized, so reports of identical runs compare byte for byte.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl PartialEq for TrainReport {
    fn eq(&self, other: &Self) -> bool {
        // Wall-clock time is the only field allowed to differ between
        // identical runs. NaN scores compare through their bits.
        serde_json::to_string(self).ok() == serde_json::to_string(other).ok()
            && self.best_macro_f1.to_bits() == other.best_macro_f1.to_bits()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainReport {
    pub fn last_epoch(&self) -> usize {
        self.epochs.last().map_or(0, |e| e.epoch)
    }

    /// Per-epoch rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss_supervised,loss_complementary,loss_total,eval_macro_f1\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch,
                e.loss_supervised,
                e.loss_complementary,
                e.loss_total,
                fmt_opt(e.eval_macro_f1)
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// A trained network in either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    F32(UNet<f32>),
    F64(UNet<f64>),
}

impl TrainedModel {
    pub fn config(&self) -> &ModelConfig {
        match self {
            TrainedModel::F32(m) => m.config(),
            TrainedModel::F64(m) => m.config(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        match self {
            TrainedModel::F32(m) => checkpoint::save(m, path),
            TrainedModel::F64(m) => checkpoint::save(m, path),
        }
    }

    /// Loads a checkpoint of either element width.
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        match checkpoint::decode::<f32>(&bytes) {
            Ok(m) => Ok(TrainedModel::F32(m)),
            Err(_) => checkpoint::decode::<f64>(&bytes).map(TrainedModel::F64),
        }
    }
}

impl Segmenter for TrainedModel {
    fn num_classes(&self) -> usize {
        self.config().num_classes
    }

    fn predict(&self, batch: &PatchBatch) -> Result<LabelMask, ModelError> {
        match self {
            TrainedModel::F32(m) => m.predict(batch),
            TrainedModel::F64(m) => m.predict(batch),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: UNet<T>,
    pub report: TrainReport,
}

/// Prepares the data and trains at the configured precision.
pub fn train(cfg: &ExperimentConfig) -> Result<(TrainedModel, TrainReport), TrainError> {
    cfg.validate()?;
    let data = prepare(cfg)?;
    Ok(match cfg.precision {
        Precision::F32 => {
            let out = train_on::<f32>(cfg, &data)?;
            (TrainedModel::F32(out.model), out.report)
        }
        Precision::F64 => {
            let out = train_on::<f64>(cfg, &data)?;
            (TrainedModel::F64(out.model), out.report)
        }
    })
}

/// Resolved loss settings: class weights from the supervised pixels of the
/// training pool, α from the condition.
pub fn loss_config(cfg: &ExperimentConfig, data: &TrainingData) -> Result<LossConfig, TrainError> {
    let mut loss = cfg.loss.resolve(data.k, &data.supervised_class_counts()).map_err(|e| TrainError::Config(e.to_string()))?;
    loss.alpha = cfg.effective_alpha();
    Ok(loss)
}

struct Batch<T> {
    x: Act<T>,
    y: LabelMask,
    y_bar: ComplementaryMask,
}

fn assemble<T: Real>(data: &TrainingData, idx: &[usize], aug_seed: Option<u64>) -> Result<Batch<T>, TrainError> {
    let (p, c, k) = (data.side, data.channels, data.k);
    let mut x = Vec::with_capacity(idx.len() * p * p * c);
    let mut y = Vec::with_capacity(idx.len() * p * p);
    let mut y_bar = Vec::with_capacity(idx.len() * p * p);
    for (pos, &i) in idx.iter().enumerate() {
        let s = &data.train[i];
        match (aug_seed, &data.augment, s.color_case) {
            (Some(seed), Some(aug), Some(case)) => {
                let seed = derive_path(seed, &[pos as u64]);
                let colored = lab_color_augment(&s.image, &aug.case_stats[case], &aug.population, seed)
                    .map_err(|e| TrainError::Data(e.to_string()))?;
                let op = Dihedral((seed % 8) as u8);
                x.extend(op.apply(&colored, p, c).into_iter().map(|v| T::from_f64_lossy(v as f64)));
                y.extend(op.apply(&s.labels, p, 1));
                y_bar.extend(op.apply(&s.compl, p, 1));
            }
            _ => {
                x.extend(s.image.iter().map(|&v| T::from_f64_lossy(v as f64)));
                y.extend_from_slice(&s.labels);
                y_bar.extend_from_slice(&s.compl);
            }
        }
    }
    let dims = Dims::new(idx.len(), p, p);
    Ok(Batch {
        x: Act::from_vec(idx.len(), p, p, c, x),
        y: LabelMask::new(dims, k, y).map_err(|e| TrainError::Data(e.to_string()))?,
        y_bar: ComplementaryMask::new(dims, k, y_bar).map_err(|e| TrainError::Data(e.to_string()))?,
    })
}

/// One optimizer step; returns the loss parts of the batch.
fn step<T: Real>(
    model: &mut UNet<T>,
    opt: &mut AdamW<T>,
    batch: &Batch<T>,
    data: &TrainingData,
    loss: &LossConfig,
) -> Result<LossBreakdown, TrainError> {
    let cache = model.forward_cached(&batch.x)?;
    let probs = softmax_map(&Logits::from_act(&cache.logits)).map_err(|e| TrainError::NonFiniteLoss {
        epoch: 0,
        detail: e.to_string(),
    })?;
    let (parts, grad) = combined_loss_with_grad(&probs, &batch.y, &batch.y_bar, &data.q, loss)
        .map_err(|e| TrainError::Data(e.to_string()))?;
    let l = &cache.logits;
    let dlogits = Act::from_vec(l.n, l.h, l.w, l.c, grad.into_iter().map(T::from_f64_lossy).collect());
    let grads = UNet::flatten_grads(model.backward(&cache, &dlogits));
    opt.step(model.params_mut(), &grads);
    Ok(parts)
}

/// Pixel-pooled scores over the evaluation samples.
pub fn evaluate<S: Segmenter + ?Sized>(
    model: &S,
    data: &TrainingData,
    batch_size: usize,
    policy: AbsentClassPolicy,
) -> Result<SegScores, TrainError> {
    let (p, k) = (data.side, data.k);
    let mut total = vec![vec![0u64; k]; k];
    for chunk in data.eval.chunks(batch_size.max(1)) {
        let batch = PatchBatch::from_patches(p, data.channels, chunk.iter().map(|s| &s.image[..]))
            .map_err(|e| TrainError::Data(e.to_string()))?;
        let pred = model.predict(&batch)?;
        let gt = LabelMask::stack(k, p, p, chunk.iter().map(|s| &s.gt[..])).map_err(|e| TrainError::Data(e.to_string()))?;
        let c = confusion(&pred, &gt).map_err(|e| TrainError::Data(e.to_string()))?;
        for (row, add) in total.iter_mut().zip(c) {
            for (a, b) in row.iter_mut().zip(add) {
                *a += b;
            }
        }
    }
    Ok(SegScores::from_confusion(total, policy))
}

fn better(score: f64, best: f64) -> bool {
    score.is_finite() && (best.is_nan() || score >= best + 1e-6)
}

/// Trains on prepared data.
///
/// Every epoch is one seeded shuffle of the training pool. Evaluation runs
/// every `eval_every` epochs and on the last epoch; training stops after
/// `patience` evaluation rounds without an improvement of at least 1e-6 in
/// macro F1, and the parameters of the best round are returned.
pub fn train_on<T: Real>(cfg: &ExperimentConfig, data: &TrainingData) -> Result<TrainOutcome<T>, TrainError> {
    let started = Instant::now();
    if data.train.is_empty() {
        return Err(TrainError::Data("no training samples".into()));
    }
    let loss = loss_config(cfg, data)?;
    let model_cfg = ModelConfig {
        in_channels: data.channels,
        num_classes: data.k,
        seed: derive_path(cfg.seed, &[stream_id("init"), cfg.model.seed]),
        ..cfg.model
    };
    model_cfg.check_input(data.side, data.side)?;
    let mut model = UNet::<T>::new(model_cfg)?;
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut opt = AdamW::<T>::new(&sizes, cfg.learning_rate, cfg.weight_decay);

    let mut pool: Vec<usize> = (0..data.train.len()).collect();
    let mut epochs = Vec::new();
    let mut best = (0usize, f64::NAN, None::<Vec<Vec<T>>>);
    let mut stale = 0usize;
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        pool.sort_unstable();
        pool.shuffle(&mut rng_for(cfg.seed, &[stream_id("shuffle"), epoch as u64]));
        let mut sums = [0.0f64; 3];
        for (step_idx, idx) in pool.chunks(cfg.batch_size).enumerate() {
            let aug_seed = data
                .augment
                .as_ref()
                .map(|_| derive_path(cfg.seed, &[stream_id("augment"), epoch as u64, step_idx as u64]));
            let batch = assemble::<T>(data, idx, aug_seed)?;
            let parts = step(&mut model, &mut opt, &batch, data, &loss).map_err(|e| match e {
                TrainError::NonFiniteLoss { detail, .. } => TrainError::NonFiniteLoss { epoch, detail },
                other => other,
            })?;
            if !parts.total.value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    detail: format!("step {step_idx}: samples {idx:?}, loss parts {parts:?}"),
                });
            }
            let w = idx.len() as f64;
            sums[0] += w * parts.supervised.value;
            sums[1] += w * parts.complementary.value;
            sums[2] += w * parts.total.value;
        }
        let n = pool.len() as f64;
        let mut record = EpochRecord {
            epoch,
            loss_supervised: sums[0] / n,
            loss_complementary: sums[1] / n,
            loss_total: sums[2] / n,
            eval_macro_f1: None,
        };
        let last = epoch == cfg.max_epochs;
        if !data.eval.is_empty() && (epoch % cfg.eval_every == 0 || last) {
            let scores = evaluate(&model, data, cfg.batch_size.max(64), cfg.absent_class)?;
            record.eval_macro_f1 = Some(scores.macro_f1);
            if better(scores.macro_f1, best.1) {
                best = (epoch, scores.macro_f1, Some(model.params().iter().map(|p| p.to_vec()).collect()));
                stale = 0;
            } else {
                stale += 1;
            }
        }
        epochs.push(record);
        if stale >= cfg.patience {
            stop_reason = StopReason::Patience;
            break;
        }
    }

    let last_epoch = epochs.last().map_or(0, |e: &EpochRecord| e.epoch);
    let (best_epoch, best_f1) = match best.2 {
        Some(params) => {
            model.load_params(params)?;
            (best.0, best.1)
        }
        None => (last_epoch, f64::NAN),
    };
    let final_scores = if data.eval.is_empty() {
        None
    } else {
        Some(evaluate(&model, data, cfg.batch_size.max(64), cfg.absent_class)?)
    };
    let report = TrainReport {
        condition: cfg.condition,
        seed: cfg.seed,
        alpha: loss.alpha,
        train_samples: data.train.len(),
        eval_samples: data.eval.len(),
        epochs,
        best_epoch,
        best_macro_f1: best_f1,
        stop_reason,
        final_scores,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { model, report })
}
