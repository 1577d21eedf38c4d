//! Case-level evaluation of a segmenter on whole synthetic slides.

use serde::{Deserialize, Serialize};

use crate::metrics::{
    balanced_accuracy, bootstrap_ci, case_prediction, complementary_area_share, BootstrapCi, CasePrediction,
    MetricsError,
};
use crate::nn::{ModelError, Segmenter};
use crate::synthslide::{grid_patches, Diagnosis, SyntheticCase, SyntheticSlide, CLASS_A, CLASS_B, NUM_CLASSES};
use crate::types::{Dims, LabelMask, PatchBatch};

/// Predictions stitched back into slide coordinates. Pixels outside the
/// patch grid hold the sentinel and count as unevaluated.
pub fn segment_slide<S: Segmenter + ?Sized>(
    model: &S,
    slide: &SyntheticSlide,
    patch: usize,
    stride: usize,
    batch_size: usize,
) -> Result<LabelMask, EvalError> {
    let k = model.num_classes();
    let grid = grid_patches(slide, patch, stride).map_err(|e| EvalError::Data(e.to_string()))?;
    let mut labels = vec![k as u8; slide.height * slide.width];
    let n = grid.coords.len();
    for start in (0..n).step_by(batch_size.max(1)) {
        let end = (start + batch_size.max(1)).min(n);
        let batch = PatchBatch::from_patches(patch, grid.images.channels(), (start..end).map(|i| grid.images.patch(i)))
            .map_err(|e| EvalError::Data(e.to_string()))?;
        let pred = model.predict(&batch)?;
        for (b, i) in (start..end).enumerate() {
            let (y0, x0) = grid.coords[i];
            let tile = pred.image(b);
            for y in 0..patch {
                let row = (y0 + y) * slide.width + x0;
                labels[row..row + patch].copy_from_slice(&tile[y * patch..(y + 1) * patch]);
            }
        }
    }
    LabelMask::new(Dims::new(1, slide.height, slide.width), k, labels).map_err(|e| EvalError::Data(e.to_string()))
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("data: {0}")]
    Data(String),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub diagnosis: Diagnosis,
    pub prediction: CasePrediction,
    /// Share of evaluated pixels predicted as the class the diagnosis rules out.
    pub complementary_area_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEvaluation {
    pub cases: Vec<CaseResult>,
    pub balanced_accuracy: f64,
    pub ci: BootstrapCi,
    pub confidence: f64,
    /// Rows: diagnosis (class A, class B). Columns: predicted class A,
    /// class B, no tumor.
    pub confusion: [[u64; 3]; 2],
    #[serde(skip)]
    pub segmentations: Vec<Vec<LabelMask>>,
}

impl CaseEvaluation {
    pub fn mean_area_share(&self) -> f64 {
        self.cases.iter().map(|c| c.complementary_area_share).sum::<f64>() / self.cases.len().max(1) as f64
    }
}

/// Label used for a case whose map contains no tumor pixel; never equals a
/// diagnosis, so such cases count as misses.
pub const NO_TUMOR: usize = usize::MAX;

fn ba(preds: &[usize], labels: &[usize]) -> Result<f64, MetricsError> {
    balanced_accuracy(preds, labels, &[CLASS_A as usize, CLASS_B as usize])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseEvalSettings {
    pub patch: usize,
    pub stride: usize,
    pub batch_size: usize,
    pub n_resamples: usize,
    pub confidence: f64,
    pub seed: u64,
}

/// Segments every slide, derives case predictions by tumor-pixel dominance
/// and scores them against the diagnoses.
pub fn evaluate_cases<S: Segmenter + ?Sized>(
    model: &S,
    cases: &[&SyntheticCase],
    settings: &CaseEvalSettings,
) -> Result<CaseEvaluation, EvalError> {
    if model.num_classes() != NUM_CLASSES {
        return Err(EvalError::Data(format!("model predicts {} classes, slides have {NUM_CLASSES}", model.num_classes())));
    }
    let tumor = [CLASS_A as usize, CLASS_B as usize];
    let mut results = Vec::with_capacity(cases.len());
    let mut segmentations = Vec::with_capacity(cases.len());
    for case in cases {
        let maps = case
            .slides
            .iter()
            .map(|s| segment_slide(model, s, settings.patch, settings.stride, settings.batch_size))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&LabelMask> = maps.iter().collect();
        let prediction = case_prediction(&case.case_id, &refs, &tumor)?;
        let evaluated: u64 = prediction.class_pixel_counts.iter().sum();
        let wrong = prediction.class_pixel_counts[case.diagnosis.complement_class() as usize];
        let share = if maps.len() == 1 {
            complementary_area_share(&maps[0], case.diagnosis.tumor_class() as usize, case.diagnosis.complement_class() as usize)?
        } else if evaluated == 0 {
            0.0
        } else {
            wrong as f64 / evaluated as f64
        };
        results.push(CaseResult {
            case_id: case.case_id.clone(),
            diagnosis: case.diagnosis,
            prediction,
            complementary_area_share: share,
        });
        segmentations.push(maps);
    }
    let labels: Vec<usize> = results.iter().map(|r| r.diagnosis.tumor_class() as usize).collect();
    let preds: Vec<usize> = results.iter().map(|r| r.prediction.predicted_class.unwrap_or(NO_TUMOR)).collect();
    let mut confusion = [[0u64; 3]; 2];
    for (&l, &p) in labels.iter().zip(&preds) {
        let col = if p == NO_TUMOR { 2 } else { p };
        confusion[l][col] += 1;
    }
    let balanced_accuracy = ba(&preds, &labels)?;
    let ci = bootstrap_ci(&preds, &labels, ba, settings.n_resamples, settings.confidence, settings.seed)?;
    Ok(CaseEvaluation {
        cases: results,
        balanced_accuracy,
        ci,
        confidence: settings.confidence,
        confusion,
        segmentations,
    })
}

/// Predicts the ground truth it is given: a test double for pipeline checks.
pub struct OracleSegmenter {
    lookup: Vec<(Vec<f32>, Vec<u8>)>,
}

impl OracleSegmenter {
    /// Remembers the ground truth of every grid patch of every slide.
    pub fn for_cases(cases: &[&SyntheticCase], patch: usize, stride: usize) -> Self {
        let mut lookup = Vec::new();
        for case in cases {
            for slide in &case.slides {
                if let Ok(g) = grid_patches(slide, patch, stride) {
                    for i in 0..g.coords.len() {
                        lookup.push((g.images.patch(i).to_vec(), g.masks.image(i).to_vec()));
                    }
                }
            }
        }
        Self { lookup }
    }
}

impl Segmenter for OracleSegmenter {
    fn num_classes(&self) -> usize {
        NUM_CLASSES
    }

    fn predict(&self, batch: &PatchBatch) -> Result<LabelMask, ModelError> {
        let mut labels = Vec::with_capacity(batch.n() * batch.side() * batch.side());
        for i in 0..batch.n() {
            let patch = batch.patch(i);
            let (_, gt) = self
                .lookup
                .iter()
                .find(|(img, _)| img.as_slice() == patch)
                .ok_or_else(|| ModelError::InvalidConfig("oracle has no ground truth for this patch".into()))?;
            labels.extend_from_slice(gt);
        }
        LabelMask::new(batch.dims(), NUM_CLASSES, labels).map_err(|e| ModelError::InvalidConfig(e.to_string()))
    }
}
