//! Turns a dataset spec and a condition into training and evaluation samples.

use super::config::{Condition, DatasetSpec, ExperimentConfig, MnistSpec, SlideSpec};
use super::TrainError;
use crate::mnist::{self, build_dataset};
use crate::rng::{derive_seed, stream_id};
use crate::synthslide::{
    self, build_corpus, grid_patches, load_corpus, ColorPopulation, ColorStats, Corpus, CorpusRole,
};
use crate::transition::{estimate_other_row, TransitionMatrix};

/// One training patch. `labels` and `compl` use the sentinel `k` for
/// pixels without a label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub image: Vec<f32>,
    pub labels: Vec<u8>,
    pub compl: Vec<u8>,
    /// Index into [`ColorAugment::case_stats`].
    pub color_case: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub image: Vec<f32>,
    pub gt: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorAugment {
    pub case_stats: Vec<ColorStats>,
    pub population: ColorPopulation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub side: usize,
    pub channels: usize,
    pub k: usize,
    pub train: Vec<TrainSample>,
    pub eval: Vec<EvalSample>,
    pub q: TransitionMatrix,
    /// Present when patches get color and geometric augmentation.
    pub augment: Option<ColorAugment>,
}

impl TrainingData {
    pub fn supervised_class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.k];
        for s in &self.train {
            for &l in &s.labels {
                if (l as usize) < self.k {
                    counts[l as usize] += 1;
                }
            }
        }
        counts
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<TrainingData, TrainError> {
    match &cfg.dataset {
        DatasetSpec::MnistSeg(spec) => prepare_mnist(cfg, spec),
        DatasetSpec::Synthslide(spec) => {
            let corpus = match &spec.corpus_manifest {
                Some(path) => {
                    let (corpus, missing) = load_corpus(path).map_err(|e| TrainError::Data(e.to_string()))?;
                    if let Some(m) = missing.first() {
                        return Err(TrainError::Data(format!("slide {} of {}: {}", m.path.display(), m.case_id, m.reason)));
                    }
                    corpus
                }
                None => build_corpus(&spec.corpus, spec.corpus_seed).map_err(|e| TrainError::Data(e.to_string()))?,
            };
            prepare_slides(cfg, spec, &corpus)
        }
    }
}

fn prepare_mnist(cfg: &ExperimentConfig, spec: &MnistSpec) -> Result<TrainingData, TrainError> {
    let (images, digits) = match &spec.data_dir {
        Some(dir) => mnist::load_training_corpus(dir).map_err(|e| TrainError::Data(e.to_string()))?,
        None => mnist::synth_digits::generate(spec.synthetic_pool, spec.synthetic_seed),
    };
    let q = match &cfg.q {
        Some(q) => q.resolve().map_err(|e| TrainError::Config(e.to_string()))?,
        None => TransitionMatrix::mnist_q1(),
    };
    let data_seed = spec.data_seed.unwrap_or_else(|| derive_seed(cfg.seed, stream_id("data")));
    let ds = build_dataset(&images, &digits, &spec.seg_config(), &q, data_seed)
        .map_err(|e| TrainError::Data(e.to_string()))?;
    let k = mnist::dataset::NUM_CLASSES;
    let sentinel = vec![k as u8; mnist::dataset::SIDE * mnist::dataset::SIDE];
    let train = ds
        .train()
        .filter(|s| cfg.condition != Condition::Baseline || s.supervised)
        .map(|s| TrainSample {
            image: s.image.clone(),
            labels: if cfg.condition == Condition::FullySupervised { s.gt_mask.clone() } else { s.training_labels() },
            compl: if cfg.condition == Condition::Complementary { s.compl_mask.clone() } else { sentinel.clone() },
            color_case: None,
        })
        .collect();
    let eval = ds.eval().map(|s| EvalSample { image: s.image.clone(), gt: s.gt_mask.clone() }).collect();
    Ok(TrainingData { side: mnist::dataset::SIDE, channels: 1, k, train, eval, q, augment: None })
}

/// Transition matrix implied by diagnoses: a tumor pixel's complementary
/// label is always the other tumor class; the row of "other" follows the
/// share of complementary-labelled patches per diagnosis.
pub fn diagnosis_transition(patches_labelled_a: u64, patches_labelled_b: u64) -> Result<TransitionMatrix, TrainError> {
    let other = estimate_other_row(&[patches_labelled_a, patches_labelled_b]).map_err(|e| TrainError::Data(e.to_string()))?;
    TransitionMatrix::new(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], other]).map_err(|e| TrainError::Data(e.to_string()))
}

fn prepare_slides(cfg: &ExperimentConfig, spec: &SlideSpec, corpus: &Corpus) -> Result<TrainingData, TrainError> {
    let k = synthslide::NUM_CLASSES;
    let p = spec.corpus.patch_size;
    let stride = spec.corpus.stride;
    let roles: &[CorpusRole] = match cfg.condition {
        Condition::Baseline => &[CorpusRole::Annotated],
        _ => &[CorpusRole::Annotated, CorpusRole::Complementary],
    };
    let mut train = Vec::new();
    let mut case_stats = Vec::new();
    let mut labelled = [0u64; 2];
    for case in corpus.cases.iter().filter(|c| roles.contains(&c.role)) {
        let case_idx = case_stats.len();
        case_stats.push(case.color_stats());
        let annotated = case.role == CorpusRole::Annotated || cfg.condition == Condition::FullySupervised;
        for slide in &case.slides {
            let grid = grid_patches(slide, p, stride).map_err(|e| TrainError::Data(e.to_string()))?;
            for i in 0..grid.coords.len() {
                let gt = grid.masks.image(i);
                let compl = if cfg.condition == Condition::Complementary {
                    labelled[case.diagnosis.complement_class() as usize] += 1;
                    vec![case.diagnosis.complement_class(); gt.len()]
                } else {
                    vec![k as u8; gt.len()]
                };
                train.push(TrainSample {
                    image: grid.images.patch(i).to_vec(),
                    labels: if annotated { gt.to_vec() } else { vec![k as u8; gt.len()] },
                    compl,
                    color_case: Some(case_idx),
                });
            }
        }
    }
    let mut eval = Vec::new();
    for case in corpus.with_role(CorpusRole::Validation) {
        for slide in &case.slides {
            let grid = grid_patches(slide, p, stride).map_err(|e| TrainError::Data(e.to_string()))?;
            for i in 0..grid.coords.len() {
                eval.push(EvalSample { image: grid.images.patch(i).to_vec(), gt: grid.masks.image(i).to_vec() });
            }
        }
    }
    let q = match &cfg.q {
        Some(q) => q.resolve().map_err(|e| TrainError::Config(e.to_string()))?,
        None if labelled.iter().sum::<u64>() > 0 => diagnosis_transition(labelled[0], labelled[1])?,
        None => diagnosis_transition(1, 1)?,
    };
    let augment = if spec.augment && !case_stats.is_empty() {
        Some(ColorAugment { population: ColorPopulation::fit(&case_stats), case_stats })
    } else {
        None
    };
    Ok(TrainingData { side: p, channels: synthslide::CHANNELS, k, train, eval, q, augment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthslide::CorpusConfig;
    use crate::trainer::config::SlideSpec;

    fn mnist_cfg(condition: Condition) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(DatasetSpec::MnistSeg(MnistSpec {
            synthetic_pool: 300,
            n: 200,
            ..MnistSpec::default()
        }));
        cfg.condition = condition;
        cfg.q = Some(crate::transition::QSpec::Preset("mnist-q1".into()));
        cfg
    }

    #[test]
    fn mnist_conditions_select_the_right_labels() {
        let base = prepare(&mnist_cfg(Condition::Baseline)).unwrap();
        assert_eq!(base.train.len(), 20);
        assert!(base.train.iter().all(|s| s.compl.iter().all(|&c| c == 3) && s.labels.iter().all(|&l| l < 3)));

        let comp = prepare(&mnist_cfg(Condition::Complementary)).unwrap();
        assert_eq!(comp.train.len(), 160);
        assert_eq!(comp.train.iter().filter(|s| s.labels[0] < 3).count(), 20);
        assert!(comp.train.iter().all(|s| s.compl.iter().all(|&c| c < 3)));

        let full = prepare(&mnist_cfg(Condition::FullySupervised)).unwrap();
        assert_eq!(full.train.len(), 160);
        assert!(full.train.iter().all(|s| s.labels.iter().all(|&l| l < 3)));
        assert_eq!(full.eval.len(), 40);
        assert_eq!(full.eval, comp.eval);
    }

    #[test]
    fn diagnosis_matrix() {
        let q = diagnosis_transition(43, 57).unwrap();
        assert_eq!(q.row(0), &[0.0, 1.0, 0.0]);
        assert!((q.get(2, 0) - 0.43).abs() < 1e-12);
    }

    #[test]
    fn slide_conditions() {
        let spec = SlideSpec {
            corpus: CorpusConfig {
                cases: 8,
                annotated_cases: 2,
                validation_cases: 2,
                test_cases: 2,
                slide_size: 64,
                patch_size: 16,
                stride: 2,
                ..CorpusConfig::default()
            },
            ..SlideSpec::default()
        };
        let mut cfg = ExperimentConfig::new(DatasetSpec::Synthslide(spec));
        cfg.condition = Condition::Baseline;
        let base = prepare(&cfg).unwrap();
        assert_eq!(base.train.len(), 2 * 4);
        assert_eq!(base.eval.len(), 2 * 4);
        cfg.condition = Condition::Complementary;
        let comp = prepare(&cfg).unwrap();
        assert_eq!(comp.train.len(), 4 * 4);
        assert_eq!(comp.train.iter().filter(|s| s.labels[0] < 3).count(), 8);
        // Balanced diagnoses give an even split for the "other" row.
        assert_eq!(comp.q.row(2), &[0.5, 0.5, 0.0]);
        assert!(comp.augment.is_some());
    }
}
