//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::metrics::AbsentClassPolicy;
use crate::mnist::{MnistSegConfig, SamplingMode};
use crate::nn::ModelConfig;
use crate::synthslide::CorpusConfig;
use crate::transition::QSpec;
use crate::types::LossSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    /// Supervised loss on the annotated subset only.
    #[serde(alias = "baseline-supervised")]
    Baseline,
    /// Supervised loss on the annotated subset plus the complementary loss
    /// on every training sample.
    Complementary,
    /// Supervised loss with ground truth for every training sample.
    FullySupervised,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::Complementary => "complementary",
            Condition::FullySupervised => "fully-supervised",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    MnistSeg(MnistSpec),
    Synthslide(SlideSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistSpec {
    /// Directory with the IDX training files. Without it, digits come from
    /// the built-in generator.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default = "default_pool")]
    pub synthetic_pool: usize,
    #[serde(default)]
    pub synthetic_seed: u64,
    /// Seed for subset selection and label sampling; the run seed when unset.
    #[serde(default)]
    pub data_seed: Option<u64>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_fraction")]
    pub supervised_fraction: f64,
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
    #[serde(default)]
    pub sampling: SamplingMode,
    #[serde(default = "default_threshold")]
    pub foreground_threshold: f32,
}

fn default_pool() -> usize {
    6000
}
fn default_n() -> usize {
    1000
}
fn default_fraction() -> f64 {
    0.1
}
fn default_eval_fraction() -> f64 {
    0.2
}
fn default_threshold() -> f32 {
    0.5
}

impl Default for MnistSpec {
    fn default() -> Self {
        Self {
            data_dir: None,
            synthetic_pool: default_pool(),
            synthetic_seed: 0,
            data_seed: None,
            n: default_n(),
            supervised_fraction: default_fraction(),
            eval_fraction: default_eval_fraction(),
            sampling: SamplingMode::default(),
            foreground_threshold: default_threshold(),
        }
    }
}

impl MnistSpec {
    pub fn seg_config(&self) -> MnistSegConfig {
        MnistSegConfig {
            n: self.n,
            supervised_fraction: self.supervised_fraction,
            eval_fraction: self.eval_fraction,
            sampling: self.sampling,
            foreground_threshold: self.foreground_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlideSpec {
    /// Corpus written by `build-corpus`. Without it, the corpus is generated
    /// from `corpus` and `corpus_seed`.
    #[serde(default)]
    pub corpus_manifest: Option<PathBuf>,
    #[serde(default)]
    pub corpus_seed: u64,
    /// Lαβ color augmentation plus right-angle rotations and flips.
    #[serde(default = "default_true")]
    pub augment: bool,
    #[serde(default)]
    pub corpus: CorpusConfig,
}

fn default_true() -> bool {
    true
}

impl Default for SlideSpec {
    fn default() -> Self {
        Self { corpus_manifest: None, corpus_seed: 0, augment: true, corpus: CorpusConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossSettings,
    /// Transition matrix. Required for the complementary condition on
    /// MNIST; estimated from the corpus for synthetic slides when unset.
    #[serde(default)]
    pub q: Option<QSpec>,
    #[serde(default = "default_condition")]
    pub condition: Condition,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub absent_class: AbsentClassPolicy,
}

fn default_condition() -> Condition {
    Condition::Complementary
}
fn default_batch() -> usize {
    32
}
fn default_lr() -> f64 {
    1e-3
}
fn default_wd() -> f64 {
    1e-5
}
fn default_max_epochs() -> usize {
    200
}
fn default_patience() -> usize {
    20
}
fn default_eval_every() -> usize {
    1
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSpec) -> Self {
        Self {
            seed: 0,
            dataset,
            model: ModelConfig::default(),
            loss: LossSettings::default(),
            q: None,
            condition: default_condition(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            weight_decay: default_wd(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            eval_every: default_eval_every(),
            precision: Precision::default(),
            absent_class: AbsentClassPolicy::default(),
        }
    }

    /// Optimizer settings used for the liver tissue model: learning rate
    /// 1e-5, weight decay 1e-5, batches of 128, patience 50.
    pub fn with_liver_hyperparameters(mut self) -> Self {
        self.learning_rate = 1e-5;
        self.weight_decay = 1e-5;
        self.batch_size = 128;
        self.patience = 50;
        self
    }

    pub fn from_toml_str(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            TrainError::Config(msg) => TrainError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.patience < 1 {
            return bad("patience must be >= 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.max_epochs < 1 {
            return bad("max_epochs must be >= 1");
        }
        if self.eval_every < 1 {
            return bad("eval_every must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0");
        }
        if let Some(q) = &self.q {
            q.resolve().map_err(|e| TrainError::Config(format!("q: {e}")))?;
        }
        match &self.dataset {
            DatasetSpec::MnistSeg(m) => {
                m.seg_config().validate().map_err(|e| TrainError::Config(format!("dataset: {e}")))?;
                if self.condition == Condition::Complementary && self.q.is_none() {
                    return bad("the complementary condition on mnist-seg needs q");
                }
            }
            DatasetSpec::Synthslide(s) => {
                s.corpus.validate().map_err(|e| TrainError::Config(format!("dataset.corpus: {e}")))?;
            }
        }
        self.model.validate().map_err(|e| TrainError::Config(format!("model: {e}")))?;
        Ok(())
    }

    /// The α actually used: conditions without complementary labels train
    /// with α = 0.
    pub fn effective_alpha(&self) -> f64 {
        match self.condition {
            Condition::Complementary => self.loss.alpha,
            Condition::Baseline | Condition::FullySupervised => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_mnist_config() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            seed = 3
            q = "mnist-q2"
            [dataset]
            kind = "mnist-seg"
            n = 200
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.condition, Condition::Complementary);
        assert_eq!(cfg.patience, 20);
        match &cfg.dataset {
            DatasetSpec::MnistSeg(m) => assert_eq!(m.n, 200),
            _ => panic!("wrong dataset"),
        }
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_bad_fields() {
        let base = "[dataset]\nkind = \"mnist-seg\"\n";
        for extra in ["patience = 0\n", "bogus = 1\n", "q = \"nope\"\n", "condition = \"complementary\"\n"] {
            let text = format!("{extra}{base}");
            assert!(ExperimentConfig::from_toml_str(&text).is_err(), "{extra}");
        }
        assert!(ExperimentConfig::from_toml_str("[dataset]\nkind = \"mnist-seg\"\nnn = 3\n").is_err());
        assert!(ExperimentConfig::from_toml_str("condition = \"baseline-supervised\"\n[dataset]\nkind = \"mnist-seg\"\n").is_ok());
    }

    #[test]
    fn alpha_is_forced_off_without_complementary_labels() {
        let mut cfg = ExperimentConfig::new(DatasetSpec::MnistSeg(MnistSpec::default()));
        cfg.condition = Condition::Baseline;
        assert_eq!(cfg.effective_alpha(), 0.0);
        cfg.condition = Condition::Complementary;
        assert_eq!(cfg.effective_alpha(), 0.3);
    }

    #[test]
    fn synthslide_config() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            condition = "baseline"
            [dataset]
            kind = "synthslide"
            augment = false
            [dataset.corpus]
            cases = 12
            annotated_cases = 2
            test_cases = 4
            difficulty = "easy"
            slide_size = 128
            "#,
        )
        .unwrap();
        match cfg.dataset {
            DatasetSpec::Synthslide(s) => assert_eq!(s.corpus.cases, 12),
            _ => panic!("wrong dataset"),
        }
    }
}
