//! Seeded training under the combined supervised and complementary objective.

pub mod ablation;
pub mod config;
pub mod data;
pub mod optim;
pub mod run;

use thiserror::Error;

use crate::nn::ModelError;

pub use ablation::{run_ablation, standard_arms, AblationArm, AblationConfig, AblationRow, AblationTable, ArmSummary};
pub use config::{Condition, DatasetSpec, ExperimentConfig, MnistSpec, Precision, SlideSpec};
pub use data::{prepare, TrainingData};
pub use optim::AdamW;
pub use run::{evaluate, train, train_on, EpochRecord, StopReason, TrainOutcome, TrainReport, TrainedModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("io: {0}")]
    Io(String),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("non-finite loss in epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },
}
