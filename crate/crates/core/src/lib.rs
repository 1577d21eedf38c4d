//! Semantic segmentation with complementary labels.
//!
//! A complementary label states which class a pixel does *not* belong to.
//! This crate combines sparse pixel annotations with such labels through a
//! transition-matrix corrected loss, and provides the datasets, a small
//! encoder-decoder network, the training loop and the case-level evaluation
//! used to study it.

pub mod evaluation;
pub mod losses;
pub mod metrics;
pub mod mnist;
pub mod nn;
pub mod rng;
pub mod synthslide;
pub mod trainer;
pub mod transition;
pub mod types;

pub use losses::{LossBreakdown, LossError, LossValue};
pub use transition::{estimate_other_row, QSpec, TransitionError, TransitionMatrix};
pub use types::{
    Case, ComplementaryMask, Dims, LabelMask, LossConfig, LossSettings, PatchBatch, SoftmaxMap,
};
