//! MNIST segmentation data: IDX parsing, an offline digit generator and the
//! three-class segmentation dataset with sampled complementary labels.

pub mod dataset;
pub mod idx;
pub mod synth_digits;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use dataset::{
    build_dataset, digit_group, sample_complementary, MnistSegConfig, MnistSegDataset,
    MnistSegSample, SamplingMode, Split,
};
pub use idx::IdxImages;

#[derive(Debug, Error)]
pub enum MnistError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("requested {requested} samples but only {available} are available")]
    InsufficientData { requested: usize, available: usize },
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error("no MNIST training files in {0}")]
    MissingFiles(PathBuf),
}

impl PartialEq for MnistError {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

fn locate(dir: &Path, stem: &str) -> Option<PathBuf> {
    [stem.to_string(), format!("{stem}.gz")]
        .into_iter()
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
}

/// Loads the training images and labels from `dir` (raw or gzipped IDX).
pub fn load_training_corpus(dir: &Path) -> Result<(IdxImages, Vec<u8>), MnistError> {
    let images = locate(dir, TRAIN_IMAGES).ok_or_else(|| MnistError::MissingFiles(dir.to_path_buf()))?;
    let labels = locate(dir, TRAIN_LABELS).ok_or_else(|| MnistError::MissingFiles(dir.to_path_buf()))?;
    Ok((idx::read_images(&images)?, idx::read_labels(&labels)?))
}

/// Writes a synthetic digit corpus in IDX format under the standard file names.
pub fn write_synthetic_corpus(
    dir: &Path,
    train_count: usize,
    test_count: usize,
    seed: u64,
) -> Result<Vec<PathBuf>, MnistError> {
    std::fs::create_dir_all(dir)?;
    let (train, train_labels) = synth_digits::generate(train_count, seed);
    let (test, test_labels) = synth_digits::generate(test_count, crate::rng::derive_seed(seed, 1));
    let files = [
        (TRAIN_IMAGES, idx::encode_images(&train)),
        (TRAIN_LABELS, idx::encode_labels(&train_labels)),
        (TEST_IMAGES, idx::encode_images(&test)),
        (TEST_LABELS, idx::encode_labels(&test_labels)),
    ];
    let mut paths = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        std::fs::write(&path, bytes)?;
        paths.push(path);
    }
    Ok(paths)
}
