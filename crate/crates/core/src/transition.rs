//! Transition matrices of complementary labels.
//!
//! Entry `q[i][j]` is the probability of observing complementary label `j`
//! for a pixel whose true class is `i`. Rows are probability distributions
//! and the diagonal is zero because a complementary label always names a
//! wrong class.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance applied to row sums on construction.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransitionError {
    #[error("transition matrix needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("transition matrix is not square: row {row} has {len} entries, expected {k}")]
    NotSquare { row: usize, len: usize, k: usize },
    #[error("diagonal entry q[{0}][{0}] = {1} is not zero")]
    NonZeroDiagonal(usize, f64),
    #[error("row {0} sums to {1}, expected 1")]
    RowNotStochastic(usize, f64),
    #[error("entry q[{row}][{col}] = {value} is outside [0, 1]")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("dimension mismatch: matrix has k = {k}, vector has length {len}")]
    DimensionMismatch { k: usize, len: usize },
    #[error("all class counts are zero")]
    AllZeroCounts,
    #[error("unknown transition matrix preset {0:?} (known: mnist-q1, mnist-q2, liver)")]
    UnknownPreset(String),
    #[error("invalid transition matrix config: {0}")]
    Config(String),
}

/// A validated, row-stochastic transition matrix with zero diagonal.
#[derive(Clone, PartialEq, Serialize)]
pub struct TransitionMatrix {
    k: usize,
    q: Vec<f64>,
}

impl TransitionMatrix {
    /// Validates `rows` and builds the matrix.
    ///
    /// Rows whose floating-point sum is within [`ROW_SUM_TOLERANCE`] of one but
    /// not exactly one are rescaled, so downstream products conserve mass.
    pub fn new(rows: &[Vec<f64>]) -> Result<Self, TransitionError> {
        let k = rows.len();
        if k < 2 {
            return Err(TransitionError::TooFewClasses(k));
        }
        let mut q = Vec::with_capacity(k * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(TransitionError::NotSquare { row: i, len: row.len(), k });
            }
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) || v.is_nan() {
                    return Err(TransitionError::NegativeEntry { row: i, col: j, value: v });
                }
            }
            if row[i] != 0.0 {
                return Err(TransitionError::NonZeroDiagonal(i, row[i]));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(TransitionError::RowNotStochastic(i, sum));
            }
            if sum == 1.0 {
                q.extend_from_slice(row);
            } else {
                q.extend(row.iter().map(|v| v / sum));
            }
        }
        Ok(Self { k, q })
    }

    /// Builds a matrix from a row-major flat slice of `k * k` entries.
    pub fn from_flat(k: usize, flat: &[f64]) -> Result<Self, TransitionError> {
        if flat.len() != k * k {
            return Err(TransitionError::Config(format!(
                "expected {} entries for k = {k}, got {}",
                k * k,
                flat.len()
            )));
        }
        let rows: Vec<Vec<f64>> = flat.chunks(k.max(1)).map(<[f64]>::to_vec).collect();
        Self::new(&rows)
    }

    /// Biased complementary labels for the MNIST ablation, every class appears.
    pub fn mnist_q1() -> Self {
        Self::new(&[
            vec![0.0, 0.7, 0.3],
            vec![0.3, 0.0, 0.7],
            vec![0.7, 0.3, 0.0],
        ])
        .expect("preset is valid")
    }

    /// MNIST ablation matrix where the last class never appears as a complementary label.
    pub fn mnist_q2() -> Self {
        Self::new(&[
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.5, 0.5, 0.0],
        ])
        .expect("preset is valid")
    }

    /// Matrix for the (CCA, HCC, Other) liver tumour task.
    pub fn liver() -> Self {
        Self::new(&[
            vec![0.0, 0.998, 0.002],
            vec![0.980, 0.0, 0.020],
            vec![0.430, 0.570, 0.0],
        ])
        .expect("preset is valid")
    }

    /// Uniform complementary labels: every wrong class with probability `1/(k-1)`.
    pub fn uniform(k: usize) -> Result<Self, TransitionError> {
        if k < 2 {
            return Err(TransitionError::TooFewClasses(k));
        }
        let off = 1.0 / (k - 1) as f64;
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 0.0 } else { off }).collect())
            .collect();
        Self::new(&rows)
    }

    pub fn preset(name: &str) -> Result<Self, TransitionError> {
        match name {
            "mnist-q1" => Ok(Self::mnist_q1()),
            "mnist-q2" => Ok(Self::mnist_q2()),
            "liver" => Ok(Self::liver()),
            other => Err(TransitionError::UnknownPreset(other.to_string())),
        }
    }

    /// Parses a JSON object `{"k": 3, "q": [[...], ...]}`; `q` may also be a flat row-major list.
    pub fn from_json_str(text: &str) -> Result<Self, TransitionError> {
        let cfg: TransitionConfig =
            serde_json::from_str(text).map_err(|e| TransitionError::Config(e.to_string()))?;
        cfg.build()
    }

    pub fn from_json_file(path: &Path) -> Result<Self, TransitionError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TransitionError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        let cfg = TransitionConfig { k: self.k, q: QEntries::Rows(self.rows()) };
        serde_json::to_string(&cfg).expect("plain numbers serialize")
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.k + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.q[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.k).map(|i| self.row(i).to_vec()).collect()
    }

    /// `Qᵀ·ŷ`: maps predicted class probabilities to complementary-label probabilities.
    pub fn apply_transposed(&self, y_hat: &[f64]) -> Result<Vec<f64>, TransitionError> {
        if y_hat.len() != self.k {
            return Err(TransitionError::DimensionMismatch { k: self.k, len: y_hat.len() });
        }
        let mut out = vec![0.0; self.k];
        self.apply_transposed_into(y_hat, &mut out);
        Ok(out)
    }

    /// Unchecked variant of [`apply_transposed`](Self::apply_transposed) for inner loops.
    #[inline]
    pub fn apply_transposed_into(&self, y_hat: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.column_dot(j, y_hat);
        }
    }

    /// Single component `(Qᵀ·ŷ)_j = Σ_i q[i][j]·ŷ_i`.
    #[inline]
    pub fn column_dot(&self, j: usize, y_hat: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, &p) in y_hat.iter().enumerate() {
            acc += self.q[i * self.k + j] * p;
        }
        acc
    }
}

impl fmt::Debug for TransitionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransitionMatrix").field("k", &self.k).field("q", &self.rows()).finish()
    }
}

impl<'de> Deserialize<'de> for TransitionMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        TransitionConfig::deserialize(d)?.build().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum QEntries {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TransitionConfig {
    k: usize,
    q: QEntries,
}

impl TransitionConfig {
    fn build(self) -> Result<TransitionMatrix, TransitionError> {
        match self.q {
            QEntries::Flat(flat) => TransitionMatrix::from_flat(self.k, &flat),
            QEntries::Rows(rows) => {
                if rows.len() != self.k {
                    return Err(TransitionError::Config(format!(
                        "k = {} but q has {} rows",
                        self.k,
                        rows.len()
                    )));
                }
                TransitionMatrix::new(&rows)
            }
        }
    }
}

/// Either a named preset or an inline matrix, as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QSpec {
    Preset(String),
    Inline(TransitionMatrix),
}

impl QSpec {
    pub fn resolve(&self) -> Result<TransitionMatrix, TransitionError> {
        match self {
            QSpec::Preset(name) => TransitionMatrix::preset(name),
            QSpec::Inline(q) => Ok(q.clone()),
        }
    }
}

/// Estimates the transition row of the catch-all class (the last class index)
/// from how often each other class occurs as a complementary label.
///
/// `class_patch_counts` holds one count per class `0..k-1`; the returned row
/// has length `k` with a zero in the last position.
pub fn estimate_other_row(class_patch_counts: &[u64]) -> Result<Vec<f64>, TransitionError> {
    let total: u64 = class_patch_counts.iter().sum();
    if total == 0 {
        return Err(TransitionError::AllZeroCounts);
    }
    let mut row: Vec<f64> =
        class_patch_counts.iter().map(|&c| c as f64 / total as f64).collect();
    row.push(0.0);
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn presets_are_valid_and_exact() {
        let q1 = TransitionMatrix::mnist_q1();
        assert_eq!(q1.rows(), vec![vec![0.0, 0.7, 0.3], vec![0.3, 0.0, 0.7], vec![0.7, 0.3, 0.0]]);
        let liver = TransitionMatrix::liver();
        assert_eq!(liver.row(0), &[0.0, 0.998, 0.002]);
        assert_eq!(liver.row(1), &[0.980, 0.0, 0.020]);
        assert_eq!(liver.row(2), &[0.430, 0.570, 0.0]);
        assert_eq!(TransitionMatrix::preset("mnist-q2").unwrap(), TransitionMatrix::mnist_q2());
        assert!(matches!(
            TransitionMatrix::preset("q3"),
            Err(TransitionError::UnknownPreset(_))
        ));
    }

    #[test]
    fn rejects_invalid_rows() {
        assert_eq!(
            TransitionMatrix::new(&[vec![0.0, 0.5], vec![0.5, 0.0]]),
            Err(TransitionError::RowNotStochastic(0, 0.5))
        );
        assert!(matches!(
            TransitionMatrix::new(&[vec![0.5, 0.5], vec![1.0, 0.0]]),
            Err(TransitionError::NonZeroDiagonal(0, _))
        ));
        assert!(matches!(
            TransitionMatrix::new(&[vec![0.0, 1.5, -0.5], vec![0.5, 0.0, 0.5], vec![0.5, 0.5, 0.0]]),
            Err(TransitionError::NegativeEntry { row: 0, col: 1, .. })
        ));
        assert_eq!(TransitionMatrix::new(&[vec![0.0]]), Err(TransitionError::TooFewClasses(1)));
        assert!(matches!(
            TransitionMatrix::new(&[vec![0.0, 1.0], vec![1.0]]),
            Err(TransitionError::NotSquare { row: 1, .. })
        ));
    }

    #[test]
    fn near_stochastic_rows_are_renormalized() {
        let q = TransitionMatrix::new(&[
            vec![0.0, 0.5 + 5e-10, 0.5],
            vec![0.25, 0.0, 0.75 - 5e-10],
            vec![0.5, 0.5, 0.0],
        ])
        .unwrap();
        for i in 0..3 {
            assert!((q.row(i).iter().sum::<f64>() - 1.0).abs() <= 2.0 * f64::EPSILON);
        }
        assert_eq!(q.row(2), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn apply_transposed_examples() {
        let third = 1.0 / 3.0;
        let out = TransitionMatrix::mnist_q1().apply_transposed(&[third; 3]).unwrap();
        for v in out {
            assert_abs_diff_eq!(v, third, epsilon = 1e-15);
        }
        let out = TransitionMatrix::mnist_q2().apply_transposed(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(out, vec![0.0, 1.0, 0.0]);
        let out = TransitionMatrix::liver().apply_transposed(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(out, vec![0.980, 0.0, 0.020]);
        assert_eq!(
            TransitionMatrix::liver().apply_transposed(&[0.5, 0.5]),
            Err(TransitionError::DimensionMismatch { k: 3, len: 2 })
        );
    }

    #[test]
    fn estimate_other_row_examples() {
        let row = estimate_other_row(&[43, 57]).unwrap();
        assert_abs_diff_eq!(row[0], 0.430, epsilon = 1e-15);
        assert_abs_diff_eq!(row[1], 0.570, epsilon = 1e-15);
        assert_eq!(row[2], 0.0);
        assert_eq!(estimate_other_row(&[1, 0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(estimate_other_row(&[10, 10, 20]).unwrap(), vec![0.25, 0.25, 0.5, 0.0]);
        assert_eq!(estimate_other_row(&[0, 0]), Err(TransitionError::AllZeroCounts));
    }

    #[test]
    fn json_round_trip_and_flat_form() {
        let q = TransitionMatrix::liver();
        assert_eq!(TransitionMatrix::from_json_str(&q.to_json()).unwrap(), q);
        let flat = r#"{"k": 2, "q": [0, 1, 1, 0]}"#;
        let swap = TransitionMatrix::from_json_str(flat).unwrap();
        assert_eq!(swap.rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(TransitionMatrix::from_json_str(r#"{"k": 3, "q": [0, 1, 1, 0]}"#).is_err());
    }

    #[test]
    fn qspec_accepts_names_and_inline_matrices() {
        let named: QSpec = serde_json::from_str(r#""mnist-q1""#).unwrap();
        assert_eq!(named.resolve().unwrap(), TransitionMatrix::mnist_q1());
        let inline: QSpec = serde_json::from_str(r#"{"k": 2, "q": [[0, 1], [1, 0]]}"#).unwrap();
        assert_eq!(inline.resolve().unwrap().k(), 2);
    }
}
