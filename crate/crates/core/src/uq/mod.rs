//! Predictive-uncertainty statistics and evaluation metrics.
//!
//! Every function here is pure. Binary tasks pass positive-class
//! probabilities; multiclass tasks pass one probability row per example.

mod bootstrap;
mod calibration;
mod predictive;
mod ranking;
mod report;
mod scores;

use thiserror::Error;

pub use bootstrap::{bootstrap_ci, percentile, BootstrapCi, BOOTSTRAP_REDRAWS};
pub use calibration::{ace, ace_multiclass, calibration_bins, ece, ece_multiclass, BinScheme, CalibrationBins, DEFAULT_BINS};
pub use predictive::{dispersion, marginalize, Dispersion, PredictionSamples, PredictiveUncertainty};
pub use ranking::{auc_pr, auc_roc};
pub use report::{histogram, write_histogram_csv, write_metric_csv, Histogram, MetricReport};
pub use scores::{nll, nll_multiclass, top_k, TopK, NLL_EPSILON};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum UqError {
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("length mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("{0}: both classes must be present")]
    SingleClass(&'static str),
    #[error("{0}: at least one positive label required")]
    NoPositives(&'static str),
    #[error("value {value} at index {index} is not a probability")]
    NotProbability { index: usize, value: f64 },
    #[error("probability row {index} sums to {sum}")]
    NotSimplex { index: usize, sum: f64 },
    #[error("label {label} outside 0..{classes}")]
    BadLabel { label: usize, classes: usize },
    #[error("k = {k} must lie in 1..={classes}")]
    BadK { k: usize, classes: usize },
    #[error("bin count must be positive")]
    NoBins,
    #[error("ragged input: row {index} has {len} entries, expected {expected}")]
    Ragged { index: usize, len: usize, expected: usize },
    #[error("all {0} bootstrap resamples were degenerate")]
    AllResamplesDegenerate(usize),
}

use crate::Scalar;

pub(crate) fn check_lengths(left: usize, right: usize) -> Result<(), UqError> {
    if left != right {
        return Err(UqError::LengthMismatch { left, right });
    }
    Ok(())
}

pub(crate) fn check_probs<T: Scalar>(p: &[T]) -> Result<(), UqError> {
    for (index, &v) in p.iter().enumerate() {
        if !(v >= T::zero() && v <= T::one()) {
            return Err(UqError::NotProbability { index, value: v.as_f64() });
        }
    }
    Ok(())
}

pub(crate) fn check_binary_labels(labels: &[usize]) -> Result<(), UqError> {
    match labels.iter().find(|&&l| l > 1) {
        Some(&label) => Err(UqError::BadLabel { label, classes: 2 }),
        None => Ok(()),
    }
}

/// Validates an n×K probability matrix and its labels; returns K.
pub(crate) fn check_rows<T: Scalar>(rows: &[Vec<T>], labels: &[usize]) -> Result<usize, UqError> {
    check_lengths(rows.len(), labels.len())?;
    let k = rows.first().map(Vec::len).ok_or(UqError::Empty("probability matrix"))?;
    for (index, row) in rows.iter().enumerate() {
        if row.len() != k {
            return Err(UqError::Ragged { index, len: row.len(), expected: k });
        }
        check_probs(row)?;
        let sum: T = row.iter().copied().sum();
        if (sum - T::one()).abs() > T::lit(1e-6) {
            return Err(UqError::NotSimplex { index, sum: sum.as_f64() });
        }
        if labels[index] >= k {
            return Err(UqError::BadLabel { label: labels[index], classes: k });
        }
    }
    Ok(k)
}

/// Index of the largest entry; ties go to the lower index.
pub(crate) fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}
