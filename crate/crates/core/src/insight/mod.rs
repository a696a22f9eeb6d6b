//! Subgroup-stratified performance and uncertainty, and the relation
//! between embedding uncertainty and token frequency.

mod entropy;
mod subgroup;

use thiserror::Error;

use crate::numcore::TensorError;
use crate::uq::UqError;

pub use entropy::{entropy_frequency_report, write_entropy_csv, EntropyRanking, EntropyRow};
pub use subgroup::{
    age_partition, cross_subgroup_correlation, gender_partition, stratified_metrics, uncertainty_by_subgroup, write_subgroup_csv,
    write_subgroup_values_csv, write_uncertainty_csv, Subgroup, SubgroupFlag, SubgroupReport, UncertaintySummary,
};

#[derive(Debug, Error)]
pub enum InsightError {
    #[error("correlation needs at least 3 models, got {0}")]
    TooFewModels(usize),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("subgroup `{0}` has no usable metric values")]
    Degenerate(String),
    #[error("correlation undefined: a metric vector has zero variance")]
    ZeroVariance,
    #[error("record index {index} outside 0..{len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("event embeddings are deterministic; no entropy to rank")]
    NotStochastic,
    #[error(transparent)]
    Metric(#[from] UqError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Sample Pearson correlation, clamped to [-1, 1]. `None` when either side
/// has fewer than two values or zero variance, or the lengths differ.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let constant = |s: &[f64]| s.iter().all(|&v| v == s[0]);
    if x.len() != y.len() || x.len() < 2 || constant(x) || constant(y) {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 || !(sxx * syy).is_finite() {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
