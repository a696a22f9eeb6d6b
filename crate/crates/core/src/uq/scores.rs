use crate::uq::{check_binary_labels, check_lengths, check_probs, check_rows, UqError};
use crate::Scalar;

/// Probabilities are clipped to `[ε, 1−ε]` before taking logs.
pub const NLL_EPSILON: f64 = 1e-12;

fn clipped_neg_log<T: Scalar>(p: T) -> T {
    let eps = T::lit(NLL_EPSILON);
    -p.max(eps).min(T::one() - eps).ln()
}

/// Mean negative log-likelihood of binary labels under positive-class
/// probabilities.
pub fn nll<T: Scalar>(probs: &[T], labels: &[usize]) -> Result<T, UqError> {
    check_lengths(probs.len(), labels.len())?;
    if probs.is_empty() {
        return Err(UqError::Empty("nll"));
    }
    check_probs(probs)?;
    check_binary_labels(labels)?;
    let total: T = probs
        .iter()
        .zip(labels)
        .map(|(&p, &l)| clipped_neg_log(if l == 1 { p } else { T::one() - p }))
        .sum();
    Ok(total / T::count(probs.len()))
}

pub fn nll_multiclass<T: Scalar>(rows: &[Vec<T>], labels: &[usize]) -> Result<T, UqError> {
    check_rows(rows, labels)?;
    let total: T = rows.iter().zip(labels).map(|(r, &l)| clipped_neg_log(r[l])).sum();
    Ok(total / T::count(rows.len()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TopK<T> {
    pub recall: T,
    pub precision: T,
    pub f1: T,
}

/// Top-k metrics for single-label multiclass prediction. Equal
/// probabilities rank the lower class index first.
pub fn top_k<T: Scalar>(rows: &[Vec<T>], labels: &[usize], k: usize) -> Result<TopK<T>, UqError> {
    let classes = check_rows(rows, labels)?;
    if k == 0 || k > classes {
        return Err(UqError::BadK { k, classes });
    }
    let hits = rows
        .iter()
        .zip(labels)
        .filter(|(r, &y)| {
            let ahead = (0..classes).filter(|&j| r[j] > r[y] || (r[j] == r[y] && j < y)).count();
            ahead < k
        })
        .count();
    let recall = T::count(hits) / T::count(rows.len());
    let precision = recall / T::count(k);
    let f1 = if recall > T::zero() {
        T::lit(2.0) * precision * recall / (precision + recall)
    } else {
        T::zero()
    };
    Ok(TopK { recall, precision, f1 })
}
