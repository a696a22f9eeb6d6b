//! Sensitivity-constrained thresholds, member-agreement decision
//! distributions and expected-cost decisions.

use std::cmp::Ordering;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::uq::{PredictionSamples, PredictiveUncertainty};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum DecideError {
    #[error("threshold search needs at least one positive label")]
    NoPositives,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("target recall {0} must lie in (0, 1]")]
    BadTarget(f64),
    #[error("label {0} is not binary")]
    BadLabel(usize),
    #[error("cost matrix must be square {0}x{0} with finite entries")]
    BadCostMatrix(usize),
    #[error("policy has {thresholds} thresholds for {samples} samples")]
    PolicyMismatch { thresholds: usize, samples: usize },
}

/// `1` iff `lambda >= t`.
pub fn decide(lambda: f64, t: f64) -> u8 {
    (lambda >= t) as u8
}

/// Confusion counts of the rule `score >= t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub positives: usize,
}

impl Counts {
    pub fn recall(&self) -> f64 {
        self.tp as f64 / self.positives as f64
    }

    /// Zero when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    /// Exact precision comparison by cross-multiplication.
    fn cmp_precision(&self, other: &Counts) -> Ordering {
        let lhs = self.tp as u128 * (other.tp + other.fp) as u128;
        let rhs = other.tp as u128 * (self.tp + self.fp) as u128;
        match (self.tp + self.fp, other.tp + other.fp) {
            (0, 0) => Ordering::Equal,
            (0, _) => 0u128.cmp(&(other.tp as u128)),
            (_, 0) => (self.tp as u128).cmp(&0),
            _ => lhs.cmp(&rhs),
        }
    }
}

pub fn counts_at(scores: &[f64], labels: &[usize], t: f64) -> Counts {
    let mut c = Counts {
        tp: 0,
        fp: 0,
        positives: 0,
    };
    for (&s, &l) in scores.iter().zip(labels) {
        c.positives += l;
        if decide(s, t) == 1 {
            if l == 1 {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
        }
    }
    c
}

fn validate(scores: &[f64], labels: &[usize], target: f64) -> Result<(), DecideError> {
    if scores.len() != labels.len() {
        return Err(DecideError::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if !(target > 0.0 && target <= 1.0) {
        return Err(DecideError::BadTarget(target));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(DecideError::BadLabel(l));
    }
    if !labels.contains(&1) {
        return Err(DecideError::NoPositives);
    }
    Ok(())
}

/// Threshold with maximal precision among those reaching `target_recall`,
/// searched over the observed scores and 0. Ties go to the highest
/// threshold.
pub fn optimize_threshold(scores: &[f64], labels: &[usize], target_recall: f64) -> Result<f64, DecideError> {
    validate(scores, labels, target_recall)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let mut best: Option<(Counts, f64)> = None;
    let mut consider = |c: Counts, t: f64| {
        if c.recall() >= target_recall && best.as_ref().is_none_or(|(b, _)| c.cmp_precision(b) == Ordering::Greater) {
            best = Some((c, t));
        }
    };
    // sweep distinct thresholds from high to low; strict improvement keeps
    // the highest threshold among precision ties
    let mut c = Counts { tp: 0, fp: 0, positives };
    let mut start = 0;
    while start < order.len() {
        let t = scores[order[start]];
        let mut end = start;
        while end < order.len() && scores[order[end]] == t {
            if labels[order[end]] == 1 {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
            end += 1;
        }
        consider(c, t);
        start = end;
    }
    if scores.iter().all(|&s| s > 0.0) {
        consider(c, 0.0);
    }
    Ok(best.expect("threshold 0 reaches recall 1").1)
}

/// Per-member thresholds and the recall they were calibrated for.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecisionPolicy {
    pub thresholds: Vec<f64>,
    pub target_recall: f64,
}

impl DecisionPolicy {
    /// Calibrates one threshold per sample on held-out predictions.
    pub fn calibrate(samples: &PredictionSamples<f64>, labels: &[usize], target_recall: f64) -> Result<Self, DecideError> {
        let thresholds = (0..samples.num_samples())
            .map(|m| optimize_threshold(&samples.member_positive(m), labels, target_recall))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            thresholds,
            target_recall,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecisionDistribution {
    pub decisions: Vec<u8>,
    /// Fraction of members deciding positive.
    pub phi: f64,
}

impl DecisionDistribution {
    /// Variance `φ(1−φ)` of the implied Bernoulli decision.
    pub fn variance(&self) -> f64 {
        self.phi * (1.0 - self.phi)
    }
}

/// Member decisions `λ⁽ᵐ⁾ ≥ t⁽ᵐ⁾` for a binary predictive distribution.
pub fn decision_distribution(pu: &PredictiveUncertainty<f64>, policy: &DecisionPolicy) -> Result<DecisionDistribution, DecideError> {
    if policy.thresholds.len() != pu.num_samples() {
        return Err(DecideError::PolicyMismatch {
            thresholds: policy.thresholds.len(),
            samples: pu.num_samples(),
        });
    }
    let decisions: Vec<u8> = pu
        .samples()
        .iter()
        .zip(&policy.thresholds)
        .map(|(s, &t)| decide(s[s.len() - 1], t))
        .collect();
    let phi = decisions.iter().map(|&d| d as usize).sum::<usize>() as f64 / decisions.len() as f64;
    Ok(DecisionDistribution { decisions, phi })
}

/// `L[k][j]`: cost of predicting `j` when the truth is `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    costs: Vec<Vec<f64>>,
}

impl CostMatrix {
    pub fn new(costs: Vec<Vec<f64>>) -> Result<Self, DecideError> {
        let k = costs.len();
        if k == 0 || costs.iter().any(|r| r.len() != k || r.iter().any(|v| !v.is_finite())) {
            return Err(DecideError::BadCostMatrix(k));
        }
        Ok(Self { costs })
    }

    /// `1 − I`.
    pub fn zero_one(k: usize) -> Self {
        Self {
            costs: (0..k).map(|i| (0..k).map(|j| if i == j { 0.0 } else { 1.0 }).collect()).collect(),
        }
    }

    pub fn classes(&self) -> usize {
        self.costs.len()
    }

    pub fn expected_costs(&self, probs: &[f64]) -> Vec<f64> {
        (0..self.classes())
            .map(|j| (0..self.classes()).map(|k| self.costs[k][j] * probs[k]).sum())
            .collect()
    }
}

/// Class minimizing expected cost; ties go to the lowest index.
pub fn bayes_decision(probs: &[f64], costs: &CostMatrix) -> Result<usize, DecideError> {
    if probs.len() != costs.classes() {
        return Err(DecideError::LengthMismatch {
            left: probs.len(),
            right: costs.classes(),
        });
    }
    let expected = costs.expected_costs(probs);
    let mut best = 0;
    for j in 1..expected.len() {
        if expected[j] < expected[best] {
            best = j;
        }
    }
    Ok(best)
}

/// One row of the per-patient decision report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecisionRow {
    pub patient_id: String,
    pub mean_lambda: f64,
    pub std_lambda: f64,
    pub phi: f64,
    pub decision_at_mean: u8,
}

pub fn write_decision_csv<W: Write>(rows: &[DecisionRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
