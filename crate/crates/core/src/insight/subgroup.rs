use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::cohort::{AgeGroup, Gender, SubgroupLabels};
use crate::decide::DecisionDistribution;
use crate::insight::{pearson, InsightError};
use crate::uq::{dispersion, PredictionSamples, PredictiveUncertainty, UqError};

/// Named set of record indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Subgroup {
    pub name: String,
    pub members: Vec<usize>,
}

impl Subgroup {
    pub fn new(name: impl Into<String>, members: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            members,
        }
    }
}

pub fn gender_partition(labels: &SubgroupLabels) -> Vec<Subgroup> {
    [Gender::M, Gender::F]
        .into_iter()
        .map(|g| Subgroup::new(format!("gender_{g}"), labels.gender_members(g)))
        .collect()
}

/// Neonates followed by the four adult age quartiles.
pub fn age_partition(labels: &SubgroupLabels) -> Vec<Subgroup> {
    AgeGroup::ALL
        .into_iter()
        .map(|g| Subgroup::new(g.to_string(), labels.members(g)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum SubgroupFlag {
    Empty,
    /// Every member carries the same label.
    SingleClass,
    /// The metric failed for at least one model.
    MetricFailed(String),
}

impl fmt::Display for SubgroupFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubgroupFlag::Empty => f.write_str("empty"),
            SubgroupFlag::SingleClass => f.write_str("single_class"),
            SubgroupFlag::MetricFailed(e) => write!(f, "metric_failed: {e}"),
        }
    }
}

/// One metric evaluated per model on one subgroup.
#[derive(Clone, Debug, PartialEq)]
pub struct SubgroupReport {
    pub subgroup: String,
    pub size: usize,
    /// Fraction of members with a nonzero label; `None` when empty.
    pub prevalence: Option<f64>,
    /// One entry per model; `None` where the metric is undefined.
    pub values: Vec<Option<f64>>,
    pub flag: Option<SubgroupFlag>,
}

impl SubgroupReport {
    /// All per-model values, or `None` if any is missing.
    pub fn complete_values(&self) -> Option<Vec<f64>> {
        self.values.iter().copied().collect()
    }

    pub fn mean(&self) -> Option<f64> {
        let v = self.complete_values()?;
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Population standard deviation across models.
    pub fn std(&self) -> Option<f64> {
        let v = self.complete_values()?;
        let m = self.mean()?;
        Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt())
    }
}

fn check_members(partition: &[Subgroup], len: usize) -> Result<(), InsightError> {
    for g in partition {
        if let Some(&index) = g.members.iter().find(|&&i| i >= len) {
            return Err(InsightError::IndexOutOfRange { index, len });
        }
    }
    Ok(())
}

/// Evaluates `metric` separately for every (model, subgroup) pair. `samples`
/// holds one prediction set per ensemble member or frozen posterior draw.
/// Degenerate subgroups are kept and flagged.
pub fn stratified_metrics<F>(
    samples: &PredictionSamples<f64>,
    labels: &[usize],
    partition: &[Subgroup],
    metric: F,
) -> Result<Vec<SubgroupReport>, InsightError>
where
    F: Fn(&[Vec<f64>], &[usize]) -> Result<f64, UqError> + Sync,
{
    if samples.num_examples() != labels.len() {
        return Err(InsightError::LengthMismatch {
            left: samples.num_examples(),
            right: labels.len(),
        });
    }
    check_members(partition, labels.len())?;
    let members: Vec<Vec<Vec<f64>>> = (0..samples.num_samples()).map(|m| samples.member(m)).collect();
    Ok(partition
        .par_iter()
        .map(|g| {
            let sub_labels: Vec<usize> = g.members.iter().map(|&i| labels[i]).collect();
            let size = sub_labels.len();
            if size == 0 {
                return SubgroupReport {
                    subgroup: g.name.clone(),
                    size,
                    prevalence: None,
                    values: vec![None; members.len()],
                    flag: Some(SubgroupFlag::Empty),
                };
            }
            let prevalence = sub_labels.iter().filter(|&&l| l != 0).count() as f64 / size as f64;
            let mut flag = sub_labels.iter().all(|&l| l == sub_labels[0]).then_some(SubgroupFlag::SingleClass);
            let values = members
                .iter()
                .map(|rows| {
                    let sub: Vec<Vec<f64>> = g.members.iter().map(|&i| rows[i].clone()).collect();
                    match metric(&sub, &sub_labels) {
                        Ok(v) => Some(v),
                        Err(e) => {
                            if flag.is_none() {
                                flag = Some(SubgroupFlag::MetricFailed(e.to_string()));
                            }
                            None
                        }
                    }
                })
                .collect();
            SubgroupReport {
                subgroup: g.name.clone(),
                size,
                prevalence: Some(prevalence),
                values,
                flag,
            }
        })
        .collect())
}

/// Pearson correlation across models between two subgroups' metric values.
pub fn cross_subgroup_correlation(a: &SubgroupReport, b: &SubgroupReport) -> Result<f64, InsightError> {
    let degenerate = |r: &SubgroupReport| InsightError::Degenerate(r.subgroup.clone());
    let x = a.complete_values().ok_or_else(|| degenerate(a))?;
    let y = b.complete_values().ok_or_else(|| degenerate(b))?;
    if x.len() != y.len() {
        return Err(InsightError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(InsightError::TooFewModels(x.len()));
    }
    if let Some(r) = [a, b].into_iter().find(|r| r.size == 0 || x.iter().chain(&y).any(|v| !v.is_finite())) {
        return Err(degenerate(r));
    }
    pearson(&x, &y).ok_or(InsightError::ZeroVariance)
}

/// Mean dispersion of the predictive and decision distributions within a
/// subgroup. Means are NaN for an empty subgroup.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintySummary {
    pub subgroup: String,
    pub count: usize,
    pub mean_std: f64,
    pub mean_range: f64,
    /// Mean of `φ(1−φ)`.
    pub mean_decision_variance: f64,
}

/// Per-subgroup means of the positive-class std and range and of the
/// decision variance. Inputs are aligned with record indices.
pub fn uncertainty_by_subgroup(
    pus: &[PredictiveUncertainty<f64>],
    decisions: &[DecisionDistribution],
    partition: &[Subgroup],
) -> Result<Vec<UncertaintySummary>, InsightError> {
    if pus.len() != decisions.len() {
        return Err(InsightError::LengthMismatch {
            left: pus.len(),
            right: decisions.len(),
        });
    }
    check_members(partition, pus.len())?;
    let per_record: Vec<(f64, f64, f64)> = pus
        .par_iter()
        .zip(decisions)
        .map(|(pu, d)| {
            let disp = dispersion(pu);
            let last = pu.dim() - 1;
            (disp.std[last], disp.range[last], d.variance())
        })
        .collect();
    Ok(partition
        .iter()
        .map(|g| {
            let n = g.members.len();
            let mean = |f: fn(&(f64, f64, f64)) -> f64| {
                if n == 0 {
                    f64::NAN
                } else {
                    g.members.iter().map(|&i| f(&per_record[i])).sum::<f64>() / n as f64
                }
            };
            UncertaintySummary {
                subgroup: g.name.clone(),
                count: n,
                mean_std: mean(|r| r.0),
                mean_range: mean(|r| r.1),
                mean_decision_variance: mean(|r| r.2),
            }
        })
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

/// Wide table: one row per model, one column per subgroup.
pub fn write_subgroup_values_csv<W: Write>(reports: &[SubgroupReport], out: W) -> Result<(), InsightError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["model".to_string()];
    header.extend(reports.iter().map(|r| r.subgroup.clone()));
    w.write_record(&header)?;
    let models = reports.iter().map(|r| r.values.len()).max().unwrap_or(0);
    for m in 0..models {
        let mut row = vec![m.to_string()];
        row.extend(reports.iter().map(|r| opt(r.values.get(m).copied().flatten())));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One row per subgroup with size, prevalence, flag and the across-model
/// mean and population std of the metric.
pub fn write_subgroup_csv<W: Write>(reports: &[SubgroupReport], out: W) -> Result<(), InsightError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subgroup", "size", "prevalence", "flag", "mean", "std"])?;
    for r in reports {
        w.write_record([
            r.subgroup.clone(),
            r.size.to_string(),
            opt(r.prevalence),
            r.flag.as_ref().map(|f| f.to_string()).unwrap_or_default(),
            opt(r.mean()),
            opt(r.std()),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_uncertainty_csv<W: Write>(rows: &[UncertaintySummary], out: W) -> Result<(), InsightError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subgroup", "count", "mean_std", "mean_range", "mean_decision_variance"])?;
    for r in rows {
        w.write_record([
            r.subgroup.clone(),
            r.count.to_string(),
            num(r.mean_std),
            num(r.mean_range),
            num(r.mean_decision_variance),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
