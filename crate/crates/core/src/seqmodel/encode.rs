use crate::cohort::{day_bagging, PatientRecord, Vocabulary, NEONATE_MAX_AGE_YEARS};
use crate::seqmodel::ModelError;

/// Upper age bounds (exclusive) of the context age buckets after the
/// neonate bucket; the last bucket is open-ended.
pub const AGE_BUCKET_BOUNDS: [f64; 4] = [30.0, 45.0, 60.0, 75.0];
pub const NUM_AGE_BUCKETS: usize = AGE_BUCKET_BOUNDS.len() + 2;

pub fn age_bucket(age_years: f64) -> usize {
    if age_years < NEONATE_MAX_AGE_YEARS {
        return 0;
    }
    1 + AGE_BUCKET_BOUNDS.iter().filter(|&&b| age_years >= b).count()
}

/// A record in model-ready form.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub patient_id: String,
    /// Feature ids per day block; at least one (possibly empty) block.
    pub days: Vec<Vec<usize>>,
    pub gender: usize,
    /// Index into the ethnicity table; unknown ethnicities map to the
    /// extra last row.
    pub ethnicity: usize,
    pub age_bucket: usize,
    pub label: usize,
}

pub fn encode(records: &[PatientRecord], vocab: &Vocabulary) -> Result<Vec<Encoded>, ModelError> {
    let v = vocab.events.len();
    let unknown = vocab.ethnicities.len();
    records
        .iter()
        .map(|r| {
            if let Some(e) = r.events.iter().find(|e| e.feature_id >= v) {
                return Err(ModelError::VocabMismatch {
                    feature_id: e.feature_id,
                    vocab_size: v,
                });
            }
            Ok(Encoded {
                patient_id: r.patient_id.clone(),
                days: day_bagging(r),
                gender: r.context.gender.index(),
                ethnicity: vocab.ethnicities.id(&r.context.ethnicity).unwrap_or(unknown),
                age_bucket: age_bucket(r.context.age_years),
                label: r.label,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buckets() {
        let got: Vec<usize> = [0.0, 0.5, 29.9, 30.0, 44.0, 59.0, 74.9, 75.0, 99.0].iter().map(|&a| age_bucket(a)).collect();
        assert_eq!(got, vec![0, 1, 1, 2, 2, 3, 4, 5, 5]);
    }
}
