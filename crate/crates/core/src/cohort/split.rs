use std::collections::HashSet;

use rand::seq::SliceRandom;

use crate::cohort::record::PatientRecord;
use crate::cohort::CohortError;
use crate::rng;

pub const MIN_SPLIT_RECORDS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct CohortSplit {
    pub train: Vec<PatientRecord>,
    pub validation: Vec<PatientRecord>,
    pub test: Vec<PatientRecord>,
    pub seed: u64,
}

/// Seeded 8:1:1 split at the patient level. Records sharing a patient id
/// always land in the same partition.
pub fn split(records: &[PatientRecord], seed: u64) -> Result<CohortSplit, CohortError> {
    if records.len() < MIN_SPLIT_RECORDS {
        return Err(CohortError::TooFewRecords(records.len()));
    }
    let mut patients: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    for r in records {
        if seen.insert(r.patient_id.as_str()) {
            patients.push(&r.patient_id);
        }
    }
    let mut rng = rng::stream(rng::derive(seed, "split"), 0);
    patients.shuffle(&mut rng);
    let n = patients.len();
    let n_val = (n as f64 / 10.0).round() as usize;
    let n_test = n_val;
    let n_train = n - n_val - n_test;
    let part: std::collections::HashMap<&str, usize> = patients
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, if i < n_train { 0 } else if i < n_train + n_val { 1 } else { 2 }))
        .collect();
    let mut out = CohortSplit {
        train: Vec::with_capacity(n_train),
        validation: Vec::with_capacity(n_val),
        test: Vec::with_capacity(n_test),
        seed,
    };
    // keep the shuffled order within each partition
    let mut order: Vec<&PatientRecord> = records.iter().collect();
    let rank: std::collections::HashMap<&str, usize> = patients.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    order.sort_by_key(|r| rank[r.patient_id.as_str()]);
    for r in order {
        match part[r.patient_id.as_str()] {
            0 => out.train.push(r.clone()),
            1 => out.validation.push(r.clone()),
            _ => out.test.push(r.clone()),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::synth::{generate_synthetic, GeneratorConfig};
    use proptest::prelude::*;

    fn cohort(n: usize) -> Vec<PatientRecord> {
        let cfg = GeneratorConfig {
            n_patients: n,
            vocab_size: 20,
            ..Default::default()
        };
        generate_synthetic(&cfg, 11).unwrap().0
    }

    #[test]
    fn ratios_and_determinism() {
        let records = cohort(100);
        let s = split(&records, 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (80, 10, 10));
        assert_eq!(s, split(&records, 3).unwrap());
        assert_ne!(s.train, split(&records, 4).unwrap().train);
        assert!(matches!(split(&records[..9], 0), Err(CohortError::TooFewRecords(9))));
    }

    #[test]
    fn repeated_patient_ids_stay_together() {
        let mut records = cohort(30);
        for i in 0..30 {
            records[i].patient_id = format!("P{}", i / 2);
        }
        let s = split(&records, 1).unwrap();
        for part in [&s.train, &s.validation, &s.test] {
            for r in part.iter() {
                let mates = part.iter().filter(|o| o.patient_id == r.patient_id).count();
                assert_eq!(mates, 2);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn is_a_set_partition(n in 10usize..200, seed in any::<u64>()) {
            let records = cohort(n);
            let s = split(&records, seed).unwrap();
            let mut ids: Vec<&str> = s.train.iter().chain(&s.validation).chain(&s.test).map(|r| r.patient_id.as_str()).collect();
            prop_assert_eq!(ids.len(), n);
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
            let target = n as f64 / 10.0;
            prop_assert!((s.validation.len() as f64 - target).abs() <= 1.0);
            prop_assert!((s.test.len() as f64 - target).abs() <= 1.0);
            prop_assert!((s.train.len() as f64 - 8.0 * target).abs() <= 1.0);
        }
    }
}
