use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cohort::record::{Gender, PatientRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeGroup {
    Neonate,
    /// Adult quartile 0..=3 of the cohort's non-neonate age distribution.
    Quartile(u8),
}

impl AgeGroup {
    pub const ALL: [AgeGroup; 5] = [
        AgeGroup::Neonate,
        AgeGroup::Quartile(0),
        AgeGroup::Quartile(1),
        AgeGroup::Quartile(2),
        AgeGroup::Quartile(3),
    ];
}

impl fmt::Display for AgeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgeGroup::Neonate => f.write_str("neonate"),
            AgeGroup::Quartile(q) => write!(f, "age_q{}", q + 1),
        }
    }
}

/// Per-record subgroup membership, aligned with the input order.
#[derive(Clone, Debug, PartialEq)]
pub struct SubgroupLabels {
    pub gender: Vec<Gender>,
    pub age: Vec<AgeGroup>,
    /// Upper age bound (inclusive) of each adult quartile; `None` when the
    /// quartile is empty.
    pub quartile_max_age: [Option<f64>; 4],
}

impl SubgroupLabels {
    pub fn members(&self, group: AgeGroup) -> Vec<usize> {
        (0..self.age.len()).filter(|&i| self.age[i] == group).collect()
    }

    pub fn gender_members(&self, gender: Gender) -> Vec<usize> {
        (0..self.gender.len()).filter(|&i| self.gender[i] == gender).collect()
    }
}

/// Gender partition plus neonates and adult age quartiles. Adults are
/// ranked by age; rank `r` of `n` goes to quartile `floor(4r/n)`, and tied
/// ages all take the quartile of the lowest rank in the tie.
pub fn subgroups(records: &[PatientRecord]) -> SubgroupLabels {
    let mut age = vec![AgeGroup::Neonate; records.len()];
    let mut adults: Vec<usize> = (0..records.len()).filter(|&i| !records[i].context.is_neonate()).collect();
    adults.sort_by(|&a, &b| records[a].context.age_years.total_cmp(&records[b].context.age_years).then(a.cmp(&b)));
    let n = adults.len();
    let mut quartile_max_age = [None; 4];
    let mut prev: Option<(f64, u8)> = None;
    for (rank, &i) in adults.iter().enumerate() {
        let a = records[i].context.age_years;
        let q = match prev {
            Some((pa, pq)) if pa == a => pq,
            _ => (4 * rank / n) as u8,
        };
        prev = Some((a, q));
        age[i] = AgeGroup::Quartile(q);
        quartile_max_age[q as usize] = Some(a);
    }
    SubgroupLabels {
        gender: records.iter().map(|r| r.context.gender).collect(),
        age,
        quartile_max_age,
    }
}
