//! Seeded synthetic cohort generator.
//!
//! Labels come from a logistic risk over context plus subgroup-scaled
//! noise. Event tokens are drawn from label-conditional tilts of a Zipf
//! distribution whose mixture over labels is the Zipf distribution itself,
//! so token frequencies follow the configured law while carrying signal.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::record::{Context, Event, Gender, PatientRecord, TokenTable, Vocabulary, NEONATE_MAX_AGE_YEARS};
use crate::cohort::CohortError;
use crate::rng::{self, Rng};

pub const ETHNICITIES: [(&str, f64); 5] = [
    ("white", 0.60),
    ("black", 0.15),
    ("hispanic", 0.10),
    ("asian", 0.05),
    ("other", 0.10),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub vocab_size: usize,
    /// 2 for the binary task, more for multiclass.
    pub num_classes: usize,
    /// Binary only.
    pub positive_rate: f64,
    pub neonate_rate: f64,
    pub zipf_exponent: f64,
    pub max_days: usize,
    /// Mean events per non-empty day beyond the first.
    pub events_per_day: f64,
    /// Strength of the label-conditional token tilt, in `[0, 1)`.
    pub token_signal: f64,
    pub empty_day_rate: f64,
    pub no_event_rate: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_patients: 5000,
            vocab_size: 300,
            num_classes: 2,
            positive_rate: 0.2,
            neonate_rate: 0.12,
            zipf_exponent: 1.1,
            max_days: 8,
            events_per_day: 2.0,
            token_signal: 0.7,
            empty_day_rate: 0.08,
            no_event_rate: 0.01,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), CohortError> {
        let bad = |m: &str| Err(CohortError::InvalidConfig(m.to_string()));
        if self.n_patients == 0 {
            return bad("n_patients must be positive");
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must be at least 2");
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return bad("positive_rate must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.neonate_rate) {
            return bad("neonate_rate must lie in [0, 1]");
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return bad("zipf_exponent must be finite and non-negative");
        }
        if self.max_days == 0 {
            return bad("max_days must be positive");
        }
        if !(self.events_per_day >= 0.0 && self.events_per_day.is_finite()) {
            return bad("events_per_day must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.token_signal) {
            return bad("token_signal must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.empty_day_rate) || !(0.0..1.0).contains(&self.no_event_rate) {
            return bad("empty_day_rate and no_event_rate must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Normalized Zipf weights `∝ 1/(j+1)^s`.
pub fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|j| ((j + 1) as f64).powf(-exponent)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Token loadings in `[-1, 1]` with zero mean under `weights`.
fn centered_loadings(rng: &mut Rng, weights: &[f64]) -> Vec<f64> {
    let mut l: Vec<f64> = weights.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let mean: f64 = l.iter().zip(weights).map(|(a, w)| a * w).sum();
    l.iter_mut().for_each(|v| *v -= mean);
    let peak = l.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        l.iter_mut().for_each(|v| *v /= peak);
    }
    l
}

/// Inverse-CDF sampler over a discrete distribution.
struct Categorical {
    cdf: Vec<f64>,
}

impl Categorical {
    fn new(p: &[f64]) -> Self {
        let mut acc = 0.0;
        let total: f64 = p.iter().sum();
        let cdf = p
            .iter()
            .map(|&v| {
                acc += v / total;
                acc
            })
            .collect();
        Self { cdf }
    }

    fn sample(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intercept `b` with `mean(sigmoid(z + b)) == target`.
fn calibrate_intercept(z: &[f64], target: f64) -> f64 {
    let mean_at = |b: f64| z.iter().map(|&v| sigmoid(v + b)).sum::<f64>() / z.len() as f64;
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Systematic sampling: marginal inclusion probability of unit `i` is
/// `p[i]`, and the total count is within one of `Σ p`.
fn systematic_bernoulli(rng: &mut Rng, p: &[f64]) -> Vec<bool> {
    let start: f64 = rng.random();
    let mut cum = 0.0;
    p.iter()
        .map(|&pi| {
            let before = (cum - start).floor();
            cum += pi;
            (cum - start).floor() > before
        })
        .collect()
}

pub fn token_name(id: usize) -> String {
    let family = ["med", "lab", "note"][id % 3];
    format!("{family}_{id:04}")
}

struct Draft {
    context: Context,
    logit: f64,
    class_scores: Vec<f64>,
}

/// Generates `config.n_patients` records and a vocabulary whose counts
/// cover the whole cohort.
pub fn generate_synthetic(config: &GeneratorConfig, seed: u64) -> Result<(Vec<PatientRecord>, Vocabulary), CohortError> {
    config.validate()?;
    let mut rng = rng::stream(rng::derive(seed, "cohort"), 0);
    let zipf = zipf_weights(config.vocab_size, config.zipf_exponent);
    let k = config.num_classes;
    let loadings: Vec<Vec<f64>> = (0..if k == 2 { 1 } else { k })
        .map(|_| centered_loadings(&mut rng, &zipf))
        .collect();
    let eth = Categorical::new(&ETHNICITIES.map(|(_, p)| p));
    let noise = Normal::new(0.0, 1.0).expect("valid normal");

    let drafts: Vec<Draft> = (0..config.n_patients)
        .map(|_| {
            let gender = if rng.random_bool(0.45) { Gender::F } else { Gender::M };
            let ethnicity = ETHNICITIES[eth.sample(&mut rng)].0.to_string();
            let neonate = rng.random_bool(config.neonate_rate);
            let age_years = if neonate {
                rng.random_range(0.0..NEONATE_MAX_AGE_YEARS)
            } else {
                rng.random_range(18.0..90.0)
            };
            let age_norm = if neonate { 0.0 } else { (age_years - 54.0) / 20.0 };
            // noise scale grows with age; neonates sit in between
            let noise_scale = if neonate { 0.9 } else { 0.4 + 0.8 * (age_years - 18.0) / 72.0 };
            let female = if gender == Gender::F { 1.0 } else { 0.0 };
            let logit = 0.8 * age_norm + 0.15 * female + if neonate { 0.3 } else { 0.0 }
                + noise_scale * noise.sample(&mut rng);
            let class_scores = (0..k).map(|c| 0.3 * age_norm * (c as f64 - 1.0) + noise.sample(&mut rng)).collect();
            Draft {
                context: Context {
                    gender,
                    age_years,
                    ethnicity,
                },
                logit,
                class_scores,
            }
        })
        .collect();

    let labels: Vec<usize> = if k == 2 {
        let z: Vec<f64> = drafts.iter().map(|d| d.logit).collect();
        let b = calibrate_intercept(&z, config.positive_rate);
        let p: Vec<f64> = z.iter().map(|&v| sigmoid(v + b)).collect();
        systematic_bernoulli(&mut rng, &p).into_iter().map(usize::from).collect()
    } else {
        drafts
            .iter()
            .map(|d| {
                let m = d.class_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = d.class_scores.iter().map(|s| (s - m).exp()).collect();
                Categorical::new(&w).sample(&mut rng)
            })
            .collect()
    };

    let a = config.token_signal;
    let token_dists: Vec<Categorical> = if k == 2 {
        let pi = config.positive_rate;
        let neg_scale = a * pi / (1.0 - pi);
        let neg: Vec<f64> = zipf.iter().zip(&loadings[0]).map(|(z, l)| z * (1.0 - neg_scale * l)).collect();
        let pos: Vec<f64> = zipf.iter().zip(&loadings[0]).map(|(z, l)| z * (1.0 + a * l)).collect();
        vec![Categorical::new(&neg), Categorical::new(&pos)]
    } else {
        loadings
            .iter()
            .map(|l| Categorical::new(&zipf.iter().zip(l).map(|(z, v)| z * (1.0 + a * v)).collect::<Vec<_>>()))
            .collect()
    };

    let per_day = Poisson::new(config.events_per_day.max(1e-9)).expect("valid rate");
    let mut vocab = Vocabulary {
        events: TokenTable::from_tokens((0..config.vocab_size).map(token_name)),
        ethnicities: TokenTable::from_tokens(ETHNICITIES.iter().map(|(e, _)| e.to_string())),
    };
    let mut records = Vec::with_capacity(config.n_patients);
    for (i, (draft, &label)) in drafts.into_iter().zip(&labels).enumerate() {
        let days = rng.random_range(1..=config.max_days);
        let los = (days - 1) as f64 + rng.random_range(0.1..1.0);
        let mut events = Vec::new();
        if !rng.random_bool(config.no_event_rate) {
            for d in 0..days {
                let last = d + 1 == days;
                if d > 0 && !last && rng.random_bool(config.empty_day_rate) {
                    continue;
                }
                let n_events = 1 + per_day.sample(&mut rng) as usize;
                let day_end = if last { los * 24.0 } else { (d + 1) as f64 * 24.0 };
                for _ in 0..n_events {
                    let t = rng.random_range(d as f64 * 24.0..day_end);
                    let feature_id = token_dists[label].sample(&mut rng);
                    let value = rng.random_bool(0.3).then(|| {
                        let v: f64 = rng.sample(StandardNormal);
                        (v * 1000.0).round() / 1000.0
                    });
                    events.push(Event {
                        time_offset_hours: (t * 100.0).floor() / 100.0,
                        feature_id,
                        value,
                    });
                }
            }
        }
        let mut record = PatientRecord {
            patient_id: format!("P{i:06}"),
            context: draft.context,
            events,
            label,
            length_of_stay_days: (los * 1000.0).round() / 1000.0,
        };
        record.sort_events();
        records.push(record);
    }
    vocab.recount(&records);
    Ok((records, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::io::write_records;

    #[test]
    fn positive_rate_is_on_target() {
        for seed in [1, 7, 42] {
            let cfg = GeneratorConfig {
                n_patients: 1000,
                ..Default::default()
            };
            let (records, _) = generate_synthetic(&cfg, seed).unwrap();
            let frac = records.iter().filter(|r| r.label == 1).count() as f64 / 1000.0;
            assert!((0.18..=0.22).contains(&frac), "seed {seed}: {frac}");
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = GeneratorConfig {
            n_patients: 200,
            ..Default::default()
        };
        let bytes = |seed| {
            let (records, vocab) = generate_synthetic(&cfg, seed).unwrap();
            let mut buf = Vec::new();
            write_records(&records, &vocab, &mut buf).unwrap();
            vocab.events.write_tsv(&mut buf).unwrap();
            buf
        };
        assert_eq!(bytes(3), bytes(3));
        assert_ne!(bytes(3), bytes(4));
    }

    #[test]
    fn token_frequencies_follow_zipf() {
        // chi-square goodness of fit on ~1e5 events, bound at mean + 5 sd
        let cfg = GeneratorConfig {
            n_patients: 11_000,
            vocab_size: 150,
            ..Default::default()
        };
        let (records, vocab) = generate_synthetic(&cfg, 5).unwrap();
        let total: u64 = vocab.events.counts().iter().sum();
        assert!(total >= 100_000, "{total}");
        let expected = zipf_weights(cfg.vocab_size, cfg.zipf_exponent);
        let chi2: f64 = vocab
            .events
            .counts()
            .iter()
            .zip(&expected)
            .map(|(&o, &p)| {
                let e = p * total as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        let dof = (cfg.vocab_size - 1) as f64;
        assert!(chi2 < dof + 5.0 * (2.0 * dof).sqrt(), "chi2 {chi2} dof {dof}");
        assert!(records.iter().all(|r| r.events_sorted()));
    }

    #[test]
    fn neonates_present_and_multiclass_labels_in_range() {
        let cfg = GeneratorConfig {
            n_patients: 500,
            num_classes: 5,
            ..Default::default()
        };
        let (records, _) = generate_synthetic(&cfg, 2).unwrap();
        assert!(records.iter().all(|r| r.label < 5));
        assert!(records.iter().any(|r| r.context.is_neonate()));
        for c in 0..5 {
            assert!(records.iter().any(|r| r.label == c));
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = GeneratorConfig {
            positive_rate: 1.5,
            ..Default::default()
        };
        assert!(generate_synthetic(&bad, 0).is_err());
        let bad = GeneratorConfig {
            n_patients: 0,
            ..Default::default()
        };
        assert!(generate_synthetic(&bad, 0).is_err());
    }

    #[test]
    fn systematic_sampling_hits_expected_total() {
        let mut rng = rng::stream(1, 0);
        let p: Vec<f64> = (0..997).map(|i| (i % 10) as f64 / 10.0).collect();
        let total: f64 = p.iter().sum();
        let got = systematic_bernoulli(&mut rng, &p).into_iter().filter(|&b| b).count() as f64;
        assert!((got - total).abs() <= 1.0);
    }
}
