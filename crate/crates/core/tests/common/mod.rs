//! Fixtures and oracles shared by the integration tests.
#![allow(dead_code)]

use ehr_uq::bayeslayers::{Pass, Variant, WeightMode};
use ehr_uq::cohort::{generate_synthetic, split, Context, Event, Gender, GeneratorConfig, PatientRecord, Vocabulary};
use ehr_uq::rng;
use ehr_uq::seqmodel::{encode, loss_elbo, Encoded, Model, ModelConfig, Profile, Task};

pub struct Data {
    pub vocab: Vocabulary,
    pub train: Vec<Encoded>,
    pub val: Vec<Encoded>,
    pub test: Vec<Encoded>,
}

/// Generated cohort, split and encoded, with training-split counts.
pub fn cohort(n: usize, vocab_size: usize, seed: u64) -> Data {
    let cfg = GeneratorConfig {
        n_patients: n,
        vocab_size,
        ..Default::default()
    };
    let (records, mut vocab) = generate_synthetic(&cfg, seed).unwrap();
    let s = split(&records, seed).unwrap();
    vocab.recount(&s.train);
    Data {
        train: encode(&s.train, &vocab).unwrap(),
        val: encode(&s.validation, &vocab).unwrap(),
        test: encode(&s.test, &vocab).unwrap(),
        vocab,
    }
}

/// Small desk-profile config for fast tests.
pub fn tiny_config(variant: Variant, seed: u64) -> ModelConfig {
    let mut c = ModelConfig::for_variant(variant, Profile::Desk, Task::Binary, seed);
    c.rnn_dim = 6;
    c.dense_embedding_dim = 4;
    c.hidden_layer_dim = if c.hidden_layer_dim > 0 { 5 } else { 0 };
    c.batch_size = 32;
    c
}

pub fn record(id: &str, events: &[(f64, usize)], label: usize, age: f64) -> PatientRecord {
    PatientRecord {
        patient_id: id.into(),
        context: Context {
            gender: if label == 1 { Gender::F } else { Gender::M },
            age_years: age,
            ethnicity: "white".into(),
        },
        events: events
            .iter()
            .map(|&(t, f)| Event {
                time_offset_hours: t,
                feature_id: f,
                value: None,
            })
            .collect(),
        label,
        length_of_stay_days: 3.0,
    }
}

/// ELBO value with weight noise fixed by `noise_seed`.
pub fn elbo_value(model: &Model, batch: &[&Encoded], noise_seed: u64, step: u64, n_train: usize) -> f64 {
    let mut pass = Pass::new(&model.store, WeightMode::Sample, rng::stream(noise_seed, 0), model.prior());
    let (loss, _) = loss_elbo(model, &mut pass, batch, step, n_train).unwrap();
    pass.tape.value(loss).data()[0]
}

/// Autodiff gradient and central differences of the ELBO over up to
/// `per_tensor` coordinates of every parameter tensor, using common random
/// numbers. Returns `‖ad − fd‖ / max(‖ad‖, ‖fd‖)`.
pub fn elbo_fd_relative_error(model: &mut Model, batch: &[&Encoded], noise_seed: u64, per_tensor: usize) -> f64 {
    let (step, n_train) = (model.config.annealing_steps / 2 + 1, 50);
    let grads = {
        let mut pass = Pass::new(&model.store, WeightMode::Sample, rng::stream(noise_seed, 0), model.prior());
        let (loss, _) = loss_elbo(model, &mut pass, batch, step, n_train).unwrap();
        pass.tape.backward(loss).unwrap();
        pass.param_grads()
    };
    let h = 1e-5;
    let (mut diff2, mut ad2, mut fd2) = (0.0, 0.0, 0.0);
    let ids: Vec<_> = model.store.ids().collect();
    let mut pick = rng::stream(noise_seed, 1);
    for id in ids {
        let len = model.store.get(id).len();
        let coords: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            use rand::Rng;
            (0..per_tensor).map(|_| pick.random_range(0..len)).collect()
        };
        for j in coords {
            let orig = model.store.get(id).data()[j];
            model.store.get_mut(id).data_mut()[j] = orig + h;
            let up = elbo_value(model, batch, noise_seed, step, n_train);
            model.store.get_mut(id).data_mut()[j] = orig - h;
            let down = elbo_value(model, batch, noise_seed, step, n_train);
            model.store.get_mut(id).data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * h);
            let ad = grads[id.0].as_ref().map(|g| g.data()[j]).unwrap_or(0.0);
            diff2 += (ad - fd).powi(2);
            ad2 += ad * ad;
            fd2 += fd * fd;
        }
    }
    diff2.sqrt() / ad2.sqrt().max(fd2.sqrt()).max(1e-300)
}

/// Two patients with events on several days, one empty day and distinct
/// sequence lengths.
pub fn two_patient_batch(vocab_size: usize) -> Vec<Encoded> {
    let vocab = {
        let mut v = Vocabulary::default();
        for i in 0..vocab_size {
            v.events.insert(&format!("t{i}"));
        }
        v.ethnicities.insert("white");
        v
    };
    let a = record("a", &[(1.0, 0), (5.0, 2 % vocab_size), (30.0, 1 % vocab_size), (80.0, 3 % vocab_size)], 1, 67.0);
    let b = record("b", &[(2.0, 1 % vocab_size), (3.0, 1 % vocab_size)], 0, 0.02);
    encode(&[a, b], &vocab).unwrap()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
