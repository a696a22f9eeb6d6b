use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::bayeslayers::{ParamStore, Pass, WeightMode};
use crate::numcore::{Tensor, TensorError, Var};
use crate::rng::{self, Rng};
use crate::seqmodel::encode::Encoded;
use crate::seqmodel::model::Model;
use crate::seqmodel::{ModelError, Task};
use crate::uq;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam moments per parameter plus the global step count.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub m: Vec<Tensor<f64>>,
    pub v: Vec<Tensor<f64>>,
    /// Drives batch shuffling; advanced once per epoch.
    pub rng: Rng,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        Self {
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
            rng: rng::stream(rng::derive(seed, "shuffle"), 0),
        }
    }

    fn ensure_moments(&mut self, store: &ParamStore<f64>) {
        if self.m.len() != store.len() {
            self.m = store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect();
            self.v = self.m.clone();
        }
    }

    /// One Adam update. Parameters without a gradient are left untouched.
    pub fn adam_step(&mut self, store: &mut ParamStore<f64>, grads: &[Option<Tensor<f64>>], lr: f64) {
        self.ensure_moments(store);
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (id, g) in store.ids().collect::<Vec<_>>().into_iter().zip(grads) {
            let Some(g) = g else { continue };
            let (m, v) = (self.m[id.0].data_mut(), self.v[id.0].data_mut());
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g.data()[j];
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g.data()[j] * g.data()[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            }
        }
    }
}

/// Builds the single-sample ELBO on `pass`: mean NLL of the batch plus
/// `β(step)·KL/n_train`. Deterministic models return the NLL node itself.
pub fn loss_elbo(model: &Model, pass: &mut Pass<'_, f64>, batch: &[&Encoded], step: u64, n_train: usize) -> Result<(Var, Var), ModelError> {
    let logits = model.forward(pass, batch)?;
    let nll = match model.config.task {
        Task::Binary => {
            let y: Vec<f64> = batch.iter().map(|e| e.label as f64).collect();
            pass.tape.bce_with_logits(logits, &y)?
        }
        Task::Multiclass(_) => {
            let y: Vec<usize> = batch.iter().map(|e| e.label).collect();
            pass.tape.softmax_cross_entropy(logits, &y)?
        }
    };
    let Some(kl) = pass.total_kl()? else { return Ok((nll, nll)) };
    let weight = model.config.kl_weight(step) / n_train.max(1) as f64;
    let scaled = pass.tape.scale(kl, weight)?;
    Ok((pass.tape.add(nll, scaled)?, nll))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Global weight draws used for the validation NLL of stochastic
    /// models.
    pub eval_samples: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            max_epochs: 40,
            patience: 5,
            eval_samples: 8,
        }
    }
}

/// One line of the training metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub kl_weight: f64,
    pub train_loss: f64,
    pub train_nll: f64,
    pub val_nll: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters the model holds after training.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    /// One JSON object per epoch.
    pub fn write_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.epochs {
            writeln!(out, "{}", serde_json::to_string(e).map_err(std::io::Error::other)?)?;
        }
        Ok(())
    }
}

/// NLL of marginalized predictions over `samples` global weight draws
/// (a single mean-weight pass for deterministic models).
pub fn validation_nll(model: &Model, data: &[Encoded], samples: usize) -> Result<f64, ModelError> {
    let rows = if model.is_stochastic() {
        let ps = crate::seqmodel::predict::predict_samples(model, data, samples.max(1), rng::derive(model.config.seed, "validation"))?;
        ps.marginal()
    } else {
        model.predict_mean(data)?
    };
    let labels: Vec<usize> = data.iter().map(|e| e.label).collect();
    let v = match model.config.task {
        Task::Binary => uq::nll(&rows.iter().map(|r| r[0]).collect::<Vec<_>>(), &labels)?,
        Task::Multiclass(_) => uq::nll_multiclass(&rows, &labels)?,
    };
    Ok(v)
}

/// Trains with Adam and early stopping on validation NLL, then restores the
/// best epoch's parameters.
pub fn train(model: &mut Model, train: &[Encoded], val: &[Encoded], opts: &TrainOptions) -> Result<History, ModelError> {
    if train.is_empty() || val.is_empty() {
        return Err(ModelError::EmptyData);
    }
    let mut history = History::default();
    let mut best = (f64::INFINITY, model.store.clone(), model.state.clone());
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let noise_seed = rng::derive(model.config.seed, "weight-noise");
    let prior = model.prior();
    for epoch in 1..=opts.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut model.state.rng);
        let (mut loss_sum, mut nll_sum) = (0.0, 0.0);
        for chunk in order.chunks(model.config.batch_size) {
            let batch: Vec<&Encoded> = chunk.iter().map(|&i| &train[i]).collect();
            let step = model.state.step + 1;
            let grads = {
                let mut pass = Pass::new(&model.store, WeightMode::Sample, rng::stream(noise_seed, step), prior);
                let (loss, nll) = loss_elbo(model, &mut pass, &batch, step, train.len()).map_err(|e| non_finite(e, epoch, step))?;
                loss_sum += pass.tape.value(loss).data()[0] * batch.len() as f64;
                nll_sum += pass.tape.value(nll).data()[0] * batch.len() as f64;
                pass.tape.backward(loss)?;
                pass.param_grads()
            };
            if grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(ModelError::NonFinite { epoch, step });
            }
            let lr = model.config.learning_rate;
            let Model { store, state, .. } = model;
            state.adam_step(store, &grads, lr);
        }
        let val_nll = validation_nll(model, val, opts.eval_samples)?;
        if !val_nll.is_finite() {
            return Err(ModelError::NonFinite { epoch, step: model.state.step });
        }
        let n = train.len() as f64;
        history.epochs.push(EpochRecord {
            epoch,
            step: model.state.step,
            kl_weight: model.config.kl_weight(model.state.step),
            train_loss: loss_sum / n,
            train_nll: nll_sum / n,
            val_nll,
        });
        log::info!("seed {} epoch {epoch}: train nll {:.4}, val nll {val_nll:.4}", model.config.seed, nll_sum / n);
        if val_nll < best.0 {
            best = (val_nll, model.store.clone(), model.state.clone());
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= opts.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    if history.best_epoch > 0 {
        model.store = best.1;
        model.state = best.2;
    }
    Ok(history)
}

fn non_finite(e: ModelError, epoch: usize, step: u64) -> ModelError {
    match e {
        ModelError::Tensor(TensorError::NonFinite { .. }) => ModelError::NonFinite { epoch, step },
        other => other,
    }
}

/// Rebuilds a shuffle rng from its serialized position.
pub(crate) fn rng_from_parts(seed: [u8; 32], stream: u64, word_pos: u128) -> Rng {
    let mut r = Rng::from_seed(seed);
    r.set_stream(stream);
    r.set_word_pos(word_pos);
    r
}
