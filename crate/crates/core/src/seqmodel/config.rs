use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bayeslayers::{StochasticityConfig, Variant, PRIOR_STD_MAX, PRIOR_STD_MIN};
use crate::seqmodel::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Binary,
    Multiclass(usize),
}

impl Task {
    /// Width of the output layer: one logit for binary, `K` otherwise.
    pub fn output_dim(&self) -> usize {
        match *self {
            Task::Binary => 1,
            Task::Multiclass(k) => k,
        }
    }

    pub fn num_classes(&self) -> usize {
        match *self {
            Task::Binary => 2,
            Task::Multiclass(k) => k,
        }
    }
}

/// Hyperparameter preset family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Published per-variant values.
    Paper,
    /// Shrunk dims and schedules for CPU-scale runs.
    #[default]
    Desk,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        })
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            _ => Err(format!("unknown profile `{s}` (expected desk or paper)")),
        }
    }
}

pub const BATCH_SIZES: [usize; 5] = [32, 64, 128, 256, 512];
pub const LEARNING_RATE_RANGE: (f64, f64) = (1e-5, 0.1);
pub const ANNEALING_RANGE: (u64, u64) = (1, 1_000_000);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub annealing_steps: u64,
    pub prior_std: f64,
    pub dense_embedding_dim: usize,
    pub embedding_dim_multiplier: f64,
    pub rnn_dim: usize,
    pub num_rnn_layers: usize,
    /// 0 disables the hidden layer.
    pub hidden_layer_dim: usize,
    pub stochasticity: StochasticityConfig,
    pub task: Task,
    pub seed: u64,
}

/// Per-variant published values: batch, lr, annealing, prior std, dense
/// embedding dim, multiplier, rnn dim, layers, hidden dim, bias uncertainty.
type Row = (usize, f64, u64, f64, usize, f64, usize, usize, usize, bool);

fn published_row(variant: Variant) -> Row {
    match variant {
        Variant::Deterministic | Variant::DeterministicEnsemble => (256, 3.035e-4, 1, 1.0, 32, 0.858, 1024, 1, 512, false),
        Variant::BayesianEmbeddings => (256, 1.238e-3, 972_200, 0.292, 32, 0.858, 1024, 1, 512, false),
        Variant::BayesianOutput => (256, 1.647e-4, 878_200, 0.149, 32, 0.858, 1024, 1, 512, false),
        Variant::BayesianHiddenOutput => (256, 2.710e-4, 991_200, 0.149, 32, 0.858, 1024, 1, 512, false),
        Variant::BayesianRnnHiddenOutput => (512, 1.488e-3, 634_200, 0.252, 32, 1.291, 16, 1, 0, true),
        Variant::FullyBayesian => (128, 1.265e-3, 998_300, 0.162, 256, 1.061, 16, 1, 0, true),
    }
}

impl ModelConfig {
    pub fn for_variant(variant: Variant, profile: Profile, task: Task, seed: u64) -> Self {
        let (batch, lr, anneal, prior, dense, mult, rnn, layers, hidden, bias) = published_row(variant);
        let mut cfg = Self {
            batch_size: batch,
            learning_rate: lr,
            annealing_steps: anneal,
            prior_std: prior,
            dense_embedding_dim: dense,
            embedding_dim_multiplier: mult,
            rnn_dim: rnn,
            num_rnn_layers: layers,
            hidden_layer_dim: hidden,
            stochasticity: variant.stochasticity(bias),
            task,
            seed,
        };
        if profile == Profile::Desk {
            cfg.batch_size = 64;
            cfg.rnn_dim = 32;
            cfg.annealing_steps = cfg.annealing_steps.min(2000);
            cfg.dense_embedding_dim = cfg.dense_embedding_dim.min(32);
            cfg.hidden_layer_dim = cfg.hidden_layer_dim.min(32);
            // desk cohorts give few steps per run; larger steps reach the
            // validation optimum within a handful of epochs
            cfg.learning_rate = (cfg.learning_rate * 4.0).min(1e-2);
        }
        cfg
    }

    /// Width of the sequential event embeddings.
    pub fn sequential_embedding_dim(&self) -> usize {
        ((self.dense_embedding_dim as f64 * self.embedding_dim_multiplier).round() as usize).max(1)
    }

    /// `min(1, step / annealing_steps)`.
    pub fn kl_weight(&self, step: u64) -> f64 {
        (step as f64 / self.annealing_steps.max(1) as f64).min(1.0)
    }

    /// Structural sanity required to build a model.
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be finite and non-negative", self.learning_rate));
        }
        if self.annealing_steps == 0 {
            return bad("annealing_steps must be at least 1".into());
        }
        if !(self.prior_std > 0.0 && self.prior_std.is_finite()) {
            return bad(format!("prior_std {} must be positive", self.prior_std));
        }
        if self.dense_embedding_dim == 0 || self.rnn_dim == 0 {
            return bad("embedding and rnn dims must be positive".into());
        }
        if !(self.embedding_dim_multiplier > 0.0 && self.embedding_dim_multiplier.is_finite()) {
            return bad("embedding_dim_multiplier must be positive".into());
        }
        if !(1..=3).contains(&self.num_rnn_layers) {
            return bad(format!("num_rnn_layers {} must be 1, 2 or 3", self.num_rnn_layers));
        }
        if let Task::Multiclass(k) = self.task {
            if k < 2 {
                return bad("multiclass tasks need at least 2 classes".into());
            }
        }
        Ok(())
    }

    /// Additionally checks the hyperparameter search ranges.
    pub fn validate_search_range(&self) -> Result<(), ModelError> {
        self.validate()?;
        let bad = |m: String| Err(ModelError::Config(m));
        if !BATCH_SIZES.contains(&self.batch_size) {
            return bad(format!("batch_size {} not in {BATCH_SIZES:?}", self.batch_size));
        }
        let (lo, hi) = LEARNING_RATE_RANGE;
        if !(lo..=hi).contains(&self.learning_rate) {
            return bad(format!("learning_rate {} outside [{lo}, {hi}]", self.learning_rate));
        }
        let (lo, hi) = ANNEALING_RANGE;
        if !(lo..=hi).contains(&self.annealing_steps) {
            return bad(format!("annealing_steps {} outside [{lo}, {hi}]", self.annealing_steps));
        }
        if self.stochasticity.any() && !(PRIOR_STD_MIN..=PRIOR_STD_MAX).contains(&self.prior_std) {
            return bad(format!("prior_std {} outside [{PRIOR_STD_MIN}, {PRIOR_STD_MAX}]", self.prior_std));
        }
        Ok(())
    }
}
