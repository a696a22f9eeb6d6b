use std::collections::HashSet;

use rayon::prelude::*;

use crate::seqmodel::encode::Encoded;
use crate::seqmodel::model::Model;
use crate::seqmodel::predict::Ensemble;
use crate::seqmodel::train::{train, History, TrainOptions};
use crate::seqmodel::{ModelConfig, ModelError};

/// Replicas of one configuration that differ only in seed.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub base: ModelConfig,
    pub seeds: Vec<u64>,
}

impl EnsembleSpec {
    /// Seeds `seed_base, seed_base + 1, …`.
    pub fn new(base: ModelConfig, members: usize, seed_base: u64) -> Self {
        Self {
            base,
            seeds: (0..members as u64).map(|i| seed_base + i).collect(),
        }
    }

    pub fn member_config(&self, member: usize) -> ModelConfig {
        ModelConfig {
            seed: self.seeds[member],
            ..self.base.clone()
        }
    }
}

/// Trains every member concurrently. A member's parameters depend only on
/// its own seed and the data.
pub fn train_ensemble(
    spec: &EnsembleSpec,
    vocab_size: usize,
    num_ethnicities: usize,
    train_set: &[Encoded],
    val_set: &[Encoded],
    opts: &TrainOptions,
) -> Result<(Ensemble, Vec<History>), ModelError> {
    if spec.seeds.is_empty() {
        return Err(ModelError::InvalidSampleCount);
    }
    if spec.seeds.iter().collect::<HashSet<_>>().len() != spec.seeds.len() {
        log::warn!("ensemble seeds repeat; repeated members will be identical");
    }
    let trained: Vec<(Model, History)> = (0..spec.seeds.len())
        .into_par_iter()
        .map(|i| {
            let mut model = Model::new(spec.member_config(i), vocab_size, num_ethnicities)?;
            let history = train(&mut model, train_set, val_set, opts)?;
            Ok((model, history))
        })
        .collect::<Result<_, ModelError>>()?;
    let (members, histories) = trained.into_iter().unzip();
    Ok((Ensemble { members }, histories))
}
