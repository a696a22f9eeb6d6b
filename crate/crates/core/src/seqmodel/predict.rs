use rayon::prelude::*;

use crate::rng;
use crate::seqmodel::encode::Encoded;
use crate::seqmodel::model::Model;
use crate::seqmodel::ModelError;
use crate::uq::PredictionSamples;

/// How weight draws are shared between examples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SamplingMode {
    /// Draw `m` uses the same weights for every example, so sample `m` is
    /// one function evaluated over the whole dataset.
    #[default]
    Global,
    /// Each example gets its own draws, seeded by its patient id.
    PerExample,
}

const PREDICT_BATCH: usize = 256;

/// `m` predictive samples per example from one model. Deterministic models
/// repeat their single function.
pub fn predict_samples(model: &Model, data: &[Encoded], m: usize, seed: u64) -> Result<PredictionSamples<f64>, ModelError> {
    predict_samples_with(model, data, m, seed, SamplingMode::Global)
}

pub fn predict_samples_with(model: &Model, data: &[Encoded], m: usize, seed: u64, mode: SamplingMode) -> Result<PredictionSamples<f64>, ModelError> {
    if m == 0 {
        return Err(ModelError::InvalidSampleCount);
    }
    if data.is_empty() {
        return Err(ModelError::EmptyData);
    }
    if !model.is_stochastic() {
        let rows = model.predict_mean(data)?;
        return Ok(PredictionSamples::from_members(vec![rows; m])?);
    }
    let members: Vec<Vec<Vec<f64>>> = match mode {
        SamplingMode::Global => (0..m)
            .into_par_iter()
            .map(|s| {
                let store = model.realize_store(&mut rng::stream(seed, s as u64));
                model.predict_with(&store, data, PREDICT_BATCH)
            })
            .collect::<Result<_, _>>()?,
        SamplingMode::PerExample => {
            let per_example: Vec<Vec<Vec<f64>>> = data
                .par_iter()
                .map(|ex| {
                    let base = rng::derive(seed, &ex.patient_id);
                    (0..m)
                        .map(|s| {
                            let store = model.realize_store(&mut rng::stream(base, s as u64));
                            Ok(model.predict_with(&store, std::slice::from_ref(ex), 1)?.remove(0))
                        })
                        .collect::<Result<Vec<_>, ModelError>>()
                })
                .collect::<Result<_, _>>()?;
            (0..m).map(|s| per_example.iter().map(|rows| rows[s].clone()).collect()).collect()
        }
    };
    Ok(PredictionSamples::from_members(members)?)
}

/// Independently trained replicas; sample `m` is member `m`'s prediction.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub members: Vec<Model>,
}

impl Ensemble {
    pub fn predict_samples(&self, data: &[Encoded]) -> Result<PredictionSamples<f64>, ModelError> {
        if self.members.is_empty() {
            return Err(ModelError::InvalidSampleCount);
        }
        let members: Vec<Vec<Vec<f64>>> = self
            .members
            .par_iter()
            .map(|model| model.predict_mean(data))
            .collect::<Result<_, _>>()?;
        Ok(PredictionSamples::from_members(members)?)
    }
}
