//! Point-estimate and mean-field Gaussian variational layers.
//!
//! Every weight tensor is a [`Weight`]: either a plain parameter or a
//! factorized Gaussian posterior `N(μ, softplus(ρ)²)` trained by
//! reparameterized sampling against an [`IsotropicPrior`]. A [`Pass`]
//! realizes each weight at most once, so all uses of a stochastic layer in a
//! forward pass see the same function draw.

mod config;
mod layers;
mod params;
mod posterior;

pub use config::{StochasticityConfig, Variant};
pub use layers::{Dense, Embedding, Lstm};
pub use params::{glorot_uniform, ParamId, ParamStore, Pass, Weight, WeightMode};
pub use posterior::{
    inverse_softplus, kl_on_tape, sample_on_tape, softplus, standard_normal, GaussianPosterior, IsotropicPrior,
    PRIOR_STD_MAX, PRIOR_STD_MIN,
};

use crate::numcore::TensorError;
use crate::scalar::Scalar;

/// Differential entropy of the embedding distribution of one table row.
pub fn embedding_entropy<T: Scalar>(table: &GaussianPosterior<T>, row: usize) -> Result<T, TensorError> {
    table.row_entropy(row)
}
