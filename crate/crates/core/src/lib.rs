//! Model-uncertainty toolkit for sequential clinical risk prediction.
//!
//! The crate covers the full path from patient event sequences to
//! per-patient uncertainty: a small reverse-mode tensor engine
//! ([`numcore`]), mean-field Gaussian variational layers ([`bayeslayers`]),
//! the LSTM patient model with ensemble and ELBO training ([`seqmodel`]),
//! cohort handling ([`cohort`]), uncertainty and calibration metrics
//! ([`uq`]), sensitivity-constrained decisions ([`decide`]) and subgroup /
//! embedding analyses ([`insight`]).
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the
//! double-precision types the model pipeline runs on.

pub mod bayeslayers;
pub mod cohort;
pub mod decide;
pub mod insight;
pub mod numcore;
pub mod rng;
mod scalar;
pub mod seqmodel;
pub mod uq;

pub use scalar::Scalar;

pub type Tensor64 = numcore::Tensor<f64>;
pub type Tape64 = numcore::Tape<f64>;
pub type Tensor32 = numcore::Tensor<f32>;
pub type Tape32 = numcore::Tape<f32>;
