use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::numcore::{Tape, Tensor, TensorError, Var};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Lower end of the prior standard deviation search range.
pub const PRIOR_STD_MIN: f64 = 0.135;
/// Upper end of the prior standard deviation search range.
pub const PRIOR_STD_MAX: f64 = 1.0;

/// `ln(1 + e^x)`, evaluated without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn inverse_softplus<T: Scalar>(y: T) -> T {
    // ln(e^y - 1) = y + ln(1 - e^-y)
    y + (-(-y).exp()).ln_1p()
}

/// Zero-mean isotropic Gaussian weight prior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsotropicPrior<T> {
    std: T,
}

impl<T: Scalar> IsotropicPrior<T> {
    pub fn new(std: T) -> Option<Self> {
        (std > T::zero() && std.is_finite()).then_some(Self { std })
    }

    /// Accepts only values inside the tuned search range `[0.135, 1.0]`.
    pub fn from_search_range(std: T) -> Option<Self> {
        let v = std.as_f64();
        (PRIOR_STD_MIN..=PRIOR_STD_MAX).contains(&v).then_some(Self { std })
    }

    pub fn std(&self) -> T {
        self.std
    }
}

/// Factorized Gaussian `q(w) = N(mean, softplus(rho)²)` over one weight
/// tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior<T> {
    mean: Tensor<T>,
    rho: Tensor<T>,
}

impl<T: Scalar> GaussianPosterior<T> {
    pub fn new(mean: Tensor<T>, rho: Tensor<T>) -> Result<Self, TensorError> {
        if mean.shape() != rho.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "gaussian_posterior",
                left: mean.shape().to_vec(),
                right: rho.shape().to_vec(),
            });
        }
        Ok(Self { mean, rho })
    }

    /// Posterior with the given mean and every scale equal to `sigma`.
    pub fn with_scale(mean: Tensor<T>, sigma: T) -> Self {
        let rho = Tensor::full(mean.shape(), inverse_softplus(sigma));
        Self { mean, rho }
    }

    pub fn mean(&self) -> &Tensor<T> {
        &self.mean
    }

    pub fn rho(&self) -> &Tensor<T> {
        &self.rho
    }

    pub fn shape(&self) -> &[usize] {
        self.mean.shape()
    }

    pub fn sigma(&self) -> Tensor<T> {
        self.rho.map(softplus)
    }

    /// One reparameterized draw `mean + sigma ⊙ eps`, `eps ~ N(0, I)`.
    pub fn sample(&self, rng: &mut Rng) -> Tensor<T> {
        let eps = standard_normal(rng, self.shape());
        let data = self
            .mean
            .data()
            .iter()
            .zip(self.rho.data())
            .zip(eps.data())
            .map(|((&m, &r), &e)| m + softplus(r) * e)
            .collect();
        Tensor::new(self.shape().to_vec(), data).expect("shape preserved")
    }

    /// Closed-form `KL(q || p)` summed over every element.
    pub fn kl_to_prior(&self, prior: &IsotropicPrior<T>) -> T {
        let sp = prior.std();
        let half = T::lit(0.5);
        let two_var = T::lit(2.0) * sp * sp;
        self.mean
            .data()
            .iter()
            .zip(self.rho.data())
            .map(|(&m, &r)| {
                let s = softplus(r);
                (sp / s).ln() + (s * s + m * m) / two_var - half
            })
            .sum()
    }

    /// Differential entropy of row `row` of a 2-D posterior (an embedding
    /// table), `d/2·ln(2πe) + Σ ln σ`.
    pub fn row_entropy(&self, row: usize) -> Result<T, TensorError> {
        if self.mean.rank() != 2 || row >= self.mean.rows() {
            return Err(TensorError::IndexOutOfRange {
                index: row,
                bound: self.mean.rows(),
            });
        }
        let d = self.mean.cols();
        let log_2pie = T::lit((2.0 * std::f64::consts::PI * std::f64::consts::E).ln());
        let sum_log_sigma: T = self.rho.row(row).iter().map(|&r| softplus(r).ln()).sum();
        Ok(T::count(d) * log_2pie * T::lit(0.5) + sum_log_sigma)
    }
}

/// Standard-normal tensor drawn from `rng`.
pub fn standard_normal<T: Scalar>(rng: &mut Rng, shape: &[usize]) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Records `mean + softplus(rho) ⊙ eps` on the tape; the draw is
/// differentiable with respect to both parameters.
pub fn sample_on_tape<T: Scalar>(tape: &mut Tape<T>, mean: Var, rho: Var, rng: &mut Rng) -> Result<Var, TensorError> {
    let shape = tape.shape(mean).to_vec();
    let eps = tape.constant(standard_normal(rng, &shape));
    let sigma = tape.softplus(rho)?;
    let noise = tape.mul(sigma, eps)?;
    tape.add(mean, noise)
}

/// Records the closed-form KL to `prior` as a scalar node.
pub fn kl_on_tape<T: Scalar>(tape: &mut Tape<T>, mean: Var, rho: Var, prior: &IsotropicPrior<T>) -> Result<Var, TensorError> {
    let sp = prior.std();
    let n = tape.value(mean).len();
    let sigma = tape.softplus(rho)?;
    let log_sigma = tape.log(sigma)?;
    let sum_log_sigma = tape.sum(log_sigma)?;
    let s2 = tape.square(sigma)?;
    let m2 = tape.square(mean)?;
    let quad = tape.add(s2, m2)?;
    let sum_quad = tape.sum(quad)?;
    let scaled = tape.scale(sum_quad, T::one() / (T::lit(2.0) * sp * sp))?;
    let neg_log = tape.scale(sum_log_sigma, -T::one())?;
    let total = tape.add(scaled, neg_log)?;
    tape.offset(total, T::count(n) * (sp.ln() - T::lit(0.5)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    #[test]
    fn softplus_round_trip() {
        for &y in &[1e-6f64, 0.0292, 0.5, 3.0, 40.0] {
            let x = inverse_softplus(y);
            assert!((softplus(x) - y).abs() < 1e-12 * y.max(1.0), "{y}");
        }
    }

    #[test]
    fn prior_range() {
        assert!(IsotropicPrior::from_search_range(0.292).is_some());
        assert!(IsotropicPrior::from_search_range(0.1).is_none());
        assert!(IsotropicPrior::from_search_range(1.2).is_none());
        assert!(IsotropicPrior::new(0.0).is_none());
        assert!(IsotropicPrior::new(5.0).is_some());
    }

    #[test]
    fn degenerate_scale_sample_equals_mean() {
        let mean = Tensor::vector(vec![0.3, -1.2, 2.0]);
        let post = GaussianPosterior::new(mean.clone(), Tensor::full(&[3], -800.0)).unwrap();
        let mut rng = stream(1, 0);
        assert_eq!(post.sample(&mut rng), mean);
    }

    #[test]
    fn fixed_seed_reproduces_sample() {
        let post = GaussianPosterior::with_scale(Tensor::zeros(&[4, 3]), 0.7);
        assert_eq!(post.sample(&mut stream(9, 2)), post.sample(&mut stream(9, 2)));
    }

    #[test]
    fn sample_moments() {
        let post = GaussianPosterior::with_scale(Tensor::<f64>::zeros(&[1_000_000]), 1.0);
        let s = post.sample(&mut stream(5, 0));
        let n = s.len() as f64;
        let mean = s.data().iter().sum::<f64>() / n;
        let var = s.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.005, "{mean}");
        assert!((var - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn kl_closed_form_points() {
        let prior = IsotropicPrior::new(1.0f64).unwrap();
        let zero = GaussianPosterior::with_scale(Tensor::zeros(&[5]), 1.0);
        assert!(zero.kl_to_prior(&prior).abs() < 1e-15);
        let one = GaussianPosterior::with_scale(Tensor::vector(vec![1.0f64]), 1.0);
        assert!((one.kl_to_prior(&prior) - 0.5).abs() < 1e-12);
        let half = GaussianPosterior::with_scale(Tensor::vector(vec![0.0f64]), 0.5);
        let expected: f64 = 2f64.ln() + 0.125 - 0.5;
        assert!((half.kl_to_prior(&prior) - expected).abs() < 1e-12);
        assert!((expected - 0.3181).abs() < 1e-4);
    }

    #[test]
    fn kl_tape_matches_closed_form_and_gradient() {
        let mut rng = stream(2, 0);
        let mean = standard_normal::<f64>(&mut rng, &[3, 2]);
        let rho = standard_normal::<f64>(&mut rng, &[3, 2]);
        let prior = IsotropicPrior::new(0.4).unwrap();
        let post = GaussianPosterior::new(mean.clone(), rho.clone()).unwrap();
        let mut tape = Tape::new();
        let (m, r) = (tape.param(mean.clone()), tape.param(rho.clone()));
        let kl = kl_on_tape(&mut tape, m, r, &prior).unwrap();
        let v = tape.value(kl).item().unwrap();
        assert!((v - post.kl_to_prior(&prior)).abs() < 1e-12);
        tape.backward(kl).unwrap();
        // dKL/dmu = mu / sp²
        for (g, mu) in tape.grad(m).unwrap().data().iter().zip(mean.data()) {
            assert!((g - mu / 0.16).abs() < 1e-10);
        }
        // dKL/drho = (-1/s + s/sp²) * sigmoid(rho)
        for (g, &r) in tape.grad(r).unwrap().data().iter().zip(rho.data()) {
            let s = softplus(r);
            let expected = (-1.0 / s + s / 0.16) / (1.0 + (-r).exp());
            assert!((g - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn entropy_closed_forms() {
        let table = GaussianPosterior::with_scale(Tensor::<f64>::zeros(&[3, 1]), 1.0);
        assert!((table.row_entropy(0).unwrap() - 1.41894).abs() < 1e-5);
        let wide = GaussianPosterior::with_scale(Tensor::<f64>::zeros(&[2, 2]), 1.0);
        assert!((wide.row_entropy(1).unwrap() - 2.83788).abs() < 1e-5);
        assert!(wide.row_entropy(2).is_err());
        let mut rho = wide.rho().clone();
        rho.data_mut()[0] = inverse_softplus(0.5);
        let halved = GaussianPosterior::new(wide.mean().clone(), rho).unwrap();
        let drop = wide.row_entropy(0).unwrap() - halved.row_entropy(0).unwrap();
        assert!((drop - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_matches_monte_carlo() {
        let mut rng = stream(8, 0);
        for d in 1..=4 {
            let mean = standard_normal::<f64>(&mut rng, &[1, d]);
            let rho = standard_normal::<f64>(&mut rng, &[1, d]);
            let post = GaussianPosterior::new(mean, rho).unwrap();
            let sig = post.sigma();
            let n = 100_000;
            let mut acc = 0.0;
            for _ in 0..n {
                let w = post.sample(&mut rng);
                let mut log_density = 0.0;
                for j in 0..d {
                    let z = (w.data()[j] - post.mean().data()[j]) / sig.data()[j];
                    log_density += -0.5 * z * z - sig.data()[j].ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
                }
                acc -= log_density;
            }
            let mc = acc / n as f64;
            assert!((mc - post.row_entropy(0).unwrap()).abs() < 0.05, "d={d}");
        }
    }

    proptest! {
        #[test]
        fn kl_is_non_negative(mu in -3.0f64..3.0, rho in -6.0f64..4.0, sp in 0.05f64..3.0) {
            let post = GaussianPosterior::new(Tensor::vector(vec![mu]), Tensor::vector(vec![rho])).unwrap();
            let kl = post.kl_to_prior(&IsotropicPrior::new(sp).unwrap());
            prop_assert!(kl >= -1e-12);
        }

        #[test]
        fn entropy_increases_with_every_scale(rho in proptest::collection::vec(-5.0f64..3.0, 1..6), which in 0usize..6, bump in 0.01f64..2.0) {
            let d = rho.len();
            let which = which % d;
            let base = GaussianPosterior::new(Tensor::zeros(&[1, d]), Tensor::new(vec![1, d], rho.clone()).unwrap()).unwrap();
            let mut r2 = rho;
            r2[which] += bump;
            let wider = GaussianPosterior::new(Tensor::zeros(&[1, d]), Tensor::new(vec![1, d], r2).unwrap()).unwrap();
            prop_assert!(wider.row_entropy(0).unwrap() > base.row_entropy(0).unwrap());
        }
    }
}
