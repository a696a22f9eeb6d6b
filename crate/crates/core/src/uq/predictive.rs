use crate::uq::UqError;
use crate::Scalar;

/// `M` Monte-Carlo draws of the predictive parameter vector for one
/// example. Binary tasks use vectors of length 1.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveUncertainty<T> {
    samples: Vec<Vec<T>>,
}

impl<T: Scalar> PredictiveUncertainty<T> {
    pub fn new(samples: Vec<Vec<T>>) -> Result<Self, UqError> {
        let d = samples.first().map(Vec::len).ok_or(UqError::Empty("predictive samples"))?;
        if d == 0 {
            return Err(UqError::Empty("predictive parameter vector"));
        }
        for (index, s) in samples.iter().enumerate() {
            if s.len() != d {
                return Err(UqError::Ragged { index, len: s.len(), expected: d });
            }
            super::check_probs(s)?;
            if d > 1 {
                let sum: T = s.iter().copied().sum();
                if (sum - T::one()).abs() > T::lit(1e-9) {
                    return Err(UqError::NotSimplex { index, sum: sum.as_f64() });
                }
            }
        }
        Ok(Self { samples })
    }

    /// Binary-task constructor from positive-class probabilities.
    pub fn binary(probs: &[T]) -> Result<Self, UqError> {
        Self::new(probs.iter().map(|&p| vec![p]).collect())
    }

    pub fn samples(&self) -> &[Vec<T>] {
        &self.samples
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }
}

/// Elementwise sample mean.
pub fn marginalize<T: Scalar>(pu: &PredictiveUncertainty<T>) -> Vec<T> {
    let m = T::count(pu.num_samples());
    (0..pu.dim())
        .map(|j| pu.samples.iter().map(|s| s[j]).sum::<T>() / m)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dispersion<T> {
    /// Population standard deviation per output dimension.
    pub std: Vec<T>,
    /// `max - min` per output dimension.
    pub range: Vec<T>,
}

pub fn dispersion<T: Scalar>(pu: &PredictiveUncertainty<T>) -> Dispersion<T> {
    let mean = marginalize(pu);
    let m = T::count(pu.num_samples());
    let mut std = Vec::with_capacity(mean.len());
    let mut range = Vec::with_capacity(mean.len());
    for (j, &mu) in mean.iter().enumerate() {
        let var = pu.samples.iter().map(|s| (s[j] - mu) * (s[j] - mu)).sum::<T>() / m;
        std.push(var.sqrt());
        let (lo, hi) = pu
            .samples
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), s| (lo.min(s[j]), hi.max(s[j])));
        range.push(hi - lo);
    }
    Dispersion { std, range }
}

/// Model outputs for a whole dataset: `M` samples × `N` examples × `D`
/// outputs, stored flat in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSamples<T> {
    m: usize,
    n: usize,
    d: usize,
    data: Vec<T>,
}

impl<T: Scalar> PredictionSamples<T> {
    /// `members[m][i]` is sample `m`'s output vector for example `i`.
    pub fn from_members(members: Vec<Vec<Vec<T>>>) -> Result<Self, UqError> {
        let m = members.len();
        let n = members.first().map(Vec::len).ok_or(UqError::Empty("prediction samples"))?;
        let d = members[0].first().map(Vec::len).unwrap_or(1);
        let mut data = Vec::with_capacity(m * n * d);
        for member in &members {
            if member.len() != n {
                return Err(UqError::Ragged { index: 0, len: member.len(), expected: n });
            }
            for (index, row) in member.iter().enumerate() {
                if row.len() != d {
                    return Err(UqError::Ragged { index, len: row.len(), expected: d });
                }
                super::check_probs(row)?;
                data.extend_from_slice(row);
            }
        }
        Ok(Self { m, n, d, data })
    }

    pub fn num_samples(&self) -> usize {
        self.m
    }

    pub fn num_examples(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn get(&self, sample: usize, example: usize) -> &[T] {
        let start = (sample * self.n + example) * self.d;
        &self.data[start..start + self.d]
    }

    /// All outputs of one sample (one ensemble member or weight draw).
    pub fn member(&self, sample: usize) -> Vec<Vec<T>> {
        (0..self.n).map(|i| self.get(sample, i).to_vec()).collect()
    }

    /// Positive-class probabilities of one sample; the last output column
    /// is treated as the positive class.
    pub fn member_positive(&self, sample: usize) -> Vec<T> {
        (0..self.n).map(|i| self.get(sample, i)[self.d - 1]).collect()
    }

    pub fn example(&self, example: usize) -> PredictiveUncertainty<T> {
        PredictiveUncertainty {
            samples: (0..self.m).map(|s| self.get(s, example).to_vec()).collect(),
        }
    }

    /// Marginalized output rows, one per example.
    pub fn marginal(&self) -> Vec<Vec<T>> {
        (0..self.n).map(|i| marginalize(&self.example(i))).collect()
    }

    pub fn marginal_positive(&self) -> Vec<T> {
        self.marginal().into_iter().map(|r| r[self.d - 1]).collect()
    }

    pub fn dispersions(&self) -> Vec<Dispersion<T>> {
        (0..self.n).map(|i| dispersion(&self.example(i))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn marginal_and_spread_examples() {
        let pu = PredictiveUncertainty::binary(&[0.3f64; 4]).unwrap();
        assert_eq!(marginalize(&pu), vec![0.3]);
        let d = dispersion(&pu);
        assert_eq!((d.std[0], d.range[0]), (0.0, 0.0));

        let pu = PredictiveUncertainty::binary(&[0.2f64, 0.8]).unwrap();
        assert!((marginalize(&pu)[0] - 0.5).abs() < 1e-15);

        let pu = PredictiveUncertainty::binary(&[0.1f64, 0.675]).unwrap();
        assert!((dispersion(&pu).range[0] - 0.575).abs() < 1e-12);

        let pu = PredictiveUncertainty::binary(&[0.0f64, 1.0]).unwrap();
        let d = dispersion(&pu);
        assert_eq!((d.std[0], d.range[0]), (0.5, 1.0));

        let one = PredictiveUncertainty::binary(&[0.42f64]).unwrap();
        assert_eq!(dispersion(&one).std[0], 0.0);
    }

    #[test]
    fn multiclass_mean_on_simplex() {
        let pu = PredictiveUncertainty::new(vec![vec![0.2f64, 0.3, 0.5], vec![0.6, 0.1, 0.3], vec![1.0, 0.0, 0.0]]).unwrap();
        let mean = marginalize(&pu);
        assert!((mean.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(PredictiveUncertainty::new(vec![vec![0.2f64, 0.3]]).is_err());
        assert!(PredictiveUncertainty::<f64>::new(vec![]).is_err());
    }

    #[test]
    fn dataset_view_matches_per_example() {
        let members = vec![vec![vec![0.1f64], vec![0.9]], vec![vec![0.3], vec![0.7]]];
        let ps = PredictionSamples::from_members(members).unwrap();
        assert_eq!(ps.example(1).samples(), &[vec![0.9], vec![0.7]]);
        assert_eq!(ps.member_positive(1), vec![0.3, 0.7]);
        let marg = ps.marginal_positive();
        assert!((marg[0] - 0.2).abs() < 1e-15 && (marg[1] - 0.8).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn bounded_variance_law(ps in proptest::collection::vec(0.0f64..=1.0, 1..60)) {
            let pu = PredictiveUncertainty::binary(&ps).unwrap();
            let mean = marginalize(&pu)[0];
            let var = dispersion(&pu).std[0].powi(2);
            prop_assert!(var <= mean * (1.0 - mean) + 1e-12);
        }

        #[test]
        fn bounded_variance_law_f32(ps in proptest::collection::vec(0.0f32..=1.0, 1..60)) {
            let pu = PredictiveUncertainty::binary(&ps).unwrap();
            let mean = marginalize(&pu)[0] as f64;
            let var = (dispersion(&pu).std[0] as f64).powi(2);
            prop_assert!(var <= mean * (1.0 - mean) + 1e-6);
        }

        #[test]
        fn marginalize_ignores_sample_order(mut ps in proptest::collection::vec(0.0f64..=1.0, 1..30), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let before = marginalize(&PredictiveUncertainty::binary(&ps).unwrap())[0];
            ps.shuffle(&mut crate::rng::stream(seed, 0));
            let after = marginalize(&PredictiveUncertainty::binary(&ps).unwrap())[0];
            prop_assert!((before - after).abs() < 1e-12);
        }
    }
}
