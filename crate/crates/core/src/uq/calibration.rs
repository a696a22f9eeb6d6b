use crate::uq::{argmax, check_binary_labels, check_lengths, check_probs, check_rows, UqError};
use crate::Scalar;

pub const DEFAULT_BINS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinScheme {
    /// `B` intervals `(b/B, (b+1)/B]`, the first also closed on the left.
    EqualWidth(usize),
    /// `B` groups of consecutive examples in ascending confidence order.
    EqualMass(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationBins<T> {
    pub scheme: BinScheme,
    pub counts: Vec<usize>,
    /// Mean outcome per bin (zero for empty bins).
    pub accuracy: Vec<T>,
    /// Mean confidence per bin (zero for empty bins).
    pub confidence: Vec<T>,
}

impl<T: Scalar> CalibrationBins<T> {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Count-weighted mean absolute gap.
    pub fn weighted_gap(&self) -> T {
        let n = T::count(self.total());
        self.gaps().map(|(c, g)| T::count(c) * g).sum::<T>() / n
    }

    /// Unweighted mean absolute gap over non-empty bins.
    pub fn mean_gap(&self) -> T {
        let (sum, k) = self.gaps().fold((T::zero(), 0), |(s, k), (_, g)| (s + g, k + 1));
        sum / T::count(k)
    }

    fn gaps(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        (0..self.counts.len())
            .filter(|&b| self.counts[b] > 0)
            .map(|b| (self.counts[b], (self.accuracy[b] - self.confidence[b]).abs()))
    }
}

/// Right-closed equal-width bin of `p`, decided against the exact edges
/// `b/B` rather than a rounded product.
fn width_bin<T: Scalar>(p: T, bins: usize) -> usize {
    let edge = |b: usize| T::count(b) / T::count(bins);
    let mut b = (p * T::count(bins)).ceil().to_usize().unwrap_or(0).clamp(1, bins) - 1;
    while b > 0 && p <= edge(b) {
        b -= 1;
    }
    while b + 1 < bins && p > edge(b + 1) {
        b += 1;
    }
    b
}

/// Bins `(confidence, outcome)` pairs, where `outcome` is 1 for a correct
/// or positive example.
pub fn calibration_bins<T: Scalar>(confidence: &[T], outcome: &[bool], scheme: BinScheme) -> Result<CalibrationBins<T>, UqError> {
    check_lengths(confidence.len(), outcome.len())?;
    if confidence.is_empty() {
        return Err(UqError::Empty("calibration"));
    }
    check_probs(confidence)?;
    let n = confidence.len();
    let (nb, assign): (usize, Vec<usize>) = match scheme {
        BinScheme::EqualWidth(b) | BinScheme::EqualMass(b) if b == 0 => return Err(UqError::NoBins),
        BinScheme::EqualWidth(b) => (b, confidence.iter().map(|&p| width_bin(p, b)).collect()),
        BinScheme::EqualMass(b) => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| confidence[i].partial_cmp(&confidence[j]).expect("finite").then(i.cmp(&j)));
            let mut assign = vec![0; n];
            for (rank, &i) in order.iter().enumerate() {
                assign[i] = rank * b / n;
            }
            (b, assign)
        }
    };
    let mut counts = vec![0usize; nb];
    let mut hits = vec![T::zero(); nb];
    let mut conf = vec![T::zero(); nb];
    for i in 0..n {
        let b = assign[i];
        counts[b] += 1;
        conf[b] = conf[b] + confidence[i];
        if outcome[i] {
            hits[b] = hits[b] + T::one();
        }
    }
    for b in 0..nb {
        if counts[b] > 0 {
            let c = T::count(counts[b]);
            hits[b] = hits[b] / c;
            conf[b] = conf[b] / c;
        }
    }
    Ok(CalibrationBins {
        scheme,
        counts,
        accuracy: hits,
        confidence: conf,
    })
}

/// Expected calibration error of positive-class probabilities.
pub fn ece<T: Scalar>(probs: &[T], labels: &[usize], bins: usize) -> Result<T, UqError> {
    check_binary_labels(labels)?;
    let outcome: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
    Ok(calibration_bins(probs, &outcome, BinScheme::EqualWidth(bins))?.weighted_gap())
}

/// Expected calibration error of the top-class confidence.
pub fn ece_multiclass<T: Scalar>(rows: &[Vec<T>], labels: &[usize], bins: usize) -> Result<T, UqError> {
    check_rows(rows, labels)?;
    let conf: Vec<T> = rows.iter().map(|r| r[argmax(r)]).collect();
    let correct: Vec<bool> = rows.iter().zip(labels).map(|(r, &l)| argmax(r) == l).collect();
    Ok(calibration_bins(&conf, &correct, BinScheme::EqualWidth(bins))?.weighted_gap())
}

/// Adaptive calibration error: unweighted mean gap over equal-mass bins of
/// the positive-class probability.
pub fn ace<T: Scalar>(probs: &[T], labels: &[usize], bins: usize) -> Result<T, UqError> {
    check_binary_labels(labels)?;
    let outcome: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
    Ok(calibration_bins(probs, &outcome, BinScheme::EqualMass(bins))?.mean_gap())
}

/// Adaptive calibration error averaged over classes.
pub fn ace_multiclass<T: Scalar>(rows: &[Vec<T>], labels: &[usize], bins: usize) -> Result<T, UqError> {
    let k = check_rows(rows, labels)?;
    let mut total = T::zero();
    for c in 0..k {
        let p: Vec<T> = rows.iter().map(|r| r[c]).collect();
        let hit: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        total = total + calibration_bins(&p, &hit, BinScheme::EqualMass(bins))?.mean_gap();
    }
    Ok(total / T::count(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    /// Hand-rolled ECE: scan the edges linearly in exact rational form.
    fn ece_oracle(p: &[f64], y: &[usize], bins: usize) -> f64 {
        let mut total = 0.0;
        for b in 0..bins {
            let members: Vec<usize> = (0..p.len())
                .filter(|&i| {
                    let above_lo = if b == 0 { p[i] >= 0.0 } else { p[i] * bins as f64 > b as f64 };
                    above_lo && p[i] * bins as f64 <= (b + 1) as f64
                })
                .collect();
            if members.is_empty() {
                continue;
            }
            let k = members.len() as f64;
            let acc = members.iter().map(|&i| y[i] as f64).sum::<f64>() / k;
            let conf = members.iter().map(|&i| p[i]).sum::<f64>() / k;
            total += k / p.len() as f64 * (acc - conf).abs();
        }
        total
    }

    #[test]
    fn ece_examples() {
        assert_eq!(ece(&[1.0, 1.0, 0.0, 0.0], &[1, 1, 0, 0], 10).unwrap(), 0.0);
        let v: f64 = ece(&[0.9, 0.9, 0.6, 0.6], &[1, 0, 1, 0], 10).unwrap();
        assert!((v - 0.25).abs() < 1e-12, "{v}");
        let v: f64 = ece(&[0.25; 8], &[1, 0, 0, 0, 0, 1, 0, 0], 10).unwrap();
        assert!(v.abs() < 1e-15);
        assert_eq!(ece::<f64>(&[], &[], 10), Err(UqError::Empty("calibration")));
    }

    #[test]
    fn edges_are_right_closed() {
        for b in 0..10 {
            let edge = (b + 1) as f64 / 10.0;
            assert_eq!(width_bin(edge, 10), b, "edge {edge}");
        }
        assert_eq!(width_bin(0.0f64, 10), 0);
        assert_eq!(width_bin(0.30000000000000004f64, 10), 3);
        assert_eq!(width_bin(0.7f32, 10), 6);
    }

    #[test]
    fn ace_examples() {
        let v: f64 = ace(&[0.9, 0.9, 0.6, 0.6], &[1, 0, 1, 0], 2).unwrap();
        assert!((v - 0.25).abs() < 1e-12);
        assert_eq!(ace(&[0.0, 1.0], &[0, 1], 2).unwrap(), 0.0);
        // one example per equal-width bin: both schemes bin identically
        let p: Vec<f64> = (0..10).map(|b| 0.05 + b as f64 / 10.0).collect();
        let y = [0, 0, 1, 0, 1, 1, 0, 1, 1, 1];
        let (a, e) = (ace(&p, &y, 10).unwrap(), ece(&p, &y, 10).unwrap());
        assert!((a - e).abs() < 1e-12);
    }

    #[test]
    fn multiclass_versions() {
        let rows: Vec<Vec<f64>> = vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.8, 0.1], vec![0.3, 0.3, 0.4], vec![0.5, 0.25, 0.25]];
        let y = [0, 1, 0, 2];
        // top-class confidences 0.7,0.8,0.4,0.5; correct 1,1,0,0
        let v: f64 = ece_multiclass(&rows, &y, 10).unwrap();
        let expect: f64 = (0.3 + 0.2 + 0.4 + 0.5) / 4.0;
        assert!((v - expect).abs() < 1e-12);
        let a = ace_multiclass(&rows, &y, 2).unwrap();
        assert!((0.0..=1.0).contains(&a));
        let perfect = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        assert_eq!(ece_multiclass(&perfect, &[0, 1], 10).unwrap(), 0.0);
        assert_eq!(ace_multiclass(&perfect, &[0, 1], 10).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn ece_matches_oracle(data in proptest::collection::vec((0u32..=20, any::<bool>()), 1..100)) {
            let p: Vec<f64> = data.iter().map(|&(k, _)| k as f64 / 20.0).collect();
            let y: Vec<usize> = data.iter().map(|&(_, b)| b as usize).collect();
            let got = ece(&p, &y, 10).unwrap();
            prop_assert!((got - ece_oracle(&p, &y, 10)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&got));
        }

        #[test]
        fn permutation_invariant(data in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..80), seed in any::<u64>()) {
            let mut shuffled = data.clone();
            shuffled.shuffle(&mut crate::rng::stream(seed, 1));
            let split = |d: &[(f64, bool)]| -> (Vec<f64>, Vec<usize>) { (d.iter().map(|x| x.0).collect(), d.iter().map(|x| x.1 as usize).collect()) };
            let (p1, y1) = split(&data);
            let (p2, y2) = split(&shuffled);
            prop_assert!((ece(&p1, &y1, 10).unwrap() - ece(&p2, &y2, 10).unwrap()).abs() < 1e-12);
            // equal-mass bins are permutation invariant once ties are broken by value
            let distinct = { let mut s = p1.clone(); s.sort_by(f64::total_cmp); s.dedup(); s.len() == p1.len() };
            if distinct {
                prop_assert!((ace(&p1, &y1, 10).unwrap() - ace(&p2, &y2, 10).unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn zero_on_confident_and_correct(y in proptest::collection::vec(0usize..2, 1..50)) {
            let p: Vec<f64> = y.iter().map(|&l| l as f64).collect();
            prop_assert_eq!(ece(&p, &y, 10).unwrap(), 0.0);
            prop_assert_eq!(ace(&p, &y, 10).unwrap(), 0.0);
        }
    }
}
