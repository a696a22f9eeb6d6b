use rand::Rng as _;
use rayon::prelude::*;

use crate::rng;
use crate::uq::UqError;
use crate::Scalar;

/// Redraw budget for a resample the metric rejects as degenerate.
pub const BOOTSTRAP_REDRAWS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BootstrapCi<T> {
    pub lo: T,
    pub hi: T,
    /// Resamples that produced a metric value.
    pub used: usize,
    /// Resamples dropped after exhausting the redraw budget.
    pub skipped: usize,
}

/// Linear-interpolation percentile of sorted data, `q ∈ [0, 1]`.
pub fn percentile<T: Scalar>(sorted: &[T], q: f64) -> T {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::lit(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Percentile 95% interval of `metric` over `n_boot` resamples (with
/// replacement) of `n` example indices. A resample on which `metric`
/// returns [`UqError::SingleClass`] or [`UqError::NoPositives`] is redrawn;
/// other errors abort.
pub fn bootstrap_ci<T, F>(n: usize, n_boot: usize, seed: u64, metric: F) -> Result<BootstrapCi<T>, UqError>
where
    T: Scalar,
    F: Fn(&[usize]) -> Result<T, UqError> + Sync,
{
    if n == 0 {
        return Err(UqError::Empty("bootstrap"));
    }
    let outcomes: Vec<Option<T>> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(seed, b as u64);
            let mut idx = vec![0usize; n];
            for _ in 0..=BOOTSTRAP_REDRAWS {
                idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
                match metric(&idx) {
                    Ok(v) => return Ok(Some(v)),
                    Err(UqError::SingleClass(_) | UqError::NoPositives(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            Ok(None)
        })
        .collect::<Result<_, _>>()?;
    let mut values: Vec<T> = outcomes.iter().flatten().copied().collect();
    let skipped = n_boot - values.len();
    if skipped > 0 {
        log::warn!("bootstrap skipped {skipped} degenerate resample(s) of {n_boot}");
    }
    if values.is_empty() {
        return Err(UqError::AllResamplesDegenerate(n_boot));
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite metric"));
    Ok(BootstrapCi {
        lo: percentile(&values, 0.025),
        hi: percentile(&values, 0.975),
        used: values.len(),
        skipped,
    })
}
