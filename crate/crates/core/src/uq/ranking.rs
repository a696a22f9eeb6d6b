use crate::uq::{check_binary_labels, check_lengths, UqError};
use crate::Scalar;

fn descending<T: Scalar>(scores: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).expect("finite scores"));
    order
}

/// Area under the ROC curve via the rank statistic with midranks for ties.
pub fn auc_roc<T: Scalar>(scores: &[T], labels: &[usize]) -> Result<T, UqError> {
    check_lengths(scores.len(), labels.len())?;
    check_binary_labels(labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(UqError::SingleClass("auc_roc"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).expect("finite scores"));
    // sum of (doubled) midranks of positives, kept integral until the end
    let mut rank_sum2: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid2 = (start + 1 + end) as u128;
        let pos = order[start..end].iter().filter(|&&i| labels[i] == 1).count() as u128;
        rank_sum2 += pos * mid2;
        start = end;
    }
    let (p, n) = (n_pos as u128, n_neg as u128);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(T::lit(u2 as f64) / (T::lit(2.0) * T::lit((p * n) as f64)))
}

/// Average precision: precision at each distinct threshold weighted by the
/// recall gained there.
pub fn auc_pr<T: Scalar>(scores: &[T], labels: &[usize]) -> Result<T, UqError> {
    check_lengths(scores.len(), labels.len())?;
    check_binary_labels(labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return Err(UqError::NoPositives("auc_pr"));
    }
    let order = descending(scores);
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, T::zero());
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let gained = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        tp += gained;
        seen += end - start;
        if gained > 0 {
            ap = ap + T::count(gained) / T::count(n_pos) * T::count(tp) / T::count(seen);
        }
        start = end;
    }
    Ok(ap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn pairs_oracle(s: &[f64], y: &[usize]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] == 1 && y[j] == 0 {
                    den += 1.0;
                    num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
        }
        num / den
    }

    #[test]
    fn roc_examples() {
        let v: f64 = auc_roc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert!((v - 0.75).abs() < 1e-15);
        assert_eq!(auc_roc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert_eq!(auc_roc(&[0.3, 0.4], &[1, 1]), Err(UqError::SingleClass("auc_roc")));
    }

    #[test]
    fn pr_examples() {
        assert_eq!(auc_pr(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        let v: f64 = auc_pr(&[0.9, 0.8, 0.3, 0.2], &[1, 0, 1, 0]).unwrap();
        assert!((v - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!(auc_pr(&[0.5, 0.5], &[0, 0]).is_err());
    }

    #[test]
    fn random_scores_pr_near_prevalence() {
        let mut rng = crate::rng::stream(9, 0);
        let n = 200_000;
        let y: Vec<usize> = (0..n).map(|_| rng.random_bool(0.2) as usize).collect();
        let s: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let pi = y.iter().sum::<usize>() as f64 / n as f64;
        assert!((auc_pr(&s, &y).unwrap() - pi).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn roc_matches_all_pairs(data in proptest::collection::vec((0u8..12, 0usize..2), 2..60)) {
            let s: Vec<f64> = data.iter().map(|d| d.0 as f64 / 11.0).collect();
            let y: Vec<usize> = data.iter().map(|d| d.1).collect();
            prop_assume!(y.contains(&0) && y.contains(&1));
            prop_assert!((auc_roc(&s, &y).unwrap() - pairs_oracle(&s, &y)).abs() < 1e-12);
        }

        #[test]
        fn roc_invariant_under_monotone_maps(data in proptest::collection::vec((0.0f64..1.0, 0usize..2), 2..60)) {
            let s: Vec<f64> = data.iter().map(|d| d.0).collect();
            let y: Vec<usize> = data.iter().map(|d| d.1).collect();
            prop_assume!(y.contains(&0) && y.contains(&1));
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(auc_roc(&s, &y).unwrap(), auc_roc(&t, &y).unwrap());
        }
    }
}
