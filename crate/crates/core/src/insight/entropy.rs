use std::io::Write;

use crate::bayeslayers::embedding_entropy;
use crate::cohort::Vocabulary;
use crate::insight::{pearson, InsightError};
use crate::seqmodel::Model;

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyRow {
    /// 1-based position in the full ranking.
    pub rank: usize,
    pub token: String,
    pub feature_id: usize,
    pub entropy: f64,
    /// Occurrences in the training split.
    pub count: u64,
}

/// Tokens ranked from highest to lowest embedding entropy, with the
/// correlation between entropy and `log10(count + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyRanking {
    pub rows: Vec<EntropyRow>,
    /// `None` when either side has zero variance.
    pub correlation: Option<f64>,
}

impl EntropyRanking {
    /// The `n` most uncertain tokens.
    pub fn top(&self, n: usize) -> &[EntropyRow] {
        &self.rows[..n.min(self.rows.len())]
    }

    /// The `n` least uncertain tokens, least uncertain last.
    pub fn bottom(&self, n: usize) -> &[EntropyRow] {
        &self.rows[self.rows.len() - n.min(self.rows.len())..]
    }
}

/// Ranks every vocabulary token by the differential entropy of its
/// embedding posterior. Counts come from `vocab`, which should be counted
/// over the training split. The learned no-events row is not ranked.
pub fn entropy_frequency_report(model: &Model, vocab: &Vocabulary) -> Result<EntropyRanking, InsightError> {
    let posterior = model.event_embedding().posterior(&model.store).ok_or(InsightError::NotStochastic)?;
    if vocab.events.len() != model.vocab_size {
        return Err(InsightError::LengthMismatch {
            left: vocab.events.len(),
            right: model.vocab_size,
        });
    }
    let mut rows = (0..model.vocab_size)
        .map(|id| {
            Ok(EntropyRow {
                rank: 0,
                token: vocab.events.token(id).unwrap_or_default().to_string(),
                feature_id: id,
                entropy: embedding_entropy(&posterior, id)?,
                count: vocab.events.count(id),
            })
        })
        .collect::<Result<Vec<_>, InsightError>>()?;
    rows.sort_by(|a, b| b.entropy.total_cmp(&a.entropy).then(a.feature_id.cmp(&b.feature_id)));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    let entropy: Vec<f64> = rows.iter().map(|r| r.entropy).collect();
    let log_count: Vec<f64> = rows.iter().map(|r| (r.count as f64 + 1.0).log10()).collect();
    Ok(EntropyRanking {
        correlation: pearson(&entropy, &log_count),
        rows,
    })
}

/// `rank,token,count,entropy` rows.
pub fn write_entropy_csv<W: Write>(rows: &[EntropyRow], out: W) -> Result<(), InsightError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "token", "count", "entropy"])?;
    for r in rows {
        w.write_record([r.rank.to_string(), r.token.clone(), r.count.to_string(), r.entropy.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayeslayers::Variant;
    use crate::seqmodel::{ModelConfig, Profile, Task};

    fn vocab(v: usize) -> Vocabulary {
        let mut vocab = Vocabulary::default();
        for i in 0..v {
            let id = vocab.events.insert(&format!("tok{i}"));
            for _ in 0..i * i {
                vocab.events.bump(id);
            }
        }
        vocab.ethnicities.insert("e");
        vocab
    }

    fn model(variant: Variant, v: usize) -> Model {
        let mut cfg = ModelConfig::for_variant(variant, Profile::Desk, Task::Binary, 3);
        cfg.rnn_dim = 4;
        cfg.dense_embedding_dim = 4;
        Model::new(cfg, v, 1).unwrap()
    }

    #[test]
    fn untrained_model_has_no_entropy_spread() {
        let r = entropy_frequency_report(&model(Variant::BayesianEmbeddings, 25), &vocab(25)).unwrap();
        let e0 = r.rows[0].entropy;
        assert!(r.rows.iter().all(|row| (row.entropy - e0).abs() < 1e-12));
        assert_eq!(r.correlation, None);
        assert_eq!(r.top(10).len(), 10);
        assert_eq!(r.bottom(10).len(), 10);
        // ties fall back to id order, so the ranking is total
        let ids: Vec<usize> = r.rows.iter().map(|x| x.feature_id).collect();
        assert_eq!(ids, (0..25).collect::<Vec<_>>());
    }

    #[test]
    fn ranking_follows_posterior_scales() {
        let mut m = model(Variant::BayesianEmbeddings, 20);
        let rho = m.store.find("events.rho").expect("embedding rho");
        let t = m.store.get_mut(rho);
        let cols = t.cols();
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            // rarer tokens (lower id) get wider posteriors
            *v = -3.0 - (i / cols) as f64 * 0.1;
        }
        let r = entropy_frequency_report(&m, &vocab(20)).unwrap();
        assert!(r.correlation.unwrap() < -0.9);
        assert_eq!(r.top(1)[0].token, "tok0");
        assert_eq!(r.bottom(1)[0].token, "tok19");
        assert_eq!(r.bottom(1)[0].rank, 20);
        assert!(r.rows.windows(2).all(|w| w[0].entropy >= w[1].entropy));
        let mut buf = Vec::new();
        write_entropy_csv(r.top(10), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 11);
        assert!(text.lines().nth(1).unwrap().starts_with("1,tok0,0,"));
    }

    #[test]
    fn deterministic_embeddings_are_rejected() {
        let r = entropy_frequency_report(&model(Variant::BayesianOutput, 5), &vocab(5));
        assert!(matches!(r, Err(InsightError::NotStochastic)));
        let r = entropy_frequency_report(&model(Variant::BayesianEmbeddings, 5), &vocab(6));
        assert!(matches!(r, Err(InsightError::LengthMismatch { .. })));
    }
}
