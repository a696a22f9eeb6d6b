use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Which parts of the network carry a weight posterior.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StochasticityConfig {
    pub embeddings: bool,
    pub rnn: bool,
    pub hidden: bool,
    pub output: bool,
    /// Biases of stochastic layers get a posterior too.
    pub bias_uncertainty: bool,
}

impl StochasticityConfig {
    pub fn any(&self) -> bool {
        self.embeddings || self.rnn || self.hidden || self.output
    }
}

/// The model family members compared in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Deterministic,
    DeterministicEnsemble,
    BayesianEmbeddings,
    BayesianOutput,
    BayesianHiddenOutput,
    BayesianRnnHiddenOutput,
    FullyBayesian,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Deterministic,
        Variant::DeterministicEnsemble,
        Variant::BayesianEmbeddings,
        Variant::BayesianOutput,
        Variant::BayesianHiddenOutput,
        Variant::BayesianRnnHiddenOutput,
        Variant::FullyBayesian,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Deterministic => "deterministic",
            Variant::DeterministicEnsemble => "deterministic-ensemble",
            Variant::BayesianEmbeddings => "bayesian-embeddings",
            Variant::BayesianOutput => "bayesian-output",
            Variant::BayesianHiddenOutput => "bayesian-hidden-output",
            Variant::BayesianRnnHiddenOutput => "bayesian-rnn-hidden-output",
            Variant::FullyBayesian => "fully-bayesian",
        }
    }

    /// `bias_uncertainty` applies only to variants with stochastic layers.
    pub fn stochasticity(&self, bias_uncertainty: bool) -> StochasticityConfig {
        let (embeddings, rnn, hidden, output) = match self {
            Variant::Deterministic | Variant::DeterministicEnsemble => (false, false, false, false),
            Variant::BayesianEmbeddings => (true, false, false, false),
            Variant::BayesianOutput => (false, false, false, true),
            Variant::BayesianHiddenOutput => (false, false, true, true),
            Variant::BayesianRnnHiddenOutput => (false, true, true, true),
            Variant::FullyBayesian => (true, true, true, true),
        };
        let any = embeddings || rnn || hidden || output;
        StochasticityConfig {
            embeddings,
            rnn,
            hidden,
            output,
            bias_uncertainty: any && bias_uncertainty,
        }
    }

    pub fn is_bayesian(&self) -> bool {
        self.stochasticity(false).any()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_flags() {
        let flags = |v: Variant| {
            let s = v.stochasticity(false);
            (s.embeddings, s.rnn, s.hidden, s.output)
        };
        assert_eq!(flags(Variant::BayesianEmbeddings), (true, false, false, false));
        assert_eq!(flags(Variant::BayesianOutput), (false, false, false, true));
        assert_eq!(flags(Variant::BayesianHiddenOutput), (false, false, true, true));
        assert_eq!(flags(Variant::BayesianRnnHiddenOutput), (false, true, true, true));
        assert_eq!(flags(Variant::FullyBayesian), (true, true, true, true));
        assert_eq!(flags(Variant::Deterministic), (false, false, false, false));
        assert!(!Variant::Deterministic.stochasticity(true).bias_uncertainty);
        assert!(Variant::FullyBayesian.stochasticity(true).bias_uncertainty);
    }

    #[test]
    fn names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("bayesian".parse::<Variant>().is_err());
    }
}
