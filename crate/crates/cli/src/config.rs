//! Run configuration: defaults, then the TOML file, then command-line
//! flags. The resolved result is written next to every run's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use ehr_uq::bayeslayers::Variant;
use ehr_uq::cohort::GeneratorConfig;
use ehr_uq::seqmodel::{ModelConfig, Profile, Task};
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const RESOLVED_CONFIG: &str = "run_config.toml";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    #[default]
    Validation,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Validation => "validation.jsonl",
            Split::Test => "test.jsonl",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SubgroupMetric {
    #[default]
    AucPr,
    AucRoc,
    Nll,
    Ece,
    Accuracy,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub profile: Profile,
    pub out: Option<PathBuf>,
    /// Directory holding the split files and vocabulary.
    pub data: Option<PathBuf>,
    pub generate: GeneratorConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub predict: PredictSection,
    pub evaluate: EvaluateSection,
    pub uncertainty: UncertaintySection,
    pub decide: DecideSection,
    pub subgroups: SubgroupSection,
    pub embeddings: EmbeddingSection,
}

/// Overrides on top of the variant's preset. Unset fields keep the preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub variant: Variant,
    /// Number of label classes; inferred from the training labels if unset.
    pub classes: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub annealing_steps: Option<u64>,
    pub prior_std: Option<f64>,
    pub dense_embedding_dim: Option<usize>,
    pub embedding_dim_multiplier: Option<f64>,
    pub rnn_dim: Option<usize>,
    pub num_rnn_layers: Option<usize>,
    pub hidden_layer_dim: Option<usize>,
    pub bias_uncertainty: Option<bool>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            variant: Variant::Deterministic,
            classes: None,
            batch_size: None,
            learning_rate: None,
            annealing_steps: None,
            prior_std: None,
            dense_embedding_dim: None,
            embedding_dim_multiplier: None,
            rnn_dim: None,
            num_rnn_layers: None,
            hidden_layer_dim: None,
            bias_uncertainty: None,
        }
    }
}

impl ModelSection {
    /// Builds the model configuration and records every resolved value
    /// back into the section.
    pub fn resolve(&mut self, profile: Profile, classes: usize, seed: u64) -> anyhow::Result<ModelConfig> {
        let task = match classes {
            0 | 1 => return Err(UsageError(format!("need at least 2 classes, got {classes}")).into()),
            2 => Task::Binary,
            k => Task::Multiclass(k),
        };
        let mut cfg = ModelConfig::for_variant(self.variant, profile, task, seed);
        macro_rules! apply {
            ($($f:ident),*) => {$(
                if let Some(v) = self.$f { cfg.$f = v; }
                self.$f = Some(cfg.$f);
            )*};
        }
        apply!(
            batch_size,
            learning_rate,
            annealing_steps,
            prior_std,
            dense_embedding_dim,
            embedding_dim_multiplier,
            rnn_dim,
            num_rnn_layers,
            hidden_layer_dim
        );
        if let Some(b) = self.bias_uncertainty {
            cfg.stochasticity = self.variant.stochasticity(b);
        }
        self.bias_uncertainty = Some(cfg.stochasticity.bias_uncertainty);
        self.classes = Some(classes);
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub max_epochs: usize,
    pub patience: usize,
    pub eval_samples: usize,
    /// Ensemble size for `train-ensemble`.
    pub members: usize,
    /// First member seed; defaults to the run seed.
    pub seed_base: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = ehr_uq::seqmodel::TrainOptions::default();
        Self {
            max_epochs: t.max_epochs,
            patience: t.patience,
            eval_samples: t.eval_samples,
            members: 10,
            seed_base: None,
        }
    }
}

/// Which models to load and how to draw prediction samples from them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictSection {
    /// Checkpoint files or directories of `*.ckpt` files. Several
    /// checkpoints form an ensemble; a single stochastic model is sampled.
    pub models: Vec<PathBuf>,
    pub split: Split,
    /// Weight draws for a single stochastic model.
    pub samples: usize,
}

impl Default for PredictSection {
    fn default() -> Self {
        Self {
            models: Vec::new(),
            split: Split::Validation,
            samples: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub bootstrap: usize,
    pub bins: usize,
    pub top_k: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            bootstrap: 1000,
            bins: ehr_uq::uq::DEFAULT_BINS,
            top_k: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UncertaintySection {
    /// Emit the individual samples of this patient.
    pub patient: Option<String>,
    pub histogram_bins: usize,
}

impl Default for UncertaintySection {
    fn default() -> Self {
        Self {
            patient: None,
            histogram_bins: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecideSection {
    pub target_recall: f64,
}

impl Default for DecideSection {
    fn default() -> Self {
        Self { target_recall: 0.7 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubgroupSection {
    pub metric: SubgroupMetric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingSection {
    pub top: usize,
    pub bottom: usize,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self { top: 10, bottom: 10 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    pub fn out_dir(&self) -> anyhow::Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| UsageError("an output directory is required (--out or `out` in the config)".into()).into())
    }

    pub fn data_dir(&self) -> anyhow::Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| UsageError("a data directory is required (--data or `data` in the config)".into()).into())
    }

    pub fn write_resolved(&self, dir: &Path) -> anyhow::Result<()> {
        let text = toml::to_string_pretty(self)?;
        fs::write(dir.join(RESOLVED_CONFIG), text)?;
        Ok(())
    }
}
