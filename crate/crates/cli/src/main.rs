//! `ehr-uq`: generate cohorts, train models and ensembles, and report
//! predictive uncertainty, decisions, subgroup and embedding analyses.

mod commands;
mod config;
mod data;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ehr_uq::bayeslayers::Variant;
use ehr_uq::seqmodel::Profile;

use crate::config::{RunConfig, Split, SubgroupMetric};

/// A configuration or invocation problem (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "ehr-uq", version, about = "Model uncertainty for sequential clinical risk prediction")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_profile)]
    profile: Option<Profile>,
    #[command(subcommand)]
    command: Command,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse()
}

fn variant_names() -> Vec<&'static str> {
    Variant::ALL.iter().map(Variant::name).collect()
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::ALL
        .into_iter()
        .find(|v| v.name() == s)
        .ok_or_else(|| format!("unknown variant `{s}`; expected one of: {}", variant_names().join(", ")))
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort and split it into train/validation/test.
    Generate {
        /// Number of patients.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Train one model.
    Train(TrainArgs),
    /// Train an ensemble of replicas that differ only in seed.
    TrainEnsemble {
        #[command(flatten)]
        train: TrainArgs,
        /// Number of members.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        seed_base: Option<u64>,
    },
    /// Marginalized and per-member metrics with bootstrap intervals.
    Evaluate {
        #[command(flatten)]
        predict: PredictArgs,
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Per-patient predictive uncertainty distributions.
    Uncertainty {
        #[command(flatten)]
        predict: PredictArgs,
        /// Also emit every sample for this patient id.
        #[arg(long)]
        patient: Option<String>,
    },
    /// Per-patient decision distributions under a recall requirement.
    Decide {
        #[command(flatten)]
        predict: PredictArgs,
        #[arg(long)]
        target_recall: Option<f64>,
    },
    /// Gender and age subgroup metrics, correlations and uncertainty.
    Subgroups {
        #[command(flatten)]
        predict: PredictArgs,
        #[arg(long, value_enum)]
        metric: Option<SubgroupMetric>,
        #[arg(long)]
        target_recall: Option<f64>,
    },
    /// Rank vocabulary tokens by embedding entropy.
    Embeddings {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint with stochastic embeddings.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        bottom: Option<usize>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint file or directory of checkpoints; repeatable.
    #[arg(long = "model")]
    models: Vec<PathBuf>,
    #[arg(long, value_enum)]
    split: Option<Split>,
    /// Weight draws for a single stochastic model.
    #[arg(long)]
    samples: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl TrainArgs {
    fn apply(self, cfg: &mut RunConfig) {
        if self.data.is_some() {
            cfg.data = self.data;
        }
        set(&mut cfg.model.variant, self.variant);
        set(&mut cfg.train.max_epochs, self.epochs);
    }
}

impl PredictArgs {
    fn apply(self, cfg: &mut RunConfig) {
        if self.data.is_some() {
            cfg.data = self.data;
        }
        if !self.models.is_empty() {
            cfg.predict.models = self.models;
        }
        set(&mut cfg.predict.split, self.split);
        set(&mut cfg.predict.samples, self.samples);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.profile, cli.profile);
    if cli.out.is_some() {
        cfg.out = cli.out;
    }
    match cli.command {
        Command::Generate { n, vocab_size, classes } => {
            set(&mut cfg.generate.n_patients, n);
            set(&mut cfg.generate.vocab_size, vocab_size);
            set(&mut cfg.generate.num_classes, classes);
            commands::generate(&mut cfg)
        }
        Command::Train(args) => {
            args.apply(&mut cfg);
            commands::train(&mut cfg)
        }
        Command::TrainEnsemble { train, m, seed_base } => {
            train.apply(&mut cfg);
            set(&mut cfg.train.members, m);
            if seed_base.is_some() {
                cfg.train.seed_base = seed_base;
            }
            commands::train_ensemble(&mut cfg)
        }
        Command::Evaluate { predict, bootstrap, bins } => {
            predict.apply(&mut cfg);
            set(&mut cfg.evaluate.bootstrap, bootstrap);
            set(&mut cfg.evaluate.bins, bins);
            commands::evaluate(&mut cfg)
        }
        Command::Uncertainty { predict, patient } => {
            predict.apply(&mut cfg);
            if patient.is_some() {
                cfg.uncertainty.patient = patient;
            }
            commands::uncertainty(&mut cfg)
        }
        Command::Decide { predict, target_recall } => {
            predict.apply(&mut cfg);
            set(&mut cfg.decide.target_recall, target_recall);
            commands::decide(&mut cfg)
        }
        Command::Subgroups {
            predict,
            metric,
            target_recall,
        } => {
            predict.apply(&mut cfg);
            set(&mut cfg.subgroups.metric, metric);
            set(&mut cfg.decide.target_recall, target_recall);
            commands::subgroups(&mut cfg)
        }
        Command::Embeddings { data, model, top, bottom } => {
            if data.is_some() {
                cfg.data = data;
            }
            if let Some(m) = model {
                cfg.predict.models = vec![m];
            }
            set(&mut cfg.embeddings.top, top);
            set(&mut cfg.embeddings.bottom, bottom);
            commands::embeddings(&mut cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
