//! Dataset directories and model sets.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use ehr_uq::cohort::{ingest, save_records, CohortSplit, PatientRecord, TokenTable, VocabMode, Vocabulary};
use ehr_uq::seqmodel::{encode, load_checkpoint, predict_samples, Encoded, Ensemble, Model};
use ehr_uq::uq::PredictionSamples;

use crate::config::Split;
use crate::UsageError;

pub const EVENT_VOCAB: &str = "vocab.tsv";
pub const ETHNICITY_VOCAB: &str = "ethnicities.tsv";

pub fn write_dataset(dir: &Path, split: &CohortSplit, vocab: &Vocabulary) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    for (s, records) in [(Split::Train, &split.train), (Split::Validation, &split.validation), (Split::Test, &split.test)] {
        save_records(&dir.join(s.file_name()), records, vocab)?;
    }
    for (name, table) in [(EVENT_VOCAB, &vocab.events), (ETHNICITY_VOCAB, &vocab.ethnicities)] {
        let mut out = BufWriter::new(File::create(dir.join(name))?);
        table.write_tsv(&mut out)?;
        out.flush()?;
    }
    Ok(())
}

/// Vocabulary (with training counts) plus one split of a dataset directory.
pub struct Dataset {
    pub vocab: Vocabulary,
    pub records: Vec<PatientRecord>,
}

impl Dataset {
    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn encoded(&self) -> anyhow::Result<Vec<Encoded>> {
        Ok(encode(&self.records, &self.vocab)?)
    }
}

pub fn read_vocabulary(dir: &Path) -> anyhow::Result<Vocabulary> {
    let read = |name: &str| -> anyhow::Result<TokenTable> {
        let path = dir.join(name);
        let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        Ok(TokenTable::read_tsv(BufReader::new(file))?)
    };
    Ok(Vocabulary {
        events: read(EVENT_VOCAB)?,
        ethnicities: read(ETHNICITY_VOCAB)?,
    })
}

pub fn load_split(dir: &Path, split: Split) -> anyhow::Result<Dataset> {
    let vocab = read_vocabulary(dir)?;
    let path = dir.join(split.file_name());
    let records = ingest(&path, VocabMode::Frozen(&vocab))
        .with_context(|| format!("reading {}", path.display()))?
        .records;
    if records.is_empty() {
        bail!("{} holds no records", path.display());
    }
    Ok(Dataset { vocab, records })
}

/// Expands directories to their `*.ckpt` files in name order.
pub fn checkpoint_paths(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .filter(|f| f.extension().is_some_and(|x| x == "ckpt"))
                .collect();
            found.sort();
            paths.extend(found);
        } else {
            paths.push(p.clone());
        }
    }
    if paths.is_empty() {
        return Err(UsageError("no model checkpoints given (--model)".into()).into());
    }
    Ok(paths)
}

pub fn load_models(inputs: &[PathBuf]) -> anyhow::Result<Vec<Model>> {
    let models = checkpoint_paths(inputs)?
        .iter()
        .map(|p| load_checkpoint(p).with_context(|| format!("loading {}", p.display())))
        .collect::<anyhow::Result<Vec<Model>>>()?;
    let first = &models[0];
    if models.iter().any(|m| m.config.task != first.config.task || m.vocab_size != first.vocab_size) {
        return Err(UsageError("checkpoints disagree on task or vocabulary size".into()).into());
    }
    Ok(models)
}

/// Prediction samples from a model set: the members of an ensemble, or
/// `samples` frozen global weight draws of a single model.
pub fn predict(models: &[Model], data: &[Encoded], samples: usize, seed: u64) -> anyhow::Result<PredictionSamples<f64>> {
    match models {
        [single] => Ok(predict_samples(single, data, samples, seed)?),
        many => {
            if many.iter().any(Model::is_stochastic) {
                log::info!("ensemble members are evaluated at their posterior means");
            }
            Ok(Ensemble { members: many.to_vec() }.predict_samples(data)?)
        }
    }
}

pub fn num_classes(models: &[Model]) -> usize {
    models[0].config.task.num_classes()
}
