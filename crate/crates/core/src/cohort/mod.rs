//! Patient records, ingestion, the synthetic cohort generator, day bagging,
//! splits and subgroup labels.

mod bagging;
pub mod io;
mod record;
mod split;
mod subgroups;
pub mod synth;

use thiserror::Error;

pub use bagging::{day_bagging, DayBlock};
pub use io::{ingest, read_records, record_to_line, save_records, write_records, Ingested, VocabMode};
pub use record::{Context, Event, Gender, PatientRecord, TokenTable, Vocabulary, NEONATE_MAX_AGE_YEARS};
pub use split::{split, CohortSplit, MIN_SPLIT_RECORDS};
pub use subgroups::{subgroups, AgeGroup, SubgroupLabels};
pub use synth::{generate_synthetic, GeneratorConfig};

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("line {line}, column {column}: {reason}")]
    Parse { line: usize, column: usize, reason: String },
    #[error("line {line}: {reason}")]
    Invariant { line: usize, reason: String },
    #[error("{} malformed line(s); first: {}", .0.len(), .0.first().map(|e| e.to_string()).unwrap_or_default())]
    Malformed(Vec<CohortError>),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("need at least {MIN_SPLIT_RECORDS} records to split, got {0}")]
    TooFewRecords(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
