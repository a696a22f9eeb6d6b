//! Line-delimited JSON record files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::record::{Context, Event, Gender, PatientRecord, Vocabulary};
use crate::cohort::CohortError;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    patient_id: String,
    context: ContextLine,
    events: Vec<EventLine>,
    label: i64,
    los_days: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextLine {
    gender: Gender,
    age_years: f64,
    ethnicity: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventLine {
    t_hours: f64,
    feature: String,
    value: Option<f64>,
}

/// What to do with feature tokens missing from the vocabulary.
pub enum VocabMode<'a> {
    /// Unseen tokens get the next free id.
    Build(&'a mut Vocabulary),
    /// Unseen tokens are an error.
    Frozen(&'a Vocabulary),
}

#[derive(Debug, Default)]
pub struct Ingested {
    pub records: Vec<PatientRecord>,
    pub warnings: Vec<String>,
}

/// Serializes one record as a single JSON line (no trailing newline).
pub fn record_to_line(record: &PatientRecord, vocab: &Vocabulary) -> Result<String, CohortError> {
    let events = record
        .events
        .iter()
        .map(|e| {
            let feature = vocab
                .events
                .token(e.feature_id)
                .ok_or_else(|| CohortError::Invariant {
                    line: 0,
                    reason: format!("feature id {} outside vocabulary", e.feature_id),
                })?
                .to_string();
            Ok(EventLine {
                t_hours: e.time_offset_hours,
                feature,
                value: e.value,
            })
        })
        .collect::<Result<Vec<_>, CohortError>>()?;
    let line = RecordLine {
        patient_id: record.patient_id.clone(),
        context: ContextLine {
            gender: record.context.gender,
            age_years: record.context.age_years,
            ethnicity: record.context.ethnicity.clone(),
        },
        events,
        label: record.label as i64,
        los_days: record.length_of_stay_days,
    };
    Ok(serde_json::to_string(&line)?)
}

pub fn write_records<W: Write>(records: &[PatientRecord], vocab: &Vocabulary, mut out: W) -> Result<(), CohortError> {
    for r in records {
        writeln!(out, "{}", record_to_line(r, vocab)?)?;
    }
    Ok(())
}

pub fn save_records(path: &Path, records: &[PatientRecord], vocab: &Vocabulary) -> Result<(), CohortError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_records(records, vocab, &mut out)?;
    out.flush()?;
    Ok(())
}

fn check_number(v: f64, what: &str, line: usize, errors: &mut Vec<CohortError>) {
    if !v.is_finite() || v < 0.0 {
        errors.push(CohortError::Invariant {
            line,
            reason: format!("{what} must be finite and non-negative, got {v}"),
        });
    }
}

/// Parses records from a reader. Every malformed line is reported; the
/// result is an error if any line failed.
pub fn read_records<R: BufRead>(input: R, mut mode: VocabMode<'_>) -> Result<Ingested, CohortError> {
    let mut out = Ingested::default();
    let mut errors = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine = match serde_json::from_str(&line) {
            Ok(p) => p,
            Err(e) => {
                errors.push(CohortError::Parse {
                    line: lineno,
                    column: e.column(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let before = errors.len();
        check_number(parsed.context.age_years, "age_years", lineno, &mut errors);
        check_number(parsed.los_days, "los_days", lineno, &mut errors);
        if parsed.label < 0 {
            errors.push(CohortError::Invariant {
                line: lineno,
                reason: format!("label must be non-negative, got {}", parsed.label),
            });
        }
        let mut events = Vec::with_capacity(parsed.events.len());
        for ev in &parsed.events {
            check_number(ev.t_hours, "t_hours", lineno, &mut errors);
            if let Some(v) = ev.value {
                if !v.is_finite() {
                    errors.push(CohortError::Invariant {
                        line: lineno,
                        reason: "event value must be finite".into(),
                    });
                }
            }
            let feature_id = match &mut mode {
                VocabMode::Build(vocab) => Some(vocab.events.insert(&ev.feature)),
                VocabMode::Frozen(vocab) => vocab.events.id(&ev.feature),
            };
            match feature_id {
                Some(feature_id) => events.push(Event {
                    time_offset_hours: ev.t_hours,
                    feature_id,
                    value: ev.value,
                }),
                None => errors.push(CohortError::Invariant {
                    line: lineno,
                    reason: format!("unknown feature token `{}`", ev.feature),
                }),
            }
        }
        if let VocabMode::Build(vocab) = &mut mode {
            vocab.ethnicities.insert(&parsed.context.ethnicity);
        }
        if errors.len() > before {
            continue;
        }
        let mut record = PatientRecord {
            patient_id: parsed.patient_id,
            context: Context {
                gender: parsed.context.gender,
                age_years: parsed.context.age_years,
                ethnicity: parsed.context.ethnicity,
            },
            events,
            label: parsed.label as usize,
            length_of_stay_days: parsed.los_days,
        };
        if !record.events_sorted() {
            out.warnings
                .push(format!("line {lineno}: events of {} were not time-ordered; sorted", record.patient_id));
            record.sort_events();
        }
        out.records.push(record);
    }
    if !errors.is_empty() {
        return Err(CohortError::Malformed(errors));
    }
    if out.records.is_empty() {
        out.warnings.push("no records found".into());
    }
    for w in &out.warnings {
        log::warn!("{w}");
    }
    Ok(out)
}

/// Reads a record file from disk.
pub fn ingest(path: &Path, mode: VocabMode<'_>) -> Result<Ingested, CohortError> {
    let file = File::open(path)?;
    read_records(BufReader::new(file), mode)
}
