use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::cohort::CohortError;

/// Ages strictly below one month form the neonate group.
pub const NEONATE_MAX_AGE_YEARS: f64 = 1.0 / 12.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

impl Gender {
    pub fn index(self) -> usize {
        match self {
            Gender::M => 0,
            Gender::F => 1,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::M => "M",
            Gender::F => "F",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Context {
    pub gender: Gender,
    pub age_years: f64,
    pub ethnicity: String,
}

impl Context {
    pub fn is_neonate(&self) -> bool {
        self.age_years < NEONATE_MAX_AGE_YEARS
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub time_offset_hours: f64,
    pub feature_id: usize,
    pub value: Option<f64>,
}

/// One patient encounter: context, time-ordered events and its label.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub context: Context,
    pub events: Vec<Event>,
    /// Class index; binary tasks use 0/1.
    pub label: usize,
    pub length_of_stay_days: f64,
}

impl PatientRecord {
    pub fn events_sorted(&self) -> bool {
        self.events
            .windows(2)
            .all(|w| w[0].time_offset_hours <= w[1].time_offset_hours)
    }

    /// Stable sort of events by time offset.
    pub fn sort_events(&mut self) {
        self.events
            .sort_by(|a, b| a.time_offset_hours.total_cmp(&b.time_offset_hours));
    }
}

/// Dense id ↔ token map with training-set counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TokenTable {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl TokenTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut t = Self::new();
        for tok in tokens {
            t.insert(&tok);
        }
        t
    }

    /// Id of `token`, inserting it with a zero count if unseen.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.counts.push(0);
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts.get(id).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn reset_counts(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
    }

    pub fn bump(&mut self, id: usize) {
        self.counts[id] += 1;
    }

    /// Writes `token\tid\tcount` lines in id order.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (id, (tok, count)) in self.tokens.iter().zip(&self.counts).enumerate() {
            writeln!(out, "{tok}\t{id}\t{count}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self, CohortError> {
        let mut table = Self::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            let bad = |reason: String| CohortError::Parse {
                line: lineno,
                column: 1,
                reason,
            };
            if parts.len() != 3 {
                return Err(bad(format!("expected 3 tab-separated fields, got {}", parts.len())));
            }
            let id: usize = parts[1].parse().map_err(|e| bad(format!("bad id: {e}")))?;
            let count: u64 = parts[2].parse().map_err(|e| bad(format!("bad count: {e}")))?;
            if id != table.len() {
                return Err(bad(format!("ids must be dense and ordered; expected {}, got {id}", table.len())));
            }
            if table.id(parts[0]).is_some() {
                return Err(bad(format!("duplicate token `{}`", parts[0])));
            }
            table.insert(parts[0]);
            table.counts[id] = count;
        }
        Ok(table)
    }
}

/// Token tables for the sequential event features and the categorical
/// context features.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocabulary {
    pub events: TokenTable,
    pub ethnicities: TokenTable,
}

impl Vocabulary {
    /// Recomputes counts from `records` (normally the training split).
    pub fn recount(&mut self, records: &[PatientRecord]) {
        self.events.reset_counts();
        self.ethnicities.reset_counts();
        for r in records {
            for e in &r.events {
                if e.feature_id < self.events.len() {
                    self.events.bump(e.feature_id);
                }
            }
            if let Some(id) = self.ethnicities.id(&r.context.ethnicity) {
                self.ethnicities.bump(id);
            }
        }
    }
}
