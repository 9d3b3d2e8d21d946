//! Corpus frequency of each shift level, read from a `shift,frequency` CSV.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrequencyError {
    #[error("invalid frequency table: {0}")]
    InvalidFrequency(String),
    #[error("shift {0} outside 1..=25 in frequency table")]
    InvalidShift(i64),
    #[error("cannot read frequency table {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed frequency CSV: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Deserialize)]
struct Row {
    shift: i64,
    frequency: f64,
}

/// Raw frequencies per shift `1..=25`; missing shifts count as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    raw: BTreeMap<u8, f64>,
    total: f64,
}

impl FrequencyTable {
    pub fn new(raw: impl IntoIterator<Item = (u8, f64)>) -> Result<Self, FrequencyError> {
        let mut map = BTreeMap::new();
        for (k, f) in raw {
            if !(1..=25).contains(&k) {
                return Err(FrequencyError::InvalidShift(k as i64));
            }
            if !f.is_finite() || f < 0.0 {
                return Err(FrequencyError::InvalidFrequency(format!("shift {k} has frequency {f}")));
            }
            *map.entry(k).or_insert(0.0) += f;
        }
        let total: f64 = map.values().sum();
        if total <= 0.0 {
            return Err(FrequencyError::InvalidFrequency("all frequencies are zero".into()));
        }
        Ok(Self { raw: map, total })
    }

    pub fn from_csv_str(text: &str) -> Result<Self, FrequencyError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for r in rdr.deserialize::<Row>() {
            let r = r?;
            if !(1..=25).contains(&r.shift) {
                return Err(FrequencyError::InvalidShift(r.shift));
            }
            rows.push((r.shift as u8, r.frequency));
        }
        Self::new(rows)
    }

    pub fn load(path: &Path) -> Result<Self, FrequencyError> {
        let text = std::fs::read_to_string(path).map_err(|source| FrequencyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv_str(&text)
    }

    /// Equal weight on every shift.
    pub fn uniform() -> Self {
        Self::new((1..=25).map(|k| (k, 1.0))).expect("uniform table is valid")
    }

    pub fn raw(&self, k: u8) -> f64 {
        self.raw.get(&k).copied().unwrap_or(0.0)
    }

    pub fn normalization(&self) -> f64 {
        self.total
    }

    pub fn normalized(&self, k: u8) -> f64 {
        self.raw(k) / self.total
    }

    /// Shift with the largest frequency (smallest shift on ties).
    pub fn argmax(&self) -> u8 {
        (1..=25u8)
            .fold((1u8, f64::NEG_INFINITY), |(bk, bf), k| {
                let f = self.raw(k);
                if f > bf {
                    (k, f)
                } else {
                    (bk, bf)
                }
            })
            .0
    }

    pub fn max_normalized(&self) -> f64 {
        self.normalized(self.argmax())
    }

    /// Frequency relative to the most frequent shift, in `[0, 1]`.
    pub fn relative(&self, k: u8) -> f64 {
        self.raw(k) / self.raw(self.argmax())
    }
}
