//! Session transcripts on disk and their per-iteration BER table.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::SessionReport;
use crate::stats::{self, ParityStats};

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("cannot read transcript: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed transcript: {0}")]
    Malformed(String),
    #[error("transcript has no iterations")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptSource {
    /// Simulated run; carries ground-truth error rates.
    Simulate,
    /// Live run; only the public parity statistics are known.
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub source: TranscriptSource,
    pub iterations: Vec<ParityStats>,
    /// True Alice/Bob error rate, raw then after each iteration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ber_ab: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ber_eve: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<SessionReport>,
}

/// One row of the analysis table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerRow {
    pub iteration: usize,
    pub ber_ab: f64,
    pub ber_eve: Option<f64>,
}

impl Transcript {
    pub fn load(path: &Path) -> Result<Self, TranscriptError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn from_json(text: &str) -> Result<Self, TranscriptError> {
        let t: Transcript = serde_json::from_str(text).map_err(|e| TranscriptError::Malformed(e.to_string()))?;
        t.check()?;
        Ok(t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcripts always serialize")
    }

    fn check(&self) -> Result<(), TranscriptError> {
        let rows = self.iterations.len() + 1;
        for (name, col) in [("ber_ab", &self.ber_ab), ("ber_eve", &self.ber_eve)] {
            if let Some(c) = col {
                if c.len() != rows {
                    return Err(TranscriptError::Malformed(format!(
                        "{name} has {} entries for {} iterations",
                        c.len(),
                        self.iterations.len()
                    )));
                }
            }
        }
        if self.iterations.iter().any(|s| s.mismatches > s.pairs) {
            return Err(TranscriptError::Malformed("mismatches exceed pairs".into()));
        }
        Ok(())
    }

    /// Rows for iteration 0 (raw) through the last iteration.
    ///
    /// Without ground truth, the BER entering iteration `j` is estimated from
    /// its parity mismatch rate, and the final row extends the last estimate
    /// through one more step of the pair recursion.
    pub fn rows(&self) -> Result<Vec<BerRow>, TranscriptError> {
        self.check()?;
        if self.iterations.is_empty() {
            return Err(TranscriptError::Empty);
        }
        let ab: Vec<f64> = match &self.ber_ab {
            Some(v) => v.clone(),
            None => {
                let mut est: Vec<f64> = self
                    .iterations
                    .iter()
                    .map(|s| s.mismatch_rate().map_or(0.0, stats::invert_parity_mismatch))
                    .collect();
                let last = *est.last().unwrap();
                est.push(stats::pair_iteration_ber(last.min(0.5)).unwrap_or(0.5));
                est
            }
        };
        // only simulated runs can know Eve's error rate
        let eve = match self.source {
            TranscriptSource::Simulate => self.ber_eve.as_ref(),
            TranscriptSource::Live => None,
        };
        Ok(ab
            .iter()
            .enumerate()
            .map(|(iteration, &ber_ab)| BerRow {
                iteration,
                ber_ab,
                ber_eve: eve.map(|v| v[iteration]),
            })
            .collect())
    }

    /// `iteration,ber_ab[,ber_eve]` with a header row.
    pub fn to_csv(&self) -> Result<String, TranscriptError> {
        let rows = self.rows()?;
        let with_eve = rows.first().is_some_and(|r| r.ber_eve.is_some());
        let mut out = String::from(if with_eve { "iteration,ber_ab,ber_eve\n" } else { "iteration,ber_ab\n" });
        for r in rows {
            match r.ber_eve {
                Some(e) => writeln!(out, "{},{:e},{:e}", r.iteration, r.ber_ab, e).unwrap(),
                None => writeln!(out, "{},{:e}", r.iteration, r.ber_ab).unwrap(),
            }
        }
        Ok(out)
    }
}
