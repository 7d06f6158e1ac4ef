//! Finite two-valued signal traces.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Read access to a finite trace of 1-bit signals, indexed by position in a
/// fixed signal list.
pub trait SignalSource {
    fn len(&self) -> usize;
    fn value(&self, cycle: usize, signal: usize) -> bool;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cycle {cycle} has {found} values, expected {expected}")]
    RaggedRow {
        cycle: usize,
        expected: usize,
        found: usize,
    },
    #[error("cycle {cycle} signal `{signal}` has value {value}; only 0 and 1 are allowed")]
    BadValue {
        cycle: usize,
        signal: String,
        value: i64,
    },
    #[error("signal `{0}` listed twice")]
    DuplicateSignal(String),
    #[error("malformed trace JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Row-major bit matrix: `values[cycle * signals.len() + signal]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    signals: Vec<String>,
    len: usize,
    values: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct TraceFile {
    signals: Vec<String>,
    cycles: Vec<Vec<i64>>,
}

impl Trace {
    pub fn new(signals: Vec<String>, cycles: &[Vec<bool>]) -> Result<Self, TraceError> {
        check_unique(&signals)?;
        let mut values = Vec::with_capacity(cycles.len() * signals.len());
        for (cycle, row) in cycles.iter().enumerate() {
            if row.len() != signals.len() {
                return Err(TraceError::RaggedRow {
                    cycle,
                    expected: signals.len(),
                    found: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Ok(Trace {
            len: cycles.len(),
            signals,
            values,
        })
    }

    /// Build from per-signal waveforms written as `0`/`1` strings, e.g.
    /// `[("req", "1010"), ("ack", "0101")]`. Other characters are ignored so
    /// waveforms may be spaced for readability.
    ///
    /// # Panics
    /// If the waveforms differ in length.
    pub fn from_waves(waves: &[(&str, &str)]) -> Self {
        let cols: Vec<Vec<bool>> = waves
            .iter()
            .map(|(_, w)| w.chars().filter_map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            }).collect())
            .collect();
        let len = cols.first().map_or(0, Vec::len);
        assert!(cols.iter().all(|c| c.len() == len), "waveforms differ in length");
        let rows: Vec<Vec<bool>> = (0..len).map(|t| cols.iter().map(|c| c[t]).collect()).collect();
        Trace::new(waves.iter().map(|(n, _)| n.to_string()).collect(), &rows)
            .expect("well-formed waveforms")
    }

    pub fn from_json_str(text: &str) -> Result<Self, TraceError> {
        let file: TraceFile = serde_json::from_str(text)?;
        Self::from_int_rows(file.signals, &file.cycles)
    }

    /// Rows of 0/1 integers, the on-disk cycle encoding.
    pub fn from_int_rows(signals: Vec<String>, cycles: &[Vec<i64>]) -> Result<Self, TraceError> {
        let mut rows = Vec::with_capacity(cycles.len());
        for (cycle, row) in cycles.iter().enumerate() {
            let mut out = Vec::with_capacity(row.len());
            for (s, v) in row.iter().enumerate() {
                match v {
                    0 => out.push(false),
                    1 => out.push(true),
                    other => {
                        return Err(TraceError::BadValue {
                            cycle,
                            signal: signals.get(s).cloned().unwrap_or_default(),
                            value: *other,
                        })
                    }
                }
            }
            rows.push(out);
        }
        Trace::new(signals, &rows)
    }

    pub fn to_int_rows(&self) -> Vec<Vec<i64>> {
        (0..self.len)
            .map(|c| self.row(c).iter().map(|b| i64::from(*b)).collect())
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(TraceFile {
            signals: self.signals.clone(),
            cycles: self.to_int_rows(),
        })
        .expect("trace serialises")
    }

    pub fn signals(&self) -> &[String] {
        &self.signals
    }

    pub fn signal_index(&self, name: &str) -> Option<usize> {
        self.signals.iter().position(|s| s == name)
    }

    pub fn row(&self, cycle: usize) -> &[bool] {
        let n = self.signals.len();
        &self.values[cycle * n..(cycle + 1) * n]
    }

    pub fn get(&self, cycle: usize, name: &str) -> Option<bool> {
        let s = self.signal_index(name)?;
        (cycle < self.len).then(|| self.values[cycle * self.signals.len() + s])
    }

    /// First `len` cycles.
    pub fn prefix(&self, len: usize) -> Trace {
        let len = len.min(self.len);
        Trace {
            signals: self.signals.clone(),
            len,
            values: self.values[..len * self.signals.len()].to_vec(),
        }
    }

    /// Waveform strings per signal, used in reports.
    pub fn waves(&self) -> Vec<(String, String)> {
        let n = self.signals.len();
        self.signals
            .iter()
            .enumerate()
            .map(|(s, name)| {
                let w = (0..self.len)
                    .map(|c| if self.values[c * n + s] { '1' } else { '0' })
                    .collect();
                (name.clone(), w)
            })
            .collect()
    }
}

impl SignalSource for Trace {
    fn len(&self) -> usize {
        self.len
    }

    fn value(&self, cycle: usize, signal: usize) -> bool {
        self.values[cycle * self.signals.len() + signal]
    }
}

fn check_unique(signals: &[String]) -> Result<(), TraceError> {
    let mut seen = HashSet::new();
    for s in signals {
        if !seen.insert(s.as_str()) {
            return Err(TraceError::DuplicateSignal(s.clone()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_roundtrip() {
        let text = r#"{"signals":["a","b"],"cycles":[[0,1],[1,1],[1,0]]}"#;
        let t = Trace::from_json_str(text).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.get(1, "a"), Some(true));
        assert_eq!(t.get(2, "b"), Some(false));
        assert_eq!(Trace::from_json_str(&t.to_json().to_string()).unwrap(), t);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(matches!(
            Trace::from_json_str(r#"{"signals":["a","b"],"cycles":[[0]]}"#),
            Err(TraceError::RaggedRow { .. })
        ));
        assert!(matches!(
            Trace::from_json_str(r#"{"signals":["a"],"cycles":[[2]]}"#),
            Err(TraceError::BadValue { value: 2, .. })
        ));
        assert!(matches!(
            Trace::from_json_str(r#"{"signals":["a","a"],"cycles":[]}"#),
            Err(TraceError::DuplicateSignal(_))
        ));
    }

    #[test]
    fn waves_match_columns() {
        let t = Trace::from_waves(&[("req", "10 1"), ("ack", "011")]);
        assert_eq!(t.waves()[0], ("req".to_string(), "101".to_string()));
        assert_eq!(t.prefix(2).len(), 2);
    }
}
