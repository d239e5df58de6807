use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simnet::TraceRecord;

/// Bits per byte at or above which a long field counts as encrypted or
/// hashed.
pub const DEFAULT_THRESHOLD: f64 = 7.0;
/// Fields at least this long are judged against the threshold directly.
pub const DEFAULT_MIN_LEN: usize = 32;
/// Shorter fields are judged against this fraction of their maximum
/// possible entropy, `log2(len)`.
pub const SHORT_FIELD_RATIO: f64 = 0.9;
/// Fields shorter than this are never flagged.
pub const SHORT_FIELD_FLOOR: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EntropyError {
    #[error("entropy of empty input")]
    EmptyInput,
    #[error("trace line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Shannon entropy of the byte distribution, in bits per byte.
pub fn shannon_entropy(bytes: &[u8]) -> Result<f64, EntropyError> {
    if bytes.is_empty() {
        return Err(EntropyError::EmptyInput);
    }
    let mut counts = [0u64; 256];
    for b in bytes {
        counts[*b as usize] += 1;
    }
    let n = bytes.len() as f64;
    let h = counts
        .iter()
        .filter(|c| **c > 0)
        .map(|c| {
            let p = *c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>();
    // Rounding can leave a single-symbol input at -0.0.
    Ok(h.max(0.0))
}

/// The entropy a field of `len` bytes must reach to be flagged.
///
/// Long fields use `threshold`. Shorter ones cannot reach high absolute
/// values, so they use [`SHORT_FIELD_RATIO`] of `log2(len)`, scaled by
/// `threshold` relative to the default so that raising the threshold
/// tightens both rules.
pub fn required_entropy(len: usize, threshold: f64, min_len: usize) -> Option<f64> {
    if len >= min_len {
        Some(threshold)
    } else if len >= SHORT_FIELD_FLOOR {
        Some(SHORT_FIELD_RATIO * (len as f64).log2() * threshold / DEFAULT_THRESHOLD)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldEntropy {
    pub seq: u64,
    pub kind: String,
    pub name: String,
    pub byte_count: usize,
    pub bits_per_byte: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub threshold: f64,
    pub min_len: usize,
    pub fields: Vec<FieldEntropy>,
}

impl EntropyReport {
    pub fn flagged(&self) -> impl Iterator<Item = &FieldEntropy> {
        self.fields.iter().filter(|f| f.flagged)
    }
}

/// Entropy of every field of every message in a JSON-lines trace. Each
/// field occurrence is judged on its own bytes.
pub fn classify_trace_fields(
    trace: &str,
    threshold: f64,
    min_len: usize,
) -> Result<EntropyReport, EntropyError> {
    let mut fields = Vec::new();
    for (i, line) in trace.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse = |reason: String| EntropyError::Parse {
            line: i + 1,
            reason,
        };
        let record: TraceRecord = serde_json::from_str(line).map_err(|e| parse(e.to_string()))?;
        let msg = record.message().map_err(|e| parse(e.to_string()))?;
        for (name, bytes) in msg.fields() {
            let Ok(h) = shannon_entropy(&bytes) else {
                continue;
            };
            let flagged =
                required_entropy(bytes.len(), threshold, min_len).is_some_and(|req| h >= req);
            fields.push(FieldEntropy {
                seq: record.seq,
                kind: record.kind.clone(),
                name,
                byte_count: bytes.len(),
                bits_per_byte: h,
                flagged,
            });
        }
    }
    Ok(EntropyReport {
        threshold,
        min_len,
        fields,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(shannon_entropy(&[]), Err(EntropyError::EmptyInput));
    }

    #[test]
    fn two_symbols_one_bit() {
        assert_eq!(shannon_entropy(b"abababab").unwrap(), 1.0);
    }

    #[test]
    fn short_fields_below_floor_never_flag() {
        assert_eq!(
            required_entropy(7, DEFAULT_THRESHOLD, DEFAULT_MIN_LEN),
            None
        );
        assert_eq!(
            required_entropy(32, DEFAULT_THRESHOLD, DEFAULT_MIN_LEN),
            Some(7.0)
        );
        let r = required_entropy(16, DEFAULT_THRESHOLD, DEFAULT_MIN_LEN).unwrap();
        assert!((r - 3.6).abs() < 1e-12);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = classify_trace_fields("\n{not json}\n", 7.0, 32).unwrap_err();
        assert!(matches!(err, EntropyError::Parse { line: 2, .. }));
    }
}
