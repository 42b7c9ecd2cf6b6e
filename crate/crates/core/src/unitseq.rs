//! Discrete unit-sequence utilities: adjacent deduplication and the
//! speech-token/text-token length ratio.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A sequence of discrete unit IDs drawn from a fixed vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSequence {
    pub units: Vec<u32>,
    pub vocab_size: u32,
}

impl UnitSequence {
    pub fn new(units: Vec<u32>, vocab_size: u32) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::InvalidInput("vocab_size must be positive".into()));
        }
        if let Some(&bad) = units.iter().find(|&&u| u >= vocab_size) {
            return Err(Error::InvalidTarget { id: bad, vocab: vocab_size as usize });
        }
        Ok(Self { units, vocab_size })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

/// Collapses each maximal run of equal adjacent IDs to a single occurrence.
pub fn dedup_adjacent(seq: &UnitSequence) -> UnitSequence {
    let mut units = Vec::with_capacity(seq.units.len());
    for &u in &seq.units {
        if units.last() != Some(&u) {
            units.push(u);
        }
    }
    UnitSequence { units, vocab_size: seq.vocab_size }
}

/// Speech-token count divided by text-token count.
pub fn length_ratio(speech_tokens: usize, text_tokens: usize) -> Result<f64> {
    if text_tokens == 0 {
        return Err(Error::DivisionByZero("text token count is zero".into()));
    }
    Ok(speech_tokens as f64 / text_tokens as f64)
}

/// One JSONL record: `{"id": ..., "units": [...], "vocab_size": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub id: String,
    pub units: Vec<u32>,
    pub vocab_size: u32,
}

impl UnitRecord {
    pub fn new(id: impl Into<String>, seq: &UnitSequence) -> Self {
        Self { id: id.into(), units: seq.units.clone(), vocab_size: seq.vocab_size }
    }

    pub fn to_sequence(&self) -> Result<UnitSequence> {
        UnitSequence::new(self.units.clone(), self.vocab_size)
    }
}

pub fn read_unit_records<R: BufRead>(r: R) -> Result<Vec<UnitRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UnitRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("unit record line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_unit_records<W: Write>(w: &mut W, records: &[UnitRecord]) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut *w, rec)?;
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(units: &[u32]) -> UnitSequence {
        UnitSequence::new(units.to_vec(), 100).unwrap()
    }

    #[test]
    fn dedup_collapses_runs() {
        assert_eq!(dedup_adjacent(&seq(&[7, 7, 3, 3, 3, 7])).units, vec![7, 3, 7]);
    }

    #[test]
    fn dedup_empty() {
        assert_eq!(dedup_adjacent(&seq(&[])).units, Vec::<u32>::new());
    }

    #[test]
    fn dedup_single_run() {
        assert_eq!(dedup_adjacent(&seq(&[5, 5, 5, 5])).units, vec![5]);
    }

    #[test]
    fn length_ratio_matches_reported_form() {
        assert!((length_ratio(931, 100).unwrap() - 9.31).abs() < 1e-12);
        assert_eq!(length_ratio(100, 100).unwrap(), 1.0);
        assert!((length_ratio(457, 100).unwrap() - 4.57).abs() < 1e-12);
    }

    #[test]
    fn length_ratio_rejects_zero_text() {
        assert_eq!(length_ratio(10, 0).unwrap_err().kind(), "DivisionByZero");
    }

    #[test]
    fn out_of_vocab_unit_rejected() {
        let err = UnitSequence::new(vec![0, 100], 100).unwrap_err();
        assert_eq!(err.kind(), "InvalidTarget");
    }

    #[test]
    fn jsonl_roundtrip() {
        let recs = vec![
            UnitRecord::new("a", &seq(&[1, 2, 3])),
            UnitRecord::new("b", &seq(&[])),
        ];
        let mut buf = Vec::new();
        write_unit_records(&mut buf, &recs).unwrap();
        let back = read_unit_records(buf.as_slice()).unwrap();
        assert_eq!(back, recs);
    }

    proptest! {
        #[test]
        fn dedup_is_idempotent(units in proptest::collection::vec(0u32..8, 0..64)) {
            let s = seq(&units);
            let once = dedup_adjacent(&s);
            let twice = dedup_adjacent(&once);
            prop_assert_eq!(&once, &twice);
        }

        #[test]
        fn dedup_never_longer_and_no_new_ids(units in proptest::collection::vec(0u32..8, 0..64)) {
            let s = seq(&units);
            let d = dedup_adjacent(&s);
            prop_assert!(d.len() <= s.len());
            prop_assert!(d.units.iter().all(|u| s.units.contains(u)));
            prop_assert!(d.units.windows(2).all(|w| w[0] != w[1]));
            // Equality holds exactly when no two adjacent IDs were equal.
            let had_run = s.units.windows(2).any(|w| w[0] == w[1]);
            prop_assert_eq!(d.len() == s.len(), !had_run);
        }
    }
}
