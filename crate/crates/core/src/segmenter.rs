//! Unit-language segmentation.
//!
//! Splits a unit sequence into contiguous spans of at most K units so that
//! the summed span log-probabilities are maximal:
//!
//! `best[i] = max over k in [1, min(K, i)] of best[i-k] + log P(u[i-k+1..i])`
//!
//! with `best[0] = 0` and the chosen `k` recorded for backtrace. Ties go to
//! the smaller `k` (shorter final span), which pins down a unique
//! segmentation and lets the exhaustive oracle reproduce it.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, MAX_ORACLE_LEN};
use crate::unitlm::SpanModel;
use crate::unitseq::UnitSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedSequence {
    pub tokens: Vec<Vec<u32>>,
    pub source: UnitSequence,
    pub score: f64,
}

impl SegmentedSequence {
    /// Concatenation of all tokens; always equals the source units.
    pub fn flatten(&self) -> Vec<u32> {
        self.tokens.iter().flatten().copied().collect()
    }
}

fn check_inputs(seq: &UnitSequence, model: &SpanModel) -> Result<()> {
    if seq.is_empty() {
        return Err(Error::EmptyInput("cannot segment an empty sequence".into()));
    }
    if seq.vocab_size != model.vocab_size() {
        return Err(Error::InvalidInput(format!(
            "sequence vocab {} does not match model vocab {}",
            seq.vocab_size,
            model.vocab_size()
        )));
    }
    Ok(())
}

/// Maximum-score segmentation via dynamic programming.
pub fn segment(seq: &UnitSequence, model: &SpanModel) -> Result<SegmentedSequence> {
    check_inputs(seq, model)?;
    let n = seq.len();
    let max_span = model.max_span();
    let units = &seq.units;

    let mut best = vec![f64::NEG_INFINITY; n + 1];
    let mut back = vec![0usize; n + 1];
    best[0] = 0.0;
    for i in 1..=n {
        for k in 1..=max_span.min(i) {
            let cand = best[i - k] + model.span_log_prob(&units[i - k..i])?;
            // Strict improvement only: the first (smallest) k wins ties.
            if cand > best[i] {
                best[i] = cand;
                back[i] = k;
            }
        }
    }

    let mut tokens = Vec::new();
    let mut i = n;
    while i > 0 {
        let k = back[i];
        tokens.push(units[i - k..i].to_vec());
        i -= k;
    }
    tokens.reverse();
    Ok(SegmentedSequence { tokens, source: seq.clone(), score: best[n] })
}

/// Exhaustive-enumeration oracle for `segment`.
///
/// Walks every composition of the sequence into spans of length <= K,
/// scoring each by a left-to-right fold, and records the best fold seen at
/// every boundary. The winning boundaries are then read off from the end by
/// the shared tie rule: the shortest final span whose optimal-prefix score
/// plus span score reaches the boundary's best.
pub fn segment_brute_force(seq: &UnitSequence, model: &SpanModel) -> Result<SegmentedSequence> {
    check_inputs(seq, model)?;
    if seq.len() > MAX_ORACLE_LEN {
        return Err(Error::TooLargeForOracle(seq.len()));
    }
    let n = seq.len();
    let max_span = model.max_span();
    let units = &seq.units;

    // best_at[i]: maximum fold over every enumerated segmentation of the
    // prefix u[..i]. Every prefix composition extends to a full one, so the
    // full-sequence walk visits them all.
    let mut best_at = vec![f64::NEG_INFINITY; n + 1];
    best_at[0] = 0.0;

    fn recurse(
        pos: usize,
        fold: f64,
        n: usize,
        max_span: usize,
        units: &[u32],
        model: &SpanModel,
        best_at: &mut [f64],
    ) -> Result<()> {
        if pos == n {
            return Ok(());
        }
        for k in 1..=max_span.min(n - pos) {
            let lp = model.span_log_prob(&units[pos..pos + k])?;
            let next = fold + lp;
            if next > best_at[pos + k] {
                best_at[pos + k] = next;
            }
            recurse(pos + k, next, n, max_span, units, model, best_at)?;
        }
        Ok(())
    }

    recurse(0, 0.0, n, max_span, units, model, &mut best_at)?;

    let mut tokens = Vec::new();
    let mut i = n;
    while i > 0 {
        let mut chosen = None;
        for k in 1..=max_span.min(i) {
            let lp = model.span_log_prob(&units[i - k..i])?;
            if best_at[i - k] + lp == best_at[i] {
                chosen = Some(k);
                break;
            }
        }
        let k = chosen.expect("some span reaches every reachable boundary");
        tokens.push(units[i - k..i].to_vec());
        i -= k;
    }
    tokens.reverse();
    Ok(SegmentedSequence { tokens, source: seq.clone(), score: best_at[n] })
}

/// Per-sequence unit and token counts for a segmented corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceCompression {
    pub index: usize,
    pub units: usize,
    pub tokens: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompressionReport {
    pub sequences: usize,
    pub mean_units: f64,
    pub mean_tokens: f64,
    /// tokens / units over the whole corpus.
    pub ratio: f64,
    pub per_sequence: Vec<SequenceCompression>,
}

pub fn compression_report(
    corpus: &[UnitSequence],
    model: &SpanModel,
) -> Result<CompressionReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("compression report needs at least one sequence".into()));
    }
    let mut per_sequence = Vec::with_capacity(corpus.len());
    let mut total_units = 0usize;
    let mut total_tokens = 0usize;
    for (index, seq) in corpus.iter().enumerate() {
        let seg = segment(seq, model)?;
        let units = seq.len();
        let tokens = seg.tokens.len();
        total_units += units;
        total_tokens += tokens;
        per_sequence.push(SequenceCompression {
            index,
            units,
            tokens,
            ratio: tokens as f64 / units as f64,
        });
    }
    let n = corpus.len() as f64;
    Ok(CompressionReport {
        sequences: corpus.len(),
        mean_units: total_units as f64 / n,
        mean_tokens: total_tokens as f64 / n,
        ratio: total_tokens as f64 / total_units as f64,
        per_sequence,
    })
}

/// Token-to-ID table over unit spans.
///
/// Single-unit spans are always present so any span can be re-split; the
/// remaining slots go to the most frequent multi-unit spans from training,
/// ranked by count and then lexicographically.
#[derive(Debug, Clone)]
pub struct TokenVocab {
    spans: Vec<Vec<u32>>,
    id_of: HashMap<Vec<u32>, u32>,
}

pub const DEFAULT_TOKEN_VOCAB_SIZE: usize = 16384;

impl TokenVocab {
    pub fn build(model: &SpanModel, max_size: usize) -> TokenVocab {
        let vocab = model.vocab_size() as usize;
        let mut spans: Vec<Vec<u32>> = (0..vocab as u32).map(|u| vec![u]).collect();

        let mut multi: Vec<(Vec<u32>, u64)> = Vec::new();
        // Enumerating the count table through serialization order keeps the
        // ranking deterministic without exposing the internal map.
        for len in 2..=model.max_span() {
            multi.extend(enumerate_counted_spans(model, len));
        }
        multi.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (span, _) in multi {
            if spans.len() >= max_size.max(vocab) {
                break;
            }
            spans.push(span);
        }

        let id_of = spans
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        TokenVocab { spans, id_of }
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn id(&self, span: &[u32]) -> Option<u32> {
        self.id_of.get(span).copied()
    }

    pub fn span_of(&self, id: u32) -> Option<&[u32]> {
        self.spans.get(id as usize).map(|s| s.as_slice())
    }

    /// Maps segmentation tokens to IDs. A span missing from the table is
    /// re-split greedily, longest in-vocabulary prefix first; single-unit
    /// spans guarantee termination.
    pub fn encode(&self, tokens: &[Vec<u32>]) -> Vec<u32> {
        let mut out = Vec::with_capacity(tokens.len());
        for token in tokens {
            if let Some(id) = self.id(token) {
                out.push(id);
                continue;
            }
            let mut rest = token.as_slice();
            while !rest.is_empty() {
                let mut take = rest.len();
                while take > 1 && self.id(&rest[..take]).is_none() {
                    take -= 1;
                }
                out.push(self.id(&rest[..take]).expect("single-unit spans are always in-vocab"));
                rest = &rest[take..];
            }
        }
        out
    }
}

fn enumerate_counted_spans(model: &SpanModel, len: usize) -> Vec<(Vec<u32>, u64)> {
    // Walk the count table via its JSON form to stay order-independent.
    let json = model.to_json().expect("span model serializes");
    let file: serde_json::Value = serde_json::from_str(&json).expect("round-trip");
    let mut out = Vec::new();
    if let Some(counts) = file.get("counts").and_then(|c| c.as_object()) {
        for (key, value) in counts {
            let span: Vec<u32> = key.split('_').map(|p| p.parse().unwrap()).collect();
            if span.len() == len {
                out.push((span, value.as_u64().unwrap()));
            }
        }
    }
    out
}

/// One JSONL record of `segment` output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub id: String,
    pub tokens: Vec<Vec<u32>>,
    pub score: f64,
}

pub fn read_segment_records<R: BufRead>(r: R) -> Result<Vec<SegmentRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SegmentRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("segment record line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_segment_records<W: Write>(w: &mut W, records: &[SegmentRecord]) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut *w, rec)?;
        writeln!(w)?;
    }
    Ok(())
}
