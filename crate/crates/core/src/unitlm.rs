//! Span-statistics language model over unit sequences.
//!
//! Counts every contiguous span of length 1..=K across a corpus and scores
//! a span with additive smoothing, normalized within its length class:
//!
//! `log P(span) = log((count + alpha) / (total_len + alpha * V^len))`
//!
//! where `total_len` is the number of windows of that length seen in
//! training and `V` the unit vocabulary size. Smoothing keeps every score
//! finite, so unseen spans encountered at segmentation time are well
//! defined.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::unitseq::UnitSequence;

#[derive(Debug, Clone)]
pub struct SpanModel {
    max_span: usize,
    alpha: f64,
    vocab_size: u32,
    counts: HashMap<Vec<u32>, u64>,
    total_by_length: Vec<u64>,
}

/// Counts every contiguous span of length `1..=max_span` in the corpus.
pub fn train_span_model(
    corpus: &[UnitSequence],
    max_span: usize,
    alpha: f64,
) -> Result<SpanModel> {
    if corpus.is_empty() {
        return Err(Error::InsufficientData("empty training corpus".into()));
    }
    if max_span == 0 {
        return Err(Error::InvalidInput("max_span must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidInput("alpha must be a positive finite real".into()));
    }
    let vocab_size = corpus[0].vocab_size;
    if corpus.iter().any(|s| s.vocab_size != vocab_size) {
        return Err(Error::InvalidInput("corpus mixes unit vocabularies".into()));
    }

    let mut counts: HashMap<Vec<u32>, u64> = HashMap::new();
    let mut total_by_length = vec![0u64; max_span];
    for seq in corpus {
        let units = &seq.units;
        for len in 1..=max_span.min(units.len()) {
            for window in units.windows(len) {
                *counts.entry(window.to_vec()).or_insert(0) += 1;
            }
            total_by_length[len - 1] += (units.len() - len + 1) as u64;
        }
    }
    Ok(SpanModel { max_span, alpha, vocab_size, counts, total_by_length })
}

impl SpanModel {
    pub fn max_span(&self) -> usize {
        self.max_span
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn span_count(&self, span: &[u32]) -> u64 {
        self.counts.get(span).copied().unwrap_or(0)
    }

    /// Number of training windows of the given span length.
    pub fn total_for_length(&self, len: usize) -> u64 {
        self.total_by_length.get(len.wrapping_sub(1)).copied().unwrap_or(0)
    }

    /// Smoothed log-probability of a span within its length class.
    pub fn span_log_prob(&self, span: &[u32]) -> Result<f64> {
        let len = span.len();
        if len == 0 || len > self.max_span {
            return Err(Error::SpanTooLong { len, max: self.max_span });
        }
        let count = self.span_count(span) as f64;
        let total = self.total_for_length(len) as f64;
        let classes = (self.vocab_size as f64).powi(len as i32);
        Ok(((count + self.alpha) / (total + self.alpha * classes)).ln())
    }

    pub fn to_json(&self) -> Result<String> {
        let counts: BTreeMap<String, u64> = self
            .counts
            .iter()
            .map(|(span, &c)| (join_span(span), c))
            .collect();
        let file = SpanModelFile {
            k: self.max_span,
            alpha: self.alpha,
            vocab_size: self.vocab_size,
            counts,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<SpanModel> {
        let file: SpanModelFile = serde_json::from_str(text)?;
        if file.k == 0 {
            return Err(Error::Format("K must be at least 1".into()));
        }
        if !(file.alpha > 0.0 && file.alpha.is_finite()) {
            return Err(Error::Format("alpha must be a positive finite real".into()));
        }
        if file.vocab_size == 0 {
            return Err(Error::Format("vocab_size must be positive".into()));
        }
        let mut counts = HashMap::with_capacity(file.counts.len());
        let mut total_by_length = vec![0u64; file.k];
        for (key, count) in file.counts {
            let span = parse_span(&key)?;
            if span.is_empty() || span.len() > file.k {
                return Err(Error::Format(format!("span key '{key}' has length outside [1, {}]", file.k)));
            }
            if count == 0 {
                return Err(Error::Format(format!("span key '{key}' has a zero count")));
            }
            if let Some(&bad) = span.iter().find(|&&u| u >= file.vocab_size) {
                return Err(Error::Format(format!("span key '{key}' contains unit {bad} >= vocab_size")));
            }
            total_by_length[span.len() - 1] += count;
            counts.insert(span, count);
        }
        Ok(SpanModel {
            max_span: file.k,
            alpha: file.alpha,
            vocab_size: file.vocab_size,
            counts,
            total_by_length,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SpanModelFile {
    #[serde(rename = "K")]
    k: usize,
    alpha: f64,
    vocab_size: u32,
    counts: BTreeMap<String, u64>,
}

fn join_span(span: &[u32]) -> String {
    span.iter().map(|u| u.to_string()).collect::<Vec<_>>().join("_")
}

fn parse_span(key: &str) -> Result<Vec<u32>> {
    key.split('_')
        .map(|part| {
            part.parse::<u32>()
                .map_err(|_| Error::Format(format!("bad span key component '{part}'")))
        })
        .collect()
}
