//! Streaming read/write trigger policy.
//!
//! Each position's semantic state is scored by cosine similarity against a
//! trigger vector. A position fires a WRITE when its similarity exceeds the
//! threshold and is the maximum of a centered window of width `w`; on a
//! plateau of equal maxima only the earliest position inside the window
//! fires. Decisions therefore need `w/2` positions of lookahead, and the
//! incremental segmenter emits a decision exactly when that lookahead (or
//! the end of the sequence) arrives. Every WRITE flushes the positions
//! accumulated since the previous WRITE; whatever remains at end of stream
//! is flushed as a final segment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::NORM_EPSILON;
use crate::matrix::{dot, l2_norm, Matrix};

pub const DEFAULT_THRESHOLD: f64 = 0.1;
pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TriggerConfig {
    pub trigger_vector: Vec<f64>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

impl TriggerConfig {
    pub fn new(trigger_vector: Vec<f64>, threshold: f64, window: usize) -> Result<Self> {
        let cfg = Self { trigger_vector, threshold, window };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trigger_vector.is_empty() || l2_norm(&self.trigger_vector) < NORM_EPSILON {
            return Err(Error::DegenerateVector("trigger vector has (near-)zero norm".into()));
        }
        if !self.trigger_vector.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("trigger vector contains non-finite entries".into()));
        }
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::InvalidInput(format!("window {} must be odd and positive", self.window)));
        }
        if !self.threshold.is_finite() {
            return Err(Error::InvalidInput("threshold is not finite".into()));
        }
        Ok(())
    }

    pub fn lookahead(&self) -> usize {
        self.window / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Action {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamDecision {
    pub position: usize,
    pub action: Action,
    pub similarity: f64,
}

/// Half-open position range flushed by one WRITE (or the final flush).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamRun {
    pub decisions: Vec<StreamDecision>,
    pub segments: Vec<Segment>,
}

/// Cosine similarity of every row of `hidden` against the trigger vector.
pub fn similarity_series(hidden: &Matrix, config: &TriggerConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if hidden.cols() != config.trigger_vector.len() {
        return Err(Error::DimensionMismatch(format!(
            "hidden dim {} vs trigger dim {}",
            hidden.cols(),
            config.trigger_vector.len()
        )));
    }
    hidden.ensure_finite("hidden states")?;
    let tnorm = l2_norm(&config.trigger_vector);
    let mut out = Vec::with_capacity(hidden.rows());
    for (i, row) in hidden.iter_rows().enumerate() {
        let rnorm = l2_norm(row);
        let denom = rnorm * tnorm;
        if denom < NORM_EPSILON {
            return Err(Error::DegenerateVector(format!("zero-norm hidden row {i}")));
        }
        out.push((dot(row, &config.trigger_vector) / denom).clamp(-1.0, 1.0));
    }
    Ok(out)
}

/// Incremental segmenter: feed similarities one at a time; decisions come
/// back as soon as their lookahead is satisfied.
#[derive(Debug)]
pub struct StreamingSegmenter {
    threshold: f64,
    window: usize,
    sims: Vec<f64>,
    next_decision: usize,
    flushed: usize,
    decisions: Vec<StreamDecision>,
    segments: Vec<Segment>,
}

impl StreamingSegmenter {
    pub fn new(threshold: f64, window: usize) -> Result<Self> {
        if window == 0 || window % 2 == 0 {
            return Err(Error::InvalidInput(format!("window {window} must be odd and positive")));
        }
        Ok(Self {
            threshold,
            window,
            sims: Vec::new(),
            next_decision: 0,
            flushed: 0,
            decisions: Vec::new(),
            segments: Vec::new(),
        })
    }

    /// Pushes the similarity for the next position and returns the decisions
    /// that became decidable.
    pub fn push(&mut self, similarity: f64) -> Vec<StreamDecision> {
        self.sims.push(similarity);
        self.drain_ready(false)
    }

    /// Marks end of stream: resolves all pending decisions and flushes the
    /// trailing segment.
    pub fn finish(mut self) -> StreamRun {
        self.drain_ready(true);
        if self.flushed < self.sims.len() {
            self.segments.push(Segment { start: self.flushed, end: self.sims.len() });
        }
        StreamRun { decisions: self.decisions, segments: self.segments }
    }

    fn drain_ready(&mut self, at_end: bool) -> Vec<StreamDecision> {
        let half = self.window / 2;
        let mut fresh = Vec::new();
        while self.next_decision < self.sims.len() {
            let t = self.next_decision;
            if !at_end && self.sims.len() <= t + half {
                break;
            }
            let decision = decide(&self.sims, t, self.threshold, half);
            if decision.action == Action::Write {
                self.segments.push(Segment { start: self.flushed, end: t + 1 });
                self.flushed = t + 1;
            }
            self.decisions.push(decision);
            fresh.push(decision);
            self.next_decision += 1;
        }
        fresh
    }
}

fn decide(sims: &[f64], t: usize, threshold: f64, half: usize) -> StreamDecision {
    let s = sims[t];
    let lo = t.saturating_sub(half);
    let hi = (t + half).min(sims.len() - 1);
    let mut write = s > threshold;
    if write {
        for (j, &other) in sims.iter().enumerate().take(hi + 1).skip(lo) {
            // Max of the window; earlier equal values suppress this one.
            let beaten = if j < t { other >= s } else { other > s };
            if beaten {
                write = false;
                break;
            }
        }
    }
    StreamDecision {
        position: t,
        action: if write { Action::Write } else { Action::Read },
        similarity: s,
    }
}

/// Offline oracle: applies the WRITE rule to the whole series at once.
pub fn offline_write_positions(sims: &[f64], threshold: f64, window: usize) -> Vec<bool> {
    let half = window / 2;
    (0..sims.len())
        .map(|t| decide(sims, t, threshold, half).action == Action::Write)
        .collect()
}

/// Runs the trigger policy over hidden states, returning per-position
/// decisions and flushed segments.
pub fn stream_segment(hidden: &Matrix, config: &TriggerConfig) -> Result<StreamRun> {
    if hidden.rows() == 0 {
        return Err(Error::EmptyInput("no hidden states to stream".into()));
    }
    let sims = similarity_series(hidden, config)?;
    let mut seg = StreamingSegmenter::new(config.threshold, config.window)?;
    for s in sims {
        seg.push(s);
    }
    Ok(seg.finish())
}

/// Token-denominated latency summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyReport {
    /// Position of the first WRITE plus the fixed lookahead; the whole
    /// sequence length when nothing fires before the final flush.
    pub latency_tokens: usize,
    pub segment_count: usize,
    pub mean_segment_length: f64,
    pub write_count: usize,
    /// Offline decoding waits for the full sequence.
    pub offline_latency_tokens: usize,
}

pub fn latency_report(
    decisions: &[StreamDecision],
    window: usize,
    text_len: usize,
) -> LatencyReport {
    let lookahead = window / 2;
    let writes: Vec<usize> = decisions
        .iter()
        .filter(|d| d.action == Action::Write)
        .map(|d| d.position)
        .collect();
    let latency_tokens = match writes.first() {
        Some(&p) => (p + lookahead).min(text_len),
        None => text_len,
    };
    let mut segment_count = writes.len();
    if writes.last().map(|&p| p + 1 < text_len).unwrap_or(text_len > 0) {
        segment_count += 1; // trailing flush
    }
    let mean_segment_length = if segment_count == 0 {
        0.0
    } else {
        text_len as f64 / segment_count as f64
    };
    LatencyReport {
        latency_tokens,
        segment_count,
        mean_segment_length,
        write_count: writes.len(),
        offline_latency_tokens: text_len,
    }
}
