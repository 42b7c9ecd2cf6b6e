//! Data quality control: word error rate, the retention filter, and corpus
//! manifest statistics.
//!
//! Texts are normalized before scoring — lowercased, with leading and
//! trailing punctuation stripped per word — and WER is the unit-cost word
//! edit distance divided by the reference length.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptPair {
    pub id: String,
    pub reference: Vec<String>,
    pub hypothesis: Vec<String>,
}

impl TranscriptPair {
    pub fn from_texts(id: impl Into<String>, reference: &str, hypothesis: &str) -> Self {
        Self {
            id: id.into(),
            reference: normalize_words(reference),
            hypothesis: normalize_words(hypothesis),
        }
    }
}

/// Lowercases and strips leading/trailing punctuation from each word; words
/// that normalize to nothing are dropped.
pub fn normalize_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|w| {
            let trimmed = w.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'');
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_lowercase())
            }
        })
        .collect()
}

/// Unit-cost word-level edit distance.
pub fn edit_distance(a: &[String], b: &[String]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, wa) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, wb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(wa != wb);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// (substitutions + insertions + deletions) / |reference|.
pub fn wer(pair: &TranscriptPair) -> Result<f64> {
    if pair.reference.is_empty() {
        return Err(Error::EmptyReference(pair.id.clone()));
    }
    Ok(edit_distance(&pair.reference, &pair.hypothesis) as f64 / pair.reference.len() as f64)
}

pub const HISTOGRAM_BIN_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    /// Exclusive upper edge; the unbounded last bin collects everything
    /// at or above 1.0.
    pub hi: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterReport {
    pub threshold: f64,
    pub retained: usize,
    pub dropped: usize,
    pub histogram: Vec<HistogramBin>,
}

/// Keeps exactly the pairs with `wer < threshold` (strict).
pub fn filter_corpus(
    pairs: &[TranscriptPair],
    threshold: f64,
) -> Result<(Vec<TranscriptPair>, FilterReport)> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidInput(format!("threshold {threshold} outside [0, 1]")));
    }
    let bins = (1.0 / HISTOGRAM_BIN_WIDTH).round() as usize;
    let mut histogram: Vec<HistogramBin> = (0..=bins)
        .map(|i| HistogramBin {
            lo: i as f64 * HISTOGRAM_BIN_WIDTH,
            hi: (i < bins).then(|| (i + 1) as f64 * HISTOGRAM_BIN_WIDTH),
            count: 0,
        })
        .collect();
    let mut retained = Vec::new();
    let mut dropped = 0usize;
    for pair in pairs {
        let rate = wer(pair)?;
        let bin = ((rate / HISTOGRAM_BIN_WIDTH).floor() as usize).min(bins);
        histogram[bin].count += 1;
        if rate < threshold {
            retained.push(pair.clone());
        } else {
            dropped += 1;
        }
    }
    let report =
        FilterReport { threshold, retained: retained.len(), dropped, histogram };
    Ok((retained, report))
}

/// One JSONL transcript record with raw (unnormalized) texts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    #[serde(rename = "ref")]
    pub reference: String,
    #[serde(rename = "hyp")]
    pub hypothesis: String,
}

impl PairRecord {
    pub fn to_pair(&self) -> TranscriptPair {
        TranscriptPair::from_texts(&self.id, &self.reference, &self.hypothesis)
    }
}

pub fn read_pair_records<R: BufRead>(r: R) -> Result<Vec<PairRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("pair record line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_pair_records<W: Write>(w: &mut W, records: &[PairRecord]) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut *w, rec)?;
        writeln!(w)?;
    }
    Ok(())
}

/// One manifest row: `id,task,size,duration_hours`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub task: String,
    pub size: u64,
    pub duration_hours: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskStats {
    pub task: String,
    pub size: u64,
    pub duration_hours: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_task: Vec<TaskStats>,
    pub total_size: u64,
    pub total_duration_hours: f64,
}

pub fn read_manifest<R: Read>(r: R) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for rec in reader.deserialize() {
        let row: ManifestRow = rec?;
        rows.push(row);
    }
    Ok(rows)
}

/// Aggregates size and duration per task plus grand totals.
pub fn corpus_stats(rows: &[ManifestRow]) -> Result<CorpusStats> {
    let mut per_task: BTreeMap<String, (u64, f64)> = BTreeMap::new();
    let mut total_size = 0u64;
    let mut total_duration = 0.0f64;
    for row in rows {
        if row.duration_hours < 0.0 || !row.duration_hours.is_finite() {
            return Err(Error::InvalidInput(format!(
                "row '{}' has invalid duration {}",
                row.id, row.duration_hours
            )));
        }
        let entry = per_task.entry(row.task.clone()).or_insert((0, 0.0));
        entry.0 += row.size;
        entry.1 += row.duration_hours;
        total_size += row.size;
        total_duration += row.duration_hours;
    }
    Ok(CorpusStats {
        per_task: per_task
            .into_iter()
            .map(|(task, (size, duration_hours))| TaskStats { task, size, duration_hours })
            .collect(),
        total_size,
        total_duration_hours: total_duration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive alignment enumeration: walks every monotone edit script
    /// without memoization. Oracle for the DP.
    fn brute_edit_distance(a: &[String], b: &[String]) -> usize {
        fn go(a: &[String], b: &[String]) -> usize {
            match (a.is_empty(), b.is_empty()) {
                (true, _) => b.len(),
                (_, true) => a.len(),
                _ => {
                    let sub = go(&a[1..], &b[1..]) + usize::from(a[0] != b[0]);
                    let del = go(&a[1..], b) + 1;
                    let ins = go(a, &b[1..]) + 1;
                    sub.min(del).min(ins)
                }
            }
        }
        go(a, b)
    }

    fn words(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identical_texts_score_zero() {
        let p = TranscriptPair::from_texts("a", "the cat sat", "the cat sat");
        assert_eq!(wer(&p).unwrap(), 0.0);
    }

    #[test]
    fn one_substitution_in_three_words() {
        let p = TranscriptPair::from_texts("a", "the cat sat", "the bat sat");
        assert!((wer(&p).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn case_and_punctuation_are_normalized() {
        let p = TranscriptPair::from_texts("a", "The CAT sat.", "the cat, sat");
        assert_eq!(wer(&p).unwrap(), 0.0);
        assert_eq!(normalize_words("Hello, World!"), words(&["hello", "world"]));
        assert_eq!(normalize_words("it's  OK..."), words(&["it's", "ok"]));
        assert_eq!(normalize_words("--- ..."), Vec::<String>::new());
    }

    #[test]
    fn empty_reference_is_an_error() {
        let p = TranscriptPair::from_texts("x", "...", "something");
        assert_eq!(wer(&p).unwrap_err().kind(), "EmptyReference");
    }

    #[test]
    fn matches_exhaustive_alignment_on_random_pairs() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let vocab = ["alpha", "beta", "gamma"];
        let mut rng = StdRng::seed_from_u64(404);
        for _ in 0..300 {
            let la = rng.random_range(1..=6);
            let lb = rng.random_range(0..=6);
            let a: Vec<String> =
                (0..la).map(|_| vocab[rng.random_range(0..3)].to_string()).collect();
            let b: Vec<String> =
                (0..lb).map(|_| vocab[rng.random_range(0..3)].to_string()).collect();
            assert_eq!(edit_distance(&a, &b), brute_edit_distance(&a, &b));
        }
    }

    #[test]
    fn filter_boundary_is_strict() {
        let pairs = vec![
            // 25 words, 1 error: WER 0.04
            TranscriptPair {
                id: "keep".into(),
                reference: (0..25).map(|i| format!("w{i}")).collect(),
                hypothesis: (0..25).map(|i| if i == 0 { "x".into() } else { format!("w{i}") }).collect(),
            },
            // 20 words, 1 error: WER 0.05 exactly
            TranscriptPair {
                id: "drop".into(),
                reference: (0..20).map(|i| format!("w{i}")).collect(),
                hypothesis: (0..20).map(|i| if i == 0 { "x".into() } else { format!("w{i}") }).collect(),
            },
        ];
        let (retained, report) = filter_corpus(&pairs, 0.05).unwrap();
        assert_eq!(retained.len(), 1);
        assert_eq!(retained[0].id, "keep");
        assert_eq!(report.retained, 1);
        assert_eq!(report.dropped, 1);
    }

    #[test]
    fn threshold_one_keeps_sub_one_wers() {
        let pairs = vec![
            TranscriptPair::from_texts("a", "one two", "one two"),
            TranscriptPair::from_texts("b", "one", "two three"),
        ];
        let (retained, _) = filter_corpus(&pairs, 1.0).unwrap();
        assert_eq!(retained.len(), 1);
        assert_eq!(retained[0].id, "a");
    }

    #[test]
    fn corpus_stats_totals_and_tasks() {
        let rows = vec![
            ManifestRow { id: "x".into(), task: "ASR".into(), size: 10, duration_hours: 1.0 },
            ManifestRow { id: "y".into(), task: "TTS".into(), size: 5, duration_hours: 0.5 },
            ManifestRow { id: "z".into(), task: "ASR".into(), size: 7, duration_hours: 2.0 },
        ];
        let stats = corpus_stats(&rows).unwrap();
        assert_eq!(stats.total_size, 22);
        assert!((stats.total_duration_hours - 3.5).abs() < 1e-12);
        assert_eq!(stats.per_task.len(), 2);
        assert_eq!(stats.per_task[0].task, "ASR");
        assert_eq!(stats.per_task[0].size, 17);
    }

    #[test]
    fn empty_manifest_gives_zero_totals() {
        let stats = corpus_stats(&[]).unwrap();
        assert_eq!(stats.total_size, 0);
        assert_eq!(stats.total_duration_hours, 0.0);
        assert!(stats.per_task.is_empty());
    }

    #[test]
    fn single_row_totals_equal_that_row() {
        let rows = vec![ManifestRow {
            id: "only".into(),
            task: "SQA".into(),
            size: 117,
            duration_hours: 3.25,
        }];
        let stats = corpus_stats(&rows).unwrap();
        assert_eq!(stats.total_size, 117);
        assert_eq!(stats.total_duration_hours, 3.25);
    }

    #[test]
    fn negative_duration_rejected() {
        let rows = vec![ManifestRow {
            id: "bad".into(),
            task: "ASR".into(),
            size: 1,
            duration_hours: -2.0,
        }];
        assert_eq!(corpus_stats(&rows).unwrap_err().kind(), "InvalidInput");
    }

    #[test]
    fn manifest_csv_parses() {
        let csv_text = "id,task,size,duration_hours\nls,ASR,281241,960\nmls,ASR,723636,3000\n";
        let rows = read_manifest(csv_text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].size, 281241);
        assert_eq!(rows[1].duration_hours, 3000.0);
    }

    #[test]
    fn malformed_manifest_is_a_format_error() {
        let csv_text = "id,task,size,duration_hours\nls,ASR,notanumber,960\n";
        assert_eq!(read_manifest(csv_text.as_bytes()).unwrap_err().kind(), "FormatError");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn wer_zero_iff_equal(
            a in proptest::collection::vec(prop_oneof![Just("x"), Just("y"), Just("z")], 1..8),
            b in proptest::collection::vec(prop_oneof![Just("x"), Just("y"), Just("z")], 0..8),
        ) {
            let pair = TranscriptPair { id: "p".into(), reference: words(&a), hypothesis: words(&b) };
            let rate = wer(&pair).unwrap();
            prop_assert_eq!(rate == 0.0, a == b);
            // Cost bound.
            prop_assert!(rate <= a.len().max(b.len()) as f64 / a.len() as f64);
        }

        #[test]
        fn filter_partitions_the_input(
            sizes in proptest::collection::vec(1usize..6, 1..12),
            threshold in 0.0f64..1.0,
        ) {
            let pairs: Vec<TranscriptPair> = sizes.iter().enumerate().map(|(i, &n)| {
                TranscriptPair {
                    id: format!("p{i}"),
                    reference: (0..n).map(|j| format!("w{j}")).collect(),
                    hypothesis: (0..n).map(|j| if j % 2 == i % 2 { format!("w{j}") } else { "q".into() }).collect(),
                }
            }).collect();
            let (retained, report) = filter_corpus(&pairs, threshold).unwrap();
            prop_assert_eq!(report.retained + report.dropped, pairs.len());
            prop_assert_eq!(retained.len(), report.retained);
            let total_binned: usize = report.histogram.iter().map(|b| b.count).sum();
            prop_assert_eq!(total_binned, pairs.len());
            for pair in &retained {
                prop_assert!(wer(pair).unwrap() < threshold);
            }
        }
    }
}
