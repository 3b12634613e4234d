//! Event-stream ingestion, validation, splitting, time scaling, batching.
//!
//! On-disk format is line-delimited JSON, one sequence per line:
//!
//! ```text
//! {"seq_id": "s1", "t_end": 50.0, "events": [{"t": 0.4, "type": "login"}, ...]}
//! ```
//!
//! `t_end` is optional; a missing horizon is read as t_end = t of the last
//! event (the observation window closes at the final event). Loading is
//! strict: times must be finite, non-negative and strictly increasing within
//! a sequence, `events` must be non-empty, type texts must be non-empty, and
//! any violation reports the offending line and sequence id rather than being
//! repaired. The type vocabulary (type text <-> id) is built in first-appearance
//! order and is closed from then on: evaluating a checkpoint against data with
//! an unseen type is an error, not an UNK.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::rng::{fnv1a64, StreamRng};

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub t: f64,
    pub type_id: usize,
    pub type_text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventSequence {
    pub seq_id: String,
    pub events: Vec<Event>,
    /// Observation horizon; always >= last event time once validated.
    pub t_end: f64,
}

impl EventSequence {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn last_time(&self) -> f64 {
        self.events.last().map(|e| e.t).unwrap_or(0.0)
    }

    /// Stable per-sequence key for naming random streams.
    pub fn stream_key(&self) -> u64 {
        fnv1a64(self.seq_id.as_bytes())
    }

    /// Consecutive inter-event gaps (len - 1 values).
    pub fn gaps(&self) -> Vec<f64> {
        self.events.windows(2).map(|w| w[1].t - w[0].t).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.events.is_empty() {
            return Err(CoreError::InvalidSequence {
                seq_id: self.seq_id.clone(),
                message: "no events".into(),
            });
        }
        let mut prev = -1.0;
        for (i, e) in self.events.iter().enumerate() {
            if !e.t.is_finite() || e.t < 0.0 {
                return Err(CoreError::InvalidSequence {
                    seq_id: self.seq_id.clone(),
                    message: format!("event {i} has invalid time {}", e.t),
                });
            }
            if i > 0 && e.t <= prev {
                return Err(CoreError::InvalidSequence {
                    seq_id: self.seq_id.clone(),
                    message: format!(
                        "times must be strictly increasing: event {i} at {} after {}",
                        e.t, prev
                    ),
                });
            }
            if e.type_text.trim().is_empty() {
                return Err(CoreError::InvalidSequence {
                    seq_id: self.seq_id.clone(),
                    message: format!("event {i} has an empty type"),
                });
            }
            prev = e.t;
        }
        if !self.t_end.is_finite() || self.t_end < self.last_time() {
            return Err(CoreError::InvalidSequence {
                seq_id: self.seq_id.clone(),
                message: format!(
                    "t_end {} precedes last event at {}",
                    self.t_end,
                    self.last_time()
                ),
            });
        }
        Ok(())
    }
}

/// Sequences plus the closed type vocabulary (index = type id).
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub sequences: Vec<EventSequence>,
    pub type_names: Vec<String>,
}

impl Dataset {
    pub fn num_types(&self) -> usize {
        self.type_names.len()
    }

    pub fn num_events(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }

    /// Re-ids every event against a foreign (closed) type list, erroring on
    /// types that list does not know.
    pub fn aligned_to(&self, type_names: &[String]) -> Result<Dataset> {
        let lookup: BTreeMap<&str, usize> = type_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let mut sequences = self.sequences.clone();
        for seq in sequences.iter_mut() {
            for e in seq.events.iter_mut() {
                e.type_id = *lookup.get(e.type_text.as_str()).ok_or_else(|| {
                    CoreError::UnknownType {
                        type_text: e.type_text.clone(),
                    }
                })?;
            }
        }
        Ok(Dataset {
            sequences,
            type_names: type_names.to_vec(),
        })
    }
}

// ---- JSONL records ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    t: f64,
    #[serde(rename = "type")]
    type_text: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSequence {
    seq_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_end: Option<f64>,
    events: Vec<RawEvent>,
}

/// Loads a JSONL file, validates every sequence, and builds the type
/// vocabulary in first-appearance order.
pub fn load_sequences(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut type_ids: BTreeMap<String, usize> = BTreeMap::new();
    let mut type_names: Vec<String> = Vec::new();
    let mut sequences = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CoreError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawSequence =
            serde_json::from_str(&line).map_err(|e| CoreError::Json {
                path: path.display().to_string(),
                line: lineno + 1,
                message: e.to_string(),
            })?;
        let mut events = Vec::with_capacity(raw.events.len());
        for re in raw.events {
            let id = match type_ids.get(&re.type_text) {
                Some(&id) => id,
                None => {
                    let id = type_names.len();
                    type_ids.insert(re.type_text.clone(), id);
                    type_names.push(re.type_text.clone());
                    id
                }
            };
            events.push(Event {
                t: re.t,
                type_id: id,
                type_text: re.type_text,
            });
        }
        let last = events.last().map(|e| e.t).unwrap_or(0.0);
        let seq = EventSequence {
            seq_id: raw.seq_id,
            t_end: raw.t_end.unwrap_or(last),
            events,
        };
        seq.validate().map_err(|e| match e {
            CoreError::InvalidSequence { seq_id, message } => CoreError::InvalidSequence {
                seq_id,
                message: format!("{message} (line {})", lineno + 1),
            },
            other => other,
        })?;
        sequences.push(seq);
    }
    if sequences.is_empty() {
        return Err(CoreError::Dataset(format!(
            "{} holds no sequences",
            path.display()
        )));
    }
    Ok(Dataset {
        sequences,
        type_names,
    })
}

/// Writes sequences back out as JSONL (inverse of `load_sequences`).
pub fn save_sequences(path: impl AsRef<Path>, sequences: &[EventSequence]) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(File::create(path).map_err(|source| CoreError::Io {
        path: path.display().to_string(),
        source,
    })?);
    for seq in sequences {
        let raw = RawSequence {
            seq_id: seq.seq_id.clone(),
            t_end: Some(seq.t_end),
            events: seq
                .events
                .iter()
                .map(|e| RawEvent {
                    t: e.t,
                    type_text: e.type_text.clone(),
                })
                .collect(),
        };
        let line = serde_json::to_string(&raw).expect("sequence serializes");
        writeln!(out, "{line}").map_err(|source| CoreError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

// ---- splitting ----

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<EventSequence>,
    pub val: Vec<EventSequence>,
    pub test: Vec<EventSequence>,
}

/// Seeded shuffle, then contiguous partition. Val and test sizes round down;
/// the remainder goes to train. Every split must come out non-empty.
pub fn split_dataset(
    sequences: &[EventSequence],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Splits> {
    let (rt, rv, rs) = ratios;
    for (name, r) in [("train", rt), ("val", rv), ("test", rs)] {
        if !(0.0..=1.0).contains(&r) || r == 0.0 {
            return Err(CoreError::config(format!(
                "{name} ratio {r} must lie in (0, 1)"
            )));
        }
    }
    if ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(CoreError::config(format!(
            "split ratios must sum to 1, got {}",
            rt + rv + rs
        )));
    }
    let n = sequences.len();
    let n_val = (rv * n as f64).floor() as usize;
    let n_test = (rs * n as f64).floor() as usize;
    let n_train = n - n_val - n_test;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(CoreError::Dataset(format!(
            "split of {n} sequences gives empty parts (train {n_train}, val {n_val}, test {n_test})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = StreamRng::for_component(seed, "split");
    rng.shuffle(&mut order);
    let pick = |range: std::ops::Range<usize>| -> Vec<EventSequence> {
        order[range].iter().map(|&i| sequences[i].clone()).collect()
    };
    Ok(Splits {
        train: pick(0..n_train),
        val: pick(n_train..n_train + n_val),
        test: pick(n_train + n_val..n),
    })
}

// ---- time scaling ----

/// Affine time normalization fitted on the training split: divides by the
/// mean inter-event gap so scaled gaps average 1. Model-facing times are
/// scaled; reported times are inverted back.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct TimeScaler {
    pub scale: f64,
    pub offset: f64,
}

impl TimeScaler {
    pub fn identity() -> Self {
        TimeScaler {
            scale: 1.0,
            offset: 0.0,
        }
    }

    pub fn fit(train: &[EventSequence]) -> Result<Self> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for seq in train {
            for g in seq.gaps() {
                sum += g;
                count += 1;
            }
        }
        if count == 0 {
            return Err(CoreError::Dataset(
                "cannot fit a time scaler: training split has no inter-event gaps".into(),
            ));
        }
        let scale = sum / count as f64;
        if !(scale.is_finite() && scale > 0.0) {
            return Err(CoreError::numeric(
                "TimeScaler::fit",
                format!("degenerate scale {scale}"),
            ));
        }
        Ok(TimeScaler { scale, offset: 0.0 })
    }

    pub fn apply(&self, t: f64) -> f64 {
        (t - self.offset) / self.scale
    }

    pub fn invert(&self, t: f64) -> f64 {
        t * self.scale + self.offset
    }

    pub fn scale_sequence(&self, seq: &EventSequence) -> EventSequence {
        EventSequence {
            seq_id: seq.seq_id.clone(),
            t_end: self.apply(seq.t_end),
            events: seq
                .events
                .iter()
                .map(|e| Event {
                    t: self.apply(e.t),
                    type_id: e.type_id,
                    type_text: e.type_text.clone(),
                })
                .collect(),
        }
    }

    pub fn scale_all(&self, seqs: &[EventSequence]) -> Vec<EventSequence> {
        seqs.iter().map(|s| self.scale_sequence(s)).collect()
    }
}

// ---- batching ----

/// A padded batch. Sequences keep their own lengths; `pad_mask[b][i]` is true
/// exactly at real events. Padding never feeds the model (processing walks
/// each sequence to its own length), so batched and unbatched runs agree
/// bit-for-bit.
#[derive(Clone, Debug)]
pub struct Batch {
    pub sequences: Vec<EventSequence>,
    pub lengths: Vec<usize>,
    pub max_len: usize,
    pub pad_mask: Vec<Vec<bool>>,
}

pub fn batch_pad(sequences: &[EventSequence], max_batch: usize) -> Result<Vec<Batch>> {
    if max_batch == 0 {
        return Err(CoreError::config("batch size must be positive"));
    }
    let mut batches = Vec::new();
    for chunk in sequences.chunks(max_batch) {
        let lengths: Vec<usize> = chunk.iter().map(|s| s.len()).collect();
        let max_len = lengths.iter().copied().max().unwrap_or(0);
        let pad_mask = lengths
            .iter()
            .map(|&l| (0..max_len).map(|i| i < l).collect())
            .collect();
        batches.push(Batch {
            sequences: chunk.to_vec(),
            lengths,
            max_len,
            pad_mask,
        });
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_jsonl(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn seq(id: &str, times: &[f64]) -> EventSequence {
        EventSequence {
            seq_id: id.into(),
            t_end: times.last().copied().unwrap_or(0.0),
            events: times
                .iter()
                .map(|&t| Event {
                    t,
                    type_id: 0,
                    type_text: "a".into(),
                })
                .collect(),
        }
    }

    #[test]
    fn loads_and_builds_first_appearance_vocab() {
        let f = write_jsonl(&[
            r#"{"seq_id": "s1", "t_end": 10.0, "events": [{"t": 1.0, "type": "login"}, {"t": 2.5, "type": "purchase"}]}"#,
            r#"{"seq_id": "s2", "events": [{"t": 0.5, "type": "purchase"}, {"t": 0.9, "type": "refund"}]}"#,
        ]);
        let ds = load_sequences(f.path()).unwrap();
        assert_eq!(ds.type_names, vec!["login", "purchase", "refund"]);
        assert_eq!(ds.sequences[0].events[1].type_id, 1);
        assert_eq!(ds.sequences[1].events[0].type_id, 1);
        // missing t_end falls back to the last event time
        assert_eq!(ds.sequences[1].t_end, 0.9);
    }

    #[test]
    fn rejects_non_increasing_times_with_line_number() {
        let f = write_jsonl(&[
            r#"{"seq_id": "ok", "events": [{"t": 1.0, "type": "a"}]}"#,
            r#"{"seq_id": "bad", "events": [{"t": 2.0, "type": "a"}, {"t": 2.0, "type": "b"}]}"#,
        ]);
        let err = load_sequences(f.path()).unwrap_err().to_string();
        assert!(err.contains("bad"), "{err}");
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn rejects_t_end_before_last_event() {
        let f = write_jsonl(&[
            r#"{"seq_id": "s", "t_end": 1.0, "events": [{"t": 3.0, "type": "a"}]}"#,
        ]);
        assert!(load_sequences(f.path()).is_err());
    }

    #[test]
    fn rejects_unknown_fields_and_bad_json() {
        let f = write_jsonl(&[r#"{"seq_id": "s", "evnts": []}"#]);
        let err = load_sequences(f.path()).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn save_load_round_trip() {
        let f = write_jsonl(&[
            r#"{"seq_id": "s1", "t_end": 4.0, "events": [{"t": 1.0, "type": "x y"}, {"t": 2.0, "type": "z"}]}"#,
        ]);
        let ds = load_sequences(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_sequences(out.path(), &ds.sequences).unwrap();
        let ds2 = load_sequences(out.path()).unwrap();
        assert_eq!(ds.sequences, ds2.sequences);
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let seqs: Vec<_> = (0..10).map(|i| seq(&format!("s{i}"), &[1.0])).collect();
        let s = split_dataset(&seqs, (0.8, 0.1, 0.1), 42).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        // Same seed reproduces the same membership.
        let s2 = split_dataset(&seqs, (0.8, 0.1, 0.1), 42).unwrap();
        let ids = |v: &[EventSequence]| v.iter().map(|s| s.seq_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&s.train), ids(&s2.train));
        assert_eq!(ids(&s.test), ids(&s2.test));
        // A different seed moves sequences around.
        let s3 = split_dataset(&seqs, (0.8, 0.1, 0.1), 7).unwrap();
        assert!(ids(&s.train) != ids(&s3.train) || ids(&s.val) != ids(&s3.val));
    }

    #[test]
    fn split_matches_reference_fisher_yates() {
        // Independent straight-line replay of the same seeded swaps.
        let seqs: Vec<_> = (0..7).map(|i| seq(&format!("s{i}"), &[1.0])).collect();
        let s = split_dataset(&seqs, (0.6, 0.2, 0.2), 5).unwrap();
        // val = floor(1.4) = 1, test = floor(1.4) = 1, remainder 5 to train
        let mut order: Vec<usize> = (0..7).collect();
        let mut rng = StreamRng::for_component(5, "split");
        rng.shuffle(&mut order);
        let expect_train: Vec<String> = order[0..5].iter().map(|&i| format!("s{i}")).collect();
        let got_train: Vec<String> = s.train.iter().map(|q| q.seq_id.clone()).collect();
        assert_eq!(got_train, expect_train);
    }

    #[test]
    fn split_rejects_empty_parts_and_bad_ratios() {
        let seqs: Vec<_> = (0..3).map(|i| seq(&format!("s{i}"), &[1.0])).collect();
        assert!(split_dataset(&seqs, (0.8, 0.1, 0.1), 1).is_err(), "3 seqs -> empty val");
        let seqs10: Vec<_> = (0..10).map(|i| seq(&format!("s{i}"), &[1.0])).collect();
        assert!(split_dataset(&seqs10, (0.5, 0.2, 0.2), 1).is_err(), "ratios must sum to 1");
    }

    #[test]
    fn scaler_mean_gap_examples() {
        let s1 = seq("a", &[0.0, 1.0, 2.0, 3.0]);
        let sc = TimeScaler::fit(&[s1]).unwrap();
        assert_eq!(sc.scale, 1.0);
        let s2 = seq("b", &[0.0, 2.0, 6.0]);
        let sc2 = TimeScaler::fit(&[s2.clone()]).unwrap();
        assert_eq!(sc2.scale, 3.0);
        // Multi-sequence fit flattens all gaps: {2,4} and {1} -> mean 7/3.
        let s3 = seq("c", &[0.0, 1.0]);
        let sc3 = TimeScaler::fit(&[s2, s3]).unwrap();
        assert!((sc3.scale - 7.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn scaler_round_trip_tight() {
        let sc = TimeScaler {
            scale: 2.7,
            offset: 0.0,
        };
        for &t in &[0.0, 0.3, 1.0, 17.5, 1234.75] {
            let rt = sc.invert(sc.apply(t));
            assert!(
                (rt - t).abs() <= 1e-12 * t.abs().max(1.0),
                "round trip {t} -> {rt}"
            );
        }
    }

    #[test]
    fn scaler_needs_at_least_one_gap() {
        let s1 = seq("a", &[5.0]);
        assert!(TimeScaler::fit(&[s1]).is_err());
    }

    #[test]
    fn batches_preserve_order_and_mask_padding() {
        let seqs = vec![
            seq("a", &[1.0, 2.0, 3.0]),
            seq("b", &[1.0]),
            seq("c", &[1.0, 2.0]),
        ];
        let batches = batch_pad(&seqs, 2).unwrap();
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[0].max_len, 3);
        assert_eq!(batches[0].pad_mask[1], vec![true, false, false]);
        assert_eq!(batches[1].sequences[0].seq_id, "c");
        assert_eq!(batches[1].max_len, 2);
    }
}
