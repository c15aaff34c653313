//! Human annotation storage and reconciliation, plus dataset splitting and
//! per-group sampling for human evaluation rounds.
//!
//! Annotations live in an append-only JSONL file. A later row by the same
//! annotator for the same record supersedes their earlier one; disagreement
//! between annotators is resolved by strict majority vote.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analyzer::BiasLabel;
use crate::error::{Error, Result};

/// Identifies one generated completion across the whole pipeline.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordKey {
    pub prompt_id: String,
    pub backend: String,
    pub sample_index: u32,
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}#{}",
            self.backend, self.prompt_id, self.sample_index
        )
    }
}

/// The set of record keys a run actually produced; annotations must point
/// into it.
pub type KnownKeys = BTreeSet<RecordKey>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(flatten)]
    pub key: RecordKey,
    pub annotator: String,
    pub label: BiasLabel,
    pub timestamp: DateTime<Utc>,
}

/// Append-only JSONL store of annotations.
#[derive(Debug)]
pub struct AnnotationStore {
    path: PathBuf,
    annotations: Vec<Annotation>,
}

impl AnnotationStore {
    /// Opens (or creates) the store at `path`, loading any existing rows.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let annotations = if path.exists() {
            crate::jsonl::read_lines(&path)?
        } else {
            Vec::new()
        };
        Ok(AnnotationStore { path, annotations })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Every stored row, in append order, superseded rows included.
    pub fn all(&self) -> &[Annotation] {
        &self.annotations
    }

    /// Appends one annotation after checking it references a known record.
    pub fn append(&mut self, annotation: Annotation, known: &KnownKeys) -> Result<()> {
        if !known.contains(&annotation.key) {
            return Err(Error::UnknownRecordKey(annotation.key.to_string()));
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        let mut file = std::io::BufWriter::new(file);
        let line = serde_json::to_string(&annotation)
            .map_err(|e| Error::json(self.path.display().to_string(), e))?;
        writeln!(file, "{line}").map_err(|e| Error::io(&self.path, e))?;
        file.flush().map_err(|e| Error::io(&self.path, e))?;
        self.annotations.push(annotation);
        Ok(())
    }

    /// Latest row per (record, annotator): the live opinion of each annotator.
    pub fn effective(&self) -> Vec<&Annotation> {
        let mut latest: BTreeMap<(&RecordKey, &str), &Annotation> = BTreeMap::new();
        for annotation in &self.annotations {
            latest.insert((&annotation.key, annotation.annotator.as_str()), annotation);
        }
        latest.into_values().collect()
    }

    /// Strict majority vote per record over [`Self::effective`] annotations.
    /// Records with exactly tied votes make the whole call fail, listing them.
    pub fn consensus(&self) -> Result<Vec<(RecordKey, BiasLabel)>> {
        let mut votes: BTreeMap<&RecordKey, (u32, u32)> = BTreeMap::new();
        for annotation in self.effective() {
            let entry = votes.entry(&annotation.key).or_default();
            match annotation.label {
                BiasLabel::Biased => entry.0 += 1,
                BiasLabel::Acceptable => entry.1 += 1,
            }
        }
        let mut tied = Vec::new();
        let mut resolved = Vec::new();
        for (key, (biased, acceptable)) in votes {
            if biased == acceptable {
                tied.push(key.to_string());
            } else if biased > acceptable {
                resolved.push((key.clone(), BiasLabel::Biased));
            } else {
                resolved.push((key.clone(), BiasLabel::Acceptable));
            }
        }
        if !tied.is_empty() {
            return Err(Error::ConsensusTie {
                count: tied.len(),
                keys: tied.join(", "),
            });
        }
        Ok(resolved)
    }
}

/// Shuffles `items` with a seeded generator and splits 70/20/10
/// (train gets `floor(0.7 n)`, dev `floor(0.2 n)`, test the rest).
pub fn split_dataset<T: Clone>(items: &[T], seed: u64) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..items.len()).collect();
    indices.shuffle(&mut rng);
    let n = items.len();
    let n_train = n * 7 / 10;
    let n_dev = n * 2 / 10;
    let pick = |range: &[usize]| range.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    (
        pick(&indices[..n_train]),
        pick(&indices[n_train..n_train + n_dev]),
        pick(&indices[n_train + n_dev..]),
    )
}

/// Samples `per_group` items from every group (without replacement, seeded),
/// keeping each group's original item order. Groups are visited in key order.
/// A group smaller than `per_group` is an error naming the group.
pub fn sample_per_group<T: Clone, K: Ord + fmt::Display>(
    items: &[T],
    key: impl Fn(&T) -> K,
    per_group: usize,
    seed: u64,
) -> Result<Vec<T>> {
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        groups.entry(key(item)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected = Vec::new();
    for (group, mut indices) in groups {
        if indices.len() < per_group {
            return Err(Error::Input(format!(
                "group `{group}` has {} record(s), cannot sample {per_group}",
                indices.len()
            )));
        }
        indices.shuffle(&mut rng);
        let mut chosen: Vec<usize> = indices[..per_group].to_vec();
        chosen.sort_unstable();
        selected.extend(chosen.into_iter().map(|i| items[i].clone()));
    }
    Ok(selected)
}
