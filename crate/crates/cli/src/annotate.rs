//! Annotation workflows on a finished run: sampling a review queue, the
//! interactive single-key review loop, and consensus export with a
//! human-label bias score.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use chrono::Utc;
use codebias::analyzer::BiasLabel;
use codebias::annotations::{sample_per_group, Annotation, AnnotationStore, KnownKeys, RecordKey};
use codebias::corpus::CodePrompt;
use codebias::gateway::GenerationRecord;
use codebias::runner::{CORPUS_FILE, RECORDS_FILE};
use codebias::{jsonl, Error, Result};
use serde::{Deserialize, Serialize};

pub const QUEUE_FILE: &str = "queue.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const CONSENSUS_FILE: &str = "consensus.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusRow {
    #[serde(flatten)]
    pub key: RecordKey,
    pub label: BiasLabel,
}

#[derive(Debug, Default, PartialEq, Eq)]
pub struct ReviewSummary {
    pub labeled: usize,
    pub skipped: usize,
    pub remaining: usize,
}

fn load_prompts(run_dir: &Path) -> Result<Vec<CodePrompt>> {
    let path = run_dir.join(CORPUS_FILE);
    if !path.exists() {
        return Err(Error::Input(format!(
            "{} not found; run `codebias generate` (or `codebias run`) first",
            path.display()
        )));
    }
    jsonl::read_lines(&path)
}

fn load_records(run_dir: &Path) -> Result<Vec<GenerationRecord>> {
    let path = run_dir.join(RECORDS_FILE);
    if !path.exists() {
        return Err(Error::Input(format!(
            "{} not found; run `codebias generate` (or `codebias run`) first",
            path.display()
        )));
    }
    jsonl::read_lines(&path)
}

fn record_key(record: &GenerationRecord) -> RecordKey {
    RecordKey {
        prompt_id: record.prompt_id.clone(),
        backend: record.backend.clone(),
        sample_index: record.sample_index,
    }
}

/// Samples `per_cell` records from every (dimension, modifier) cell of the run
/// and writes the selected keys to the review queue. Returns the queue length.
pub fn sample_queue(run_dir: &Path, per_cell: usize, seed: u64) -> Result<usize> {
    let prompts = load_prompts(run_dir)?;
    let records = load_records(run_dir)?;
    let cell_of: BTreeMap<&str, String> = prompts
        .iter()
        .map(|p| (p.id.as_str(), format!("{}/{}", p.dimension, p.modifier)))
        .collect();
    let keys: Vec<RecordKey> = records
        .iter()
        .filter(|r| cell_of.contains_key(r.prompt_id.as_str()))
        .map(record_key)
        .collect();
    if keys.is_empty() {
        return Err(Error::Input(
            "no generation records match the corpus; nothing to sample".into(),
        ));
    }
    let sampled = sample_per_group(&keys, |k| cell_of[k.prompt_id.as_str()].clone(), per_cell, seed)?;
    jsonl::write_lines(&run_dir.join(QUEUE_FILE), &sampled)?;
    Ok(sampled.len())
}

/// Majority-votes the run's annotations, writes the resolved labels, and
/// reports the human-label bias score. Tied records surface as an error.
pub fn consensus_report(run_dir: &Path, output: &mut dyn Write) -> Result<()> {
    let path = run_dir.join(ANNOTATIONS_FILE);
    if !path.exists() {
        return Err(Error::Input(format!(
            "{} not found; run `codebias annotate --annotator <id>` first",
            path.display()
        )));
    }
    let store = AnnotationStore::open(path)?;
    let consensus = store.consensus()?;
    if consensus.is_empty() {
        return Err(Error::Input(
            "annotation log holds no labels; nothing to reconcile".into(),
        ));
    }
    let rows: Vec<ConsensusRow> = consensus
        .into_iter()
        .map(|(key, label)| ConsensusRow { key, label })
        .collect();
    jsonl::write_lines(&run_dir.join(CONSENSUS_FILE), &rows)?;
    let biased = rows.iter().filter(|r| r.label == BiasLabel::Biased).count();
    let cbs = 100.0 * biased as f64 / rows.len() as f64;
    writeln!(
        output,
        "consensus: {} records, {} biased, human CBS {:.2}%",
        rows.len(),
        biased,
        cbs
    )
    .map_err(|e| Error::io(run_dir.join(CONSENSUS_FILE), e))?;
    Ok(())
}

/// One record at a time: show prompt and completion, read one of
/// b / a / s / q, and append the chosen label durably.
pub fn review(
    run_dir: &Path,
    annotator: &str,
    input: &mut dyn BufRead,
    output: &mut dyn Write,
) -> Result<ReviewSummary> {
    let prompts = load_prompts(run_dir)?;
    let records = load_records(run_dir)?;
    let text_of: BTreeMap<&str, &str> = prompts
        .iter()
        .map(|p| (p.id.as_str(), p.text.as_str()))
        .collect();
    let by_key: BTreeMap<RecordKey, &GenerationRecord> =
        records.iter().map(|r| (record_key(r), r)).collect();
    let known: KnownKeys = by_key.keys().cloned().collect();

    let queue_path = run_dir.join(QUEUE_FILE);
    let queue: Vec<RecordKey> = if queue_path.exists() {
        jsonl::read_lines(&queue_path)?
    } else {
        by_key.keys().cloned().collect()
    };
    for key in &queue {
        if !known.contains(key) {
            return Err(Error::Input(format!(
                "queue entry {key} has no generation record; re-run `codebias annotate --sample-per-cell`"
            )));
        }
    }

    let mut store = AnnotationStore::open(run_dir.join(ANNOTATIONS_FILE))?;
    let done: BTreeSet<RecordKey> = store
        .effective()
        .iter()
        .filter(|a| a.annotator == annotator)
        .map(|a| a.key.clone())
        .collect();
    let pending: Vec<&RecordKey> = queue.iter().filter(|k| !done.contains(k)).collect();
    let total = pending.len();

    let mut summary = ReviewSummary::default();
    let io_err = |e| Error::io(run_dir.join(ANNOTATIONS_FILE), e);
    'records: for (position, key) in pending.iter().enumerate() {
        let record = by_key[key];
        writeln!(output, "=== {key} ({} of {total}) ===", position + 1).map_err(io_err)?;
        writeln!(output, "--- prompt ---").map_err(io_err)?;
        writeln!(output, "{}", text_of[key.prompt_id.as_str()]).map_err(io_err)?;
        writeln!(output, "--- completion ---").map_err(io_err)?;
        writeln!(output, "{}", record.completion).map_err(io_err)?;
        let label = loop {
            write!(output, "[b]iased / [a]cceptable / [s]kip / [q]uit > ").map_err(io_err)?;
            output.flush().map_err(io_err)?;
            let mut line = String::new();
            let read = input.read_line(&mut line).map_err(io_err)?;
            if read == 0 {
                writeln!(output).map_err(io_err)?;
                break 'records;
            }
            match line.trim() {
                "b" => break BiasLabel::Biased,
                "a" => break BiasLabel::Acceptable,
                "s" => {
                    summary.skipped += 1;
                    continue 'records;
                }
                "q" => break 'records,
                other => {
                    writeln!(output, "unrecognized response `{other}`").map_err(io_err)?;
                }
            }
        };
        store.append(
            Annotation {
                key: (*key).clone(),
                annotator: annotator.to_string(),
                label,
                timestamp: Utc::now(),
            },
            &known,
        )?;
        summary.labeled += 1;
    }
    summary.remaining = total - summary.labeled - summary.skipped;
    writeln!(
        output,
        "labeled {} record(s), skipped {}, {} remaining",
        summary.labeled, summary.skipped, summary.remaining
    )
    .map_err(io_err)?;
    Ok(summary)
}
