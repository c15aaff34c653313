//! End-to-end audit orchestration: corpus, generation, analysis, scoring,
//! and reporting as resumable stages in one output directory.
//!
//! Each stage is fingerprinted over everything that feeds it. A rerun loads
//! a stage's artifact from disk when its fingerprint matches the manifest
//! and recomputes it otherwise, so edits to any input invalidate exactly the
//! stages downstream of it. Generation resumes independently through the
//! append-only record store.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analyzer::{self, AnalyzerOptions, BiasFinding};
use crate::classifier::ClassifierModel;
use crate::corpus::{
    self, hex_prefix, DimensionName, PromptVariantConfig, Vocabulary,
};
use crate::error::{Error, Result};
use crate::gateway::{
    run_corpus, BackendSpec, GenerationRecord, Generator, RetryPolicy, RunOptions, RunStore,
    RunSummary, SamplingConfig,
};
use crate::metrics::{self, MetricsReport, PromptIndex, ScoreRow};
use crate::report::{self, SweepRow};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const FINDINGS_FILE: &str = "findings.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const REPORT_MD_FILE: &str = "report.md";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const RADAR_FILE: &str = "radar.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// How completions are scored: the exact lexicon detector, or a trained
/// classifier loaded from disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerSpec {
    #[default]
    Oracle,
    Classifier {
        model_path: PathBuf,
    },
}

fn default_seed() -> u64 {
    42
}

fn default_jobs() -> usize {
    4
}

/// Everything one audit run needs; serializable so it can live in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub backend: BackendSpec,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub scorer: ScorerSpec,
    #[serde(default)]
    pub variant: PromptVariantConfig,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub analyzer: AnalyzerOptions,
    /// Restrict the corpus to these dimensions; `None` means all eight.
    #[serde(default)]
    pub dimensions: Option<Vec<DimensionName>>,
    /// Seed for sampling flows layered on a run (annotation drafts, splits).
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl AuditConfig {
    pub fn new(backend: BackendSpec, out_dir: impl Into<PathBuf>) -> Self {
        AuditConfig {
            backend,
            sampling: SamplingConfig::default(),
            scorer: ScorerSpec::default(),
            variant: PromptVariantConfig::default(),
            out_dir: out_dir.into(),
            analyzer: AnalyzerOptions::default(),
            dimensions: None,
            seed: default_seed(),
            jobs: default_jobs(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampling.validate()?;
        self.variant.validate()?;
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if let Some(dims) = &self.dimensions {
            if dims.is_empty() {
                return Err(Error::Config(
                    "dimension filter is present but empty; omit it to audit all dimensions"
                        .into(),
                ));
            }
        }
        Ok(())
    }
}

/// One fingerprint per stage, covering that stage's full input closure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFingerprints {
    pub corpus: String,
    pub generation: String,
    pub analysis: String,
    pub scoring: String,
}

/// Provenance sidecar written next to every run's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub backend: String,
    pub variant: PromptVariantConfig,
    pub sampling: SamplingConfig,
    pub analyzer: AnalyzerOptions,
    pub scorer: String,
    pub seed: u64,
    pub stages: StageFingerprints,
    pub prompts: usize,
    /// `prompts * num_samples`.
    pub expected_records: usize,
    /// Records actually analyzed; `expected_records - failed_records`.
    pub records: usize,
    pub failed_records: usize,
    pub failures: Vec<crate::gateway::PromptFailure>,
}

impl Manifest {
    /// Loads a manifest if present; an unreadable one counts as absent so
    /// every stage simply recomputes.
    pub fn load(path: &Path) -> Result<Option<Self>> {
        let text = match fs::read_to_string(path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(path, e)),
        };
        Ok(serde_json::from_str(&text).ok())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| Error::json("manifest", e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn stage_hash(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hex_prefix(&hasher.finalize(), 12)
}

fn records_digest(records: &[&GenerationRecord]) -> String {
    let mut hasher = Sha256::new();
    for record in records {
        for field in [
            record.prompt_id.as_str(),
            &record.sample_index.to_string(),
            record.completion.as_str(),
        ] {
            hasher.update((field.len() as u64).to_le_bytes());
            hasher.update(field.as_bytes());
        }
    }
    hex_prefix(&hasher.finalize(), 12)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Maps `f` over `items` on up to `jobs` threads, preserving input order.
pub fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    let mut out = Vec::with_capacity(items.len());
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for piece in items.chunks(chunk) {
            let f = &f;
            handles.push(scope.spawn(move || piece.iter().map(f).collect::<Vec<R>>()));
        }
        for handle in handles {
            out.extend(handle.join().expect("worker thread panicked"));
        }
    });
    out
}

/// Renders and writes all four report artifacts into `out_dir`.
pub fn write_report_files(out_dir: &Path, report: &MetricsReport) -> Result<()> {
    write_text(&out_dir.join(REPORT_CSV_FILE), &report::render_csv(report))?;
    write_text(
        &out_dir.join(REPORT_MD_FILE),
        &report::render_markdown(report),
    )?;
    write_text(&out_dir.join(REPORT_JSON_FILE), &report::render_json(report)?)?;
    write_text(
        &out_dir.join(RADAR_FILE),
        &report::render_radar_json(report)?,
    )
}

#[derive(Debug)]
pub struct AuditOutcome {
    pub out_dir: PathBuf,
    pub prompts: usize,
    pub summary: RunSummary,
    pub report: MetricsReport,
    pub manifest: Manifest,
}

/// Runs (or resumes) a full audit in `config.out_dir`.
pub fn run_audit(config: &AuditConfig) -> Result<AuditOutcome> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let vocab = Vocabulary::builtin()?;
    let vocab_fp = vocab.fingerprint();
    let manifest_path = config.out_dir.join(MANIFEST_FILE);
    let previous = Manifest::load(&manifest_path)?;
    let stage_is_fresh = |pick: fn(&StageFingerprints) -> &String, fingerprint: &str| {
        previous
            .as_ref()
            .is_some_and(|m| pick(&m.stages) == fingerprint)
    };

    let filter_token = match &config.dimensions {
        Some(dims) => dims
            .iter()
            .map(|d| d.token())
            .collect::<Vec<_>>()
            .join("+"),
        None => "all".to_string(),
    };
    let corpus_fp = stage_hash(&[
        "corpus",
        &vocab_fp,
        &config.variant.canonical_token(),
        &filter_token,
    ]);
    let corpus_path = config.out_dir.join(CORPUS_FILE);
    let prompts = if corpus_path.exists() && stage_is_fresh(|s| &s.corpus, &corpus_fp) {
        corpus::read_prompts_jsonl(&corpus_path)?
    } else {
        let prompts =
            corpus::build_dataset_filtered(&vocab, &config.variant, config.dimensions.as_deref())?;
        corpus::write_prompts_jsonl(&prompts, &corpus_path)?;
        prompts
    };

    let generator = Generator::new(config.backend.clone(), config.retry)?;
    let mut store = RunStore::open(config.out_dir.join(RECORDS_FILE))?;
    let summary = run_corpus(
        &generator,
        &prompts,
        &config.sampling,
        &mut store,
        &RunOptions { jobs: config.jobs },
    )?;

    let backend_name = generator.backend_name().to_string();
    let sampling_fp = config.sampling.fingerprint();
    let corpus_ids: BTreeSet<&str> = prompts.iter().map(|p| p.id.as_str()).collect();
    let records: Vec<&GenerationRecord> = store
        .sorted_records()
        .into_iter()
        .filter(|r| {
            r.backend == backend_name
                && r.sample_index < config.sampling.num_samples
                && corpus_ids.contains(r.prompt_id.as_str())
                && r.sampling.fingerprint() == sampling_fp
        })
        .collect();
    if records.is_empty() {
        return Err(Error::Input(
            "no generation records available for this corpus and sampling".into(),
        ));
    }
    let generation_fp = stage_hash(&[
        "generation",
        &backend_name,
        &sampling_fp,
        &records_digest(&records),
    ]);

    let analyzer_token = format!("age_numeric={}", config.analyzer.age_numeric);
    let analysis_fp = stage_hash(&["analysis", &generation_fp, &vocab_fp, &analyzer_token]);
    let findings_path = config.out_dir.join(FINDINGS_FILE);
    let findings: Vec<BiasFinding> =
        if findings_path.exists() && stage_is_fresh(|s| &s.analysis, &analysis_fp) {
            analyzer::read_findings_jsonl(&findings_path)?
        } else {
            let dimension_of: BTreeMap<&str, DimensionName> = prompts
                .iter()
                .map(|p| (p.id.as_str(), p.dimension))
                .collect();
            let findings = parallel_map(&records, config.jobs, |record| {
                let name = dimension_of[record.prompt_id.as_str()];
                let dimension = vocab
                    .dimension(name)
                    .expect("corpus dimensions always come from the vocabulary");
                let labeling =
                    analyzer::label_code(&record.completion, dimension, config.analyzer);
                BiasFinding::from_labeling(&record.prompt_id, record.sample_index, name, labeling)
            });
            analyzer::write_findings_jsonl(&findings, &findings_path)?;
            findings
        };

    let model = match &config.scorer {
        ScorerSpec::Oracle => None,
        ScorerSpec::Classifier { model_path } => Some(ClassifierModel::load(model_path)?),
    };
    let scorer_id = match &model {
        None => "oracle".to_string(),
        Some(m) => format!("classifier:{}", m.fingerprint()),
    };
    let scoring_fp = stage_hash(&["scoring", &analysis_fp, &scorer_id]);
    let scores_path = config.out_dir.join(SCORES_FILE);
    let scores: Vec<ScoreRow> =
        if scores_path.exists() && stage_is_fresh(|s| &s.scoring, &scoring_fp) {
            metrics::read_scores_jsonl(&scores_path)?
        } else {
            let scores = match &model {
                None => findings
                    .iter()
                    .map(|finding| ScoreRow {
                        prompt_id: finding.prompt_id.clone(),
                        sample_index: finding.sample_index,
                        confidence: if finding.is_biased() { 1.0 } else { 0.0 },
                    })
                    .collect(),
                Some(model) => parallel_map(&records, config.jobs, |record| ScoreRow {
                    prompt_id: record.prompt_id.clone(),
                    sample_index: record.sample_index,
                    confidence: model.predict_confidence(&record.completion),
                }),
            };
            metrics::write_scores_jsonl(&scores, &scores_path)?;
            scores
        };

    let scored = metrics::join_scores(&scores, &findings)?;
    let prompt_index = PromptIndex::from_prompts(&prompts);
    let metrics_report = metrics::aggregate_report(&scored, &prompt_index, &vocab, None)?;
    write_report_files(&config.out_dir, &metrics_report)?;

    let now = Utc::now();
    let expected_records = prompts.len() * config.sampling.num_samples as usize;
    let manifest = Manifest {
        created_at: previous.as_ref().map(|m| m.created_at).unwrap_or(now),
        updated_at: now,
        backend: backend_name,
        variant: config.variant,
        sampling: config.sampling.clone(),
        analyzer: config.analyzer,
        scorer: scorer_id,
        seed: config.seed,
        stages: StageFingerprints {
            corpus: corpus_fp,
            generation: generation_fp,
            analysis: analysis_fp,
            scoring: scoring_fp,
        },
        prompts: prompts.len(),
        expected_records,
        records: records.len(),
        failed_records: expected_records - records.len(),
        failures: summary.failures.clone(),
    };
    manifest.save(&manifest_path)?;

    Ok(AuditOutcome {
        out_dir: config.out_dir.clone(),
        prompts: prompts.len(),
        summary,
        report: metrics_report,
        manifest,
    })
}

/// Sampling parameter swept across audit runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Temperature,
    TopP,
}

impl SweepAxis {
    pub fn token(self) -> &'static str {
        match self {
            SweepAxis::Temperature => "temperature",
            SweepAxis::TopP => "top_p",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temperature" => Ok(SweepAxis::Temperature),
            "top_p" => Ok(SweepAxis::TopP),
            other => Err(Error::Config(format!(
                "unknown sweep axis {other:?}; expected temperature or top_p"
            ))),
        }
    }
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    pub grid_csv: String,
    pub grid_path: PathBuf,
    pub outcomes: Vec<AuditOutcome>,
}

/// Runs one audit per swept value under `base.out_dir` and writes a CBS grid.
///
/// Values are deduplicated and sorted ascending before running, so the grid
/// does not depend on the order they were supplied in. Each value gets its
/// own run directory named `<axis>=<value>`.
pub fn run_sweep(base: &AuditConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepOutcome> {
    base.validate()?;
    if values.is_empty() {
        return Err(Error::Input("sweep needs at least one value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();

    let mut runs: Vec<(f64, AuditConfig)> = Vec::new();
    for &value in &sorted {
        let mut config = base.clone();
        match axis {
            SweepAxis::Temperature => config.sampling.temperature = value,
            SweepAxis::TopP => config.sampling.top_p = value,
        }
        config.sampling.validate()?;
        config.out_dir = base.out_dir.join(format!("{}={}", axis.token(), value));
        runs.push((value, config));
    }

    let mut rows = Vec::with_capacity(runs.len());
    let mut outcomes = Vec::with_capacity(runs.len());
    for (value, config) in &runs {
        let outcome = run_audit(config)?;
        rows.push(SweepRow {
            value: *value,
            columns: outcome.report.cbs.clone(),
        });
        outcomes.push(outcome);
    }
    let grid_csv = report::render_sweep_csv(&rows);
    let grid_path = base.out_dir.join(format!("sweep_{}.csv", axis.token()));
    write_text(&grid_path, &grid_csv)?;
    Ok(SweepOutcome {
        axis,
        rows,
        grid_csv,
        grid_path,
        outcomes,
    })
}
