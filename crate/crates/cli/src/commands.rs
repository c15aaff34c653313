//! One function per subcommand. Each returns the process exit code:
//! 0 for success, 1 for partial failure; configuration and missing-input
//! problems surface as errors the caller maps to exit code 2.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use codebias::analyzer::{self, AnalyzerOptions, BiasFinding};
use codebias::classifier::{
    self, evaluate_accuracy, majority_baseline, ClassifierModel, TrainConfig,
};
use codebias::corpus::{self, CodePrompt, DimensionName, PromptVariantConfig, Vocabulary};
use codebias::gateway::{run_corpus, GenerationRecord, Generator, RunOptions, RunStore, RunSummary};
use codebias::metrics::{
    self, CbsColumn, PassAtKInput, ProblemOutcome, PromptIndex, ScoreRow,
};
use codebias::runner::{
    self, parallel_map, run_audit, run_sweep, AuditConfig, ScorerSpec, SweepAxis, CORPUS_FILE,
    FINDINGS_FILE, RADAR_FILE, RECORDS_FILE, REPORT_CSV_FILE, REPORT_JSON_FILE, REPORT_MD_FILE,
    SCORES_FILE,
};
use codebias::{jsonl, Error, Result};

fn require_artifact(run_dir: &Path, file: &str, produced_by: &str) -> Result<std::path::PathBuf> {
    let path = run_dir.join(file);
    if !path.exists() {
        return Err(Error::Input(format!(
            "{} not found; run `codebias {produced_by}` first",
            path.display()
        )));
    }
    Ok(path)
}

fn load_prompts(run_dir: &Path) -> Result<Vec<CodePrompt>> {
    let path = require_artifact(run_dir, CORPUS_FILE, "build-dataset (or generate)")?;
    corpus::read_prompts_jsonl(&path)
}

fn load_records(run_dir: &Path) -> Result<Vec<GenerationRecord>> {
    let path = require_artifact(run_dir, RECORDS_FILE, "generate")?;
    jsonl::read_lines(&path)
}

fn load_findings(run_dir: &Path) -> Result<Vec<BiasFinding>> {
    let path = require_artifact(run_dir, FINDINGS_FILE, "analyze")?;
    analyzer::read_findings_jsonl(&path)
}

fn percent_cell(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.2}%"),
        None => "-".to_string(),
    }
}

fn cbs_line(columns: &[CbsColumn]) -> String {
    let cells: Vec<String> = columns
        .iter()
        .map(|c| format!("{} {}", c.group.header(), percent_cell(c.percent)))
        .collect();
    format!("CBS  {}", cells.join("  "))
}

fn print_generation_summary(summary: &RunSummary) {
    println!(
        "generation: {} prompt(s), {} new record(s), {} already present",
        summary.prompts_total, summary.records_appended, summary.records_skipped
    );
    for failure in &summary.failures {
        eprintln!("failed {}: {}", failure.prompt_id, failure.error);
    }
    if !summary.failures.is_empty() {
        eprintln!("{} prompt(s) failed", summary.failures.len());
    }
}

pub fn cmd_build_dataset(
    out_dir: &Path,
    variant: &PromptVariantConfig,
    dimensions: Option<&[DimensionName]>,
) -> Result<i32> {
    let vocab = Vocabulary::builtin()?;
    let prompts = corpus::build_dataset_filtered(&vocab, variant, dimensions)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join(CORPUS_FILE);
    corpus::write_prompts_jsonl(&prompts, &path)?;
    println!("{} prompts written to {}", prompts.len(), path.display());
    Ok(0)
}

pub fn cmd_generate(config: &AuditConfig) -> Result<i32> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let vocab = Vocabulary::builtin()?;
    let prompts =
        corpus::build_dataset_filtered(&vocab, &config.variant, config.dimensions.as_deref())?;
    corpus::write_prompts_jsonl(&prompts, &config.out_dir.join(CORPUS_FILE))?;
    let generator = Generator::new(config.backend.clone(), config.retry)?;
    let mut store = RunStore::open(config.out_dir.join(RECORDS_FILE))?;
    let summary = run_corpus(
        &generator,
        &prompts,
        &config.sampling,
        &mut store,
        &RunOptions { jobs: config.jobs },
    )?;
    print_generation_summary(&summary);
    Ok(if summary.failures.is_empty() { 0 } else { 1 })
}

/// Records to label: every stored record that belongs to a corpus prompt,
/// ordered by (prompt, sample). Mixed stores that would make a
/// (prompt, sample) pair ambiguous are rejected.
fn analyzable_records(
    prompts: &[CodePrompt],
    records: Vec<GenerationRecord>,
) -> Result<Vec<GenerationRecord>> {
    let ids: BTreeSet<&str> = prompts.iter().map(|p| p.id.as_str()).collect();
    let mut kept: Vec<GenerationRecord> = records
        .into_iter()
        .filter(|r| ids.contains(r.prompt_id.as_str()))
        .collect();
    kept.sort_by(|a, b| {
        (a.prompt_id.as_str(), a.sample_index).cmp(&(b.prompt_id.as_str(), b.sample_index))
    });
    let mut seen = BTreeSet::new();
    for record in &kept {
        if !seen.insert((record.prompt_id.as_str(), record.sample_index)) {
            return Err(Error::Input(format!(
                "records hold more than one completion for {}#{} (mixed backends or sampling); use `codebias run` with an explicit backend",
                record.prompt_id, record.sample_index
            )));
        }
    }
    if kept.is_empty() {
        return Err(Error::Input(
            "no generation records match the corpus; run `codebias generate` first".into(),
        ));
    }
    Ok(kept)
}

pub fn cmd_analyze(run_dir: &Path, options: AnalyzerOptions, jobs: usize) -> Result<i32> {
    let prompts = load_prompts(run_dir)?;
    let records = analyzable_records(&prompts, load_records(run_dir)?)?;
    let vocab = Vocabulary::builtin()?;
    let dimension_of: BTreeMap<&str, DimensionName> = prompts
        .iter()
        .map(|p| (p.id.as_str(), p.dimension))
        .collect();
    let findings = parallel_map(&records, jobs, |record| {
        let name = dimension_of[record.prompt_id.as_str()];
        let dimension = vocab
            .dimension(name)
            .expect("corpus dimensions always come from the vocabulary");
        let labeling = analyzer::label_code(&record.completion, dimension, options);
        BiasFinding::from_labeling(&record.prompt_id, record.sample_index, name, labeling)
    });
    analyzer::write_findings_jsonl(&findings, &run_dir.join(FINDINGS_FILE))?;
    let biased = findings.iter().filter(|f| f.is_biased()).count();
    println!("analyzed {} completion(s), {} biased", findings.len(), biased);
    Ok(0)
}

pub fn cmd_score(run_dir: &Path, scorer: &ScorerSpec, jobs: usize) -> Result<i32> {
    let findings = load_findings(run_dir)?;
    let scores: Vec<ScoreRow> = match scorer {
        ScorerSpec::Oracle => findings
            .iter()
            .map(|finding| ScoreRow {
                prompt_id: finding.prompt_id.clone(),
                sample_index: finding.sample_index,
                confidence: if finding.is_biased() { 1.0 } else { 0.0 },
            })
            .collect(),
        ScorerSpec::Classifier { model_path } => {
            let model = ClassifierModel::load(model_path)?;
            let records = load_records(run_dir)?;
            let completion_of: BTreeMap<(&str, u32), &str> = records
                .iter()
                .map(|r| ((r.prompt_id.as_str(), r.sample_index), r.completion.as_str()))
                .collect();
            let jobs_input: Vec<(&str, u32, &str)> = findings
                .iter()
                .map(|f| {
                    let key = (f.prompt_id.as_str(), f.sample_index);
                    completion_of
                        .get(&key)
                        .map(|code| (key.0, key.1, *code))
                        .ok_or_else(|| {
                            Error::Input(format!(
                                "finding {}#{} has no generation record; run `codebias generate` first",
                                f.prompt_id, f.sample_index
                            ))
                        })
                })
                .collect::<Result<_>>()?;
            parallel_map(&jobs_input, jobs, |(prompt_id, sample_index, code)| ScoreRow {
                prompt_id: prompt_id.to_string(),
                sample_index: *sample_index,
                confidence: model.predict_confidence(code),
            })
        }
    };
    metrics::write_scores_jsonl(&scores, &run_dir.join(SCORES_FILE))?;
    let label = match scorer {
        ScorerSpec::Oracle => "lexicon oracle".to_string(),
        ScorerSpec::Classifier { model_path } => {
            format!("classifier {}", model_path.display())
        }
    };
    println!("scored {} completion(s) with {label}", scores.len());
    Ok(0)
}

pub fn cmd_report(run_dir: &Path, pass_data: Option<&Path>, pass_ks: &[u32]) -> Result<i32> {
    let prompts = load_prompts(run_dir)?;
    let findings = load_findings(run_dir)?;
    let scores_path = require_artifact(run_dir, SCORES_FILE, "score")?;
    let scores = metrics::read_scores_jsonl(&scores_path)?;
    let vocab = Vocabulary::builtin()?;
    let scored = metrics::join_scores(&scores, &findings)?;
    let index = PromptIndex::from_prompts(&prompts);
    let outcomes: Option<Vec<ProblemOutcome>> = match pass_data {
        Some(path) => {
            if !path.exists() {
                return Err(Error::Input(format!(
                    "pass data {} not found",
                    path.display()
                )));
            }
            Some(jsonl::read_lines(path)?)
        }
        None => None,
    };
    let pass = outcomes.as_ref().map(|outcomes| PassAtKInput {
        outcomes,
        ks: pass_ks,
    });
    let report = metrics::aggregate_report(&scored, &index, &vocab, pass)?;
    runner::write_report_files(run_dir, &report)?;
    println!("{}", cbs_line(&report.cbs));
    for row in &report.pass_at_k {
        println!("pass@{} {:.2}%", row.k, row.value);
    }
    println!(
        "report written to {} ({REPORT_CSV_FILE}, {REPORT_MD_FILE}, {REPORT_JSON_FILE}, {RADAR_FILE})",
        run_dir.display()
    );
    Ok(0)
}

pub fn cmd_train(data: &Path, model_out: &Path, config: &TrainConfig) -> Result<i32> {
    if !data.exists() {
        return Err(Error::Input(format!(
            "training data {} not found",
            data.display()
        )));
    }
    let examples = classifier::read_labeled_jsonl(data)?;
    if examples.len() < 10 {
        return Err(Error::Input(format!(
            "need at least 10 labeled examples to split 70/20/10, got {}",
            examples.len()
        )));
    }
    let (train_set, dev_set, test_set) =
        codebias::annotations::split_dataset(&examples, config.seed);
    let trained = classifier::train(&train_set, &dev_set, config)?;
    if let Some(parent) = model_out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    trained.model.save(model_out)?;
    let dev_acc = evaluate_accuracy(&trained.model, &dev_set)?;
    let test_acc = evaluate_accuracy(&trained.model, &test_set)?;
    let baseline = majority_baseline(&test_set)?;
    println!(
        "split {}/{}/{} train/dev/test",
        train_set.len(),
        dev_set.len(),
        test_set.len()
    );
    println!(
        "dev accuracy {dev_acc:.2}% (best epoch {})",
        trained.best_epoch
    );
    println!("test accuracy {test_acc:.2}% (majority baseline {baseline:.2}%)");
    println!("model written to {}", model_out.display());
    Ok(0)
}

pub fn cmd_run(config: &AuditConfig) -> Result<i32> {
    let outcome = run_audit(config)?;
    print_generation_summary(&outcome.summary);
    println!("{}", cbs_line(&outcome.report.cbs));
    println!(
        "report written to {} ({REPORT_CSV_FILE}, {REPORT_MD_FILE}, {REPORT_JSON_FILE}, {RADAR_FILE})",
        outcome.out_dir.display()
    );
    Ok(if outcome.manifest.failed_records == 0 { 0 } else { 1 })
}

pub fn cmd_sweep(base: &AuditConfig, axis: SweepAxis, values: &[f64]) -> Result<i32> {
    let outcome = run_sweep(base, axis, values)?;
    for row in &outcome.rows {
        let total = row
            .columns
            .iter()
            .find(|c| c.group.header() == "Tot")
            .and_then(|c| c.percent);
        println!("{}={} Tot {}", axis, row.value, percent_cell(total));
    }
    let failed: usize = outcome
        .outcomes
        .iter()
        .map(|o| o.manifest.failed_records)
        .sum();
    println!("grid written to {}", outcome.grid_path.display());
    if failed > 0 {
        eprintln!("{failed} record(s) failed across the sweep");
        return Ok(1);
    }
    Ok(0)
}
