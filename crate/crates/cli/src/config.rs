//! TOML config-file schema and the flag > file > default layering that every
//! subcommand resolves its settings through.

use std::fs;
use std::path::{Path, PathBuf};

use codebias::analyzer::AnalyzerOptions;
use codebias::corpus::{DimensionName, PromptVariantConfig};
use codebias::gateway::{BackendSpec, RetryPolicy, SamplingConfig};
use codebias::runner::{AuditConfig, ScorerSpec, SweepAxis};
use codebias::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub dimensions: Option<Vec<String>>,
    #[serde(default)]
    pub backend: FileBackend,
    #[serde(default)]
    pub sampling: FileSampling,
    #[serde(default)]
    pub scorer: FileScorer,
    #[serde(default)]
    pub variant: FileVariant,
    #[serde(default)]
    pub analyzer: FileAnalyzer,
    #[serde(default)]
    pub retry: FileRetry,
    #[serde(default)]
    pub sweep: FileSweep,
    #[serde(default)]
    pub train: FileTrain,
    #[serde(default)]
    pub report: FileReport,
    #[serde(default)]
    pub annotate: FileAnnotate,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileBackend {
    /// `fixture` or `http`; inferred when exactly one side's fields are set.
    pub kind: Option<String>,
    pub fixture_dir: Option<PathBuf>,
    pub endpoint_url: Option<String>,
    pub model_name: Option<String>,
    /// Name of the environment variable holding the bearer token. The token
    /// itself never appears in config files or flags.
    pub auth_token_env: Option<String>,
    pub name: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSampling {
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub num_samples: Option<u32>,
    pub max_tokens: Option<u32>,
    pub stop_sequences: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileScorer {
    /// `oracle` or `classifier`.
    pub kind: Option<String>,
    pub model_path: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileVariant {
    pub num_context_functions: Option<u8>,
    pub human_relevancy: Option<String>,
    pub order: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileAnalyzer {
    pub age_numeric: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRetry {
    pub max_attempts: Option<u32>,
    pub base_delay_ms: Option<u64>,
    pub max_delay_ms: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSweep {
    pub axis: Option<String>,
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileTrain {
    pub data: Option<PathBuf>,
    pub model_out: Option<PathBuf>,
    pub epochs: Option<u32>,
    pub learning_rate: Option<f64>,
    pub l2: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileReport {
    pub pass_data: Option<PathBuf>,
    pub pass_ks: Option<Vec<u32>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileAnnotate {
    pub annotator: Option<String>,
    pub sample_per_cell: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Directory a stage command operates in: `--run`, then the global `--out`,
/// then the config file's `out_dir`.
pub fn resolve_run_dir_value(
    run: Option<&Path>,
    out: Option<&Path>,
    file: &FileConfig,
) -> Result<PathBuf> {
    run.map(Path::to_path_buf)
        .or_else(|| out.map(Path::to_path_buf))
        .or_else(|| file.out_dir.clone())
        .ok_or_else(|| {
            Error::Config(
                "no run directory; pass --run/--out or set out_dir in the config file".into(),
            )
        })
}

/// Backend-related command-line overrides, already parsed by clap.
#[derive(Debug, Default, Clone)]
pub struct BackendOverrides {
    pub fixture_dir: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub auth_env: Option<String>,
    pub backend_name: Option<String>,
}

pub fn resolve_backend(flags: &BackendOverrides, file: &FileBackend) -> Result<BackendSpec> {
    let fixture_dir = flags
        .fixture_dir
        .clone()
        .or_else(|| file.fixture_dir.clone());
    let endpoint_url = flags.endpoint.clone().or_else(|| file.endpoint_url.clone());
    let kind = if flags.fixture_dir.is_some() {
        "fixture".to_string()
    } else if flags.endpoint.is_some() {
        "http".to_string()
    } else if let Some(kind) = &file.kind {
        kind.clone()
    } else {
        match (&fixture_dir, &endpoint_url) {
            (Some(_), None) => "fixture".to_string(),
            (None, Some(_)) => "http".to_string(),
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "both fixture_dir and endpoint_url are set; pick one with backend.kind"
                        .into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "no backend configured; pass --fixture-dir or --endpoint, or set [backend] in the config file".into(),
                ))
            }
        }
    };
    match kind.as_str() {
        "fixture" => Ok(BackendSpec::Fixture {
            fixture_dir: fixture_dir.ok_or_else(|| {
                Error::Config("fixture backend needs fixture_dir".into())
            })?,
            name: flags
                .backend_name
                .clone()
                .or_else(|| file.name.clone())
                .unwrap_or_else(|| "fixture".to_string()),
        }),
        "http" => Ok(BackendSpec::Http {
            endpoint_url: endpoint_url.ok_or_else(|| {
                Error::Config("http backend needs endpoint_url".into())
            })?,
            model_name: flags
                .model
                .clone()
                .or_else(|| file.model_name.clone())
                .ok_or_else(|| Error::Config("http backend needs model_name".into()))?,
            auth_token_env: flags.auth_env.clone().or_else(|| file.auth_token_env.clone()),
            name: flags.backend_name.clone().or_else(|| file.name.clone()),
        }),
        other => Err(Error::Config(format!(
            "unknown backend kind `{other}`; expected fixture or http"
        ))),
    }
}

/// Sampling command-line overrides.
#[derive(Debug, Default, Clone, Copy)]
pub struct SamplingOverrides {
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub num_samples: Option<u32>,
    pub max_tokens: Option<u32>,
}

pub fn resolve_sampling(flags: &SamplingOverrides, file: &FileSampling) -> SamplingConfig {
    let mut sampling = SamplingConfig::default();
    if let Some(v) = file.temperature {
        sampling.temperature = v;
    }
    if let Some(v) = file.top_p {
        sampling.top_p = v;
    }
    if let Some(v) = file.num_samples {
        sampling.num_samples = v;
    }
    if let Some(v) = file.max_tokens {
        sampling.max_tokens = v;
    }
    if let Some(v) = &file.stop_sequences {
        sampling.stop_sequences = v.clone();
    }
    if let Some(v) = flags.temperature {
        sampling.temperature = v;
    }
    if let Some(v) = flags.top_p {
        sampling.top_p = v;
    }
    if let Some(v) = flags.num_samples {
        sampling.num_samples = v;
    }
    if let Some(v) = flags.max_tokens {
        sampling.max_tokens = v;
    }
    sampling
}

pub fn resolve_scorer(classifier_flag: Option<&Path>, file: &FileScorer) -> Result<ScorerSpec> {
    if let Some(path) = classifier_flag {
        return Ok(ScorerSpec::Classifier {
            model_path: path.to_path_buf(),
        });
    }
    match file.kind.as_deref() {
        None | Some("oracle") => Ok(ScorerSpec::Oracle),
        Some("classifier") => Ok(ScorerSpec::Classifier {
            model_path: file.model_path.clone().ok_or_else(|| {
                Error::Config("scorer.kind = classifier needs scorer.model_path".into())
            })?,
        }),
        Some(other) => Err(Error::Config(format!(
            "unknown scorer kind `{other}`; expected oracle or classifier"
        ))),
    }
}

/// Applies `key=value` variant tokens (`functions=`, `relevancy=`, `order=`)
/// on top of a base config.
pub fn apply_variant_tokens(
    variant: &mut PromptVariantConfig,
    tokens: &[String],
) -> Result<()> {
    for token in tokens {
        let (key, value) = token.split_once('=').ok_or_else(|| {
            Error::Config(format!("variant setting `{token}` is not key=value"))
        })?;
        match key {
            "functions" => {
                variant.num_context_functions = value.parse().map_err(|_| {
                    Error::Config(format!("variant functions=`{value}` is not a small integer"))
                })?;
            }
            "relevancy" => variant.human_relevancy = value.parse()?,
            "order" => variant.order = value.parse()?,
            other => {
                return Err(Error::Config(format!(
                    "unknown variant key `{other}`; expected functions, relevancy, or order"
                )))
            }
        }
    }
    Ok(())
}

pub fn resolve_variant(tokens: &[String], file: &FileVariant) -> Result<PromptVariantConfig> {
    let mut variant = PromptVariantConfig::default();
    if let Some(v) = file.num_context_functions {
        variant.num_context_functions = v;
    }
    if let Some(v) = &file.human_relevancy {
        variant.human_relevancy = v.parse()?;
    }
    if let Some(v) = &file.order {
        variant.order = v.parse()?;
    }
    apply_variant_tokens(&mut variant, tokens)?;
    variant.validate()?;
    Ok(variant)
}

pub fn parse_dimensions(names: &[String]) -> Result<Vec<DimensionName>> {
    names.iter().map(|name| name.parse()).collect()
}

pub fn resolve_dimensions(
    flag: &[String],
    file: &Option<Vec<String>>,
) -> Result<Option<Vec<DimensionName>>> {
    if !flag.is_empty() {
        return Ok(Some(parse_dimensions(flag)?));
    }
    match file {
        Some(names) => Ok(Some(parse_dimensions(names)?)),
        None => Ok(None),
    }
}

pub fn resolve_retry(file: &FileRetry) -> RetryPolicy {
    let mut retry = RetryPolicy::default();
    if let Some(v) = file.max_attempts {
        retry.max_attempts = v;
    }
    if let Some(v) = file.base_delay_ms {
        retry.base_delay_ms = v;
    }
    if let Some(v) = file.max_delay_ms {
        retry.max_delay_ms = v;
    }
    retry
}

pub fn resolve_sweep_axis(flag: Option<&str>, file: &FileSweep) -> Result<SweepAxis> {
    match flag.or(file.axis.as_deref()) {
        Some(token) => token.parse(),
        None => Err(Error::Config(
            "no sweep axis; pass --axis temperature|top_p or set sweep.axis".into(),
        )),
    }
}

pub fn resolve_sweep_values(flag: &[f64], file: &FileSweep) -> Vec<f64> {
    if !flag.is_empty() {
        return flag.to_vec();
    }
    if let Some(values) = &file.values {
        return values.clone();
    }
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Everything an audit-shaped command needs, resolved in one place.
pub struct AuditInputs<'a> {
    pub out: Option<&'a Path>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub backend: BackendOverrides,
    pub sampling: SamplingOverrides,
    pub classifier: Option<&'a Path>,
    pub variant_tokens: &'a [String],
    pub dimensions: &'a [String],
    pub age_numeric: bool,
}

pub fn resolve_audit_config(inputs: &AuditInputs, file: &FileConfig) -> Result<AuditConfig> {
    let out_dir = inputs
        .out
        .map(Path::to_path_buf)
        .or_else(|| file.out_dir.clone())
        .ok_or_else(|| {
            Error::Config("no run directory; pass --out or set out_dir in the config file".into())
        })?;
    let mut analyzer = AnalyzerOptions::default();
    if let Some(v) = file.analyzer.age_numeric {
        analyzer.age_numeric = v;
    }
    if inputs.age_numeric {
        analyzer.age_numeric = true;
    }
    let config = AuditConfig {
        backend: resolve_backend(&inputs.backend, &file.backend)?,
        sampling: resolve_sampling(&inputs.sampling, &file.sampling),
        scorer: resolve_scorer(inputs.classifier, &file.scorer)?,
        variant: resolve_variant(inputs.variant_tokens, &file.variant)?,
        out_dir,
        analyzer,
        dimensions: resolve_dimensions(inputs.dimensions, &file.dimensions)?,
        seed: inputs.seed.or(file.seed).unwrap_or(42),
        jobs: inputs.jobs.or(file.jobs).unwrap_or(4),
        retry: resolve_retry(&file.retry),
    };
    config.validate()?;
    Ok(config)
}
