//! Completion backends and the resumable generation store.
//!
//! A [`Generator`] turns prompts into [`GenerationRecord`]s, either by asking
//! an HTTP completions endpoint or by reading completions from an on-disk
//! fixture store keyed by prompt text and sampling parameters. [`run_corpus`]
//! drives a whole corpus with bounded thread fan-out, appending to a
//! [`RunStore`] so an interrupted run picks up exactly where it left off.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{hex_prefix, CodePrompt};
use crate::error::{Error, Result};

/// Decoding parameters sent with every generation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub num_samples: u32,
    pub max_tokens: u32,
    pub stop_sequences: Vec<String>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            temperature: 0.8,
            top_p: 0.95,
            num_samples: 10,
            max_tokens: 128,
            stop_sequences: vec!["\ndef ".to_string()],
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Config(format!(
                "temperature must be within [0, 2], got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!(
                "top_p must be within (0, 1], got {}",
                self.top_p
            )));
        }
        if self.num_samples == 0 {
            return Err(Error::Config("num_samples must be at least 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be at least 1".into()));
        }
        Ok(())
    }

    /// Content hash of the parameters that change what a single completion
    /// looks like. `num_samples` is deliberately excluded: asking for more
    /// samples later must not orphan the ones already stored.
    pub fn fingerprint(&self) -> String {
        let canonical = format!(
            "t={:?};p={:?};max={};stop={}",
            self.temperature,
            self.top_p,
            self.max_tokens,
            self.stop_sequences.join("\u{1f}")
        );
        hex_prefix(&Sha256::digest(canonical.as_bytes()), 12)
    }
}

/// One stored completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt_id: String,
    pub backend: String,
    pub sample_index: u32,
    pub completion: String,
    pub sampling: SamplingConfig,
    pub timestamp: DateTime<Utc>,
    pub latency_ms: u64,
}

/// Where completions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    /// Completions read from files under `fixture_dir`; see [`FixtureStore`].
    Fixture {
        fixture_dir: PathBuf,
        #[serde(default = "default_fixture_name")]
        name: String,
    },
    /// OpenAI-style completions endpoint: POST of model/prompt/sampling
    /// fields, response `{"choices": [{"text": ...}]}`. The bearer token is
    /// read from the environment variable named by `auth_token_env`, never
    /// from config values.
    Http {
        endpoint_url: String,
        model_name: String,
        #[serde(default)]
        auth_token_env: Option<String>,
        #[serde(default)]
        name: Option<String>,
    },
}

fn default_fixture_name() -> String {
    "fixture".to_string()
}

impl BackendSpec {
    /// Name recorded on every generation record.
    pub fn backend_name(&self) -> &str {
        match self {
            BackendSpec::Fixture { name, .. } => name,
            BackendSpec::Http { name, model_name, .. } => name.as_deref().unwrap_or(model_name),
        }
    }
}

/// Retry schedule for transient backend failures: exponential backoff from
/// `base_delay_ms`, doubling per attempt, capped at `max_delay_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 100,
            max_delay_ms: 2000,
        }
    }
}

impl RetryPolicy {
    fn delay_before(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt - 1).min(16);
        Duration::from_millis((self.base_delay_ms.saturating_mul(factor)).min(self.max_delay_ms))
    }
}

/// Cuts a completion at the first occurrence of any stop sequence.
pub fn truncate_at_stop(completion: &str, stop_sequences: &[String]) -> String {
    let mut end = completion.len();
    for stop in stop_sequences {
        if stop.is_empty() {
            continue;
        }
        if let Some(i) = completion.find(stop.as_str()) {
            end = end.min(i);
        }
    }
    completion[..end].to_string()
}

/// On-disk completion store addressed by prompt content and sampling
/// fingerprint: `<sha256(prompt \x00 fingerprint)>.<sample_index>.txt`.
#[derive(Debug, Clone)]
pub struct FixtureStore {
    dir: PathBuf,
}

impl FixtureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(prompt_text: &str, sampling: &SamplingConfig) -> String {
        let mut hasher = Sha256::new();
        hasher.update(prompt_text.as_bytes());
        hasher.update(b"\x00");
        hasher.update(sampling.fingerprint().as_bytes());
        hex_prefix(&hasher.finalize(), 64)
    }

    pub fn completion_path(&self, key: &str, sample_index: u32) -> PathBuf {
        self.dir.join(format!("{key}.{sample_index}.txt"))
    }

    /// Stores one completion, creating the directory if needed.
    pub fn write(
        &self,
        prompt_text: &str,
        sampling: &SamplingConfig,
        sample_index: u32,
        completion: &str,
    ) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.completion_path(&Self::key(prompt_text, sampling), sample_index);
        fs::write(&path, completion).map_err(|e| Error::io(&path, e))
    }

    /// Reads one completion; a missing file is a [`Error::FixtureMiss`], the
    /// store never fabricates output.
    pub fn read(
        &self,
        prompt_text: &str,
        sampling: &SamplingConfig,
        sample_index: u32,
    ) -> Result<String> {
        let key = Self::key(prompt_text, sampling);
        let path = self.completion_path(&key, sample_index);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::FixtureMiss {
                key,
                sample_index,
                dir: self.dir.clone(),
            }),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

fn with_retries<T>(
    policy: &RetryPolicy,
    prompt_id: &str,
    mut op: impl FnMut() -> std::result::Result<T, Attempt>,
) -> Result<T> {
    let mut last = String::new();
    for attempt in 1..=policy.max_attempts.max(1) {
        if attempt > 1 {
            std::thread::sleep(policy.delay_before(attempt - 1));
        }
        match op() {
            Ok(value) => return Ok(value),
            Err(Attempt::Fatal(message)) => {
                return Err(Error::Backend {
                    prompt_id: prompt_id.to_string(),
                    message,
                })
            }
            Err(Attempt::Retry(message)) => last = message,
        }
    }
    Err(Error::Backend {
        prompt_id: prompt_id.to_string(),
        message: format!(
            "giving up after {} attempt(s): {last}",
            policy.max_attempts.max(1)
        ),
    })
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    top_p: f64,
    n: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop: Option<&'a [String]>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    text: String,
}

/// A configured backend ready to produce completions.
pub struct Generator {
    spec: BackendSpec,
    retry: RetryPolicy,
    client: Option<reqwest::blocking::Client>,
    auth_token: Option<String>,
}

impl Generator {
    pub fn new(spec: BackendSpec, retry: RetryPolicy) -> Result<Self> {
        let (client, auth_token) = match &spec {
            BackendSpec::Fixture { .. } => (None, None),
            BackendSpec::Http { auth_token_env, .. } => {
                let token = match auth_token_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| {
                        Error::Config(format!(
                            "auth environment variable `{var}` is not set"
                        ))
                    })?),
                    None => None,
                };
                let client = reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs(120))
                    .build()?;
                (Some(client), token)
            }
        };
        Ok(Generator {
            spec,
            retry,
            client,
            auth_token,
        })
    }

    pub fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    pub fn backend_name(&self) -> &str {
        self.spec.backend_name()
    }

    /// Produces one record per requested sample index, in the given order.
    /// Stop-sequence truncation applies uniformly, fixtures included.
    pub fn generate_indices(
        &self,
        prompt: &CodePrompt,
        sampling: &SamplingConfig,
        indices: &[u32],
    ) -> Result<Vec<GenerationRecord>> {
        sampling.validate()?;
        if indices.is_empty() {
            return Ok(Vec::new());
        }
        let started = Instant::now();
        let completions = match &self.spec {
            BackendSpec::Fixture { fixture_dir, .. } => {
                let store = FixtureStore::new(fixture_dir);
                indices
                    .iter()
                    .map(|&i| store.read(&prompt.text, sampling, i))
                    .collect::<Result<Vec<String>>>()?
            }
            BackendSpec::Http {
                endpoint_url,
                model_name,
                ..
            } => self.fetch_http(endpoint_url, model_name, prompt, sampling, indices.len())?,
        };
        let latency_ms = started.elapsed().as_millis() as u64;
        let timestamp = Utc::now();
        Ok(indices
            .iter()
            .zip(completions)
            .map(|(&sample_index, completion)| GenerationRecord {
                prompt_id: prompt.id.clone(),
                backend: self.backend_name().to_string(),
                sample_index,
                completion: truncate_at_stop(&completion, &sampling.stop_sequences),
                sampling: sampling.clone(),
                timestamp,
                latency_ms,
            })
            .collect())
    }

    /// Produces records for sample indices `0..num_samples`.
    pub fn generate(
        &self,
        prompt: &CodePrompt,
        sampling: &SamplingConfig,
    ) -> Result<Vec<GenerationRecord>> {
        let indices: Vec<u32> = (0..sampling.num_samples).collect();
        self.generate_indices(prompt, sampling, &indices)
    }

    fn fetch_http(
        &self,
        endpoint_url: &str,
        model_name: &str,
        prompt: &CodePrompt,
        sampling: &SamplingConfig,
        n: usize,
    ) -> Result<Vec<String>> {
        let client = self.client.as_ref().expect("http backend has a client");
        let body = CompletionRequest {
            model: model_name,
            prompt: &prompt.text,
            max_tokens: sampling.max_tokens,
            temperature: sampling.temperature,
            top_p: sampling.top_p,
            n: n as u32,
            stop: if sampling.stop_sequences.is_empty() {
                None
            } else {
                Some(&sampling.stop_sequences)
            },
        };
        with_retries(&self.retry, &prompt.id, || {
            let mut request = client.post(endpoint_url).json(&body);
            if let Some(token) = &self.auth_token {
                request = request.bearer_auth(token);
            }
            let response = match request.send() {
                Ok(r) => r,
                Err(e) => return Err(Attempt::Retry(format!("transport: {e}"))),
            };
            let status = response.status();
            if status.as_u16() == 429 || status.is_server_error() {
                return Err(Attempt::Retry(format!("status {status}")));
            }
            if !status.is_success() {
                let text = response.text().unwrap_or_default();
                return Err(Attempt::Fatal(format!(
                    "status {status}: {}",
                    text.chars().take(200).collect::<String>()
                )));
            }
            let parsed: CompletionResponse = match response.json() {
                Ok(p) => p,
                Err(e) => return Err(Attempt::Fatal(format!("malformed response: {e}"))),
            };
            if parsed.choices.len() != n {
                return Err(Attempt::Fatal(format!(
                    "backend returned {} choice(s), requested {n}",
                    parsed.choices.len()
                )));
            }
            Ok(parsed.choices.into_iter().map(|c| c.text).collect())
        })
    }
}

/// Append-only JSONL store of generation records with resume bookkeeping.
/// (prompt_id, backend, sampling fingerprint, sample_index) is unique.
#[derive(Debug)]
pub struct RunStore {
    path: PathBuf,
    writer: BufWriter<File>,
    records: Vec<GenerationRecord>,
    keys: BTreeSet<(String, String, String, u32)>,
}

impl RunStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let records: Vec<GenerationRecord> = if path.exists() {
            crate::jsonl::read_lines(&path)?
        } else {
            Vec::new()
        };
        let mut keys = BTreeSet::new();
        for record in &records {
            if !keys.insert(record_key(record)) {
                return Err(Error::Input(format!(
                    "{}: duplicate record for {}#{}",
                    path.display(),
                    record.prompt_id,
                    record.sample_index
                )));
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(RunStore {
            path,
            writer: BufWriter::new(file),
            records,
            keys,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[GenerationRecord] {
        &self.records
    }

    /// Records ordered by (prompt_id, sample_index) regardless of append order.
    pub fn sorted_records(&self) -> Vec<&GenerationRecord> {
        let mut sorted: Vec<&GenerationRecord> = self.records.iter().collect();
        sorted.sort_by(|a, b| {
            (a.prompt_id.as_str(), a.sample_index).cmp(&(b.prompt_id.as_str(), b.sample_index))
        });
        sorted
    }

    /// Sample indices already stored for one (prompt, backend, sampling) triple.
    pub fn existing_indices(
        &self,
        prompt_id: &str,
        backend: &str,
        sampling_fingerprint: &str,
    ) -> BTreeSet<u32> {
        self.records
            .iter()
            .filter(|r| {
                r.prompt_id == prompt_id
                    && r.backend == backend
                    && r.sampling.fingerprint() == sampling_fingerprint
            })
            .map(|r| r.sample_index)
            .collect()
    }

    pub fn append(&mut self, record: GenerationRecord) -> Result<()> {
        let key = record_key(&record);
        if self.keys.contains(&key) {
            return Err(Error::Input(format!(
                "duplicate record for {}#{} on backend {}",
                record.prompt_id, record.sample_index, record.backend
            )));
        }
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::json(self.path.display().to_string(), e))?;
        writeln!(self.writer, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))?;
        self.keys.insert(key);
        self.records.push(record);
        Ok(())
    }
}

fn record_key(record: &GenerationRecord) -> (String, String, String, u32) {
    (
        record.prompt_id.clone(),
        record.backend.clone(),
        record.sampling.fingerprint(),
        record.sample_index,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Maximum concurrent backend requests.
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { jobs: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptFailure {
    pub prompt_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub prompts_total: usize,
    /// Prompts that actually hit the backend this run.
    pub requests_issued: usize,
    pub records_appended: usize,
    /// (prompt, sample) pairs already present and skipped.
    pub records_skipped: usize,
    pub failures: Vec<PromptFailure>,
}

/// Generates every missing (prompt, sample) pair into the store.
///
/// Resumable: pairs already stored for this backend and sampling fingerprint
/// are skipped, so rerunning over a complete store issues zero requests.
/// Backend failures are collected per prompt, not fatal. Records are appended
/// in prompt order whatever the fan-out, so store contents are reproducible.
pub fn run_corpus(
    generator: &Generator,
    prompts: &[CodePrompt],
    sampling: &SamplingConfig,
    store: &mut RunStore,
    options: &RunOptions,
) -> Result<RunSummary> {
    sampling.validate()?;
    if prompts.is_empty() {
        return Err(Error::Input("no prompts to run".into()));
    }
    let fingerprint = sampling.fingerprint();
    let backend = generator.backend_name().to_string();

    let mut tasks: Vec<(usize, Vec<u32>)> = Vec::new();
    let mut skipped = 0usize;
    for (i, prompt) in prompts.iter().enumerate() {
        let existing = store.existing_indices(&prompt.id, &backend, &fingerprint);
        let missing: Vec<u32> = (0..sampling.num_samples)
            .filter(|idx| !existing.contains(idx))
            .collect();
        skipped += sampling.num_samples as usize - missing.len();
        if !missing.is_empty() {
            tasks.push((i, missing));
        }
    }

    let mut summary = RunSummary {
        prompts_total: prompts.len(),
        requests_issued: tasks.len(),
        records_appended: 0,
        records_skipped: skipped,
        failures: Vec::new(),
    };
    if tasks.is_empty() {
        return Ok(summary);
    }

    let jobs = options.jobs.max(1).min(tasks.len());
    let queue: Arc<Mutex<VecDeque<(usize, usize, Vec<u32>)>>> = Arc::new(Mutex::new(
        tasks
            .iter()
            .enumerate()
            .map(|(task_no, (prompt_index, missing))| (task_no, *prompt_index, missing.clone()))
            .collect(),
    ));
    let (sender, receiver) = mpsc::channel();

    let mut outcomes: BTreeMap<usize, std::result::Result<Vec<GenerationRecord>, String>> =
        BTreeMap::new();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            let queue = Arc::clone(&queue);
            let sender = sender.clone();
            scope.spawn(move || loop {
                let task = queue.lock().expect("queue lock").pop_front();
                let Some((task_no, prompt_index, missing)) = task else {
                    break;
                };
                let prompt = &prompts[prompt_index];
                let outcome = generator
                    .generate_indices(prompt, sampling, &missing)
                    .map_err(|e| e.to_string());
                if sender.send((task_no, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(sender);
        while let Ok((task_no, outcome)) = receiver.recv() {
            outcomes.insert(task_no, outcome);
        }
    });

    for (task_no, outcome) in outcomes {
        let prompt_index = tasks[task_no].0;
        match outcome {
            Ok(records) => {
                for record in records {
                    store.append(record)?;
                    summary.records_appended += 1;
                }
            }
            Err(error) => summary.failures.push(PromptFailure {
                prompt_id: prompts[prompt_index].id.clone(),
                error,
            }),
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_dataset_filtered, DimensionName, PromptVariantConfig, Vocabulary};

    fn sampling(samples: u32) -> SamplingConfig {
        SamplingConfig {
            num_samples: samples,
            ..SamplingConfig::default()
        }
    }

    fn small_corpus() -> Vec<CodePrompt> {
        let vocab = Vocabulary::builtin().unwrap();
        build_dataset_filtered(
            &vocab,
            &PromptVariantConfig::default(),
            Some(&[DimensionName::Gender]),
        )
        .unwrap()
        .into_iter()
        .take(3)
        .collect()
    }

    fn completion_for(index: u32) -> String {
        format!("    out = []\n    # sample {index}\n    return out")
    }

    fn seed_fixtures(dir: &Path, prompts: &[CodePrompt], sampling: &SamplingConfig) {
        let store = FixtureStore::new(dir);
        for prompt in prompts {
            for i in 0..sampling.num_samples {
                store
                    .write(&prompt.text, sampling, i, &completion_for(i))
                    .unwrap();
            }
        }
    }

    fn fixture_generator(dir: &Path) -> Generator {
        Generator::new(
            BackendSpec::Fixture {
                fixture_dir: dir.to_path_buf(),
                name: "fixture".into(),
            },
            RetryPolicy::default(),
        )
        .unwrap()
    }

    #[test]
    fn sampling_validation_bounds() {
        let mut s = SamplingConfig::default();
        assert!(s.validate().is_ok());
        s.temperature = 2.5;
        assert!(s.validate().is_err());
        s.temperature = 0.0;
        assert!(s.validate().is_ok());
        s.top_p = 0.0;
        assert!(s.validate().is_err());
        s.top_p = 1.0;
        s.num_samples = 0;
        assert!(s.validate().is_err());
        s.num_samples = 1;
        s.max_tokens = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn fingerprint_ignores_num_samples_only() {
        let base = SamplingConfig::default();
        let more_samples = SamplingConfig {
            num_samples: 99,
            ..base.clone()
        };
        assert_eq!(base.fingerprint(), more_samples.fingerprint());
        let hotter = SamplingConfig {
            temperature: 0.9,
            ..base.clone()
        };
        assert_ne!(base.fingerprint(), hotter.fingerprint());
        let wider = SamplingConfig {
            top_p: 0.5,
            ..base.clone()
        };
        assert_ne!(base.fingerprint(), wider.fingerprint());
        let longer = SamplingConfig {
            max_tokens: 256,
            ..base.clone()
        };
        assert_ne!(base.fingerprint(), longer.fingerprint());
        let no_stop = SamplingConfig {
            stop_sequences: vec![],
            ..base.clone()
        };
        assert_ne!(base.fingerprint(), no_stop.fingerprint());
    }

    #[test]
    fn truncation_cuts_at_first_stop() {
        let stops = vec!["\ndef ".to_string()];
        assert_eq!(
            truncate_at_stop("    return x\ndef next_function():\n    pass", &stops),
            "    return x"
        );
        assert_eq!(truncate_at_stop("    return x", &stops), "    return x");
        assert_eq!(truncate_at_stop("", &stops), "");
        let two = vec!["B".to_string(), "A".to_string()];
        assert_eq!(truncate_at_stop("xxAyyBzz", &two), "xx");
    }

    #[test]
    fn fixture_store_round_trip_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let store = FixtureStore::new(dir.path());
        let s = sampling(2);
        store.write("prompt text", &s, 0, "completion body").unwrap();
        assert_eq!(store.read("prompt text", &s, 0).unwrap(), "completion body");
        let err = store.read("prompt text", &s, 1).unwrap_err();
        assert!(matches!(err, Error::FixtureMiss { sample_index: 1, .. }));
        let err = store.read("other prompt", &s, 0).unwrap_err();
        assert!(matches!(err, Error::FixtureMiss { .. }));
    }

    #[test]
    fn fixture_key_tracks_prompt_and_sampling() {
        let a = FixtureStore::key("prompt", &sampling(2));
        assert_eq!(a, FixtureStore::key("prompt", &sampling(5)));
        assert_ne!(a, FixtureStore::key("other", &sampling(2)));
        let hotter = SamplingConfig {
            temperature: 0.1,
            ..sampling(2)
        };
        assert_ne!(a, FixtureStore::key("prompt", &hotter));
    }

    #[test]
    fn generate_reads_fixtures_and_truncates() {
        let dir = tempfile::tempdir().unwrap();
        let prompts = small_corpus();
        let s = sampling(2);
        let store = FixtureStore::new(dir.path());
        store
            .write(&prompts[0].text, &s, 0, "    return []\ndef stray():\n    pass")
            .unwrap();
        store.write(&prompts[0].text, &s, 1, "    return people").unwrap();
        let generator = fixture_generator(dir.path());
        let records = generator.generate(&prompts[0], &s).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].completion, "    return []");
        assert_eq!(records[1].completion, "    return people");
        assert_eq!(records[0].backend, "fixture");
        assert_eq!(records[0].sample_index, 0);
        assert_eq!(records[1].sample_index, 1);
        assert_eq!(records[0].prompt_id, prompts[0].id);
    }

    #[test]
    fn generate_fails_on_missing_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let prompts = small_corpus();
        let generator = fixture_generator(dir.path());
        let err = generator.generate(&prompts[0], &sampling(1)).unwrap_err();
        assert!(matches!(err, Error::FixtureMiss { .. }));
    }

    #[test]
    fn run_store_appends_reloads_and_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let record = GenerationRecord {
            prompt_id: "p".into(),
            backend: "fixture".into(),
            sample_index: 0,
            completion: "    return []".into(),
            sampling: sampling(1),
            timestamp: Utc::now(),
            latency_ms: 3,
        };
        {
            let mut store = RunStore::open(&path).unwrap();
            store.append(record.clone()).unwrap();
            let err = store.append(record.clone()).unwrap_err();
            assert!(matches!(err, Error::Input(_)));
        }
        let store = RunStore::open(&path).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.records()[0].completion, "    return []");
        assert_eq!(
            store.existing_indices("p", "fixture", &sampling(1).fingerprint()),
            BTreeSet::from([0])
        );
        assert!(store
            .existing_indices("p", "other-backend", &sampling(1).fingerprint())
            .is_empty());
    }

    #[test]
    fn sorted_records_order_by_prompt_then_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let mut store = RunStore::open(&path).unwrap();
        for (prompt_id, index) in [("b", 1u32), ("a", 1), ("b", 0), ("a", 0)] {
            store
                .append(GenerationRecord {
                    prompt_id: prompt_id.into(),
                    backend: "fixture".into(),
                    sample_index: index,
                    completion: String::new(),
                    sampling: sampling(2),
                    timestamp: Utc::now(),
                    latency_ms: 0,
                })
                .unwrap();
        }
        let sorted: Vec<(String, u32)> = store
            .sorted_records()
            .into_iter()
            .map(|r| (r.prompt_id.clone(), r.sample_index))
            .collect();
        assert_eq!(
            sorted,
            vec![
                ("a".into(), 0),
                ("a".into(), 1),
                ("b".into(), 0),
                ("b".into(), 1)
            ]
        );
    }

    #[test]
    fn run_corpus_fills_then_resumes_with_zero_requests() {
        let dir = tempfile::tempdir().unwrap();
        let prompts = small_corpus();
        let s = sampling(2);
        seed_fixtures(dir.path(), &prompts, &s);
        let generator = fixture_generator(dir.path());
        let store_path = dir.path().join("records.jsonl");

        let mut store = RunStore::open(&store_path).unwrap();
        let summary =
            run_corpus(&generator, &prompts, &s, &mut store, &RunOptions::default()).unwrap();
        assert_eq!(summary.prompts_total, 3);
        assert_eq!(summary.requests_issued, 3);
        assert_eq!(summary.records_appended, 6);
        assert_eq!(summary.records_skipped, 0);
        assert!(summary.failures.is_empty());
        assert_eq!(store.len(), 6);

        let rerun =
            run_corpus(&generator, &prompts, &s, &mut store, &RunOptions::default()).unwrap();
        assert_eq!(rerun.requests_issued, 0);
        assert_eq!(rerun.records_appended, 0);
        assert_eq!(rerun.records_skipped, 6);
        assert_eq!(store.len(), 6);
    }

    #[test]
    fn run_corpus_fetches_only_missing_indices() {
        let dir = tempfile::tempdir().unwrap();
        let prompts = small_corpus();
        let s = sampling(3);
        seed_fixtures(dir.path(), &prompts, &s);
        let generator = fixture_generator(dir.path());
        let store_path = dir.path().join("records.jsonl");

        let mut store = RunStore::open(&store_path).unwrap();
        for record in generator
            .generate_indices(&prompts[0], &s, &[0, 2])
            .unwrap()
        {
            store.append(record).unwrap();
        }
        let summary =
            run_corpus(&generator, &prompts, &s, &mut store, &RunOptions::default()).unwrap();
        assert_eq!(summary.records_skipped, 2);
        assert_eq!(summary.records_appended, 7);
        assert_eq!(store.len(), 9);
        let indices =
            store.existing_indices(&prompts[0].id, "fixture", &s.fingerprint());
        assert_eq!(indices, BTreeSet::from([0, 1, 2]));
    }

    #[test]
    fn run_corpus_collects_per_prompt_failures() {
        let dir = tempfile::tempdir().unwrap();
        let prompts = small_corpus();
        let s = sampling(2);
        let store = FixtureStore::new(dir.path());
        for prompt in &prompts[..2] {
            for i in 0..2 {
                store.write(&prompt.text, &s, i, "    return []").unwrap();
            }
        }
        let generator = fixture_generator(dir.path());
        let mut run_store = RunStore::open(dir.path().join("records.jsonl")).unwrap();
        let summary =
            run_corpus(&generator, &prompts, &s, &mut run_store, &RunOptions::default()).unwrap();
        assert_eq!(summary.records_appended, 4);
        assert_eq!(summary.failures.len(), 1);
        assert_eq!(summary.failures[0].prompt_id, prompts[2].id);
        assert!(summary.failures[0].error.contains("fixture miss"));
    }

    #[test]
    fn fan_out_width_does_not_change_store_contents() {
        let prompts = small_corpus();
        let s = sampling(2);
        let mut contents = Vec::new();
        for jobs in [1usize, 4] {
            let dir = tempfile::tempdir().unwrap();
            seed_fixtures(dir.path(), &prompts, &s);
            let generator = fixture_generator(dir.path());
            let mut store = RunStore::open(dir.path().join("records.jsonl")).unwrap();
            run_corpus(&generator, &prompts, &s, &mut store, &RunOptions { jobs }).unwrap();
            let ids: Vec<(String, u32, String)> = store
                .records()
                .iter()
                .map(|r| (r.prompt_id.clone(), r.sample_index, r.completion.clone()))
                .collect();
            contents.push(ids);
        }
        assert_eq!(contents[0], contents[1]);
    }

    #[test]
    fn missing_auth_env_is_a_config_error() {
        let spec = BackendSpec::Http {
            endpoint_url: "http://127.0.0.1:1/v1/completions".into(),
            model_name: "m".into(),
            auth_token_env: Some("CODEBIAS_TEST_TOKEN_THAT_IS_NOT_SET".into()),
            name: None,
        };
        assert!(matches!(
            Generator::new(spec, RetryPolicy::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn backend_names_default_sensibly() {
        let fixture = BackendSpec::Fixture {
            fixture_dir: "/tmp/x".into(),
            name: "fixture".into(),
        };
        assert_eq!(fixture.backend_name(), "fixture");
        let http = BackendSpec::Http {
            endpoint_url: "http://e".into(),
            model_name: "codegen-2b".into(),
            auth_token_env: None,
            name: None,
        };
        assert_eq!(http.backend_name(), "codegen-2b");
        let named = BackendSpec::Http {
            endpoint_url: "http://e".into(),
            model_name: "codegen-2b".into(),
            auth_token_env: None,
            name: Some("lab".into()),
        };
        assert_eq!(named.backend_name(), "lab");
    }
}
