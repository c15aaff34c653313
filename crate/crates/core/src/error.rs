//! Crate-wide error type.

use std::path::{Path, PathBuf};

/// Everything that can go wrong across the auditing pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid vocabulary data, prompt variant, sampling parameters, or config file.
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid arguments to a library operation (empty inputs, out-of-range counts).
    #[error("invalid input: {0}")]
    Input(String),

    /// A generation backend failed for one prompt after exhausting retries.
    #[error("backend error for prompt `{prompt_id}`: {message}")]
    Backend { prompt_id: String, message: String },

    /// A fixture-backed generation request asked for a completion that was never stored.
    #[error("fixture miss: no completion for key {key} sample {sample_index} under {dir}")]
    FixtureMiss {
        key: String,
        sample_index: u32,
        dir: PathBuf,
    },

    /// An annotation references a (prompt, backend, sample) that no generation record has.
    #[error("unknown record key `{0}`: annotation does not match any generation record")]
    UnknownRecordKey(String),

    /// Majority vote cannot resolve: some records have exactly tied label votes.
    #[error("no majority: tied annotation votes for {count} record(s): {keys}")]
    ConsensusTie { count: usize, keys: String },

    /// Classifier training cannot proceed (too few examples, single-class data).
    #[error("training error: {0}")]
    Training(String),

    /// A classifier model is structurally unusable (corrupt file, zero-width feature space).
    #[error("model not usable: {0}")]
    Model(String),

    /// A metric has no defined value for the given input (e.g. CBS over zero records).
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("http: {0}")]
    Http(#[from] reqwest::Error),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
