use std::io;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("character {0:?} is not in the vocabulary")]
    UnknownChar(char),

    #[error("token out of vocabulary: id {id} with vocabulary size {vocab_size}")]
    TokenOutOfVocab { id: usize, vocab_size: usize },

    #[error("empty response")]
    EmptyResponse,

    #[error("invalid temperature: {0}")]
    InvalidTemperature(f64),

    #[error("vocab mismatch")]
    VocabMismatch,

    #[error("state space too large: {states} sequences exceeds the limit of {limit}")]
    StateSpaceTooLarge { states: f64, limit: f64 },

    #[error("training diverged at epoch {epoch}, step {step}")]
    TrainingDiverged { epoch: usize, step: usize },

    #[error("need at least two candidates")]
    NeedTwoCandidates,

    #[error("no usable pairs")]
    NoUsablePairs,

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("misaligned inputs: {0}")]
    Misaligned(String),

    #[error("missing baseline {0:?}")]
    MissingBaseline(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("too many dropped records: {dropped} of {total}")]
    TooManyDrops { dropped: usize, total: usize },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wraps an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}
