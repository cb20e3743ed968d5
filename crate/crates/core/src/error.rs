use thiserror::Error;

/// Everything that can go wrong in the toolkit.
///
/// Variants are split loosely into input validation problems (bad shapes,
/// empty data, malformed logs) and runtime failures (I/O, numerical
/// overflow); [`Error::is_validation`] tells them apart.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: no samples")]
    EmptyInput,
    #[error("too many bins: {bins} bins requested for {samples} samples")]
    TooManyBins { bins: usize, samples: usize },
    #[error("invalid ECE exponent q={0}, expected 1 or 2")]
    InvalidQ(u32),
    #[error("timestep has no action dimensions")]
    EmptyDims,
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("episode {episode}: timestep {t} missing in variant {variant}")]
    MissingTimestep { episode: String, variant: u32, t: usize },
    #[error("episode {episode}: {requested} variants requested, {available} available")]
    NotEnoughVariants { episode: String, requested: usize, available: usize },
    #[error("subsample size k={k} exceeds {available} available variants (or is zero)")]
    KTooLarge { k: usize, available: usize },
    #[error("degenerate data: {0}")]
    Degenerate(&'static str),
    #[error("non-finite value during {0}")]
    NonFinite(&'static str),
    #[error("recalibrator kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: &'static str, found: &'static str },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("logits missing for trial {trial}, dimension {dim}")]
    MissingLogits { trial: usize, dim: usize },
    #[error("episode has no timesteps")]
    EmptyEpisode,
    #[error("too few episodes: need at least {needed}, got {got}")]
    TooFewEpisodes { needed: usize, got: usize },
    #[error("quantile level {0} not in (0, 1)")]
    BadQuantile(f64),
    #[error("threshold profile is missing completion levels (has {0}, needs 100)")]
    MissingProfileLevels(usize),
    #[error("bad synthetic config: {0}")]
    BadConfig(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("group `{0}` is empty")]
    EmptyGroup(String),
    #[error("invalid record: {path}: {cause}")]
    Invalid { path: String, cause: String },
    #[error("line {line}: {path}: {cause}")]
    Parse { line: usize, path: String, cause: String },
    #[error("line {line}: unsupported schema_version {version}")]
    SchemaVersionUnsupported { line: usize, version: i64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by the input rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Csv(_) | Error::NonFinite(_))
    }

    pub(crate) fn invalid(path: impl Into<String>, cause: impl Into<String>) -> Self {
        Error::Invalid { path: path.into(), cause: cause.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
