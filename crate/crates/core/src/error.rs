use std::path::PathBuf;

use crate::attention::FeatureKey;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid tensor shape {0:?}: every dimension must be at least 1")]
    InvalidShape([usize; 4]),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },

    #[error("data length {actual} does not match shape product {expected}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite value {value} at flat offset {offset}")]
    NonFinite { offset: usize, value: f32 },

    #[error("index {index:?} out of range for shape {shape:?}")]
    IndexOutOfRange { index: Vec<usize>, shape: Vec<usize> },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic {found:?}, expected \"TNSR\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported TNSR version {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("unsupported rank {0}, only 4-d tensors are stored")]
    UnsupportedRank(u8),

    #[error("truncated file: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },

    #[error("{found} trailing bytes after payload")]
    TrailingBytes { found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("timestep {t} out of range 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("degenerate timestep {t}: alpha_bar = {alpha_bar} leaves the noise prediction undefined")]
    DegenerateTimestep { t: usize, alpha_bar: f64 },

    #[error("exact inversion at t={t} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { t: usize, iterations: usize, residual: f64 },

    #[error("denoiser failed at t={t}: {source}")]
    Denoiser {
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing cached attention features for {0}")]
    MissingCacheEntry(FeatureKey),

    #[error("attention features for {0} were already recorded")]
    DuplicateCacheEntry(FeatureKey),

    #[error("window {window} (frames {start}..={end}): {source}")]
    Window {
        window: usize,
        start: usize,
        end: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier, used for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidShape(_) => "invalid_shape",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::Io { .. } => "io",
            Error::BadMagic { .. } => "bad_magic",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::UnsupportedDtype(_) => "unsupported_dtype",
            Error::UnsupportedRank(_) => "unsupported_rank",
            Error::Truncated { .. } => "truncated",
            Error::TrailingBytes { .. } => "trailing_bytes",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::TimestepOutOfRange { .. } => "timestep_out_of_range",
            Error::DegenerateTimestep { .. } => "degenerate_timestep",
            Error::Convergence { .. } => "convergence",
            Error::Denoiser { source, .. } | Error::Window { source, .. } => source.kind(),
            Error::MissingCacheEntry(_) => "missing_cache_entry",
            Error::DuplicateCacheEntry(_) => "duplicate_cache_entry",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
