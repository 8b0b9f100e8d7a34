use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("action {value} outside box |u| <= {bound}")]
    ActionOutOfBounds { value: f64, bound: f64 },
    #[error("state diverged: |x|inf = {norm} exceeds guard {guard}")]
    StateDiverged { norm: f64, guard: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("pattern enumeration needs T <= {cap}, got T = {rows}")]
    PatternCapExceeded { rows: usize, cap: usize },
    #[error("weight shapes differ: {0}")]
    ShapeMismatch(String),
    #[error("all units have zero norm; theorem diagnostics need at least one active unit")]
    EmptyF,
    #[error("bootstrap rollout diverged on every one of {0} attempts")]
    BootstrapFailed(usize),
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("unsupported weights format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable single-token category, printed by the command line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } | Error::ShapeMismatch(_) => "dimension-mismatch",
            Error::ActionOutOfBounds { .. } => "action-out-of-bounds",
            Error::StateDiverged { .. } | Error::BootstrapFailed(_) => "state-diverged",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::PatternCapExceeded { .. } => "cap-exceeded",
            Error::EmptyF => "empty-f",
            Error::Config { .. } => "config-parse",
            Error::VersionMismatch { .. } => "version-mismatch",
            Error::MalformedFile(_) => "malformed-file",
            Error::Io(_) | Error::Csv(_) => "io",
        }
    }
}
