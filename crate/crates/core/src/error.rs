use thiserror::Error;

/// Broad failure class, used by front ends to choose an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Invalid arguments or configuration.
    Config,
    /// Unreadable or inconsistent input data.
    Data,
    /// A numerical routine failed.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("line {line}: malformed row: {message}")]
    MalformedRow { line: u64, message: String },

    #[error("missing cell: group {group}, year {year}")]
    MissingCell { group: String, year: i32 },

    #[error("duplicate cell: group {group}, year {year} (line {line})")]
    DuplicateCell { group: String, year: i32, line: u64 },

    #[error("non-contiguous years: no data for year {missing} in {start}..={end}")]
    NonContiguousYears { start: i32, end: i32, missing: i32 },

    #[error("zero deaths at row {row}, column {col}")]
    ZeroDeaths { row: usize, col: usize },

    #[error("non-positive exposure at row {row}, column {col}")]
    NonPositiveExposure { row: usize, col: usize },

    #[error("non-positive rate {value} at row {row}, column {col}")]
    NonPositiveRate { row: usize, col: usize, value: f64 },

    #[error("negative death rate {0}")]
    NegativeRate(f64),

    #[error("age {0} is not the start of an age group")]
    UnknownAge(u32),

    #[error("predictive covariance Q_t is numerically singular at t = {t}")]
    SingularCovariance { t: usize },

    #[error("predictive state variance R_{t} is zero")]
    ZeroStateVariance { t: usize },

    #[error("particle collapse at t = {t}: every incremental weight underflowed")]
    ParticleCollapse { t: usize },

    #[error("information matrix is numerically singular")]
    SingularInformation,

    #[error("line search exhausted the minimum step at iteration {iter}")]
    LineSearchFailed { iter: usize },

    #[error("log-likelihood is not finite")]
    NonFiniteLikelihood,

    #[error("requested rank {k} exceeds the numerical rank {rank}")]
    RankDeficient { k: usize, rank: usize },

    #[error("CIR volatility path is non-positive at t = {t}")]
    CirNonPositive { t: usize },

    #[error("chain contains no retained draws")]
    EmptyChain,

    #[error("sweep {sweep}: {source}")]
    Sweep {
        sweep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidInput(_) | Error::UnknownAge(_) => ErrorCategory::Config,
            Error::MalformedRow { .. }
            | Error::MissingCell { .. }
            | Error::DuplicateCell { .. }
            | Error::NonContiguousYears { .. }
            | Error::ZeroDeaths { .. }
            | Error::NonPositiveExposure { .. }
            | Error::NonPositiveRate { .. }
            | Error::NegativeRate(_)
            | Error::EmptyChain
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorCategory::Data,
            Error::Sweep { source, .. } => source.category(),
            _ => ErrorCategory::Numerical,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
