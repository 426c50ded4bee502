use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("missing column '{column}' in {path}")]
    MissingColumn { path: PathBuf, column: String },

    #[error("cluster '{cluster}' in survey '{survey}' appears under strata '{first}' and '{second}'")]
    ClusterSpansStrata {
        survey: String,
        cluster: String,
        first: String,
        second: String,
    },

    #[error("duplicate area id '{0}' in roster")]
    DuplicateArea(String),

    #[error("unknown area '{area}' referenced by {context}")]
    UnknownArea { area: String, context: String },

    #[error("self-edge on area '{0}'")]
    SelfEdge(String),

    #[error("unknown survey family '{family}' referenced by {context}")]
    UnknownSurvey { family: String, context: String },

    #[error("cell year {year} outside the model grid [{first}, {last}]")]
    YearOutsideGrid { year: i32, first: i32, last: i32 },

    #[error("no usable likelihood cells (every cell empty, degenerate, or cluster-deficient)")]
    EmptyLikelihood,

    #[error("precision factorization failed: {0}")]
    Factorization(String),

    #[error("missing population row for area '{area}', year {year}")]
    MissingPopulation { area: String, year: i32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }
}
