use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

use crate::corpus::ArticleId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate article id {id} on line {line}")]
    DuplicateId { id: ArticleId, line: usize },

    #[error("article {id} is dated {date}, outside the corpus range {start}..={end}")]
    DateOutOfRange {
        id: ArticleId,
        date: NaiveDate,
        start: NaiveDate,
        end: NaiveDate,
    },

    #[error("inverted date range: {start} > {end}")]
    InvertedRange { start: NaiveDate, end: NaiveDate },

    #[error("article {id} references unknown outlet {outlet:?}")]
    UnknownOutlet { id: ArticleId, outlet: String },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("id count mismatch: {rows} embedding rows but {ids} ids")]
    IdCountMismatch { rows: usize, ids: usize },

    #[error("zero-norm vector{}", .id.map(|i| format!(" for article {i}")).unwrap_or_default())]
    ZeroNorm { id: Option<ArticleId> },

    #[error("edge endpoint {0} is not in the article universe")]
    UnknownEndpoint(ArticleId),

    #[error("unknown article id {0}")]
    UnknownArticle(ArticleId),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("articles without a topic distribution: {ids:?}")]
    MissingTopics { ids: Vec<ArticleId> },

    #[error("topic distribution of article {id} has length {found}, expected {expected}")]
    TopicLength {
        id: ArticleId,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing upstream artifact {path} (run stage `{stage}` first)")]
    MissingArtifact { stage: &'static str, path: PathBuf },

    #[error("artifact {path} does not match the hash recorded in its manifest")]
    CorruptArtifact { path: PathBuf },

    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
