use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("score vector has {found} entries, vocabulary has {expected}{}", line_suffix(*.line))]
    ScoreLength {
        expected: usize,
        found: usize,
        line: Option<usize>,
    },

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("duplicate id {0}")]
    DuplicateId(u64),

    #[error("unknown class label `{0}`")]
    UnknownClass(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no localization available: ground truth needs camera poses or per-frame pixel annotations")]
    NoLocalization,

    #[error("degenerate correspondences: {0}")]
    Degenerate(String),

    #[error("point maps to infinity under homography")]
    PointAtInfinity,

    #[error("missing pose for frame {0}")]
    MissingPose(u64),

    #[error("dataset carries no generator truth labels")]
    NotGenerated,

    #[error("invalid scenario: {0}")]
    Scenario(String),
}

fn line_suffix(line: Option<usize>) -> String {
    match line {
        Some(l) => format!(" (line {l})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
