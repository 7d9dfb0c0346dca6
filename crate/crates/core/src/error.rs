use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("label column `{0}` not found in header")]
    MissingLabelColumn(String),
    #[error("row on line {0} has the wrong number of fields")]
    RaggedRow(u64),
    #[error("input has no data rows")]
    EmptyFile,
    #[error("only one label value is present")]
    ConstantLabel,
    #[error("binarization produced no feature columns")]
    NoFeatures,
    #[error("cannot draw a stratified pilot: {0}")]
    StratificationInfeasible(String),
    #[error("feature index {index} out of range for {width} features")]
    FeatureIndexOutOfRange { index: usize, width: usize },
    #[error("Rashomon set exceeds cap of {cap} trees ({found} found before stopping)")]
    RashomonSetOverflow { cap: usize, found: usize },
    #[error("no epsilon up to {max} yields a committee of at least two trees")]
    EpsilonExhausted { max: f64 },
    #[error("pool is empty")]
    EmptyPool,
    #[error("forest training needs at least two rows and two classes")]
    DegenerateLabels,
    #[error("precision-recall curve needs at least one positive")]
    NoPositives,
    #[error("truncated trace has {0} points, need at least 2")]
    TruncationTooShort(usize),
    #[error("reference AUC is zero")]
    DivisionByZero,
    #[error("milestone {0} is never reached")]
    MilestoneUnreached(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Run {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error("malformed input {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
