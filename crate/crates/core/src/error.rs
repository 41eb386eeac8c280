use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("unknown node: variable does not belong to this tape")]
    UnknownNode,
    #[error("degenerate variance: batch norm in train mode needs more than one value per channel")]
    DegenerateVariance,
    #[error("empty loss: every pixel is ignored")]
    EmptyLoss,
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: u8, classes: usize },
    #[error("schedule overrun: iteration {iter} exceeds total {total}")]
    ScheduleOverrun { iter: usize, total: usize },
    #[error("parameter {0} has no populated gradient")]
    UnpopulatedGradient(String),
    #[error("training diverged at iteration {iter}: non-finite loss")]
    Divergence { iter: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("empty scene: at least one shape per scene is required")]
    EmptyScene,
    #[error("format error: {0}")]
    Format(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("incompatible model: {0}")]
    IncompatibleModel(String),
    #[error("undefined metric: confusion matrix is empty")]
    UndefinedMetric,
    #[error("prediction {pred} out of range for {classes} classes")]
    PredictionRange { pred: usize, classes: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
