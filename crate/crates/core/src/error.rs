use thiserror::Error;

use crate::cluster::TrainReport;

pub type Result<T, E = IstError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum IstError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate plan: site {site} owns no neurons in hidden layer {layer}")]
    DegeneratePlan { layer: usize, site: usize },

    #[error("plan mismatch: {0}")]
    PlanMismatch(String),

    #[error("missing shard for site {0}")]
    MissingShard(usize),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("standardizers must be frozen before evaluation")]
    NotFrozen,

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence {
        epoch: usize,
        loss: f64,
        report: Box<TrainReport>,
    },

    #[error("compressed-iterate run diverged at iteration {iteration}")]
    GdciDivergence {
        iteration: usize,
        trace: Box<crate::gdci::GdciTrace>,
    },

    #[error("inadmissible bound parameters: {0}")]
    Inadmissible(String),

    #[error("rank-deficient design matrix")]
    RankDeficient,

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
