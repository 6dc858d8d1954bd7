//! Error type shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected_width}x{expected_height}, got {width}x{height}")]
    DimensionMismatch {
        expected_width: usize,
        expected_height: usize,
        width: usize,
        height: usize,
    },

    #[error("label map has {got} entries but declared size is {expected}")]
    LabelMapSize { expected: usize, got: usize },

    #[error("{0}")]
    InvalidInput(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("histogram bin counts differ: {a} vs {b}")]
    HistogramBins { a: usize, b: usize },

    #[error("feature vector length {got} does not match layout length {expected}")]
    LayoutMismatch { expected: usize, got: usize },

    #[error("missing score for clique {0}")]
    MissingCliqueScore(usize),

    #[error("node labeling violates {0}")]
    InconsistentLabeling(&'static str),

    #[error("tree has {internal} internal nodes; exhaustive inference is capped at {max}")]
    TreeTooLarge { internal: usize, max: usize },

    #[error("region adjacency graph is disconnected; cannot merge to a single root")]
    DisconnectedAdjacency,

    #[error("model file is inconsistent: {0}")]
    ModelFormat(String),
}

impl Error {
    /// Input errors come from bad user data; the rest indicate violated
    /// internal invariants. The CLI maps the two classes to exit codes 1 and 2.
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::LabelMapSize { .. }
                | Error::InvalidInput(_)
                | Error::Empty(_)
                | Error::LayoutMismatch { .. }
                | Error::ModelFormat(_)
        )
    }
}
