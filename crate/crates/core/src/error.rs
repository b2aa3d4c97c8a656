//! Error type shared across the pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("boundary `{plot_id}`: {reason}")]
    Boundary { plot_id: String, reason: String },

    #[error("malformed input at record {record}: {reason}")]
    Malformed { record: usize, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("shape mismatch in {layer}: expected {expected}, got {got}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        got: String,
    },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
