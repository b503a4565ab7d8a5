//! A small neural-network engine with hand-written backward passes.

pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod recurrent;
pub mod tensor;

use std::path::PathBuf;

pub use layers::{infer_shapes, Activation, Init, Layer, LayerSpec, Padding};
pub use loss::l2_loss;
pub use network::{Network, NetworkSpec};
pub use optim::{Optimizer, OptimizerConfig};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("state error: {0}")]
    State(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checksum mismatch in {file}")]
    Checksum { file: String },
    #[error("malformed model file {file}: {reason}")]
    Format { file: String, reason: String },
}

pub type Result<T> = std::result::Result<T, NnError>;
