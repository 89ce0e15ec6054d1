//! Convolutional actor-critic, its optimiser and checkpoints.

mod adam;
mod arch;
pub mod checkpoint;
pub mod dist;
mod input;
mod net;
mod scalar;

pub use adam::{Adam, AdamConfig};
pub use arch::{Arch, ConvSpec, ParamBlock};
pub use input::{encode_proprio, ObsBatch};
pub use net::{Forward, ForwardCache, PolicyNet};
pub use scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}
