//! Minimal `f64` tensors with tape-based reverse-mode differentiation.
//!
//! Everything runs single-threaded on the CPU in 64-bit floating point, so
//! results are bit-reproducible and analytic gradients can be checked
//! against finite differences at tight tolerances.

pub mod gradcheck;
mod graph;
pub mod kernels;
mod optim;
mod params;
mod spatial;
mod tensor;

pub use graph::{pixel_shuffle, pixel_unshuffle, Gradients, Graph, Var};
pub use optim::Adam;
pub use params::{Param, ParamId, ParamStore};
pub use spatial::{SpatialMap, SpatialMapBuilder};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got {got}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("weight archive: {0}")]
    Archive(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
