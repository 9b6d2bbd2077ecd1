//! Belief-propagation contraction of injective PEPS with loop and cluster
//! corrections, an exact oracle, and locality experiments.

// `!(x < y)` is used on purpose throughout: NaN must fail every guard.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bp;
pub mod cluster;
pub mod error;
pub mod graph;
pub mod locality;
pub mod loops;
pub mod oracle;
pub mod peps;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{AnchoredLoop, Graph, Loop};
pub use peps::PepsNetwork;
pub use tensor::{DenseTensor, Matrix, C64};
