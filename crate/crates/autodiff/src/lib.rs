//! Reverse-mode automatic differentiation over `ndarray`, `f64` only.
//!
//! A [`Graph`] is a flat tape of values. Operations append a node holding the
//! forward value plus a closure that maps the output gradient back onto the
//! parents. Calling [`Graph::backward`] walks the tape in reverse and
//! accumulates gradients, which can then be read back per node or collected
//! per named parameter.
//!
//! The tape is rebuilt on every forward pass (define-by-run). All arithmetic
//! is `f64`; determinism is guaranteed by fixed accumulation order and
//! single-threaded kernels.

mod adam;
mod conv;
mod graph;
mod gradcheck;
mod init;
mod ops;
mod params;
pub mod rng;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use graph::{Graph, Var};
pub use init::{normal_init, orthogonal_init, uniform_init};
pub use params::ParamStore;
