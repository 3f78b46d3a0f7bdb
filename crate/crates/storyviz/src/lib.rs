//! Word-level story visualization at desk scale: a procedurally generated
//! shape-story dataset, a sequential GAN whose generator and discriminators
//! consume word-level information, and the evaluation stack (FID, FSD, cosine
//! alignment, keyword consistency) with an ablation harness.

pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nets;
pub mod ops;
pub mod pipeline;
pub mod strategies;
pub mod text;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
