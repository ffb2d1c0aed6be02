//! Graph-constrained latent geometry: OT solvers, graph priors, factorized training,
//! geometry-aware metrics, traversal and leakage-safe splitting.

pub mod decoder;
pub mod error;
pub mod evaluation;
pub mod factorization;
pub mod graph_priors;
pub mod metrics;
pub mod numerics;
pub mod ot;
pub mod splitter;
pub mod synthetic;
pub mod traversal;

pub use error::{Error, Result};
pub use numerics::DenseMatrix;
