//! Decomposition-based explanations for graph neural networks.
//!
//! A trained GCN or GAT is split layer by layer into the contribution of a
//! target node group and of everything else. The target contribution scores
//! groups directly, and an agglomerative search grows explanatory subgraphs
//! from those scores.

pub mod agglomerate;
pub mod cli;
pub mod datasets;
pub mod decompose;
pub mod error;
pub mod eval;
pub mod graph;
pub mod matrix;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
pub use graph::{Graph, NodeGroup, NodeMap, Propagation};
pub use matrix::Matrix;
pub use rng::RngStream;
