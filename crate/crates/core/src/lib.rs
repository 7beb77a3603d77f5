//! Graph retrieval by maximum common subgraph.
//!
//! Scores corpus graphs against query graphs under two relevance measures:
//! the maximum common edge subgraph (MCES, counting shared edges) and the
//! maximum common connected subgraph (MCCS, counting nodes of the largest
//! shared connected component). Exact branch-and-bound solvers produce
//! ground-truth labels; trainable neural surrogates (late-interaction
//! `lmces`/`lmccs`, early-interaction `xmcs`, plus a `combo` head and an
//! embedding-min baseline) learn to predict those labels from the scalar
//! values alone.
//!
//! The crate is organized around the pipeline:
//!
//! 1. [`sampler`] draws corpus/query graph sets from source graphs,
//! 2. [`oracle`] labels every (query, corpus) pair exactly,
//! 3. [`scorers`] define the differentiable relevance heads on top of the
//!    [`encoder`] GNN and the [`align`] Sinkhorn alignment,
//! 4. [`trainer`] fits them by MSE regression on the labels,
//! 5. [`evalkit`] measures retrieval quality (MSE, Kendall tau, PairRank).
//!
//! All differentiable pieces run on the small reverse-mode engine in
//! [`diffengine`]; everything is `f64` end to end so that gradient checks
//! and reproducibility guarantees hold.

pub mod align;
pub mod diffengine;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod graph;
pub mod oracle;
pub mod sampler;
pub mod scorers;
pub mod trainer;

pub use error::{CoreError, Result};
pub use graph::{Graph, LabelRecord, PaddedPair};
