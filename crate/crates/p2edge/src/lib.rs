//! Pools of pruned, quantized classifiers served as distributed voting
//! ensembles.
//!
//! The pipeline, end to end:
//!
//! 1. [`data`] / [`store`] — generate a synthetic labelled dataset and
//!    persist it with a content hash and fixed split boundaries.
//! 2. [`pool`] — train many small dense classifiers with randomly sampled
//!    hyperparameters, each pruned on a polynomial sparsity schedule
//!    ([`prune`]) and int8-quantized post training ([`quant`]).
//! 3. [`ensemble`] — cluster the pool by prediction behaviour with k-means
//!    and select representatives accuracy-first or diversity-first.
//! 4. [`vote`] / [`net`] — serve the selected models from worker nodes that
//!    vote locally, with a master combining node votes per sample.
//!
//! The `p2e` binary exposes every stage as a subcommand; the guide under
//! `book/` walks through the concepts with runnable snippets (mirrored here
//! as doc-tests).

pub mod data;
pub mod ensemble;
mod error;
pub mod net;
pub mod nn;
pub mod pool;
pub mod prune;
pub mod quant;
pub mod store;
mod tensor;
pub mod vote;

pub use error::{Error, Result};
pub use tensor::Tensor;

// The book's code snippets double as doc-tests so the guide cannot drift
// from the library.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/training-core.md")]
    mod training_core {}
    #[doc = include_str!("../../../book/src/pruning.md")]
    mod pruning {}
    #[doc = include_str!("../../../book/src/quantization.md")]
    mod quantization {}
    #[doc = include_str!("../../../book/src/pool-generation.md")]
    mod pool_generation {}
    #[doc = include_str!("../../../book/src/ensemble-selection.md")]
    mod ensemble_selection {}
    #[doc = include_str!("../../../book/src/voting.md")]
    mod voting {}
    #[doc = include_str!("../../../book/src/distributed.md")]
    mod distributed {}
    #[doc = include_str!("../../../book/src/file-formats.md")]
    mod file_formats {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
