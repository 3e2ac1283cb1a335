//! Character-level sequence-to-sequence transduction with a small pre-LN
//! transformer.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: dense tensors, a tape-based reverse-mode autodiff graph, Adam.
//! - [`transformer`]: encoder-decoder model, parameter store layout and counts,
//!   incremental inference with key/value caches.
//! - [`featenc`]: typed source tokens. Features share position 0 and carry a
//!   type embedding so that their order has no effect on the model.
//! - [`data`]: task readers, vocabularies, batching, synthetic inflection data.
//! - [`training`]: learning-rate schedule, training loop, checkpoints, sweeps.
//! - [`decode`]: greedy decoding, edit distance and the evaluation metrics.
//! - [`cli`]: the `chartrans` command-line workflows.
//!
//! Runnable programs covering each capability live in `examples/`.

pub mod cli;
pub mod data;
pub mod decode;
pub mod error;
pub mod featenc;
pub mod numerics;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};
