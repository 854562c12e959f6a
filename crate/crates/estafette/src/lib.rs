//! Estafette: desk-scale simultaneous multi-pivot machine translation.
//!
//! The crate trains tiny encoder-decoder transformers on its own autodiff
//! engine, runs wait-k simultaneous decoding against token streams, chains
//! models through one or more pivot languages with gated multi-source
//! attention fusion, and measures the result with corpus BLEU and latency
//! metrics.
//!
//! The companion guide under `book/` walks through each concept; its code
//! snippets compile and run as doc-tests of this crate.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod tensor;
pub mod train;
pub mod waitk;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor};
