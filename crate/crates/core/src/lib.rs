//! Design toolkit for large-scale distributed quantizers.
//!
//! Each source is scalar-quantized by a fine high-rate quantizer, the region
//! index is relabeled by a Wyner-Ziv map into a short transmission index, and
//! the decoder reconstructs every source from a selected subset of the received
//! bits. Encoders, bit-subset selectors and codebooks are designed jointly by
//! minimizing `D + λC` (distortion plus average codebook size), either by
//! greedy descent ([`greedy`]) or by deterministic annealing ([`anneal`]).
//!
//! The [`dir`] module applies the same machinery to multi-hop networks where
//! every transmitted bit is multicast to its own subset of sinks and the cost
//! term is the Steiner-tree communication cost.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anneal;
pub mod data;
pub mod dir;
pub mod error;
pub mod greedy;
pub mod model;
pub mod quantizer;
pub mod report;

mod clock;
mod engine;
mod soft;

pub use error::{Error, Result};
pub use model::{
    BitSubset, BitSubsetSelector, BitVector, CodebookTable, DecoderCodebook, HighRateQuantizer, SourceSystem,
    TrainingSet, WzMap,
};
pub use report::{CostKind, Split, TradeoffPoint};
