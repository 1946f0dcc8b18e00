//! Text classification by multi-scale feature fusion over a token graph.
//!
//! The pipeline: a small trainable self-attention encoder produces per-layer
//! hidden states, a top-down feature pyramid fuses them across scales, the
//! fused per-token features become nodes of a co-occurrence graph, a
//! graph-convolution stack propagates neighborhood information, and a mean
//! readout feeds a linear softmax classifier. Everything runs on a compact
//! f64 reverse-mode autodiff core so the whole model is checkable against
//! central finite differences.

pub mod checkpoint;
pub mod encoder;
pub mod gradcheck;
pub mod gnn;
pub mod graph;
pub mod head;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod plot;
pub mod pyramid;
pub mod tensor;
pub mod train;

pub use tensor::{Activation, Tape, Tensor, TensorError, TensorIoError, ValueId};
