//! Dual-level attention memory for unsupervised video object segmentation,
//! built on a small self-contained f64 tensor core with reverse-mode
//! differentiation.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`] — N-D tensors, the op set the model needs, taped reverse-mode
//!   differentiation, and finite-difference gradient checking.
//! * [`nn`] — parametric building blocks: linear layers, scaled dot-product
//!   attention, feed-forward nets, channel/spatial gates, strided downsampling.
//! * [`pyramid`] — the toy four-level hierarchical encoder and the bottom-up
//!   decoder producing mask logits.
//! * [`memory`] — per-level FIFO memory banks with attention readout.
//! * [`interaction`] — cross-level refinement between shallow and high-level
//!   features (local alignment down, global integration up).
//! * [`pipeline`] — per-frame orchestration, whole-video inference, training
//!   steps, checkpoints.
//! * [`loss`] / [`metrics`] — segmentation training loss and the evaluation
//!   metric suite (region similarity, boundary F, MAE, max F-measure).
//! * [`synth`] / [`flow`] / [`imageio`] / [`manifest`] — deterministic
//!   synthetic clips with exact masks and flow, flow color encoding, and
//!   file I/O.
//!
//! The `book/` directory at the repository root walks through the same layers
//! with runnable snippets; those snippets are compiled as doc-tests via the
//! [`book`] module.

pub mod error;
pub mod flow;
pub mod imageio;
pub mod interaction;
pub mod loss;
pub mod manifest;
pub mod mask;
pub mod memory;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod pyramid;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
