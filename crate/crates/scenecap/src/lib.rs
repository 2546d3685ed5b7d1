//! Scene-graph captioning at desk scale.
//!
//! A self-contained implementation of a scene-graph auto-encoding
//! captioner: graph-convolutional encoders over sentence and image scene
//! graphs, a trainable dictionary memory that re-encodes node embeddings
//! through softmax attention, a two-LSTM attention decoder, and training
//! pipelines (cross-entropy and self-critical policy gradient) on top of
//! a from-scratch reverse-mode autodiff core.
//!
//! Start with the runnable programs in `examples/`; the `scenecap` binary
//! exposes the same pipelines as subcommands.

pub mod error;
pub mod gradcheck;
pub mod params;
pub mod rng;
pub mod tensor;

pub mod graph;
pub mod vocab;
pub mod corpus;

pub mod dictionary;
pub mod gcn;
pub mod mgcn;

pub mod decoder;

pub mod checkpoint;
pub mod trainer;

pub mod metrics;

pub mod synth;

pub mod cli;

pub use error::{Error, Result};
