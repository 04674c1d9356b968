//! Spiking graph neural networks over citation graphs.
//!
//! The crate builds binary spike trains from bag-of-words node features,
//! runs them through stacked spiking layers (graph convolution or graph
//! attention aggregation, spatial-temporal feature normalization, leaky
//! integrate-and-fire dynamics), decodes class logits from firing rates,
//! and trains the whole unrolled system end to end with a rectangular
//! surrogate standing in for the spike derivative. A profiler counts the
//! transform operations the binary representation saves over an equivalent
//! dense network.
//!
//! Everything is deterministic given the seeds in [`train::RunConfig`]; no
//! entropy is drawn from the environment.

// numeric kernels index several parallel buffers per iteration; explicit
// indices read better than nested zips there
#![allow(clippy::needless_range_loop)]

pub mod aggregate;
pub mod data;
pub mod error;
pub mod graph;
pub mod network;
pub mod neuron;
pub mod profile;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{build_graph, propagate, propagate_transpose, SparseGraph};
pub use network::{
    accuracy, masked_cross_entropy, model_forward, readout, Checkpoint, ForwardTrace, LayerKind,
    LayerSpec, ModelParams,
};
pub use tensor::{Features, Mat, SpikeTensor, Tensor3};
pub use train::{evaluate, train, RunConfig, SplitKind};
