//! Reverse-mode kernels for the small convolutional networks used by `qmap`.
//!
//! The crate covers exactly the layer kinds needed to express a U-Net style
//! generator and a convolutional regression head: 3×3 convolution, 2×2
//! stride-2 transposed convolution, batch normalization, leaky ReLU, 2×2 max
//! pooling, fully connected, dropout, channel concatenation and sigmoid.
//! Networks are described as a [`Topology`] (a DAG of named nodes) and
//! instantiated as a [`ComputeGraph`] that owns parameters and batch-norm
//! buffers.
//!
//! `forward` is a pure function of the graph and returns a [`Tape`];
//! `backward` consumes the tape and returns [`Gradients`]. Parameters only
//! change through [`Adam::step`], running statistics only through
//! [`ComputeGraph::update_running_stats`].
//!
//! With the default `parallel` feature, batched kernels fan out over samples
//! with rayon. Reductions across samples always run sequentially in sample
//! order, so results do not depend on the worker count.

mod adam;
mod checkpoint;
mod error;
mod graph;
mod kernels;
mod layer;
pub mod linalg;
mod loss;
pub mod par;
mod rng;
mod tensor;

pub use adam::{adam_update, Adam, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use error::{NnError, Result};
pub use graph::{ComputeGraph, GraphBuilder, Gradients, Mode, NodeSpec, Param, Source, Tape, Topology};
pub use layer::{LayerSpec, BN_EPS, BN_MOMENTUM, LEAKY_SLOPE};
pub use loss::{loss_bce_sigmoid, loss_mse, sigmoid};
pub use rng::{fnv1a, seed_rng, SeedStream};
pub use tensor::Tensor4;
