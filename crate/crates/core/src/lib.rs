//! Desk-scale full-waveform inversion laboratory.
//!
//! The crate fabricates layered subsurface velocity models, simulates
//! constant-density acoustic shot gathers on a staggered grid, trains a
//! convolutional encoder-decoder that maps gathers back to velocity models,
//! and refines the network output with a locally connected Gaussian CRF.
//!
//! Modules:
//! - [`numerics`]: dense tensors, counter-based RNG streams, dense solver.
//! - [`geomodel`]: FlatVel / CurvedVel model families, standardization,
//!   nearest-neighbour audit.
//! - [`wavesim`]: Ricker source, FDTD forward modelling, noise, decimation.
//! - [`nn`]: layers with hand-written backward passes, Adam, checkpoints.
//! - [`crf`]: graph, kernel, mean-field inference, exact solve, learning.
//! - [`metrics`]: mae / rel / log10 / threshold accuracy.
//! - [`pipeline`]: dataset container, experiment config, CLI commands.

pub mod crf;
pub mod error;
pub mod geomodel;
pub mod metrics;
pub mod nn;
pub mod numerics;
pub mod pipeline;
pub mod wavesim;

pub use error::{Error, Result};
pub use numerics::{SeededRng, Tensor};
