//! Constant-density acoustic forward modelling.
//!
//! First-order pressure / particle-velocity system on a staggered grid,
//! second order in time and fourth order in space, with a Cerjan-style
//! exponential sponge around the physical domain. Receivers record
//! pressure.

mod fdtd;
mod gather;
mod geometry;
mod source;

pub use fdtd::{forward_model, SimConfig, Simulation};
pub use gather::{add_noise, downsample, ShotGather};
pub use geometry::{AcquisitionGeometry, GridPoint};
pub use source::{ricker, ricker_integral};
