//! Locally connected Gaussian CRF over the decoder's final feature map.
//!
//! Each grid cell is a node joined to every other cell inside a `d x d`
//! window. Mean-field inference iterates
//! `mu_i = (z_i + w * sum_j k_ij mu_j) / (1 + w * sum_j k_ij)`, whose fixed
//! point solves `(I + w (D - K)) mu = z`; the dense solve of that system is
//! kept as an exact oracle.

mod graph;
mod inference;
mod learning;

pub use graph::{kernel, CrfGraph};
pub use inference::{exact_fixed_point, mean_field_infer, InferOptions, MeanField, Sweep};
pub use learning::{crf_gradient, grid_search_hyperparams, learn_w, learn_w_batch, refine, validation_mae, CrfSample, GridSearchResult, LearnOptions};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_LAMBDA1_GRID: [f64; 5] = [0.1, 0.5, 1.0, 5.0, 10.0];
pub const DEFAULT_LAMBDA2_GRID: [f64; 3] = [0.01, 0.1, 1.0];

/// Pairwise weight `w >= 0` and kernel bandwidths `lambda1, lambda2 > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrfParams {
    pub w: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl CrfParams {
    pub fn new(w: f64, lambda1: f64, lambda2: f64) -> Result<Self> {
        let p = Self { w, lambda1, lambda2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w >= 0.0 && self.w.is_finite()) {
            return Err(Error::InvalidArgument(format!("CRF weight must be finite and >= 0, got {}", self.w)));
        }
        if !(self.lambda1 > 0.0 && self.lambda2 > 0.0 && self.lambda1.is_finite() && self.lambda2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kernel bandwidths must be positive, got ({}, {})",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}
