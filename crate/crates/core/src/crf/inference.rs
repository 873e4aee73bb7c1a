use rayon::prelude::*;

use super::{CrfGraph, CrfParams};
use crate::numerics::{solve_dense, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    /// In-place updates in ascending node order.
    GaussSeidel,
    /// All nodes updated from the previous sweep; parallel over nodes.
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub sweep: Sweep,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self { max_iters: 50, tol: 1e-6, sweep: Sweep::GaussSeidel }
    }
}

/// Gaussian mean-field posterior: means, variances and the sweep history.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanField {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `max_i |mu_i^{new} - mu_i^{old}|` after each sweep.
    pub deltas: Vec<f64>,
}

impl MeanField {
    /// Turns an unconverged result into [`Error::NonConvergence`].
    pub fn into_converged(self, tol: f64) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence { iters: self.iterations, tol, delta: self.deltas.last().copied().unwrap_or(f64::NAN) })
        }
    }
}

fn row_sums(graph: &CrfGraph, weights: &[f64]) -> Vec<f64> {
    (0..graph.len()).map(|i| weights[graph.row(i)].iter().sum()).collect()
}

/// Runs mean-field sweeps from `mu = z` until the largest update falls
/// below `tol` or `max_iters` sweeps have run. An unconverged result is
/// returned with `converged = false`; see [`MeanField::into_converged`].
pub fn mean_field_infer(z: &[f64], graph: &CrfGraph, params: &CrfParams, opts: &InferOptions) -> Result<MeanField> {
    params.validate()?;
    if z.len() != graph.len() {
        return Err(Error::ShapeMismatch(format!("{} unaries for {} nodes", z.len(), graph.len())));
    }
    let weights = graph.edge_weights(params.lambda1, params.lambda2);
    let sums = row_sums(graph, &weights);
    let w = params.w;
    let sigma2: Vec<f64> = sums.iter().map(|s| 0.5 / (1.0 + w * s)).collect();
    let mut mu = z.to_vec();
    let mut deltas = Vec::new();
    if w == 0.0 || graph.edge_count() == 0 {
        return Ok(MeanField { mu, sigma2, iterations: 0, converged: true, deltas });
    }
    let update = |i: usize, mu: &[f64]| {
        let r = graph.row(i);
        let acc: f64 = weights[r.clone()].iter().zip(r).map(|(k, e)| k * mu[graph.neighbor_at(e)]).sum();
        (z[i] + w * acc) / (1.0 + w * sums[i])
    };
    let mut converged = false;
    for _ in 0..opts.max_iters {
        let delta = match opts.sweep {
            Sweep::GaussSeidel => {
                let mut delta = 0.0f64;
                for i in 0..mu.len() {
                    let new = update(i, &mu);
                    delta = delta.max((new - mu[i]).abs());
                    mu[i] = new;
                }
                delta
            }
            Sweep::Jacobi => {
                let next: Vec<f64> = (0..mu.len()).into_par_iter().map(|i| update(i, &mu)).collect();
                let delta = next.iter().zip(&mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                mu = next;
                delta
            }
        };
        deltas.push(delta);
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(MeanField { iterations: deltas.len(), mu, sigma2, converged, deltas })
}

/// Dense solve of `(I + w (D - K)) mu = z`: the fixed point of the
/// mean-field update, at cubic cost.
pub fn exact_fixed_point(z: &[f64], graph: &CrfGraph, params: &CrfParams) -> Result<Vec<f64>> {
    params.validate()?;
    let n = graph.len();
    if z.len() != n {
        return Err(Error::ShapeMismatch(format!("{} unaries for {n} nodes", z.len())));
    }
    let weights = graph.edge_weights(params.lambda1, params.lambda2);
    let mut a = Tensor::identity(n);
    for i in 0..n {
        for e in graph.row(i) {
            let j = graph.neighbor_at(e);
            let k = params.w * weights[e];
            a.data_mut()[i * n + i] += k;
            a.data_mut()[i * n + j] -= k;
        }
    }
    let b = Tensor::new(vec![n], z.to_vec())?;
    Ok(solve_dense(&a, &b)?.into_data())
}
