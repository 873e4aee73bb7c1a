use rayon::prelude::*;

use super::{mean_field_infer, CrfGraph, CrfParams, InferOptions};
use crate::geomodel::{Standardizer, VelocityModel};
use crate::numerics::Tensor;
use crate::{Error, Result};

/// One training/validation instance for CRF fitting: graph, unary
/// predictions and ground truth, all in standardized units.
#[derive(Debug, Clone)]
pub struct CrfSample {
    pub graph: CrfGraph,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
}

impl CrfSample {
    pub fn new(graph: CrfGraph, z: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if z.len() != graph.len() || y.len() != graph.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} unaries and {} targets for {} nodes",
                z.len(),
                y.len(),
                graph.len()
            )));
        }
        Ok(Self { graph, z, y })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnOptions {
    pub steps: usize,
    /// Multiplies the raw log-likelihood gradient, which grows with the
    /// number of edges; callers usually scale it by `1 / edge_count`.
    pub step_size: f64,
    pub infer: InferOptions,
}

impl Default for LearnOptions {
    fn default() -> Self {
        Self { steps: 30, step_size: 1e-3, infer: InferOptions::default() }
    }
}

/// `dL/dw = sum_i sum_{j in N_i} k_ij (mu_i^2 + sigma_i^2 - 2 mu_i y_j - y_i^2 + 2 y_i y_j)`,
/// the expected minus observed squared neighbor difference under the
/// mean-field posterior.
pub fn crf_gradient(y: &[f64], mu: &[f64], sigma2: &[f64], graph: &CrfGraph, weights: &[f64]) -> f64 {
    let mut g = 0.0;
    for i in 0..graph.len() {
        let base = mu[i] * mu[i] + sigma2[i] - y[i] * y[i];
        for e in graph.row(i) {
            let j = graph.neighbor_at(e);
            g += weights[e] * (base - 2.0 * mu[i] * y[j] + 2.0 * y[i] * y[j]);
        }
    }
    g
}

fn sample_gradient(s: &CrfSample, params: &CrfParams, first: bool, infer: &InferOptions) -> Result<f64> {
    let weights = s.graph.edge_weights(params.lambda1, params.lambda2);
    if first {
        let sigma2 = vec![0.5; s.z.len()];
        Ok(crf_gradient(&s.y, &s.z, &sigma2, &s.graph, &weights))
    } else {
        let mf = mean_field_infer(&s.z, &s.graph, params, infer)?;
        Ok(crf_gradient(&s.y, &mf.mu, &mf.sigma2, &s.graph, &weights))
    }
}

/// Projected gradient ascent on `w` for a single instance.
pub fn learn_w(y: &[f64], z: &[f64], graph: &CrfGraph, params: &CrfParams, opts: &LearnOptions) -> Result<CrfParams> {
    let sample = CrfSample::new(graph.clone(), z.to_vec(), y.to_vec())?;
    learn_w_batch(std::slice::from_ref(&sample), params, opts)
}

/// Projected gradient ascent on `w` with the gradient summed over samples
/// (in sample order). The first step evaluates the gradient at `mu = z`,
/// `sigma^2 = 0.5`; later steps use the mean-field posterior at the current
/// `w`. After each step `w` is clamped to be non-negative.
pub fn learn_w_batch(samples: &[CrfSample], params: &CrfParams, opts: &LearnOptions) -> Result<CrfParams> {
    params.validate()?;
    let mut p = *params;
    for step in 0..opts.steps {
        let grads = samples.par_iter().map(|s| sample_gradient(s, &p, step == 0, &opts.infer)).collect::<Result<Vec<f64>>>()?;
        let g: f64 = grads.iter().sum();
        p.w = (p.w + opts.step_size * g).max(0.0);
    }
    Ok(p)
}

/// Mean absolute error of the mean-field means against the targets, over
/// every node of every sample (standardized units).
pub fn validation_mae(samples: &[CrfSample], params: &CrfParams, infer: &InferOptions) -> Result<f64> {
    let per = samples
        .par_iter()
        .map(|s| {
            let mf = mean_field_infer(&s.z, &s.graph, params, infer)?;
            Ok(mf.mu.iter().zip(&s.y).map(|(m, y)| (m - y).abs()).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    let n: usize = samples.iter().map(|s| s.y.len()).sum();
    Ok(per.iter().sum::<f64>() / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub best: CrfParams,
    pub best_mae: f64,
    /// `(lambda1, lambda2, learned w, validation mae)` for every grid point.
    pub table: Vec<(f64, f64, f64, f64)>,
}

/// Exhaustive search over bandwidth pairs. For each pair `w` is learned from
/// zero on the samples and the validation mae (standardized units) of the
/// mean-field means is recorded; the lowest mae wins, ties going to the
/// lexicographically smaller `(lambda1, lambda2)`.
pub fn grid_search_hyperparams(samples: &[CrfSample], lambda1_grid: &[f64], lambda2_grid: &[f64], opts: &LearnOptions) -> Result<GridSearchResult> {
    if samples.is_empty() || lambda1_grid.is_empty() || lambda2_grid.is_empty() {
        return Err(Error::InvalidArgument("grid search needs samples and non-empty grids".into()));
    }
    let mut table = Vec::new();
    let mut best: Option<(CrfParams, f64)> = None;
    for &l1 in lambda1_grid {
        for &l2 in lambda2_grid {
            let p = learn_w_batch(samples, &CrfParams::new(0.0, l1, l2)?, opts)?;
            let mae = validation_mae(samples, &p, &opts.infer)?;
            table.push((l1, l2, p.w, mae));
            let better = match &best {
                None => true,
                Some((b, bm)) => mae < *bm || (mae == *bm && (l1, l2) < (b.lambda1, b.lambda2)),
            };
            if better {
                best = Some((p, mae));
            }
        }
    }
    let (best, best_mae) = best.expect("non-empty grid");
    Ok(GridSearchResult { best, best_mae, table })
}

/// Refines a predicted model with the CRF built on its feature map
/// `(nz, nx, c)`. Unaries are the standardized prediction; the result adds
/// the mean-field correction `mu - z` back in velocity units, so `w = 0` or
/// an edgeless window returns the prediction unchanged.
pub fn refine(pred: &VelocityModel, features: &Tensor, window: usize, params: &CrfParams, standardizer: &Standardizer, infer: &InferOptions) -> Result<VelocityModel> {
    let (nz, nx) = pred.dims();
    if features.rank() != 3 || features.shape()[..2] != [nz, nx] {
        return Err(Error::ShapeMismatch(format!("features {:?} for a {nz}x{nx} model", features.shape())));
    }
    let graph = CrfGraph::grid(features, window)?;
    let z = standardizer.standardize(pred)?.into_data();
    let mf = mean_field_infer(&z, &graph, params, infer)?;
    let mut out = pred.clone();
    for ((v, m), zi) in out.grid_mut().data_mut().iter_mut().zip(&mf.mu).zip(&z) {
        let delta = m - zi;
        if delta != 0.0 {
            *v += standardizer.std * delta;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crf::{exact_fixed_point, Sweep};

    #[test]
    fn gradient_at_perfect_unaries_is_positive() {
        let g = CrfGraph::fully_connected(vec![vec![0.0]; 2], vec![[0.0, 0.0]; 2]).unwrap();
        let y = [1.0, 3.0];
        let w = g.edge_weights(1.0, 1.0);
        // mu = y, sigma^2 = 0.5: each directed pair contributes k * sigma^2
        let grad = crf_gradient(&y, &y, &[0.5, 0.5], &g, &w);
        assert!((grad - 1.0).abs() < 1e-15);
        let p = learn_w(&y, &y, &g, &CrfParams::new(0.0, 1.0, 1.0).unwrap(), &LearnOptions { steps: 1, step_size: 0.1, ..Default::default() }).unwrap();
        assert!((p.w - 0.1).abs() < 1e-15);
    }

    #[test]
    fn projection_clamps_to_zero() {
        let g = CrfGraph::fully_connected(vec![vec![0.0]; 2], vec![[0.0, 0.0]; 2]).unwrap();
        // step 1 (mu = z) raises w; step 2 sees the smoothed posterior miss
        // the large observed difference and overshoots below zero
        let p = learn_w(&[0.0, 10.0], &[0.0, 10.0], &g, &CrfParams::new(0.5, 1.0, 1.0).unwrap(), &LearnOptions { steps: 2, step_size: 1.0, ..Default::default() }).unwrap();
        assert_eq!(p.w, 0.0);
    }

    #[test]
    fn outlier_is_pulled_toward_the_field() {
        let (nz, nx) = (7, 7);
        let features = Tensor::zeros(&[nz, nx, 2]);
        let mut grid = Tensor::full(&[nz, nx], 3000.0);
        grid.set(&[3, 3], 3000.0 + 10.0 * 200.0);
        let pred = VelocityModel::new(grid, 10.0).unwrap();
        let st = Standardizer::new(3000.0, 200.0).unwrap();
        let params = CrfParams::new(0.5, 1.0, 0.1).unwrap();
        let infer = InferOptions { max_iters: 10_000, tol: 1e-12, sweep: Sweep::GaussSeidel };
        let out = refine(&pred, &features, 3, &params, &st, &infer).unwrap();
        let centre = out.at(3, 3);
        assert!(centre < pred.at(3, 3) && centre > 3000.0);
        let graph = CrfGraph::grid(&features, 3).unwrap();
        let z = st.standardize(&pred).unwrap().into_data();
        let exact = exact_fixed_point(&z, &graph, &params).unwrap();
        for (k, e) in exact.iter().enumerate() {
            let v = out.grid().data()[k];
            assert!((v - (3000.0 + 200.0 * e)).abs() < 1e-6, "cell {k}");
        }
    }

    #[test]
    fn single_point_grid_and_determinism() {
        let f = Tensor::from_fn(&[5, 5, 1], |i| (i[0] + i[1]) as f64 * 0.1);
        let graph = CrfGraph::grid(&f, 3).unwrap();
        let y: Vec<f64> = (0..25).map(|k| ((k / 5) as f64 - 2.0) * 0.5).collect();
        let z: Vec<f64> = y.iter().enumerate().map(|(k, v)| v + if k % 2 == 0 { 0.3 } else { -0.3 }).collect();
        let samples = vec![CrfSample::new(graph, z, y).unwrap()];
        let opts = LearnOptions { steps: 10, step_size: 1e-3, ..Default::default() };
        let one = grid_search_hyperparams(&samples, &[0.5], &[0.1], &opts).unwrap();
        assert_eq!((one.best.lambda1, one.best.lambda2), (0.5, 0.1));
        let a = grid_search_hyperparams(&samples, &[0.1, 1.0, 10.0], &[0.01, 1.0], &opts).unwrap();
        let b = grid_search_hyperparams(&samples, &[0.1, 1.0, 10.0], &[0.01, 1.0], &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.table.iter().all(|row| row.3 >= a.best_mae));
    }
}
