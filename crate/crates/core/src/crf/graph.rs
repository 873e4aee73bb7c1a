use crate::numerics::Tensor;
use crate::{Error, Result};

/// Similarity `exp(-lambda1 |I_i - I_j| - lambda2 |p_i - p_j|)` with
/// Euclidean norms, for feature vectors `I` and positions `p`.
pub fn kernel(fi: &[f64], fj: &[f64], pi: [f64; 2], pj: [f64; 2], lambda1: f64, lambda2: f64) -> f64 {
    let df = fi.iter().zip(fj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let dp = ((pi[0] - pj[0]).powi(2) + (pi[1] - pj[1]).powi(2)).sqrt();
    (-lambda1 * df - lambda2 * dp).exp()
}

/// Nodes with features, positions and a symmetric neighbor structure stored
/// as compressed rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfGraph {
    channels: usize,
    features: Vec<f64>,
    positions: Vec<[f64; 2]>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl CrfGraph {
    /// Grid graph over an `(nz, nx, c)` feature map: every cell is joined to
    /// all cells within the `window x window` square centered on it, and
    /// positions are grid indices `(row, col)`.
    pub fn grid(features: &Tensor, window: usize) -> Result<Self> {
        let (nz, nx, c) = match features.shape() {
            [nz, nx, c] => (*nz, *nx, *c),
            s => return Err(Error::ShapeMismatch(format!("feature map must be (nz, nx, c), got {s:?}"))),
        };
        if window.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("CRF window must be odd, got {window}")));
        }
        let r = (window / 2) as isize;
        let mut offsets = Vec::with_capacity(nz * nx + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for i in 0..nz as isize {
            for j in 0..nx as isize {
                for a in (i - r).max(0)..=(i + r).min(nz as isize - 1) {
                    for b in (j - r).max(0)..=(j + r).min(nx as isize - 1) {
                        if (a, b) != (i, j) {
                            neighbors.push(a as usize * nx + b as usize);
                        }
                    }
                }
                offsets.push(neighbors.len());
            }
        }
        let positions = (0..nz * nx).map(|k| [(k / nx) as f64, (k % nx) as f64]).collect();
        Ok(Self { channels: c, features: features.data().to_vec(), positions, offsets, neighbors })
    }

    /// Arbitrary graph from per-node neighbor lists; adjacency must be
    /// symmetric and free of self loops.
    pub fn from_neighbors(features: Vec<Vec<f64>>, positions: Vec<[f64; 2]>, neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = features.len();
        if n == 0 || positions.len() != n || neighbors.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{n} feature vectors, {} positions, {} neighbor lists",
                positions.len(),
                neighbors.len()
            )));
        }
        let channels = features[0].len();
        if features.iter().any(|f| f.len() != channels) {
            return Err(Error::ShapeMismatch("feature vectors differ in length".into()));
        }
        for (i, list) in neighbors.iter().enumerate() {
            for &j in list {
                if j >= n || j == i || !neighbors[j].contains(&i) {
                    return Err(Error::InvalidArgument(format!("edge {i} -> {j} is not a symmetric non-self edge")));
                }
            }
        }
        let mut offsets = vec![0];
        let mut flat = Vec::new();
        for list in &neighbors {
            flat.extend_from_slice(list);
            offsets.push(flat.len());
        }
        Ok(Self { channels, features: features.concat(), positions, offsets, neighbors: flat })
    }

    /// Every node joined to every other node.
    pub fn fully_connected(features: Vec<Vec<f64>>, positions: Vec<[f64; 2]>) -> Result<Self> {
        let n = features.len();
        let neighbors = (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect();
        Self::from_neighbors(features, positions, neighbors)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    pub fn position(&self, i: usize) -> [f64; 2] {
        self.positions[i]
    }

    pub(crate) fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub(crate) fn neighbor_at(&self, e: usize) -> usize {
        self.neighbors[e]
    }

    /// Kernel value for every stored edge, aligned with the row layout.
    pub fn edge_weights(&self, lambda1: f64, lambda2: f64) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.neighbors.len());
        for i in 0..self.len() {
            for &j in self.neighbors(i) {
                w.push(kernel(self.feature(i), self.feature(j), self.position(i), self.position(j), lambda1, lambda2));
            }
        }
        w
    }
}
