//! Procedural FlatVel / CurvedVel velocity models.
//!
//! A model is built in three passes: layer interfaces (flat, or a sum of a
//! few sinusoids for the curved family), per-layer constant velocities, then
//! zero or more planar faults that translate one side of a tilted plane
//! along its dip.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::numerics::{SeededRng, Tensor};
use crate::{Error, Result};

pub const DEFAULT_DX: f64 = 10.0;
pub const FAULT_OFFSET_RANGE: (i64, i64) = (30, 70);
pub const TILT_RANGE_DEG: (f64, f64) = (25.0, 165.0);
pub const LAYER_THICKNESS_RANGE: (usize, usize) = (5, 80);
pub const DEFAULT_MAX_SLOPE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Flat,
    Curved,
}

impl Family {
    /// Inclusive velocity range in m/s.
    pub fn velocity_range(self) -> (f64, f64) {
        match self {
            Family::Flat => (3000.0, 5000.0),
            Family::Curved => (1500.0, 3500.0),
        }
    }

    /// Full-scale grid `(nz, nx)`.
    pub fn default_dims(self) -> (usize, usize) {
        match self {
            Family::Flat => (100, 100),
            Family::Curved => (100, 150),
        }
    }

    /// Inclusive layer-count range.
    pub fn layer_count_range(self) -> (usize, usize) {
        match self {
            Family::Flat => (2, 5),
            Family::Curved => (3, 5),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Family::Flat => 0,
            Family::Curved => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Family::Flat),
            1 => Ok(Family::Curved),
            t => Err(Error::Format(format!("unknown family tag {t}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Flat => "flatvel",
            Family::Curved => "curvedvel",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "flat" | "flatvel" => Ok(Family::Flat),
            "curved" | "curvedvel" => Ok(Family::Curved),
            other => Err(Error::InvalidArgument(format!("unknown family '{other}'"))),
        }
    }
}

/// 2-D grid of wave speeds in m/s, shape `(nz, nx)`, depth first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityModel {
    grid: Tensor,
    dx: f64,
}

impl VelocityModel {
    pub fn new(grid: Tensor, dx: f64) -> Result<Self> {
        if grid.rank() != 2 {
            return Err(Error::ShapeMismatch(format!("velocity grid must be 2-D, got {:?}", grid.shape())));
        }
        if !(dx > 0.0) {
            return Err(Error::InvalidArgument(format!("grid spacing must be positive, got {dx}")));
        }
        Ok(Self { grid, dx })
    }

    pub fn constant(nz: usize, nx: usize, dx: f64, velocity: f64) -> Self {
        Self { grid: Tensor::full(&[nz, nx], velocity), dx }
    }

    pub fn grid(&self) -> &Tensor {
        &self.grid
    }

    pub fn grid_mut(&mut self) -> &mut Tensor {
        &mut self.grid
    }

    pub fn into_grid(self) -> Tensor {
        self.grid
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn nz(&self) -> usize {
        self.grid.shape()[0]
    }

    pub fn nx(&self) -> usize {
        self.grid.shape()[1]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nz(), self.nx())
    }

    pub fn at(&self, z: usize, x: usize) -> f64 {
        self.grid.data()[z * self.nx() + x]
    }

    pub fn min_velocity(&self) -> f64 {
        self.grid.data().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_velocity(&self) -> f64 {
        self.grid.data().iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Vertical profile at column `x` (top to bottom).
    pub fn column(&self, x: usize) -> Vec<f64> {
        (0..self.nz()).map(|z| self.at(z, x)).collect()
    }
}

/// Everything needed to regenerate one model bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGenSpec {
    pub family: Family,
    pub dims: (usize, usize),
    pub dx: f64,
    pub n_layers: usize,
    pub fault_count: usize,
    pub fault_offset_grids: i64,
    pub tilt_deg: f64,
    /// One entry per layer; the deepest layer always extends to the bottom.
    pub layer_thickness_grids: Vec<usize>,
    pub layer_velocities: Vec<f64>,
    /// Bound on |dz/dx| of curved interfaces.
    pub max_interface_slope: f64,
    pub seed: u64,
}

impl ModelGenSpec {
    /// Draws a valid spec for `family` on a `dims` grid.
    ///
    /// Interfaces are placed so every layer is visible: each thickness lies in
    /// `[5, 80]` and the cumulative depth of the first `n_layers - 1` layers
    /// leaves at least five cells for the deepest one.
    pub fn sample(family: Family, dims: (usize, usize), fault_count: usize, seed: u64) -> Result<Self> {
        let (nz, _) = dims;
        let (lo_layers, hi_layers) = family.layer_count_range();
        let (t_lo, t_hi) = LAYER_THICKNESS_RANGE;
        let mut rng = SeededRng::new(seed).child(0);

        let max_fit = nz / t_lo;
        if max_fit < lo_layers {
            return Err(Error::SpecOutOfRange(format!(
                "depth {nz} cannot hold {lo_layers} layers of at least {t_lo} cells"
            )));
        }
        let n_layers = rng.int_range(lo_layers as i64, hi_layers.min(max_fit) as i64) as usize;

        let mut thickness = Vec::with_capacity(n_layers);
        let mut used = 0usize;
        for k in 0..n_layers {
            let remaining_after = n_layers - k - 1;
            let budget = nz - used - remaining_after * t_lo;
            let hi = t_hi.min(budget).max(t_lo);
            let t = rng.int_range(t_lo as i64, hi as i64) as usize;
            used += t;
            thickness.push(t);
        }

        let (v_lo, v_hi) = family.velocity_range();
        let velocities = (0..n_layers).map(|_| rng.uniform_range(v_lo, v_hi).round()).collect();

        Ok(Self {
            family,
            dims,
            dx: DEFAULT_DX,
            n_layers,
            fault_count,
            fault_offset_grids: rng.int_range(FAULT_OFFSET_RANGE.0, FAULT_OFFSET_RANGE.1),
            tilt_deg: rng.uniform_range(TILT_RANGE_DEG.0, TILT_RANGE_DEG.1),
            layer_thickness_grids: thickness,
            layer_velocities: velocities,
            max_interface_slope: DEFAULT_MAX_SLOPE,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::SpecOutOfRange(msg));
        let (nz, nx) = self.dims;
        if nz == 0 || nx == 0 {
            return bad(format!("grid dims {:?} must be positive", self.dims));
        }
        if !(self.dx > 0.0) {
            return bad(format!("dx {} must be positive", self.dx));
        }
        let (lo, hi) = self.family.layer_count_range();
        if self.n_layers < lo || self.n_layers > hi {
            return bad(format!("{} layers outside [{lo}, {hi}]", self.n_layers));
        }
        if self.layer_thickness_grids.len() != self.n_layers {
            return bad(format!(
                "{} thicknesses for {} layers",
                self.layer_thickness_grids.len(),
                self.n_layers
            ));
        }
        let (t_lo, t_hi) = LAYER_THICKNESS_RANGE;
        if let Some(t) = self.layer_thickness_grids.iter().find(|&&t| t < t_lo || t > t_hi) {
            return bad(format!("layer thickness {t} outside [{t_lo}, {t_hi}]"));
        }
        if self.layer_velocities.len() != self.n_layers {
            return bad(format!(
                "{} velocities for {} layers",
                self.layer_velocities.len(),
                self.n_layers
            ));
        }
        let (v_lo, v_hi) = self.family.velocity_range();
        if let Some(v) = self.layer_velocities.iter().find(|&&v| !(v >= v_lo && v <= v_hi)) {
            return bad(format!("velocity {v} outside [{v_lo}, {v_hi}]"));
        }
        let (o_lo, o_hi) = FAULT_OFFSET_RANGE;
        if self.fault_offset_grids < o_lo || self.fault_offset_grids > o_hi {
            return bad(format!("fault offset {} outside [{o_lo}, {o_hi}]", self.fault_offset_grids));
        }
        let (a_lo, a_hi) = TILT_RANGE_DEG;
        if !(self.tilt_deg >= a_lo && self.tilt_deg <= a_hi) {
            return bad(format!("tilt {} outside [{a_lo}, {a_hi}]", self.tilt_deg));
        }
        if !(self.max_interface_slope > 0.0) {
            return bad(format!("max interface slope {} must be positive", self.max_interface_slope));
        }
        Ok(())
    }
}

/// Interface `k` separates layer `k` from layer `k + 1`.
struct Interface {
    depth: f64,
    // (amplitude, angular wavenumber per cell, phase)
    terms: Vec<(f64, f64, f64)>,
}

impl Interface {
    fn depth_at(&self, x: f64) -> f64 {
        self.depth + self.terms.iter().map(|&(a, k, ph)| a * (k * x + ph).sin()).sum::<f64>()
    }

    fn max_slope(&self) -> f64 {
        self.terms.iter().map(|&(a, k, _)| a.abs() * k).sum()
    }
}

fn build_interfaces(spec: &ModelGenSpec, rng: &mut SeededRng) -> Vec<Interface> {
    let nx = spec.dims.1 as f64;
    let t = &spec.layer_thickness_grids;
    let mut depth = 0.0;
    let mut out = Vec::with_capacity(spec.n_layers.saturating_sub(1));
    for k in 0..spec.n_layers - 1 {
        depth += t[k] as f64;
        let mut iface = Interface { depth, terms: Vec::new() };
        if spec.family == Family::Curved {
            // Adjacent interfaces stay apart: |c_k| + |c_{k+1}| <= 0.9 * t_{k+1}.
            let bound = 0.45 * t[k].min(t[k + 1]) as f64;
            let n_terms = rng.int_range(1, 3) as usize;
            let mut raw: Vec<(f64, f64, f64)> = (0..n_terms)
                .map(|_| {
                    let cycles = rng.uniform_range(0.5, 2.0);
                    (rng.uniform_range(0.2, 1.0), 2.0 * PI * cycles / nx, rng.uniform_range(0.0, 2.0 * PI))
                })
                .collect();
            let amp_sum: f64 = raw.iter().map(|r| r.0).sum();
            let scale = bound * rng.uniform_range(0.5, 1.0) / amp_sum;
            raw.iter_mut().for_each(|r| r.0 *= scale);
            iface.terms = raw;
            let slope = iface.max_slope();
            if slope > spec.max_interface_slope {
                let s = spec.max_interface_slope / slope;
                iface.terms.iter_mut().for_each(|r| r.0 *= s);
            }
        }
        out.push(iface);
    }
    out
}

/// Builds the model described by `spec`. Deterministic in `spec.seed`.
pub fn generate_model(spec: &ModelGenSpec) -> Result<VelocityModel> {
    spec.validate()?;
    let (nz, nx) = spec.dims;
    let mut rng = SeededRng::new(spec.seed).child(1);
    let interfaces = build_interfaces(spec, &mut rng);

    let mut grid = Tensor::zeros(&[nz, nx]);
    {
        let data = grid.data_mut();
        for x in 0..nx {
            let depths: Vec<f64> = interfaces.iter().map(|i| i.depth_at(x as f64)).collect();
            for z in 0..nz {
                let layer = depths.iter().filter(|&&d| z as f64 >= d).count();
                data[z * nx + x] = spec.layer_velocities[layer];
            }
        }
    }

    for k in 0..spec.fault_count {
        let seg = nx as f64 / spec.fault_count as f64;
        let anchor_x = seg * (k as f64 + rng.uniform_range(0.25, 0.75));
        let anchor_z = 0.5 * nz as f64;
        grid = apply_fault(&grid, anchor_x, anchor_z, spec.tilt_deg, spec.fault_offset_grids as f64);
    }

    VelocityModel::new(grid, spec.dx)
}

/// Translates every cell on the hanging-wall side of the plane through
/// `(anchor_x, anchor_z)` with dip angle `tilt_deg` by `offset` cells along
/// the dip direction. Source coordinates falling outside the domain are
/// clamped, so the incoming cells take the adjacent layer's velocity.
fn apply_fault(grid: &Tensor, anchor_x: f64, anchor_z: f64, tilt_deg: f64, offset: f64) -> Tensor {
    let (nz, nx) = (grid.shape()[0], grid.shape()[1]);
    let theta = tilt_deg.to_radians();
    let (dir_x, dir_z) = (theta.cos(), theta.sin());
    let src = grid.data();
    let mut out = grid.clone();
    let data = out.data_mut();
    for z in 0..nz {
        for x in 0..nx {
            let side = (x as f64 - anchor_x) * dir_z - (z as f64 - anchor_z) * dir_x;
            if side <= 0.0 {
                continue;
            }
            let sx = (x as f64 - offset * dir_x).round().clamp(0.0, (nx - 1) as f64) as usize;
            let sz = (z as f64 - offset * dir_z).round().clamp(0.0, (nz - 1) as f64) as usize;
            data[z * nx + x] = src[sz * nx + sx];
        }
    }
    out
}

/// Velocity increasing linearly with depth from `v_top` to `v_bottom`; used
/// by the smooth-model generalization scenario.
pub fn smooth_gradient_model(dims: (usize, usize), dx: f64, v_top: f64, v_bottom: f64) -> VelocityModel {
    let (nz, nx) = dims;
    let denom = (nz.max(2) - 1) as f64;
    let grid = Tensor::from_fn(&[nz, nx], |ix| v_top + (v_bottom - v_top) * ix[0] as f64 / denom);
    VelocityModel { grid, dx }
}

/// Affine normalization by training-split statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) {
            return Err(Error::ZeroStd);
        }
        Ok(Self { mean, std })
    }

    /// Mean and population standard deviation over every cell of `models`.
    pub fn fit<'a>(models: impl IntoIterator<Item = &'a VelocityModel>) -> Result<Self> {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for m in models {
            for &v in m.grid().data() {
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
        if n == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        Self::new(mean, var.sqrt())
    }

    fn check(&self) -> Result<()> {
        if !(self.std > 0.0) {
            return Err(Error::ZeroStd);
        }
        Ok(())
    }

    pub fn standardize(&self, m: &VelocityModel) -> Result<Tensor> {
        self.check()?;
        Ok(m.grid().map(|v| (v - self.mean) / self.std))
    }

    pub fn destandardize(&self, t: &Tensor, dx: f64) -> Result<VelocityModel> {
        self.check()?;
        VelocityModel::new(t.map(|v| v * self.std + self.mean), dx)
    }
}

/// Index and Euclidean distance of the corpus entry closest to `query`.
/// Ties go to the lowest index.
pub fn nearest_neighbor(query: &VelocityModel, corpus: &[VelocityModel]) -> Result<(usize, f64)> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut best = (0usize, f64::INFINITY);
    for (i, cand) in corpus.iter().enumerate() {
        if cand.dims() != query.dims() {
            return Err(Error::ShapeMismatch(format!(
                "corpus entry {i} is {:?}, query is {:?}",
                cand.dims(),
                query.dims()
            )));
        }
        let d2: f64 = cand
            .grid()
            .data()
            .iter()
            .zip(query.grid().data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    Ok((best.0, best.1.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn flat_two_layer(fault_count: usize, tilt: f64, offset: i64) -> ModelGenSpec {
        ModelGenSpec {
            family: Family::Flat,
            dims: (100, 100),
            dx: 10.0,
            n_layers: 2,
            fault_count,
            fault_offset_grids: offset,
            tilt_deg: tilt,
            layer_thickness_grids: vec![30, 70],
            layer_velocities: vec![3200.0, 4600.0],
            max_interface_slope: DEFAULT_MAX_SLOPE,
            seed: 11,
        }
    }

    fn distinct(m: &VelocityModel) -> BTreeSet<u64> {
        m.grid().data().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn two_layer_flat_has_one_horizontal_interface() {
        let m = generate_model(&flat_two_layer(0, 90.0, 50)).unwrap();
        assert_eq!(distinct(&m).len(), 2);
        for x in 0..m.nx() {
            let first_deep = (0..m.nz()).find(|&z| m.at(z, x) == 4600.0).unwrap();
            assert_eq!(first_deep, 30, "column {x}");
        }
    }

    #[test]
    fn vertical_fault_displaces_interface_by_offset() {
        let m = generate_model(&flat_two_layer(1, 90.0, 50)).unwrap();
        let rows: Vec<usize> = (0..m.nx())
            .map(|x| (0..m.nz()).find(|&z| m.at(z, x) == 4600.0).unwrap())
            .collect();
        // independent pixel count: every column shows the interface at 30 or 80
        let unshifted = rows.iter().filter(|&&r| r == 30).count();
        let shifted = rows.iter().filter(|&&r| r == 80).count();
        assert_eq!(unshifted + shifted, m.nx());
        assert!(unshifted > 0 && shifted > 0);
        // and the shifted block is contiguous on one side of the plane
        let first_shift = rows.iter().position(|&r| r == 80).unwrap();
        assert!(rows[first_shift..].iter().all(|&r| r == 80));
    }

    #[test]
    fn curved_is_deterministic() {
        let spec = ModelGenSpec::sample(Family::Curved, (100, 150), 1, 99).unwrap();
        let a = generate_model(&spec).unwrap();
        let b = generate_model(&spec).unwrap();
        let bits = |m: &VelocityModel| m.grid().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn out_of_range_specs_rejected() {
        let mut s = flat_two_layer(1, 90.0, 50);
        s.fault_offset_grids = 10;
        assert!(matches!(generate_model(&s), Err(Error::SpecOutOfRange(_))));
        let mut s = flat_two_layer(1, 20.0, 50);
        s.tilt_deg = 20.0;
        assert!(matches!(generate_model(&s), Err(Error::SpecOutOfRange(_))));
        let mut s = flat_two_layer(0, 90.0, 50);
        s.layer_thickness_grids = vec![4, 96];
        assert!(matches!(generate_model(&s), Err(Error::SpecOutOfRange(_))));
        let mut s = flat_two_layer(0, 90.0, 50);
        s.layer_velocities = vec![2000.0, 4000.0];
        assert!(matches!(generate_model(&s), Err(Error::SpecOutOfRange(_))));
        let mut s = flat_two_layer(0, 90.0, 50);
        s.family = Family::Curved;
        s.layer_velocities = vec![2000.0, 3000.0];
        assert!(matches!(generate_model(&s), Err(Error::SpecOutOfRange(_))), "curved needs >= 3 layers");
    }

    #[test]
    fn standardize_examples() {
        let s = Standardizer::new(4000.0, 500.0).unwrap();
        let m = VelocityModel::constant(2, 2, 10.0, 4500.0);
        assert_eq!(s.standardize(&m).unwrap().data(), &[1.0; 4]);
        let m = VelocityModel::constant(2, 2, 10.0, 4000.0);
        assert_eq!(s.standardize(&m).unwrap().data(), &[0.0; 4]);
        assert!(matches!(Standardizer::new(1.0, 0.0), Err(Error::ZeroStd)));
        let zero = Standardizer { mean: 1.0, std: 0.0 };
        assert!(matches!(zero.standardize(&m), Err(Error::ZeroStd)));
    }

    #[test]
    fn standardize_round_trip() {
        let spec = ModelGenSpec::sample(Family::Flat, (50, 50), 1, 5).unwrap();
        let m = generate_model(&spec).unwrap();
        let s = Standardizer::fit([&m]).unwrap();
        let back = s.destandardize(&s.standardize(&m).unwrap(), m.dx()).unwrap();
        let err = back.grid().zip_map(m.grid(), |a, b| (a - b).abs()).unwrap().max_abs();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn nearest_neighbor_examples() {
        let a = VelocityModel::constant(4, 4, 10.0, 3000.0);
        let mut b = a.clone();
        b.grid_mut().set(&[1, 1], 3100.0);
        let c = VelocityModel::constant(4, 4, 10.0, 3500.0);
        assert_eq!(nearest_neighbor(&a, &[c.clone(), a.clone()]).unwrap(), (1, 0.0));
        assert_eq!(nearest_neighbor(&a, &[b.clone(), c.clone()]).unwrap().0, 0);
        // tie goes to the lower index
        assert_eq!(nearest_neighbor(&a, &[b.clone(), b]).unwrap().0, 0);
        assert!(matches!(nearest_neighbor(&a, &[]), Err(Error::EmptyCorpus)));
        let wrong = VelocityModel::constant(3, 4, 10.0, 3000.0);
        assert!(matches!(nearest_neighbor(&a, &[wrong]), Err(Error::ShapeMismatch(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn generated_models_respect_family_invariants(
            seed in any::<u64>(),
            curved in any::<bool>(),
            faults in 0usize..3,
            small in any::<bool>(),
        ) {
            let family = if curved { Family::Curved } else { Family::Flat };
            let dims = if small { (50, 50) } else { family.default_dims() };
            let spec = ModelGenSpec::sample(family, dims, faults, seed).unwrap();
            let m = generate_model(&spec).unwrap();
            let (lo, hi) = family.velocity_range();
            prop_assert_eq!(m.dims(), dims);
            prop_assert!(m.min_velocity() >= lo && m.max_velocity() <= hi);
        }

        #[test]
        fn flat_interfaces_horizontal_without_faults(seed in any::<u64>()) {
            let spec = ModelGenSpec::sample(Family::Flat, (50, 60), 0, seed).unwrap();
            let m = generate_model(&spec).unwrap();
            for z in 0..m.nz() {
                let row0 = m.at(z, 0);
                prop_assert!((0..m.nx()).all(|x| m.at(z, x) == row0));
            }
        }

        #[test]
        fn curved_interfaces_have_bounded_slope(seed in any::<u64>()) {
            let spec = ModelGenSpec::sample(Family::Curved, (100, 150), 0, seed).unwrap();
            let mut rng = SeededRng::new(spec.seed).child(1);
            for iface in build_interfaces(&spec, &mut rng) {
                prop_assert!(iface.max_slope() <= spec.max_interface_slope + 1e-12);
            }
        }
    }
}
