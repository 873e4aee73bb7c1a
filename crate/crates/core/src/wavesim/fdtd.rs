use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::source::ricker;
use super::{AcquisitionGeometry, GridPoint, ShotGather};
use crate::geomodel::{Family, VelocityModel};
use crate::numerics::Tensor;
use crate::{Error, Result};

// Fourth-order staggered first-derivative weights.
const C1: f64 = 9.0 / 8.0;
const C2: f64 = -1.0 / 24.0;
// Ghost cells around every field so the stencils never branch.
const GHOST: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Grid spacing in metres.
    pub dx: f64,
    /// Time step in seconds.
    pub dt: f64,
    /// Sponge thickness in cells on every side.
    pub sponge_width: usize,
    /// Cerjan damping coefficient per cell.
    pub sponge_strength: f64,
    /// Ricker centre frequency in Hz.
    pub source_freq: f64,
    pub cfl_limit: f64,
    /// Peak amplitude of the injected wavelet.
    pub source_amplitude: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dx: 10.0,
            dt: 8.0e-4,
            sponge_width: 20,
            sponge_strength: 0.02,
            source_freq: 25.0,
            cfl_limit: 0.6,
            source_amplitude: 1.0,
        }
    }
}

impl SimConfig {
    /// Default config with `dt` rounded down (to 1e-5 s) from the CFL bound
    /// for the fastest velocity `v_max`.
    pub fn for_velocity(dx: f64, v_max: f64) -> Self {
        let mut cfg = Self { dx, ..Self::default() };
        cfg.dt = (cfg.max_stable_dt(v_max) * 1e5).floor() / 1e5;
        cfg
    }

    pub fn for_family(family: Family, dx: f64) -> Self {
        Self::for_velocity(dx, family.velocity_range().1)
    }

    /// `cfl_limit * dx / (v_max * sqrt(2))`.
    pub fn max_stable_dt(&self, v_max: f64) -> f64 {
        self.cfl_limit * self.dx / (v_max * std::f64::consts::SQRT_2)
    }

    /// Source delay, 1.5 periods.
    pub fn t0(&self) -> f64 {
        1.5 / self.source_freq
    }

    /// The wavelet is injected on `[0, 2 t0]` and switched off afterwards.
    pub fn source_cutoff(&self) -> f64 {
        2.0 * self.t0()
    }

    pub fn validate_for(&self, model: &VelocityModel) -> Result<()> {
        if !(self.dx > 0.0 && self.dt > 0.0 && self.source_freq > 0.0 && self.cfl_limit > 0.0) {
            return Err(Error::InvalidArgument(format!("non-positive simulation parameter in {self:?}")));
        }
        if (model.dx() - self.dx).abs() > 1e-9 * self.dx {
            return Err(Error::InvalidArgument(format!(
                "model spacing {} differs from simulation spacing {}",
                model.dx(),
                self.dx
            )));
        }
        let limit = self.max_stable_dt(model.max_velocity());
        if self.dt > limit {
            return Err(Error::CflViolation { dt: self.dt, limit });
        }
        Ok(())
    }
}

/// Damping factor at a (possibly half-integer) padded coordinate.
fn sponge_profile(n: usize, width: usize, strength: f64, pos: f64) -> f64 {
    let w = width as f64;
    let d = (w - pos).max(pos - ((n - 1) as f64 - w)).max(0.0);
    (-(strength * d).powi(2)).exp()
}

/// Single-source wavefield stepper.
///
/// Pressure `p` sits at cell centres; `vx` at `(z, x - 1/2)` and `vz` at
/// `(z - 1/2, x)`, with one extra face on the far side so the layout is
/// mirror symmetric. All arrays carry [`GHOST`] zero cells on each side.
pub struct Simulation {
    nz: usize,
    nx: usize,
    pad: usize,
    // padded extents
    pz: usize,
    px: usize,
    kappa_dt_dx: Vec<f64>,
    p: Vec<f64>,
    p_prev: Vec<f64>,
    vx: Vec<f64>,
    vz: Vec<f64>,
    gp_z: Vec<f64>,
    gp_x: Vec<f64>,
    gv_z: Vec<f64>,
    gv_x: Vec<f64>,
    dt_dx: f64,
    src: usize,
    src_scale: f64,
    src_sum: f64,
    cfg: SimConfig,
    step: usize,
    kappa: Vec<f64>,
}

impl Simulation {
    pub fn new(model: &VelocityModel, cfg: &SimConfig, source: GridPoint) -> Result<Self> {
        cfg.validate_for(model)?;
        let (nz, nx) = model.dims();
        if source.z >= nz || source.x >= nx {
            return Err(Error::GeometryOutOfBounds(format!(
                "source ({}, {}) outside {nz}x{nx} grid",
                source.z, source.x
            )));
        }
        let pad = cfg.sponge_width;
        let (pz, px) = (nz + 2 * pad, nx + 2 * pad);
        let g = GHOST;
        // stored widths
        let p_w = px + 2 * g;
        let p_h = pz + 2 * g;
        let vx_w = px + 1 + 2 * g;
        let vz_h = pz + 1 + 2 * g;

        let dt_dx = cfg.dt / cfg.dx;
        let mut kappa = vec![0.0; p_h * p_w];
        let mut kappa_dt_dx = vec![0.0; p_h * p_w];
        for z in 0..pz {
            let mz = z.saturating_sub(pad).min(nz - 1);
            for x in 0..px {
                let mx = x.saturating_sub(pad).min(nx - 1);
                let v = model.at(mz, mx);
                let i = (z + g) * p_w + x + g;
                kappa[i] = v * v;
                kappa_dt_dx[i] = v * v * dt_dx;
            }
        }

        let s = cfg.sponge_strength;
        let gp_z = (0..pz).map(|z| sponge_profile(pz, pad, s, z as f64)).collect();
        let gp_x = (0..px).map(|x| sponge_profile(px, pad, s, x as f64)).collect();
        let gv_z = (0..=pz).map(|k| sponge_profile(pz, pad, s, k as f64 - 0.5)).collect();
        let gv_x = (0..=px).map(|k| sponge_profile(px, pad, s, k as f64 - 0.5)).collect();

        let v_src = model.at(source.z, source.x);
        let courant = v_src * cfg.dt / cfg.dx;
        Ok(Self {
            nz,
            nx,
            pad,
            pz,
            px,
            kappa_dt_dx,
            p: vec![0.0; p_h * p_w],
            p_prev: vec![0.0; p_h * p_w],
            vx: vec![0.0; p_h * vx_w],
            vz: vec![0.0; vz_h * p_w],
            gp_z,
            gp_x,
            gv_z,
            gv_x,
            dt_dx,
            src: (source.z + pad + g) * p_w + source.x + pad + g,
            src_scale: courant * courant * cfg.source_amplitude,
            src_sum: 0.0,
            cfg: cfg.clone(),
            step: 0,
            kappa,
        })
    }

    fn p_w(&self) -> usize {
        self.px + 2 * GHOST
    }

    fn vx_w(&self) -> usize {
        self.px + 1 + 2 * GHOST
    }

    /// Time of the pressure field currently held.
    pub fn time(&self) -> f64 {
        self.step as f64 * self.cfg.dt
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Pressure at a physical grid cell.
    pub fn pressure_at(&self, pt: GridPoint) -> f64 {
        self.p[(pt.z + self.pad + GHOST) * self.p_w() + pt.x + self.pad + GHOST]
    }

    /// Largest |p| over the padded domain.
    pub fn max_abs_pressure(&self) -> f64 {
        self.p.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Physical-domain pressure snapshot `(nz, nx)`.
    pub fn pressure_snapshot(&self) -> Tensor {
        let w = self.p_w();
        Tensor::from_fn(&[self.nz, self.nx], |ix| {
            self.p[(ix[0] + self.pad + GHOST) * w + ix[1] + self.pad + GHOST]
        })
    }

    /// Discrete energy at the half step `n + 1/2`:
    /// `sum |v^{n+1/2}|^2 + sum p^n p^{n+1} / kappa`.
    ///
    /// For the undamped leapfrog this quantity is conserved exactly, so with
    /// the sponge active it can only decay.
    pub fn energy(&self) -> f64 {
        let kin: f64 = self.vx.iter().chain(&self.vz).map(|v| v * v).sum();
        let pot: f64 = self
            .p
            .iter()
            .zip(&self.p_prev)
            .zip(&self.kappa)
            .filter(|(_, &k)| k > 0.0)
            .map(|((a, b), k)| a * b / k)
            .sum();
        kin + pot
    }

    /// Advances the wavefield by one `dt`.
    pub fn step(&mut self) {
        let g = GHOST;
        let (pz, px) = (self.pz, self.px);
        let p_w = self.p_w();
        let vx_w = self.vx_w();
        let a = self.dt_dx;

        // particle velocity, v^{n+1/2} = g (v^{n-1/2} - dt/dx D p^n)
        for z in 0..pz {
            let gz = self.gp_z[z];
            let prow = &self.p[(z + g) * p_w..(z + g + 1) * p_w];
            let vrow = &mut self.vx[(z + g) * vx_w..(z + g + 1) * vx_w];
            for k in 0..=px {
                // vx[k] lives at x = k - 1/2; neighbours p[k], p[k-1], p[k+1], p[k-2]
                let pc = k + g;
                let d = C1 * (prow[pc] - prow[pc - 1]) + C2 * (prow[pc + 1] - prow[pc - 2]);
                let vi = k + g;
                vrow[vi] = gz * self.gv_x[k] * (vrow[vi] - a * d);
            }
        }
        for k in 0..=pz {
            let gz = self.gv_z[k];
            let r0 = (k + g) * p_w;
            let rm1 = (k + g - 1) * p_w;
            let rp1 = (k + g + 1) * p_w;
            let rm2 = (k + g - 2) * p_w;
            for x in 0..px {
                let c = x + g;
                let d = C1 * (self.p[r0 + c] - self.p[rm1 + c]) + C2 * (self.p[rp1 + c] - self.p[rm2 + c]);
                let vi = (k + g) * p_w + c;
                self.vz[vi] = gz * self.gp_x[x] * (self.vz[vi] - a * d);
            }
        }

        // pressure, p^{n+1} = g (p^n - kappa dt/dx div v^{n+1/2})
        std::mem::swap(&mut self.p, &mut self.p_prev);
        for z in 0..pz {
            let gz = self.gp_z[z];
            let vxr = (z + g) * vx_w;
            let vz0 = (z + g) * p_w;
            let vz1 = (z + g + 1) * p_w;
            let vz2 = (z + g + 2) * p_w;
            let vzm = (z + g - 1) * p_w;
            for x in 0..px {
                let c = x + g;
                let dvx = C1 * (self.vx[vxr + c + 1] - self.vx[vxr + c])
                    + C2 * (self.vx[vxr + c + 2] - self.vx[vxr + c - 1]);
                let dvz = C1 * (self.vz[vz1 + c] - self.vz[vz0 + c]) + C2 * (self.vz[vz2 + c] - self.vz[vzm + c]);
                let i = (z + g) * p_w + c;
                self.p[i] = gz * self.gp_x[x] * (self.p_prev[i] - self.kappa_dt_dx[i] * (dvx + dvz));
            }
        }

        // Source: p gains C^2 A sum_{k<=n} w(t_k), so the second time
        // difference of p is forced by C^2 A w(t_n).
        let t = self.time();
        if t <= self.cfg.source_cutoff() {
            self.src_sum += ricker(t, self.cfg.source_freq, self.cfg.t0());
            self.p[self.src] += self.src_scale * self.src_sum;
        }
        self.step += 1;
    }
}

/// Records one shot: `(n_receivers, nt)` pressure traces, sample `n` at
/// time `n * dt`.
fn run_shot(model: &VelocityModel, cfg: &SimConfig, source: GridPoint, receivers: &[GridPoint], nt: usize) -> Result<Vec<f64>> {
    let mut sim = Simulation::new(model, cfg, source)?;
    let nr = receivers.len();
    let mut traces = vec![0.0; nr * nt];
    for n in 0..nt {
        for (r, &pt) in receivers.iter().enumerate() {
            traces[r * nt + n] = sim.pressure_at(pt);
        }
        if n + 1 < nt {
            sim.step();
        }
    }
    Ok(traces)
}

/// Simulates every source of `geom` over `model`.
///
/// Shots run in parallel; results are placed by source index so the output
/// does not depend on scheduling.
pub fn forward_model(model: &VelocityModel, geom: &AcquisitionGeometry, cfg: &SimConfig) -> Result<ShotGather> {
    let (nz, nx) = model.dims();
    geom.check_fits(nz, nx)?;
    if (geom.dt - cfg.dt).abs() > 1e-12 * cfg.dt {
        return Err(Error::InvalidArgument(format!(
            "geometry dt {} differs from simulation dt {}",
            geom.dt, cfg.dt
        )));
    }
    cfg.validate_for(model)?;
    let shots: Vec<Vec<f64>> = geom
        .sources
        .par_iter()
        .map(|&s| run_shot(model, cfg, s, &geom.receivers, geom.nt))
        .collect::<Result<_>>()?;
    let data = shots.concat();
    let tensor = Tensor::new(vec![geom.n_sources(), geom.n_receivers(), geom.nt], data)?;
    ShotGather::new(tensor, cfg.dt)
}
