use serde::{Deserialize, Serialize};

use crate::geomodel::Family;
use crate::{Error, Result};

/// Cell coordinates in the physical (unpadded) model grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPoint {
    pub z: usize,
    pub x: usize,
}

/// Sources and receivers on the top row plus the recording length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionGeometry {
    pub sources: Vec<GridPoint>,
    pub receivers: Vec<GridPoint>,
    pub nt: usize,
    pub dt: f64,
}

/// `n` points spread evenly over `nx` cells, each centred in its share.
fn even_positions(nx: usize, n: usize) -> Vec<usize> {
    (0..n)
        .map(|i| {
            let c = (i as f64 + 0.5) * nx as f64 / n as f64 - 0.5;
            (c.round().max(0.0) as usize).min(nx - 1)
        })
        .collect()
}

/// `n` points `interval` cells apart, the array centred on the grid.
/// Fractional positions round to the nearest cell.
fn interval_positions(nx: usize, n: usize, interval: f64) -> Result<Vec<usize>> {
    let span = interval * (n.saturating_sub(1)) as f64;
    let start = 0.5 * ((nx - 1) as f64 - span);
    let out: Vec<f64> = (0..n).map(|i| (start + i as f64 * interval).round()).collect();
    if out.iter().any(|&p| p < 0.0 || p > (nx - 1) as f64) {
        return Err(Error::GeometryOutOfBounds(format!(
            "{n} points at {interval} cells do not fit in {nx} columns"
        )));
    }
    Ok(out.into_iter().map(|p| p as usize).collect())
}

impl AcquisitionGeometry {
    /// Sources and receivers evenly distributed along the top row.
    pub fn evenly_spaced(nx: usize, n_sources: usize, n_receivers: usize, nt: usize, dt: f64) -> Self {
        let top = |x| GridPoint { z: 0, x };
        Self {
            sources: even_positions(nx, n_sources).into_iter().map(top).collect(),
            receivers: even_positions(nx, n_receivers).into_iter().map(top).collect(),
            nt,
            dt,
        }
    }

    /// Arrays with physical intervals in metres, centred on the top row.
    #[allow(clippy::too_many_arguments)]
    pub fn from_intervals(
        nx: usize,
        dx: f64,
        n_sources: usize,
        source_interval_m: f64,
        n_receivers: usize,
        receiver_interval_m: f64,
        nt: usize,
        dt: f64,
    ) -> Result<Self> {
        let top = |x| GridPoint { z: 0, x };
        Ok(Self {
            sources: interval_positions(nx, n_sources, source_interval_m / dx)?.into_iter().map(top).collect(),
            receivers: interval_positions(nx, n_receivers, receiver_interval_m / dx)?
                .into_iter()
                .map(top)
                .collect(),
            nt,
            dt,
        })
    }

    /// Full-scale acquisition for a family: grid spacing, geometry.
    ///
    /// FlatVel: 3 sources 125 m apart, 32 receivers 5 m apart, 1000 samples.
    /// CurvedVel: 3 sources 150 m apart, 150 receivers 15 m apart, 2000
    /// samples. The grid spacing is chosen so both intervals are whole cells.
    pub fn preset(family: Family, dt: f64) -> Result<(f64, Self)> {
        let nx = family.default_dims().1;
        match family {
            Family::Flat => {
                let dx = 5.0;
                Ok((dx, Self::from_intervals(nx, dx, 3, 125.0, 32, 5.0, 1000, dt)?))
            }
            Family::Curved => {
                let dx = 15.0;
                Ok((dx, Self::from_intervals(nx, dx, 3, 150.0, 150, 15.0, 2000, dt)?))
            }
        }
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn n_receivers(&self) -> usize {
        self.receivers.len()
    }

    pub fn check_fits(&self, nz: usize, nx: usize) -> Result<()> {
        for (what, pts) in [("source", &self.sources), ("receiver", &self.receivers)] {
            if let Some(p) = pts.iter().find(|p| p.z >= nz || p.x >= nx) {
                return Err(Error::GeometryOutOfBounds(format!(
                    "{what} at ({}, {}) outside {nz}x{nx} grid",
                    p.z, p.x
                )));
            }
        }
        if self.sources.is_empty() || self.receivers.is_empty() || self.nt == 0 {
            return Err(Error::GeometryOutOfBounds("geometry needs sources, receivers and samples".into()));
        }
        Ok(())
    }
}
