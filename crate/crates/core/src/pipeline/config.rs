use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crf::{InferOptions, Sweep, DEFAULT_LAMBDA1_GRID, DEFAULT_LAMBDA2_GRID};
use crate::geomodel::Family;
use crate::nn::LrSchedule;
use crate::wavesim::{AcquisitionGeometry, SimConfig};
use crate::{Error, Result};

/// Where sources and receivers go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AcquisitionConfig {
    /// Evenly spread along the top row.
    Even { sources: usize, receivers: usize, nt: usize },
    /// The family's full-scale survey; overrides the grid spacing.
    Preset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Divides the full-scale channel widths.
    pub width_divisor: usize,
    pub residual: bool,
    pub leaky_slope: f64,
    pub init_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Fraction of the training set held out for validation and CRF fitting.
    pub validation_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfConfig {
    /// Odd neighborhood window.
    pub window: usize,
    pub lambda1_grid: Vec<f64>,
    pub lambda2_grid: Vec<f64>,
    /// Ascent steps during the bandwidth search.
    pub search_steps: usize,
    /// Ascent steps for the final weight.
    pub learn_steps: usize,
    /// Step per unit of the edge-averaged gradient.
    pub step_size: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Upper bound on validation models used for fitting.
    pub max_fit_models: usize,
}

impl CrfConfig {
    pub fn infer_options(&self) -> InferOptions {
        InferOptions { max_iters: self.max_iters, tol: self.tol, sweep: Sweep::GaussSeidel }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// SNR levels (dB) for the noise study.
    pub noise_levels_db: Vec<f64>,
    /// Column of the vertical profile; `None` takes the middle column.
    pub profile_offset: Option<usize>,
    /// How many test samples get raster images and profiles.
    pub dump_samples: usize,
    pub scenario_models: usize,
    pub smooth_velocity: (f64, f64),
}

/// Everything that determines an experiment's results.
///
/// `out_dir` and `workers` are excluded from [`ExperimentConfig::hash`]
/// because they do not change any output value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub family: Family,
    /// Model grid `(nz, nx)`.
    pub dims: (usize, usize),
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
    pub fault_count: usize,
    pub sim: SimConfig,
    pub acquisition: AcquisitionConfig,
    /// Optional `(receivers, nt)` subsampling applied after simulation.
    pub downsample: Option<(usize, usize)>,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub crf: CrfConfig,
    pub eval: EvalConfig,
    pub out_dir: PathBuf,
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    /// Desk-scale FlatVel experiment.
    fn default() -> Self {
        let family = Family::Flat;
        let sim = SimConfig::for_family(family, 10.0);
        Self {
            family,
            dims: (50, 50),
            train_size: 500,
            test_size: 100,
            seed: 1,
            fault_count: 1,
            sim,
            acquisition: AcquisitionConfig::Even { sources: 3, receivers: 32, nt: 500 },
            downsample: None,
            network: NetworkConfig { width_divisor: 4, residual: false, leaky_slope: 0.2, init_seed: 0 },
            training: TrainingConfig {
                epochs: 20,
                batch_size: 50,
                lr: LrSchedule::default(),
                beta1: 0.9,
                beta2: 0.999,
                adam_eps: 1e-8,
                validation_fraction: 0.1,
            },
            crf: CrfConfig {
                window: 5,
                lambda1_grid: DEFAULT_LAMBDA1_GRID.to_vec(),
                lambda2_grid: DEFAULT_LAMBDA2_GRID.to_vec(),
                search_steps: 10,
                learn_steps: 30,
                step_size: 0.5,
                max_iters: 50,
                tol: 1e-6,
                max_fit_models: 20,
            },
            eval: EvalConfig {
                noise_levels_db: vec![15.0, 20.0, 25.0, 30.0],
                profile_offset: None,
                dump_samples: 4,
                scenario_models: 10,
                smooth_velocity: (3000.0, 5000.0),
            },
            out_dir: PathBuf::from("fwilab-out"),
            workers: None,
        }
    }
}

impl ExperimentConfig {
    /// Full-scale survey for a family: preset grid and acquisition, with
    /// CurvedVel gathers subsampled to 32 receivers x 1000 samples.
    pub fn full_scale(family: Family) -> Result<Self> {
        let dims = family.default_dims();
        let (dx, _) = AcquisitionGeometry::preset(family, 1.0)?;
        let base = Self::default();
        Ok(Self {
            family,
            dims,
            sim: SimConfig::for_family(family, dx),
            acquisition: AcquisitionConfig::Preset,
            downsample: (family == Family::Curved).then_some((32, 1000)),
            network: NetworkConfig { width_divisor: 1, ..base.network },
            crf: CrfConfig { window: 21, ..base.crf },
            ..base
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.dims.0 == 0 || self.dims.1 == 0 {
            return bad(format!("grid {:?} must be non-empty", self.dims));
        }
        if self.training.batch_size < 2 {
            return bad("batch size must be at least 2 for batch statistics".into());
        }
        if !(0.0..1.0).contains(&self.training.validation_fraction) {
            return bad(format!("validation fraction {} outside [0, 1)", self.training.validation_fraction));
        }
        if self.crf.window.is_multiple_of(2) {
            return bad(format!("CRF window {} must be odd", self.crf.window));
        }
        if self.network.width_divisor == 0 {
            return bad("width divisor must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, without `out_dir` and
    /// `workers`.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("out_dir");
            obj.remove("workers");
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Grid spacing actually used for models and simulation.
    pub fn dx(&self) -> f64 {
        self.sim.dx
    }

    pub fn geometry(&self) -> Result<AcquisitionGeometry> {
        let geom = match &self.acquisition {
            AcquisitionConfig::Even { sources, receivers, nt } => {
                AcquisitionGeometry::evenly_spaced(self.dims.1, *sources, *receivers, *nt, self.sim.dt)
            }
            AcquisitionConfig::Preset => {
                let (dx, g) = AcquisitionGeometry::preset(self.family, self.sim.dt)?;
                if (dx - self.sim.dx).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "preset survey needs dx = {dx}, config has {}",
                        self.sim.dx
                    )));
                }
                g
            }
        };
        geom.check_fits(self.dims.0, self.dims.1)?;
        Ok(geom)
    }

    /// Recorded gather extent `(sources, receivers, nt)` after any
    /// subsampling.
    pub fn gather_dims(&self) -> Result<(usize, usize, usize)> {
        let g = self.geometry()?;
        Ok(match self.downsample {
            Some((r, nt)) => (g.n_sources(), r, nt),
            None => (g.n_sources(), g.n_receivers(), g.nt),
        })
    }

    pub fn profile_column(&self) -> usize {
        self.eval.profile_offset.unwrap_or(self.dims.1 / 2).min(self.dims.1 - 1)
    }
}
