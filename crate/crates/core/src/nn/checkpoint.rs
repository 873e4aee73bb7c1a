use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, Network};
use crate::geomodel::Standardizer;
use crate::Result;

/// Learned refinement settings stored next to the network weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrfSettings {
    pub window: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub w: f64,
}

/// One row of the training curve. Epoch 0 describes the untrained network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean mini-batch loss in standardized units.
    pub train_loss: f64,
    /// Validation mae in m/s; NaN when no validation split exists.
    pub val_mae: f64,
}

/// Everything needed to resume training or run inference, written with
/// bincode so a round trip is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub network: Network,
    pub optimizer: AdamState,
    pub standardizer: Standardizer,
    /// Multiplies raw gather amplitudes before they enter the network.
    pub input_scale: f64,
    /// Number of completed epochs.
    pub epoch: usize,
    /// Lowest validation mae (m/s) seen so far.
    pub best_val_mae: f64,
    pub config_hash: String,
    pub crf: Option<CrfSettings>,
    pub history: Vec<EpochStats>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = BufWriter::new(File::create(path)?);
        bincode::serialize_into(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = BufReader::new(File::open(path)?);
        Ok(bincode::deserialize_from(f)?)
    }
}
