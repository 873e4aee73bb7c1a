use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;
use crate::{Error, Result};

/// `x` for `x >= 0`, `alpha * x` otherwise. `alpha = 0` is a plain ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakyRelu {
    pub alpha: f64,
    #[serde(skip)]
    cache: Option<Tensor>,
}

impl LeakyRelu {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, cache: None }
    }

    pub fn apply(&self, x: f64) -> f64 {
        if x >= 0.0 {
            x
        } else {
            self.alpha * x
        }
    }

    pub fn forward(&mut self, x: &Tensor, cache: bool) -> Tensor {
        self.cache = cache.then(|| x.clone());
        x.map(|v| self.apply(v))
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self.cache.take().ok_or(Error::StaleCache)?;
        if x.shape() != dy.shape() {
            return Err(Error::StaleCache);
        }
        let alpha = self.alpha;
        x.zip_map(dy, |v, d| if v >= 0.0 { d } else { alpha * d })
    }
}
