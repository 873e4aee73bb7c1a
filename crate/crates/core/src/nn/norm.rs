use serde::{Deserialize, Serialize};

use super::{nhwc, Mode, Param};
use crate::numerics::Tensor;
use crate::{Error, Result};

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
enum Cache {
    /// Batch statistics were used: keep the normalized input.
    Batch { x_hat: Tensor, inv_std: Vec<f64> },
    /// Running statistics were used: the layer is affine in its input.
    Running { x_hat: Tensor, inv_std: Vec<f64> },
}

/// Per-channel batch normalization over the `(n, h, w)` axes.
///
/// Running statistics follow `running = momentum * running + (1 - momentum)
/// * batch`, using the biased batch variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    #[serde(skip)]
    cache: Option<Cache>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], 1.0).into(),
            beta: Tensor::zeros(&[channels]).into(),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, h, w, c) = nhwc(x);
        if c != self.channels() {
            return Err(Error::ShapeMismatch(format!("batch norm over {} channels, got {c}", self.channels())));
        }
        let count = n * h * w;
        let (mean, var) = match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(Error::ShapeMismatch(format!(
                        "batch statistics need at least 2 values per channel, got {count}"
                    )));
                }
                let mut mean = vec![0.0; c];
                for chunk in x.data().chunks(c) {
                    mean.iter_mut().zip(chunk).for_each(|(m, v)| *m += v);
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                let mut var = vec![0.0; c];
                for chunk in x.data().chunks(c) {
                    for ((s, v), m) in var.iter_mut().zip(chunk).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= count as f64);
                for k in 0..c {
                    self.running_mean[k] = self.momentum * self.running_mean[k] + (1.0 - self.momentum) * mean[k];
                    self.running_var[k] = self.momentum * self.running_var[k] + (1.0 - self.momentum) * var[k];
                }
                (mean, var)
            }
            Mode::Eval | Mode::Frozen => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut x_hat = x.clone();
        for chunk in x_hat.data_mut().chunks_mut(c) {
            for k in 0..c {
                chunk[k] = (chunk[k] - mean[k]) * inv_std[k];
            }
        }
        let mut y = x_hat.clone();
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for chunk in y.data_mut().chunks_mut(c) {
            for k in 0..c {
                chunk[k] = g[k] * chunk[k] + b[k];
            }
        }
        self.cache = match mode {
            Mode::Train => Some(Cache::Batch { x_hat, inv_std }),
            Mode::Frozen => Some(Cache::Running { x_hat, inv_std }),
            Mode::Eval => None,
        };
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or(Error::StaleCache)?;
        let (Cache::Batch { x_hat, inv_std } | Cache::Running { x_hat, inv_std }) = &cache;
        if dy.shape() != x_hat.shape() {
            return Err(Error::StaleCache);
        }
        let c = self.channels();
        let count = (dy.len() / c) as f64;
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for (d, xh) in dy.data().chunks(c).zip(x_hat.data().chunks(c)) {
            for k in 0..c {
                sum_dy[k] += d[k];
                sum_dy_xhat[k] += d[k] * xh[k];
            }
        }
        for k in 0..c {
            self.gamma.grad.data_mut()[k] += sum_dy_xhat[k];
            self.beta.grad.data_mut()[k] += sum_dy[k];
        }
        let g = self.gamma.value.data();
        let mut dx = dy.clone();
        match cache {
            Cache::Batch { .. } => {
                for (d, xh) in dx.data_mut().chunks_mut(c).zip(x_hat.data().chunks(c)) {
                    for k in 0..c {
                        d[k] = g[k] * inv_std[k] * (d[k] - sum_dy[k] / count - xh[k] * sum_dy_xhat[k] / count);
                    }
                }
            }
            Cache::Running { .. } => {
                for d in dx.data_mut().chunks_mut(c) {
                    for k in 0..c {
                        d[k] *= g[k] * inv_std[k];
                    }
                }
            }
        }
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
