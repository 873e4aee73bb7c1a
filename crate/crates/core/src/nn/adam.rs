use serde::{Deserialize, Serialize};

use super::Param;
use crate::numerics::Tensor;
use crate::{Error, Result};

/// Step decay: `lr = base * factor^(epoch / every)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub factor: f64,
    pub every: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { base: 5e-4, factor: 0.1, every: 15 }
    }
}

/// Learning rate for a zero-based epoch index.
pub fn lr_at_epoch(schedule: &LrSchedule, epoch: usize) -> f64 {
    let drops = epoch.checked_div(schedule.every).unwrap_or(0);
    schedule.base * schedule.factor.powi(drops as i32)
}

/// Adam moments, bias-corrected, one slot per parameter in visit order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl AdamState {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, step: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Applies one update with learning rate `lr` using each parameter's
    /// accumulated gradient. The step counter advances even when every
    /// gradient is zero.
    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.value.shape()) {
            return Err(Error::ShapeMismatch("optimizer state does not match the parameter list".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, theta) in p.value.data_mut().iter_mut().enumerate() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * g[i];
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = md[i] / c1;
                let v_hat = vd[i] / c2;
                *theta -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Param::new(Tensor::zeros(&[1]));
        p.grad = Tensor::full(&[1], 1.0);
        let mut adam = AdamState::default();
        adam.step(&mut [&mut p], 5e-4).unwrap();
        let expected = -5e-4 / (1.0 + 1e-8);
        assert!((p.value.data()[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_leaves_params_but_counts() {
        let mut p = Param::new(Tensor::full(&[3], 2.0));
        let mut adam = AdamState::default();
        adam.step(&mut [&mut p], 1e-3).unwrap();
        assert_eq!(p.value.data(), &[2.0, 2.0, 2.0]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn schedule_drops_every_fifteen_epochs() {
        let s = LrSchedule::default();
        assert_eq!(lr_at_epoch(&s, 0), 5e-4);
        assert_eq!(lr_at_epoch(&s, 14), 5e-4);
        assert!((lr_at_epoch(&s, 15) - 5e-5).abs() < 1e-18);
        assert!((lr_at_epoch(&s, 30) - 5e-6).abs() < 1e-18);
    }

    #[test]
    fn mismatched_parameter_list_rejected() {
        let mut a = Param::new(Tensor::zeros(&[2]));
        let mut b = Param::new(Tensor::zeros(&[3]));
        let mut adam = AdamState::default();
        adam.step(&mut [&mut a], 1e-3).unwrap();
        assert!(adam.step(&mut [&mut b], 1e-3).is_err());
    }
}
