use serde::{Deserialize, Serialize};

use crate::numerics::{SeededRng, Tensor};
use crate::{Error, Result};

/// Pressure traces `(n_sources, n_receivers, nt)` sampled every `dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotGather {
    data: Tensor,
    dt: f64,
}

impl ShotGather {
    pub fn new(data: Tensor, dt: f64) -> Result<Self> {
        if data.rank() != 3 {
            return Err(Error::ShapeMismatch(format!("gather must be 3-D, got {:?}", data.shape())));
        }
        if !data.all_finite() {
            return Err(Error::InvalidArgument("gather contains non-finite samples".into()));
        }
        Ok(Self { data, dt })
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn into_data(self) -> Tensor {
        self.data
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `(n_sources, n_receivers, nt)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.data.shape();
        (s[0], s[1], s[2])
    }

    pub fn trace(&self, source: usize, receiver: usize) -> &[f64] {
        let (_, nr, nt) = self.dims();
        let off = (source * nr + receiver) * nt;
        &self.data.data()[off..off + nt]
    }

    /// Mean squared amplitude over the whole gather.
    pub fn power(&self) -> f64 {
        self.data.data().iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64
    }
}

/// Adds white Gaussian noise with variance `P_signal / 10^(snr_db / 10)`.
///
/// `snr_db = +inf` means clean and returns the input unchanged.
pub fn add_noise(x: &ShotGather, snr_db: f64, rng: &mut SeededRng) -> Result<ShotGather> {
    if snr_db == f64::INFINITY {
        return Ok(x.clone());
    }
    if snr_db.is_nan() {
        return Err(Error::InvalidArgument("snr must not be NaN".into()));
    }
    let p_signal = x.power();
    if p_signal == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let sigma = (p_signal / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut data = x.data.clone();
    data.data_mut().iter_mut().for_each(|v| *v += sigma * rng.normal());
    ShotGather::new(data, x.dt)
}

/// Picks `target` of `n` indices as `floor(i * n / target)`, which spreads
/// the selection evenly even when `n / target` is not an integer.
fn pick_indices(n: usize, target: usize) -> Vec<usize> {
    (0..target).map(|i| i * n / target).collect()
}

/// Uniform-stride decimation in the receiver and time axes. Selected
/// samples are copied exactly.
pub fn downsample(x: &ShotGather, target_receivers: usize, target_nt: usize) -> Result<ShotGather> {
    let (ns, nr, nt) = x.dims();
    if target_receivers == 0 || target_nt == 0 || target_receivers > nr || target_nt > nt {
        return Err(Error::IncompatibleDims(format!(
            "cannot subsample ({nr}, {nt}) to ({target_receivers}, {target_nt})"
        )));
    }
    let rec = pick_indices(nr, target_receivers);
    let time = pick_indices(nt, target_nt);
    let src = x.data.data();
    let mut out = Vec::with_capacity(ns * target_receivers * target_nt);
    for s in 0..ns {
        for &r in &rec {
            let base = (s * nr + r) * nt;
            out.extend(time.iter().map(|&t| src[base + t]));
        }
    }
    let dt = x.dt * nt as f64 / target_nt as f64;
    ShotGather::new(Tensor::new(vec![ns, target_receivers, target_nt], out)?, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gaussian_sample;

    fn random_gather(shape: [usize; 3], seed: u64) -> ShotGather {
        let t = gaussian_sample(&mut SeededRng::new(seed), &shape, 0.0, 1.0).unwrap();
        ShotGather::new(t, 1e-3).unwrap()
    }

    #[test]
    fn infinite_snr_is_identity() {
        let g = random_gather([1, 4, 16], 1);
        assert_eq!(add_noise(&g, f64::INFINITY, &mut SeededRng::new(0)).unwrap(), g);
    }

    #[test]
    fn zero_gather_rejected() {
        let g = ShotGather::new(Tensor::zeros(&[1, 2, 3]), 1e-3).unwrap();
        assert!(matches!(add_noise(&g, 20.0, &mut SeededRng::new(0)), Err(Error::ZeroSignal)));
    }

    #[test]
    fn measured_snr_close_to_request() {
        // 1e6 samples: relative std of the noise-power estimate is
        // sqrt(2/n) ~ 0.0014, i.e. ~0.006 dB, far inside 0.5 dB.
        let g = random_gather([1, 1000, 1000], 3);
        for snr in [15.0, 20.0, 25.0, 30.0] {
            let noisy = add_noise(&g, snr, &mut SeededRng::new(9)).unwrap();
            let noise_power = noisy
                .data()
                .data()
                .iter()
                .zip(g.data().data())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / g.data().len() as f64;
            let measured = 10.0 * (g.power() / noise_power).log10();
            assert!((measured - snr).abs() < 0.5, "requested {snr}, measured {measured}");
            if snr == 20.0 {
                assert!((noise_power / (g.power() / 100.0) - 1.0).abs() < 0.01);
            }
        }
    }

    #[test]
    fn curved_to_flat_dims() {
        let g = random_gather([3, 150, 2000], 4);
        let d = downsample(&g, 32, 1000).unwrap();
        assert_eq!(d.dims(), (3, 32, 1000));
        for s in 0..3 {
            for (i, r) in pick_indices(150, 32).into_iter().enumerate() {
                for j in (0..1000).step_by(97) {
                    assert_eq!(d.trace(s, i)[j], g.trace(s, r)[2 * j]);
                }
            }
        }
        let idx = pick_indices(150, 32);
        assert_eq!(idx[0], 0);
        assert!(*idx.last().unwrap() >= 140, "coverage reaches the far end");
        assert!((d.dt() - 2e-3).abs() < 1e-15);
    }

    #[test]
    fn identity_when_dims_match() {
        let g = random_gather([2, 8, 20], 5);
        assert_eq!(downsample(&g, 8, 20).unwrap(), g);
    }

    #[test]
    fn upsampling_rejected() {
        let g = random_gather([1, 8, 20], 6);
        assert!(matches!(downsample(&g, 9, 20), Err(Error::IncompatibleDims(_))));
        assert!(matches!(downsample(&g, 8, 0), Err(Error::IncompatibleDims(_))));
    }
}
