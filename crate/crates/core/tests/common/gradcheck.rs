//! Central-difference gradient checker shared by the network tests.

use fwilab::nn::{BatchNorm, Block, CenterCrop, Conv2d, ConvTranspose2d, LeakyRelu, Mode, Network, Param, ResidualBlock};
use fwilab::{SeededRng, Tensor};

pub const H: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-6;
/// Coordinates probed per tensor; larger tensors are subsampled.
const PROBES: usize = 40;

pub trait Differentiable {
    fn fwd(&mut self, x: &Tensor) -> Tensor;
    fn bwd(&mut self, dy: &Tensor) -> Tensor;
    fn params(&mut self) -> Vec<&mut Param>;
}

pub struct Layer<T> {
    pub inner: T,
    pub mode: Mode,
}

impl Differentiable for Layer<Conv2d> {
    fn fwd(&mut self, x: &Tensor) -> Tensor {
        self.inner.forward(x, true).unwrap()
    }
    fn bwd(&mut self, dy: &Tensor) -> Tensor {
        self.inner.backward(dy).unwrap()
    }
    fn params(&mut self) -> Vec<&mut Param> {
        self.inner.params_mut()
    }
}

impl Differentiable for Layer<ConvTranspose2d> {
    fn fwd(&mut self, x: &Tensor) -> Tensor {
        self.inner.forward(x, true).unwrap()
    }
    fn bwd(&mut self, dy: &Tensor) -> Tensor {
        self.inner.backward(dy).unwrap()
    }
    fn params(&mut self) -> Vec<&mut Param> {
        self.inner.params_mut()
    }
}

impl Differentiable for Layer<BatchNorm> {
    fn fwd(&mut self, x: &Tensor) -> Tensor {
        self.inner.forward(x, self.mode).unwrap()
    }
    fn bwd(&mut self, dy: &Tensor) -> Tensor {
        self.inner.backward(dy).unwrap()
    }
    fn params(&mut self) -> Vec<&mut Param> {
        self.inner.params_mut()
    }
}

impl Differentiable for Layer<LeakyRelu> {
    fn fwd(&mut self, x: &Tensor) -> Tensor {
        self.inner.forward(x, true)
    }
    fn bwd(&mut self, dy: &Tensor) -> Tensor {
        self.inner.backward(dy).unwrap()
    }
    fn params(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

impl Differentiable for Layer<Block> {
    fn fwd(&mut self, x: &Tensor) -> Tensor {
        self.inner.forward(x, self.mode).unwrap()
    }
    fn bwd(&mut self, dy: &Tensor) -> Tensor {
        self.inner.backward(dy).unwrap()
    }
    fn params(&mut self) -> Vec<&mut Param> {
        self.inner.params_mut()
    }
}

impl Differentiable for Layer<ResidualBlock> {
    fn fwd(&mut self, x: &Tensor) -> Tensor {
        self.inner.forward(x, self.mode).unwrap()
    }
    fn bwd(&mut self, dy: &Tensor) -> Tensor {
        self.inner.backward(dy).unwrap()
    }
    fn params(&mut self) -> Vec<&mut Param> {
        self.inner.params_mut()
    }
}

impl Differentiable for Layer<CenterCrop> {
    fn fwd(&mut self, x: &Tensor) -> Tensor {
        self.inner.forward(x, true).unwrap()
    }
    fn bwd(&mut self, dy: &Tensor) -> Tensor {
        self.inner.backward(dy).unwrap()
    }
    fn params(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

impl Differentiable for Layer<Network> {
    fn fwd(&mut self, x: &Tensor) -> Tensor {
        self.inner.forward(x, self.mode).unwrap()
    }
    fn bwd(&mut self, dy: &Tensor) -> Tensor {
        self.inner.backward(dy).unwrap()
    }
    fn params(&mut self) -> Vec<&mut Param> {
        self.inner.params_mut()
    }
}

pub fn randn(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.normal())
}

fn probe_indices(len: usize, rng: &mut SeededRng) -> Vec<usize> {
    if len <= PROBES {
        (0..len).collect()
    } else {
        (0..PROBES).map(|_| rng.int_range(0, len as i64 - 1) as usize).collect()
    }
}

#[derive(Default)]
struct Tally {
    checked: usize,
    kinks: usize,
}

/// Compares an analytic derivative with central differences. A coordinate
/// whose difference quotient changes when the step is halved sits on an
/// activation kink and is counted instead of compared.
fn compare(analytic: f64, eval: &mut dyn FnMut(f64) -> f64, tally: &mut Tally, what: &str) -> Result<(), String> {
    let fd = |h: f64, eval: &mut dyn FnMut(f64) -> f64| (eval(h) - eval(-h)) / (2.0 * h);
    let d1 = fd(H, eval);
    tally.checked += 1;
    let tol = |a: f64, b: f64| REL_TOL * a.abs().max(b.abs()) + ABS_FLOOR;
    if (analytic - d1).abs() <= tol(analytic, d1) {
        return Ok(());
    }
    let d2 = fd(H / 2.0, eval);
    if (d1 - d2).abs() > tol(d1, d2) {
        tally.kinks += 1;
        return Ok(());
    }
    Err(format!("{what}: analytic {analytic:.9e} vs numeric {d1:.9e}"))
}

pub fn grad_check<L: Differentiable>(layer: &mut L, x: &Tensor, rng: &mut SeededRng) -> Result<(), String> {
    let y = layer.fwd(x);
    let r = randn(y.shape(), rng);
    layer.params().into_iter().for_each(Param::zero_grad);
    layer.fwd(x);
    let dx = layer.bwd(&r);
    if dx.shape() != x.shape() {
        return Err(format!("input grad shape {:?} vs {:?}", dx.shape(), x.shape()));
    }
    let grads: Vec<Tensor> = layer.params().iter().map(|p| p.grad.clone()).collect();
    let mut tally = Tally::default();

    for i in probe_indices(x.len(), rng) {
        let mut eval = |h: f64| {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            layer.fwd(&xp).dot(&r)
        };
        compare(dx.data()[i], &mut eval, &mut tally, &format!("input[{i}]"))?;
    }
    for (pi, g) in grads.iter().enumerate() {
        for k in probe_indices(g.len(), rng) {
            let mut eval = |h: f64| {
                let orig = layer.params()[pi].value.data()[k];
                layer.params()[pi].value.data_mut()[k] = orig + h;
                let v = layer.fwd(x).dot(&r);
                layer.params()[pi].value.data_mut()[k] = orig;
                v
            };
            compare(g.data()[k], &mut eval, &mut tally, &format!("param {pi}[{k}]"))?;
        }
    }
    if tally.kinks * 10 > tally.checked {
        return Err(format!("{} of {} probes fell on kinks", tally.kinks, tally.checked));
    }
    Ok(())
}

/// Randomizes BN affine parameters and running statistics so frozen mode is
/// not the identity.
pub fn perturb_bn(bn: &mut BatchNorm, rng: &mut SeededRng) {
    for k in 0..bn.channels() {
        bn.gamma.value.data_mut()[k] = 0.5 + rng.uniform();
        bn.beta.value.data_mut()[k] = rng.normal();
        bn.running_mean[k] = 0.3 * rng.normal();
        bn.running_var[k] = 0.5 + rng.uniform();
    }
}

