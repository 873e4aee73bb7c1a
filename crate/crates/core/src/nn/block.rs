use serde::{Deserialize, Serialize};

use super::{nhwc, BatchNorm, Conv2d, ConvTranspose2d, LeakyRelu, Mode, Param};
use crate::numerics::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LinearOp {
    Conv(Conv2d),
    Deconv(ConvTranspose2d),
}

impl LinearOp {
    fn forward(&mut self, x: &Tensor, cache: bool) -> Result<Tensor> {
        match self {
            LinearOp::Conv(c) => c.forward(x, cache),
            LinearOp::Deconv(d) => d.forward(x, cache),
        }
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        match self {
            LinearOp::Conv(c) => c.backward(dy),
            LinearOp::Deconv(d) => d.backward(dy),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            LinearOp::Conv(c) => c.params_mut(),
            LinearOp::Deconv(d) => d.params_mut(),
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match self {
            LinearOp::Conv(c) => c.output_hw(h, w),
            LinearOp::Deconv(d) => d.output_hw(h, w),
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            LinearOp::Conv(c) => c.channels().1,
            LinearOp::Deconv(d) => d.channels().1,
        }
    }
}

/// Convolution (or transposed convolution), then optional batch norm, then
/// optional leaky ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub op: LinearOp,
    pub bn: Option<BatchNorm>,
    pub act: Option<LeakyRelu>,
}

impl Block {
    pub fn new(op: LinearOp, batch_norm: bool, slope: Option<f64>) -> Self {
        let bn = batch_norm.then(|| BatchNorm::new(op.out_channels()));
        Self { op, bn, act: slope.map(LeakyRelu::new) }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let cache = mode != Mode::Eval;
        let mut y = self.op.forward(x, cache)?;
        if let Some(bn) = &mut self.bn {
            y = bn.forward(&y, mode)?;
        }
        if let Some(act) = &mut self.act {
            y = act.forward(&y, cache);
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mut d = match &mut self.act {
            Some(act) => act.backward(dy)?,
            None => dy.clone(),
        };
        if let Some(bn) = &mut self.bn {
            d = bn.backward(&d)?;
        }
        self.op.backward(&d)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.op.params_mut();
        if let Some(bn) = &mut self.bn {
            v.extend(bn.params_mut());
        }
        v
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        self.bn.iter_mut().collect()
    }
}

/// `y = x + F'(F(x))` with two shape-preserving blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub first: Block,
    pub second: Block,
}

impl ResidualBlock {
    pub fn new(first: Block, second: Block) -> Self {
        Self { first, second }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let inner = self.first.forward(x, mode)?;
        let inner = self.second.forward(&inner, mode)?;
        if inner.shape() != x.shape() {
            return Err(Error::ShapeMismatch(format!(
                "residual branch maps {:?} to {:?}",
                x.shape(),
                inner.shape()
            )));
        }
        x.zip_map(&inner, |a, b| a + b)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let d = self.second.backward(dy)?;
        let d = self.first.backward(&d)?;
        dy.zip_map(&d, |a, b| a + b)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.first.params_mut();
        v.extend(self.second.params_mut());
        v
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        let mut v = self.first.batch_norms_mut();
        v.extend(self.second.batch_norms_mut());
        v
    }
}

/// Crops the spatial axes to `(h, w)` around the center; an odd surplus
/// drops the extra row/column at the bottom/right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterCrop {
    pub h: usize,
    pub w: usize,
    #[serde(skip)]
    cache: Option<Vec<usize>>,
}

impl CenterCrop {
    pub fn new(h: usize, w: usize) -> Self {
        Self { h, w, cache: None }
    }

    fn offsets(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h < self.h || w < self.w {
            return Err(Error::ShapeMismatch(format!("cannot crop {h}x{w} to {}x{}", self.h, self.w)));
        }
        Ok(((h - self.h) / 2, (w - self.w) / 2))
    }

    pub fn forward(&mut self, x: &Tensor, cache: bool) -> Result<Tensor> {
        let (n, h, w, c) = nhwc(x);
        let (oy, ox) = self.offsets(h, w)?;
        let mut out = Vec::with_capacity(n * self.h * self.w * c);
        for s in 0..n {
            for i in 0..self.h {
                let start = ((s * h + i + oy) * w + ox) * c;
                out.extend_from_slice(&x.data()[start..start + self.w * c]);
            }
        }
        self.cache = cache.then(|| x.shape().to_vec());
        Tensor::new(vec![n, self.h, self.w, c], out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let shape = self.cache.take().ok_or(Error::StaleCache)?;
        let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
        if dy.shape() != [n, self.h, self.w, c] {
            return Err(Error::StaleCache);
        }
        let (oy, ox) = self.offsets(h, w)?;
        let mut dx = Tensor::zeros(&shape);
        for s in 0..n {
            for i in 0..self.h {
                let dst = ((s * h + i + oy) * w + ox) * c;
                let src = ((s * self.h + i) * self.w) * c;
                dx.data_mut()[dst..dst + self.w * c].copy_from_slice(&dy.data()[src..src + self.w * c]);
            }
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Padding;
    use crate::numerics::SeededRng;

    #[test]
    fn identity_conv_block_passes_positive_input() {
        let conv = Conv2d::new(Tensor::full(&[1, 1, 1, 1], 1.0), None, (1, 1), Padding::Same).unwrap();
        let mut block = Block::new(LinearOp::Conv(conv), true, Some(0.2));
        block.bn.as_mut().unwrap().eps = 0.0;
        let x = Tensor::new(vec![1, 2, 2, 1], vec![0.1, 1.0, 2.5, 4.0]).unwrap();
        assert_eq!(block.forward(&x, Mode::Eval).unwrap(), x);
    }

    #[test]
    fn zero_residual_branch_is_identity() {
        let mut rng = SeededRng::new(2);
        let zero = |c| Conv2d::new(Tensor::zeros(&[3, 3, c, c]), None, (1, 1), Padding::Same).unwrap();
        let mut res = ResidualBlock::new(
            Block::new(LinearOp::Conv(zero(3)), true, Some(0.0)),
            Block::new(LinearOp::Conv(zero(3)), true, Some(0.0)),
        );
        let x = Tensor::from_fn(&[2, 5, 4, 3], |_| rng.normal());
        assert_eq!(res.forward(&x, Mode::Eval).unwrap(), x);
    }

    #[test]
    fn crop_takes_the_center() {
        let x = Tensor::from_fn(&[1, 5, 6, 1], |i| (i[1] * 10 + i[2]) as f64);
        let mut crop = CenterCrop::new(3, 3);
        let y = crop.forward(&x, true).unwrap();
        assert_eq!(y.data(), &[11.0, 12.0, 13.0, 21.0, 22.0, 23.0, 31.0, 32.0, 33.0]);
        let dx = crop.backward(&y).unwrap();
        assert_eq!(dx.sum(), y.sum());
        assert!(CenterCrop::new(7, 1).forward(&x, false).is_err());
    }
}
