use serde::{Deserialize, Serialize};

use super::{BatchNorm, Block, CenterCrop, Conv2d, ConvTranspose2d, LinearOp, Mode, Padding, Param, ResidualBlock};
use crate::numerics::{SeededRng, Tensor};
use crate::{Error, Result};

/// Encoder widths at full scale; the builder divides them by a width divisor.
pub const ENCODER_WIDTHS: [usize; 8] = [32, 64, 64, 128, 128, 256, 256, 512];
/// Decoder widths at full scale: the initial deconvolution, then one per
/// resolution doubling (the last entry repeats if more are needed).
pub const DECODER_WIDTHS: [usize; 5] = [256, 128, 64, 32, 16];
/// Height of the first decoder feature map; widths follow the target aspect.
const DECODER_SEED_HEIGHT: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv {
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
        out: usize,
        batch_norm: bool,
        slope: Option<f64>,
        bias: bool,
    },
    Deconv {
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        out: usize,
        batch_norm: bool,
        slope: Option<f64>,
        bias: bool,
    },
    /// Two shape-preserving 3x3 conv+BN+ReLU blocks with a skip connection.
    Residual,
}

impl LayerSpec {
    fn conv(kernel: (usize, usize), stride: (usize, usize), padding: Padding, out: usize, slope: f64) -> Self {
        LayerSpec::Conv { kernel, stride, padding, out, batch_norm: true, slope: Some(slope), bias: false }
    }

    fn deconv(kernel: (usize, usize), stride: (usize, usize), pad: (usize, usize), out: usize, slope: f64) -> Self {
        LayerSpec::Deconv { kernel, stride, pad, out, batch_norm: true, slope: Some(slope), bias: false }
    }
}

/// Layer list of an encoder-decoder mapping a `(time, receivers, sources)`
/// gather to a `(nz, nx)` model. The last decoder layer is the projection to
/// one channel; the output is center-cropped to `output`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: (usize, usize, usize),
    pub output: (usize, usize),
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// The standard inversion network.
    ///
    /// Encoder: two 7x1 temporal convolutions with stride (2, 1), five 3x3
    /// stride-2 convolutions (each followed by a residual block when
    /// `residual` is set), and a valid convolution that collapses what is
    /// left to a 1x1 latent vector. Decoder: a deconvolution from the latent
    /// vector to a 7-row seed map, then 4x4 stride-2 deconvolutions each
    /// followed by a 3x3 convolution until the target is covered, and a 3x3
    /// projection to one channel.
    pub fn inversion_net(input: (usize, usize, usize), output: (usize, usize), width_divisor: usize, residual: bool, slope: f64) -> Result<Self> {
        let (nt, nr, ns) = input;
        let (nz, nx) = output;
        if nt == 0 || nr == 0 || ns == 0 || nz == 0 || nx == 0 || width_divisor == 0 {
            return Err(Error::InvalidArgument(format!("network dims {input:?} -> {output:?}, divisor {width_divisor}")));
        }
        let enc: Vec<usize> = ENCODER_WIDTHS.iter().map(|w| (w / width_divisor).max(1)).collect();
        let dec: Vec<usize> = DECODER_WIDTHS.iter().map(|w| (w / width_divisor).max(1)).collect();

        let mut encoder = Vec::new();
        let (mut h, w) = (nt, nr);
        let mut w_cur = w;
        for &c in &enc[..2] {
            encoder.push(LayerSpec::conv((7, 1), (2, 1), Padding::Same, c, slope));
            h = h.div_ceil(2);
        }
        for &c in &enc[2..7] {
            encoder.push(LayerSpec::conv((3, 3), (2, 2), Padding::Same, c, slope));
            h = h.div_ceil(2);
            w_cur = w_cur.div_ceil(2);
            if residual {
                encoder.push(LayerSpec::Residual);
            }
        }
        encoder.push(LayerSpec::conv((h, w_cur), (1, 1), Padding::Valid, enc[7], slope));

        let mut doublings = 0;
        while DECODER_SEED_HEIGHT << doublings < nz {
            doublings += 1;
        }
        let seed_w = nx.div_ceil(1 << doublings);
        let mut decoder = vec![LayerSpec::deconv((DECODER_SEED_HEIGHT, seed_w), (1, 1), (0, 0), dec[0], slope)];
        for i in 0..doublings {
            let c = dec[(i + 1).min(dec.len() - 1)];
            decoder.push(LayerSpec::deconv((4, 4), (2, 2), (1, 1), c, slope));
            decoder.push(LayerSpec::conv((3, 3), (1, 1), Padding::Same, c, slope));
        }
        decoder.push(LayerSpec::Conv {
            kernel: (3, 3),
            stride: (1, 1),
            padding: Padding::Same,
            out: 1,
            batch_norm: false,
            slope: None,
            bias: true,
        });
        Ok(Self { input, output, encoder, decoder })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Stage {
    Plain(Block),
    Residual(ResidualBlock),
}

impl Stage {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Stage::Plain(b) => b.forward(x, mode),
            Stage::Residual(r) => r.forward(x, mode),
        }
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        match self {
            Stage::Plain(b) => b.backward(dy),
            Stage::Residual(r) => r.backward(dy),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Stage::Plain(b) => b.params_mut(),
            Stage::Residual(r) => r.params_mut(),
        }
    }

    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        match self {
            Stage::Plain(b) => b.batch_norms_mut(),
            Stage::Residual(r) => r.batch_norms_mut(),
        }
    }
}

/// Instantiated network. Parameters are visited in layer order, which is
/// also the optimizer slot order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    spec: NetworkSpec,
    encoder: Vec<Stage>,
    decoder: Vec<Stage>,
    head: Block,
    crop: CenterCrop,
}

fn build_stage(spec: &LayerSpec, h: usize, w: usize, c: usize, rng: &mut SeededRng) -> Result<(Stage, usize, usize, usize)> {
    let (stage, c_out) = match spec {
        LayerSpec::Conv { kernel, stride, padding, out, batch_norm, slope, bias } => {
            let conv = Conv2d::init(*kernel, c, *out, *stride, *padding, *bias, rng);
            (Stage::Plain(Block::new(LinearOp::Conv(conv), *batch_norm, *slope)), *out)
        }
        LayerSpec::Deconv { kernel, stride, pad, out, batch_norm, slope, bias } => {
            let deconv = ConvTranspose2d::init(*kernel, c, *out, *stride, *pad, *bias, rng);
            (Stage::Plain(Block::new(LinearOp::Deconv(deconv), *batch_norm, *slope)), *out)
        }
        LayerSpec::Residual => {
            let mut block = || {
                let conv = Conv2d::init((3, 3), c, c, (1, 1), Padding::Same, false, rng);
                Block::new(LinearOp::Conv(conv), true, Some(0.0))
            };
            let first = block();
            let second = block();
            (Stage::Residual(ResidualBlock::new(first, second)), c)
        }
    };
    let (oh, ow) = match &stage {
        Stage::Plain(b) => b.op.output_hw(h, w)?,
        Stage::Residual(_) => (h, w),
    };
    Ok((stage, oh, ow, c_out))
}

impl Network {
    /// Builds the network with He-initialized kernels drawn from `seed`,
    /// checking that the layer list produces a one-channel map at least as
    /// large as the output grid.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        let (mut h, mut w, mut c) = spec.input;
        let mut encoder = Vec::new();
        for l in &spec.encoder {
            let (s, oh, ow, oc) = build_stage(l, h, w, c, &mut rng)?;
            encoder.push(s);
            (h, w, c) = (oh, ow, oc);
        }
        let Some((head_spec, body)) = spec.decoder.split_last() else {
            return Err(Error::InvalidArgument("decoder needs at least a projection layer".into()));
        };
        let mut decoder = Vec::new();
        for l in body {
            let (s, oh, ow, oc) = build_stage(l, h, w, c, &mut rng)?;
            decoder.push(s);
            (h, w, c) = (oh, ow, oc);
        }
        let (head, hh, hw, hc) = build_stage(head_spec, h, w, c, &mut rng)?;
        let Stage::Plain(head) = head else {
            return Err(Error::InvalidArgument("projection layer cannot be a residual block".into()));
        };
        let (nz, nx) = spec.output;
        if hc != 1 || hh < nz || hw < nx {
            return Err(Error::IncompatibleDims(format!(
                "decoder ends at {hh}x{hw}x{hc}, target grid is {nz}x{nx}x1"
            )));
        }
        Ok(Self { crop: CenterCrop::new(nz, nx), spec, encoder, decoder, head })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (nt, nr, ns) = self.spec.input;
        match x.shape() {
            [_, h, w, c] if (*h, *w, *c) == (nt, nr, ns) => Ok(()),
            s => Err(Error::ShapeMismatch(format!("network expects (n, {nt}, {nr}, {ns}), got {s:?}"))),
        }
    }

    /// Prediction `(n, nz, nx, 1)` plus the last decoder feature map cropped
    /// to the output grid, `(n, nz, nx, c)`.
    pub fn forward_with_features(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Tensor)> {
        self.check_input(x)?;
        let mut y = x.clone();
        for s in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            y = s.forward(&y, mode)?;
        }
        let features = CenterCrop::new(self.crop.h, self.crop.w).forward(&y, false)?;
        let out = self.head.forward(&y, mode)?;
        let out = self.crop.forward(&out, mode != Mode::Eval)?;
        Ok((out, features))
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(x)?;
        let mut y = x.clone();
        for s in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            y = s.forward(&y, mode)?;
        }
        let out = self.head.forward(&y, mode)?;
        self.crop.forward(&out, mode != Mode::Eval)
    }

    /// Back-propagates `d loss / d output`, accumulating parameter gradients,
    /// and returns `d loss / d input`.
    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mut d = self.crop.backward(dy)?;
        d = self.head.backward(&d)?;
        for s in self.decoder.iter_mut().rev().chain(self.encoder.iter_mut().rev()) {
            d = s.backward(&d)?;
        }
        Ok(d)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for s in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            v.extend(s.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        let mut v = Vec::new();
        for s in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            v.extend(s.batch_norms_mut());
        }
        v.extend(self.head.batch_norms_mut());
        v
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.len()).sum()
    }

    pub fn feature_channels(&self) -> usize {
        match self.decoder.last() {
            Some(Stage::Plain(b)) => b.op.out_channels(),
            Some(Stage::Residual(r)) => r.second.op.out_channels(),
            None => match self.encoder.last() {
                Some(Stage::Plain(b)) => b.op.out_channels(),
                Some(Stage::Residual(r)) => r.second.op.out_channels(),
                None => self.spec.input.2,
            },
        }
    }
}

/// Inference in chunks of `chunk` samples, running statistics throughout.
/// Returns `(n, nz, nx)` predictions in the network's output units.
pub fn predict(network: &mut Network, seismic: &Tensor, chunk: usize) -> Result<Tensor> {
    let (n, h, w, c) = match seismic.shape() {
        [n, h, w, c] => (*n, *h, *w, *c),
        s => return Err(Error::ShapeMismatch(format!("seismic batch must be rank 4, got {s:?}"))),
    };
    let (nz, nx) = network.spec.output;
    let per = h * w * c;
    let mut out = Vec::with_capacity(n * nz * nx);
    for start in (0..n).step_by(chunk.max(1)) {
        let end = (start + chunk.max(1)).min(n);
        let x = Tensor::new(vec![end - start, h, w, c], seismic.data()[start * per..end * per].to_vec())?;
        out.extend(network.forward(&x, Mode::Eval)?.into_data());
    }
    Tensor::new(vec![n, nz, nx], out)
}
