use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{nhwc, Param};
use crate::numerics::{SeededRng, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    /// Output extent `ceil(in / stride)`; any odd pad cell goes to the
    /// bottom/right.
    Same,
    Valid,
    /// Symmetric zero padding `(rows, cols)`.
    Explicit(usize, usize),
}

/// Index bookkeeping shared by a convolution and its transpose.
///
/// `h, w` is the extent of the "wide" side (conv input / deconv output) and
/// `oh, ow` the extent of the strided side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pt: usize,
    pub pl: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(h: usize, w: usize, kernel: (usize, usize), stride: (usize, usize), padding: Padding) -> Result<Self> {
        let (kh, kw) = kernel;
        let (sh, sw) = stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return Err(Error::ShapeMismatch(format!("kernel {kernel:?} and stride {stride:?} must be positive")));
        }
        let (oh, ow, pt, pl) = match padding {
            Padding::Valid => {
                if h < kh || w < kw {
                    return Err(Error::ShapeMismatch(format!("valid {kh}x{kw} conv on {h}x{w} input")));
                }
                ((h - kh) / sh + 1, (w - kw) / sw + 1, 0, 0)
            }
            Padding::Same => {
                let oh = h.div_ceil(sh);
                let ow = w.div_ceil(sw);
                let th = ((oh - 1) * sh + kh).saturating_sub(h);
                let tw = ((ow - 1) * sw + kw).saturating_sub(w);
                (oh, ow, th / 2, tw / 2)
            }
            Padding::Explicit(ph, pw) => {
                if h + 2 * ph < kh || w + 2 * pw < kw {
                    return Err(Error::ShapeMismatch(format!("{kh}x{kw} conv on padded {h}x{w} input")));
                }
                ((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1, ph, pw)
            }
        };
        Ok(Self { h, w, kh, kw, sh, sw, pt, pl, oh, ow })
    }

    /// Geometry of a transposed convolution taking an `ih x iw` input.
    pub fn transposed(ih: usize, iw: usize, kernel: (usize, usize), stride: (usize, usize), pad: (usize, usize)) -> Result<Self> {
        let (kh, kw) = kernel;
        let (sh, sw) = stride;
        let h = ((ih - 1) * sh + kh).checked_sub(2 * pad.0);
        let w = ((iw - 1) * sw + kw).checked_sub(2 * pad.1);
        match (h, w) {
            (Some(h), Some(w)) if h > 0 && w > 0 => {
                let g = Self::new(h, w, kernel, stride, Padding::Explicit(pad.0, pad.1))?;
                debug_assert_eq!((g.oh, g.ow), (ih, iw));
                Ok(g)
            }
            _ => Err(Error::ShapeMismatch(format!("transposed conv pad {pad:?} too large for {kernel:?}"))),
        }
    }

    fn patch_len(&self, channels: usize) -> usize {
        self.kh * self.kw * channels
    }

    /// Unfolds one `(h, w, a)` sample into `(oh * ow, kh * kw * a)` rows.
    fn im2col(&self, x: &[f64], a: usize, cols: &mut [f64]) {
        let k = self.patch_len(a);
        for i in 0..self.oh {
            for j in 0..self.ow {
                let row = &mut cols[(i * self.ow + j) * k..(i * self.ow + j + 1) * k];
                for m in 0..self.kh {
                    let y = (i * self.sh + m) as isize - self.pt as isize;
                    for n in 0..self.kw {
                        let dst = &mut row[(m * self.kw + n) * a..(m * self.kw + n + 1) * a];
                        let xx = (j * self.sw + n) as isize - self.pl as isize;
                        if y < 0 || xx < 0 || y >= self.h as isize || xx >= self.w as isize {
                            dst.fill(0.0);
                        } else {
                            let off = (y as usize * self.w + xx as usize) * a;
                            dst.copy_from_slice(&x[off..off + a]);
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatter-adds rows back onto the image.
    fn col2im(&self, cols: &[f64], a: usize, x: &mut [f64]) {
        let k = self.patch_len(a);
        for i in 0..self.oh {
            for j in 0..self.ow {
                let row = &cols[(i * self.ow + j) * k..(i * self.ow + j + 1) * k];
                for m in 0..self.kh {
                    let y = (i * self.sh + m) as isize - self.pt as isize;
                    if y < 0 || y >= self.h as isize {
                        continue;
                    }
                    for n in 0..self.kw {
                        let xx = (j * self.sw + n) as isize - self.pl as isize;
                        if xx < 0 || xx >= self.w as isize {
                            continue;
                        }
                        let off = (y as usize * self.w + xx as usize) * a;
                        let src = &row[(m * self.kw + n) * a..(m * self.kw + n + 1) * a];
                        for (d, s) in x[off..off + a].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

/// `c (m x n) = alpha * a (m x k) * b (k x n) + beta * c`, with explicit
/// row/column strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, beta: f64, c: &mut [f64]) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the slices cover every index reachable through the given
    // dimensions and strides (checked by the callers' construction) and `c`
    // does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn kernel_dims(kernel: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match kernel.shape() {
        [kh, kw, a, b] => Ok((*kh, *kw, *a, *b)),
        s => Err(Error::ShapeMismatch(format!("kernel must be (kh, kw, c_in, c_out), got {s:?}"))),
    }
}

/// Strided cross-correlation `(n, h, w, a) -> (n, oh, ow, b)` with kernel
/// `(kh, kw, a, b)`.
pub fn conv2d(x: &Tensor, kernel: &Tensor, geom: &ConvGeom) -> Result<Tensor> {
    let (n, h, w, a) = nhwc(x);
    let (kh, kw, ka, b) = kernel_dims(kernel)?;
    if (h, w, kh, kw) != (geom.h, geom.w, geom.kh, geom.kw) || a != ka {
        return Err(Error::ShapeMismatch(format!(
            "conv2d input {:?} / kernel {:?} disagree with geometry {geom:?}",
            x.shape(),
            kernel.shape()
        )));
    }
    let k = geom.patch_len(a);
    let (in_len, out_len) = (h * w * a, geom.oh * geom.ow * b);
    let mut out = vec![0.0; n * out_len];
    out.par_chunks_mut(out_len).zip(x.data().par_chunks(in_len)).for_each(|(o, xs)| {
        let mut cols = vec![0.0; geom.oh * geom.ow * k];
        geom.im2col(xs, a, &mut cols);
        gemm(geom.oh * geom.ow, k, b, &cols, k, 1, kernel.data(), b, 1, 0.0, o);
    });
    Tensor::new(vec![n, geom.oh, geom.ow, b], out)
}

/// Adjoint of [`conv2d`] with respect to its input:
/// `(n, oh, ow, b) -> (n, h, w, a)`. This is the transposed convolution.
pub fn conv2d_transpose(y: &Tensor, kernel: &Tensor, geom: &ConvGeom) -> Result<Tensor> {
    let (n, oh, ow, b) = nhwc(y);
    let (kh, kw, a, kb) = kernel_dims(kernel)?;
    if (oh, ow, kh, kw) != (geom.oh, geom.ow, geom.kh, geom.kw) || b != kb {
        return Err(Error::ShapeMismatch(format!(
            "conv2d_transpose input {:?} / kernel {:?} disagree with geometry {geom:?}",
            y.shape(),
            kernel.shape()
        )));
    }
    let k = geom.patch_len(a);
    let (in_len, out_len) = (oh * ow * b, geom.h * geom.w * a);
    let mut out = vec![0.0; n * out_len];
    out.par_chunks_mut(out_len).zip(y.data().par_chunks(in_len)).for_each(|(o, ys)| {
        let mut cols = vec![0.0; oh * ow * k];
        // cols = y * K^T ; K is (k x b) row-major, so K^T has strides (1, b)
        gemm(oh * ow, b, k, ys, b, 1, kernel.data(), 1, b, 0.0, &mut cols);
        geom.col2im(&cols, a, o);
    });
    Tensor::new(vec![n, geom.h, geom.w, a], out)
}

/// Gradient of `<conv2d(x, K), dy>` with respect to `K`, summed over the
/// batch in sample order.
pub fn conv2d_kernel_grad(x: &Tensor, dy: &Tensor, geom: &ConvGeom, kernel_shape: &[usize]) -> Result<Tensor> {
    let (n, h, w, a) = nhwc(x);
    let (dn, oh, ow, b) = nhwc(dy);
    if n != dn || (h, w, oh, ow) != (geom.h, geom.w, geom.oh, geom.ow) || kernel_shape != [geom.kh, geom.kw, a, b] {
        return Err(Error::ShapeMismatch(format!(
            "kernel grad: x {:?}, dy {:?}, kernel {kernel_shape:?}, geometry {geom:?}",
            x.shape(),
            dy.shape()
        )));
    }
    let k = geom.patch_len(a);
    let mut grad = vec![0.0; k * b];
    let mut cols = vec![0.0; oh * ow * k];
    for s in 0..n {
        let xs = &x.data()[s * h * w * a..(s + 1) * h * w * a];
        let ys = &dy.data()[s * oh * ow * b..(s + 1) * oh * ow * b];
        geom.im2col(xs, a, &mut cols);
        // grad += cols^T * dy ; cols is (oh*ow x k) row-major
        gemm(k, oh * ow, b, &cols, 1, k, ys, b, 1, 1.0, &mut grad);
    }
    Tensor::new(kernel_shape.to_vec(), grad)
}

fn he_normal(shape: &[usize], fan_in: usize, rng: &mut SeededRng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| std * rng.normal())
}

fn add_bias(out: &mut Tensor, bias: &Tensor) {
    let c = bias.len();
    for chunk in out.data_mut().chunks_mut(c) {
        for (o, b) in chunk.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
}

fn bias_grad(dy: &Tensor, c: usize) -> Vec<f64> {
    let mut g = vec![0.0; c];
    for chunk in dy.data().chunks(c) {
        for (acc, v) in g.iter_mut().zip(chunk) {
            *acc += v;
        }
    }
    g
}

/// Plain 2-D convolution, kernel `(kh, kw, c_in, c_out)`, optional bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub kernel: Param,
    pub bias: Option<Param>,
    pub stride: (usize, usize),
    pub padding: Padding,
    #[serde(skip)]
    cache: Option<(Tensor, ConvGeom)>,
}

impl Conv2d {
    pub fn new(kernel: Tensor, bias: Option<Tensor>, stride: (usize, usize), padding: Padding) -> Result<Self> {
        let (_, _, _, b) = kernel_dims(&kernel)?;
        if let Some(bias) = &bias {
            if bias.len() != b {
                return Err(Error::ShapeMismatch(format!("bias of {} for {b} output channels", bias.len())));
            }
        }
        Ok(Self { kernel: kernel.into(), bias: bias.map(Param::new), stride, padding, cache: None })
    }

    /// He-initialized kernel, zero bias when requested.
    pub fn init(kernel: (usize, usize), c_in: usize, c_out: usize, stride: (usize, usize), padding: Padding, bias: bool, rng: &mut SeededRng) -> Self {
        let k = he_normal(&[kernel.0, kernel.1, c_in, c_out], kernel.0 * kernel.1 * c_in, rng);
        let b = bias.then(|| Tensor::zeros(&[c_out]));
        Self::new(k, b, stride, padding).expect("consistent shapes")
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        let s = self.kernel.value.shape();
        (s[0], s[1])
    }

    pub fn channels(&self) -> (usize, usize) {
        let s = self.kernel.value.shape();
        (s[2], s[3])
    }

    pub fn geom(&self, h: usize, w: usize) -> Result<ConvGeom> {
        ConvGeom::new(h, w, self.kernel_size(), self.stride, self.padding)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let g = self.geom(h, w)?;
        Ok((g.oh, g.ow))
    }

    pub fn forward(&mut self, x: &Tensor, cache: bool) -> Result<Tensor> {
        let (_, h, w, c) = nhwc(x);
        if c != self.channels().0 {
            return Err(Error::ShapeMismatch(format!("conv expects {} channels, got {c}", self.channels().0)));
        }
        let g = self.geom(h, w)?;
        let mut out = conv2d(x, &self.kernel.value, &g)?;
        if let Some(b) = &self.bias {
            add_bias(&mut out, &b.value);
        }
        self.cache = cache.then(|| (x.clone(), g));
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let (x, g) = self.cache.take().ok_or(Error::StaleCache)?;
        let (n, oh, ow, c) = nhwc(dy);
        if n != x.shape()[0] || (oh, ow) != (g.oh, g.ow) || c != self.channels().1 {
            return Err(Error::StaleCache);
        }
        let dk = conv2d_kernel_grad(&x, dy, &g, self.kernel.value.shape())?;
        self.kernel.grad.data_mut().iter_mut().zip(dk.data()).for_each(|(a, b)| *a += b);
        if let Some(b) = &mut self.bias {
            b.grad.data_mut().iter_mut().zip(bias_grad(dy, c)).for_each(|(a, v)| *a += v);
        }
        conv2d_transpose(dy, &self.kernel.value, &g)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.kernel];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }
}

/// Transposed convolution. The kernel is stored `(kh, kw, c_out, c_in)`,
/// i.e. the layout of the convolution it transposes, so the same tensor
/// used in a [`Conv2d`] mapping `c_out -> c_in` gives the exact adjoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvTranspose2d {
    pub kernel: Param,
    pub bias: Option<Param>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    #[serde(skip)]
    cache: Option<(Tensor, ConvGeom)>,
}

impl ConvTranspose2d {
    pub fn new(kernel: Tensor, bias: Option<Tensor>, stride: (usize, usize), pad: (usize, usize)) -> Result<Self> {
        let (_, _, c_out, _) = kernel_dims(&kernel)?;
        if let Some(bias) = &bias {
            if bias.len() != c_out {
                return Err(Error::ShapeMismatch(format!("bias of {} for {c_out} output channels", bias.len())));
            }
        }
        Ok(Self { kernel: kernel.into(), bias: bias.map(Param::new), stride, pad, cache: None })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn init(kernel: (usize, usize), c_in: usize, c_out: usize, stride: (usize, usize), pad: (usize, usize), bias: bool, rng: &mut SeededRng) -> Self {
        // fan-in of each output cell: c_in * kh * kw / (sh * sw) taps on average
        let fan_in = (kernel.0 * kernel.1 * c_in / (stride.0 * stride.1)).max(1);
        let k = he_normal(&[kernel.0, kernel.1, c_out, c_in], fan_in, rng);
        let b = bias.then(|| Tensor::zeros(&[c_out]));
        Self::new(k, b, stride, pad).expect("consistent shapes")
    }

    /// `(c_in, c_out)`.
    pub fn channels(&self) -> (usize, usize) {
        let s = self.kernel.value.shape();
        (s[3], s[2])
    }

    pub fn geom(&self, h: usize, w: usize) -> Result<ConvGeom> {
        let s = self.kernel.value.shape();
        ConvGeom::transposed(h, w, (s[0], s[1]), self.stride, self.pad)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let g = self.geom(h, w)?;
        Ok((g.h, g.w))
    }

    pub fn forward(&mut self, x: &Tensor, cache: bool) -> Result<Tensor> {
        let (_, h, w, c) = nhwc(x);
        if c != self.channels().0 {
            return Err(Error::ShapeMismatch(format!("deconv expects {} channels, got {c}", self.channels().0)));
        }
        let g = self.geom(h, w)?;
        let mut out = conv2d_transpose(x, &self.kernel.value, &g)?;
        if let Some(b) = &self.bias {
            add_bias(&mut out, &b.value);
        }
        self.cache = cache.then(|| (x.clone(), g));
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let (x, g) = self.cache.take().ok_or(Error::StaleCache)?;
        let (n, h, w, c) = nhwc(dy);
        if n != x.shape()[0] || (h, w) != (g.h, g.w) || c != self.channels().1 {
            return Err(Error::StaleCache);
        }
        // out = T(x; K)  =>  dK = kernel_grad(dy, x), dx = conv(dy; K)
        let dk = conv2d_kernel_grad(dy, &x, &g, self.kernel.value.shape())?;
        self.kernel.grad.data_mut().iter_mut().zip(dk.data()).for_each(|(a, b)| *a += b);
        if let Some(b) = &mut self.bias {
            b.grad.data_mut().iter_mut().zip(bias_grad(dy, c)).for_each(|(a, v)| *a += v);
        }
        conv2d(dy, &self.kernel.value, &g)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.kernel];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor, k: &Tensor, g: &ConvGeom) -> Tensor {
        let (n, h, w, a) = nhwc(x);
        let b = k.shape()[3];
        Tensor::from_fn(&[n, g.oh, g.ow, b], |ix| {
            let (s, i, j, co) = (ix[0], ix[1], ix[2], ix[3]);
            let mut acc = 0.0;
            for m in 0..g.kh {
                for q in 0..g.kw {
                    let y = (i * g.sh + m) as isize - g.pt as isize;
                    let xx = (j * g.sw + q) as isize - g.pl as isize;
                    if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                        continue;
                    }
                    for ci in 0..a {
                        acc += x.get(&[s, y as usize, xx as usize, ci]) * k.get(&[m, q, ci, co]);
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn ones_kernel_valid_gives_nine() {
        let x = Tensor::full(&[1, 3, 3, 1], 1.0);
        let k = Tensor::full(&[3, 3, 1, 1], 1.0);
        let g = ConvGeom::new(3, 3, (3, 3), (1, 1), Padding::Valid).unwrap();
        let y = conv2d(&x, &k, &g).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = SeededRng::new(3);
        let x = Tensor::from_fn(&[2, 9, 7, 3], |_| rng.normal());
        let k = Tensor::from_fn(&[3, 2, 3, 4], |_| rng.normal());
        for padding in [Padding::Same, Padding::Valid, Padding::Explicit(1, 2)] {
            let g = ConvGeom::new(9, 7, (3, 2), (2, 1), padding).unwrap();
            let fast = conv2d(&x, &k, &g).unwrap();
            let slow = naive_conv(&x, &k, &g);
            let err = fast.zip_map(&slow, |a, b| (a - b).abs()).unwrap().max_abs();
            assert!(err < 1e-12, "{padding:?}: {err}");
        }
    }

    #[test]
    fn same_padding_extents() {
        let g = ConvGeom::new(500, 32, (7, 1), (2, 1), Padding::Same).unwrap();
        assert_eq!((g.oh, g.ow, g.pt, g.pl), (250, 32, 2, 0));
        let g = ConvGeom::new(63, 16, (3, 3), (2, 2), Padding::Same).unwrap();
        assert_eq!((g.oh, g.ow), (32, 8));
    }

    #[test]
    fn deconv_doubles_resolution() {
        let d = ConvTranspose2d::new(Tensor::zeros(&[4, 4, 2, 3]), None, (2, 2), (1, 1)).unwrap();
        assert_eq!(d.output_hw(7, 7).unwrap(), (14, 14));
        assert_eq!(d.output_hw(7, 10).unwrap(), (14, 20));
        let first = ConvTranspose2d::new(Tensor::zeros(&[7, 10, 2, 3]), None, (1, 1), (0, 0)).unwrap();
        assert_eq!(first.output_hw(1, 1).unwrap(), (7, 10));
    }

    #[test]
    fn delta_input_copies_kernel() {
        let mut rng = SeededRng::new(4);
        let k = Tensor::from_fn(&[3, 3, 1, 1], |_| rng.normal());
        let mut d = ConvTranspose2d::new(k.clone(), None, (1, 1), (0, 0)).unwrap();
        let x = Tensor::full(&[1, 1, 1, 1], 1.0);
        let y = d.forward(&x, false).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3, 1]);
        assert_eq!(y.data(), k.data());
    }

    #[test]
    fn backward_without_forward_is_stale() {
        let mut rng = SeededRng::new(5);
        let mut c = Conv2d::init((3, 3), 2, 2, (1, 1), Padding::Same, false, &mut rng);
        let dy = Tensor::zeros(&[1, 4, 4, 2]);
        assert!(matches!(c.backward(&dy), Err(Error::StaleCache)));
        let x = Tensor::zeros(&[1, 4, 4, 2]);
        c.forward(&x, true).unwrap();
        c.backward(&dy).unwrap();
        assert!(matches!(c.backward(&dy), Err(Error::StaleCache)), "cache is consumed");
        c.forward(&x, true).unwrap();
        assert!(matches!(c.backward(&Tensor::zeros(&[1, 3, 4, 2])), Err(Error::StaleCache)));
    }

    #[test]
    fn channel_mismatch_rejected() {
        let mut rng = SeededRng::new(6);
        let mut c = Conv2d::init((3, 3), 2, 2, (1, 1), Padding::Same, false, &mut rng);
        assert!(matches!(c.forward(&Tensor::zeros(&[1, 4, 4, 3]), false), Err(Error::ShapeMismatch(_))));
    }
}
