//! Forward and backward kernels operating on plain tensors.
//!
//! Convolutions go through im2col/col2im and one matrix product per call.
//! Column matrices are laid out `(C·k·k) × (B·OH·OW)`.

use crate::error::{shape_err, NnError, Result};
use crate::scalar::{matmul, Real};
use crate::tensor::Tensor;

/// Kernel, stride and zero padding of a square 2-d convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub const fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }

    /// `floor((n + 2·pad − k) / stride) + 1`.
    pub fn conv_out(&self, n: usize) -> Result<usize> {
        if self.stride == 0 || self.kernel == 0 {
            return Err(NnError::Argument("kernel and stride must be positive".into()));
        }
        let padded = n + 2 * self.padding;
        if padded < self.kernel {
            return shape_err(format!(
                "spatial size {n} with padding {} is smaller than kernel {}",
                self.padding, self.kernel
            ));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    /// `(n − 1)·stride − 2·pad + k + output_pad`.
    pub fn transpose_out(&self, n: usize, output_pad: usize) -> Result<usize> {
        if output_pad >= self.stride.max(1) {
            return Err(NnError::Argument(format!(
                "output padding {output_pad} must be smaller than stride {}",
                self.stride
            )));
        }
        let full = n.saturating_sub(1) * self.stride + self.kernel + output_pad;
        if n == 0 || full < 2 * self.padding + 1 {
            return shape_err(format!("transposed convolution of size {n} is empty"));
        }
        Ok(full - 2 * self.padding)
    }
}

/// Unfolds `x` (B×C×H×W) into columns for an output grid of `oh × ow`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col<T: Real>(
    x: &[T],
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeometry,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let k = g.kernel;
    let p = oh * ow;
    let n = b * p;
    let mut cols = vec![T::zero(); c * k * k * n];
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                for bi in 0..b {
                    let src = &x[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                        let drow = &mut dst[bi * p + oy * ow..bi * p + (oy + 1) * ow];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back into a B×C×H×W image, summing overlaps.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im<T: Real>(
    cols: &[T],
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeometry,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let k = g.kernel;
    let p = oh * ow;
    let n = b * p;
    let mut x = vec![T::zero(); b * c * h * w];
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * n..(row + 1) * n];
                for bi in 0..b {
                    let dst = &mut x[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[bi * p + oy * ow..bi * p + (oy + 1) * ow];
                        let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &s) in srow.iter().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                drow[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// B×C×P → C×(B·P)
pub(crate) fn to_channel_major<T: Real>(x: &[T], b: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            out[ci * b * p + bi * p..ci * b * p + (bi + 1) * p]
                .copy_from_slice(&x[(bi * c + ci) * p..(bi * c + ci + 1) * p]);
        }
    }
    out
}

/// C×(B·P) → B×C×P
pub(crate) fn from_channel_major<T: Real>(x: &[T], b: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            out[(bi * c + ci) * p..(bi * c + ci + 1) * p]
                .copy_from_slice(&x[ci * b * p + bi * p..ci * b * p + (bi + 1) * p]);
        }
    }
    out
}

fn channel_sums<T: Real>(x: &[T], b: usize, c: usize, p: usize) -> Vec<T> {
    let mut s = vec![T::zero(); c];
    for bi in 0..b {
        for (ci, acc) in s.iter_mut().enumerate() {
            *acc += x[(bi * c + ci) * p..(bi * c + ci + 1) * p].iter().copied().sum();
        }
    }
    s
}

pub(crate) struct Conv2dForward<T> {
    pub out: Tensor<T>,
    pub cols: Vec<T>,
}

pub(crate) fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    g: ConvGeometry,
) -> Result<Conv2dForward<T>> {
    let (b, c, h, wd) = x.dims4()?;
    let (co, ci, kh, kw) = w.dims4()?;
    if ci != c || kh != g.kernel || kw != g.kernel {
        return shape_err(format!(
            "conv2d weight {:?} does not fit input {:?} with kernel {}",
            w.shape(),
            x.shape(),
            g.kernel
        ));
    }
    if bias.shape() != [co] {
        return shape_err(format!("conv2d bias {:?}, expected [{co}]", bias.shape()));
    }
    let oh = g.conv_out(h)?;
    let ow = g.conv_out(wd)?;
    let p = oh * ow;
    let kk = c * g.kernel * g.kernel;
    let cols = im2col(x.data(), b, c, h, wd, g, oh, ow);
    let mut ym = vec![T::zero(); co * b * p];
    matmul(co, kk, b * p, w.data(), false, &cols, false, &mut ym, false);
    for (row, &bv) in ym.chunks_mut(b * p).zip(bias.data()) {
        for v in row {
            *v += bv;
        }
    }
    let out = Tensor::new(&[b, co, oh, ow], from_channel_major(&ym, b, co, p))?;
    Ok(Conv2dForward { out, cols })
}

/// Returns `(dx, dw, db)`; `dx` only when `need_x`.
pub(crate) fn conv2d_backward<T: Real>(
    gy: &Tensor<T>,
    x_shape: &[usize],
    w: &Tensor<T>,
    cols: &[T],
    g: ConvGeometry,
    need_x: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (b, co, oh, ow) = gy.dims4().expect("conv2d grad is 4-d");
    let (_, c, h, wd) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let p = oh * ow;
    let kk = c * g.kernel * g.kernel;
    let gym = to_channel_major(gy.data(), b, co, p);
    let mut gw = vec![T::zero(); co * kk];
    matmul(co, b * p, kk, &gym, false, cols, true, &mut gw, false);
    let gb = channel_sums(gy.data(), b, co, p);
    let gx = need_x.then(|| {
        let mut gcols = vec![T::zero(); kk * b * p];
        matmul(kk, co, b * p, w.data(), true, &gym, false, &mut gcols, false);
        Tensor::new(x_shape, col2im(&gcols, b, c, h, wd, g, oh, ow)).expect("dx shape")
    });
    (
        gx,
        Tensor::new(w.shape(), gw).expect("dw shape"),
        Tensor::new(&[co], gb).expect("db shape"),
    )
}

pub(crate) fn conv_transpose2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    g: ConvGeometry,
    output_pad: usize,
) -> Result<Tensor<T>> {
    let (b, ci, ih, iw) = x.dims4()?;
    let (wi, co, kh, kw) = w.dims4()?;
    if wi != ci || kh != g.kernel || kw != g.kernel {
        return shape_err(format!(
            "conv_transpose2d weight {:?} does not fit input {:?}",
            w.shape(),
            x.shape()
        ));
    }
    if bias.shape() != [co] {
        return shape_err(format!(
            "conv_transpose2d bias {:?}, expected [{co}]",
            bias.shape()
        ));
    }
    let oh = g.transpose_out(ih, output_pad)?;
    let ow = g.transpose_out(iw, output_pad)?;
    let p = ih * iw;
    let kk = co * g.kernel * g.kernel;
    let xm = to_channel_major(x.data(), b, ci, p);
    let mut cols = vec![T::zero(); kk * b * p];
    matmul(kk, ci, b * p, w.data(), true, &xm, false, &mut cols, false);
    let mut y = col2im(&cols, b, co, oh, ow, g, ih, iw);
    let op = oh * ow;
    for bi in 0..b {
        for (c, &bv) in bias.data().iter().enumerate() {
            for v in &mut y[(bi * co + c) * op..(bi * co + c + 1) * op] {
                *v += bv;
            }
        }
    }
    Tensor::new(&[b, co, oh, ow], y)
}

pub(crate) fn conv_transpose2d_backward<T: Real>(
    gy: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: ConvGeometry,
    need_x: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (b, ci, ih, iw) = x.dims4().expect("4-d input");
    let (_, co, oh, ow) = gy.dims4().expect("4-d grad");
    let p = ih * iw;
    let kk = co * g.kernel * g.kernel;
    let gcols = im2col(gy.data(), b, co, oh, ow, g, ih, iw);
    let xm = to_channel_major(x.data(), b, ci, p);
    let mut gw = vec![T::zero(); ci * kk];
    matmul(ci, b * p, kk, &xm, false, &gcols, true, &mut gw, false);
    let gb = channel_sums(gy.data(), b, co, oh * ow);
    let gx = need_x.then(|| {
        let mut gxm = vec![T::zero(); ci * b * p];
        matmul(ci, kk, b * p, w.data(), false, &gcols, false, &mut gxm, false);
        Tensor::new(x.shape(), from_channel_major(&gxm, b, ci, p)).expect("dx shape")
    });
    (
        gx,
        Tensor::new(w.shape(), gw).expect("dw shape"),
        Tensor::new(&[co], gb).expect("db shape"),
    )
}

pub(crate) fn linear_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, n) = x.dims2()?;
    let (m, wn) = w.dims2()?;
    if wn != n {
        return shape_err(format!(
            "linear weight {:?} does not fit input {:?}",
            w.shape(),
            x.shape()
        ));
    }
    if b.shape() != [m] {
        return shape_err(format!("linear bias {:?}, expected [{m}]", b.shape()));
    }
    let mut y = Vec::with_capacity(rows * m);
    for _ in 0..rows {
        y.extend_from_slice(b.data());
    }
    matmul(rows, n, m, x.data(), false, w.data(), true, &mut y, true);
    Tensor::new(&[rows, m], y)
}

pub(crate) fn linear_backward<T: Real>(
    gy: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    need_x: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (rows, n) = x.dims2().expect("2-d input");
    let m = w.shape()[0];
    let gx = need_x.then(|| {
        let mut gx = vec![T::zero(); rows * n];
        matmul(rows, m, n, gy.data(), false, w.data(), false, &mut gx, false);
        Tensor::new(&[rows, n], gx).expect("dx shape")
    });
    let mut gw = vec![T::zero(); m * n];
    matmul(m, rows, n, gy.data(), true, x.data(), false, &mut gw, false);
    let mut gb = vec![T::zero(); m];
    for r in 0..rows {
        for (acc, &v) in gb.iter_mut().zip(&gy.data()[r * m..(r + 1) * m]) {
            *acc += v;
        }
    }
    (
        gx,
        Tensor::new(&[m, n], gw).expect("dw shape"),
        Tensor::new(&[m], gb).expect("db shape"),
    )
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x·Φ(x)`.
pub fn gelu_scalar<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// `Φ(x) + x·φ(x)`.
pub(crate) fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = T::of(FRAC_1_SQRT_2PI) * (-half * x * x).exp();
    cdf + x * pdf
}

pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn avgpool2d_forward<T: Real>(x: &Tensor<T>, k: usize, s: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    if k == 0 || s == 0 || h < k || w < k {
        return shape_err(format!(
            "avgpool kernel {k} stride {s} does not fit input {:?}",
            x.shape()
        ));
    }
    let oh = (h - k) / s + 1;
    let ow = (w - k) / s + 1;
    let scale = T::of(1.0 / (k * k) as f64);
    let xd = x.data();
    let mut out = vec![T::zero(); b * c * oh * ow];
    for plane in 0..b * c {
        let src = &xd[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for ki in 0..k {
                    for kj in 0..k {
                        acc += src[(oy * s + ki) * w + ox * s + kj];
                    }
                }
                out[(plane * oh + oy) * ow + ox] = acc * scale;
            }
        }
    }
    Tensor::new(&[b, c, oh, ow], out)
}

pub(crate) fn avgpool2d_backward<T: Real>(gy: &Tensor<T>, x_shape: &[usize], k: usize, s: usize) -> Tensor<T> {
    let (b, c, oh, ow) = gy.dims4().expect("4-d grad");
    let (h, w) = (x_shape[2], x_shape[3]);
    let scale = T::of(1.0 / (k * k) as f64);
    let mut gx = vec![T::zero(); b * c * h * w];
    let gd = gy.data();
    for plane in 0..b * c {
        let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let g = gd[(plane * oh + oy) * ow + ox] * scale;
                for ki in 0..k {
                    for kj in 0..k {
                        dst[(oy * s + ki) * w + ox * s + kj] += g;
                    }
                }
            }
        }
    }
    Tensor::new(x_shape, gx).expect("dx shape")
}
