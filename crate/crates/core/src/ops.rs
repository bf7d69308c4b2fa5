//! Dense kernels with hand-derived backward passes.
//!
//! Forward functions are pure. Backward functions take the forward inputs
//! plus the upstream gradient and return gradients for every input; callers
//! accumulate parameter gradients into [`Tensor::grad_mut`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `log(exp(a) + exp(b))`, exact for infinite arguments.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Max-shifted log-sum-exp; `-inf` for an empty or all `-inf` input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Config(format!("{what}: shapes {a:?} and {b:?} do not conform"))
}

/// `out[t, j] = sum_i x[t, i] * w[i, j] + b[j]`.
pub fn affine_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut out = linear_forward(x, w)?;
    let dout = w.shape()[1];
    if b.shape() != [dout] {
        return Err(shape_err("affine bias", w.shape(), b.shape()));
    }
    for t in 0..out.rows() {
        for (o, bj) in out.row_mut(t).iter_mut().zip(b.values()) {
            *o += bj;
        }
    }
    Ok(out)
}

/// Affine map without bias.
pub fn linear_forward(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (rows, din) = x.dims2()?;
    let (win, dout) = w.dims2().map_err(|_| shape_err("affine", x.shape(), w.shape()))?;
    if din != win {
        return Err(shape_err("affine", x.shape(), w.shape()));
    }
    let mut out = Tensor::zeros(&[rows, dout]);
    let wv = w.values();
    for t in 0..rows {
        let xr = x.row(t);
        let or = out.row_mut(t);
        for (i, &xi) in xr.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wr = &wv[i * dout..(i + 1) * dout];
            for (o, &wij) in or.iter_mut().zip(wr) {
                *o += xi * wij;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AffineGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

pub fn affine_backward(x: &Tensor, w: &Tensor, dout: &Tensor) -> Result<AffineGrads> {
    let (dx, dw) = linear_backward(x, w, dout)?;
    let (rows, cols) = dout.dims2()?;
    let mut db = Tensor::zeros(&[cols]);
    for t in 0..rows {
        for (g, d) in db.values_mut().iter_mut().zip(dout.row(t)) {
            *g += d;
        }
    }
    Ok(AffineGrads { dx, dw, db })
}

/// Returns `(dx, dw)` for `out = x w`.
pub fn linear_backward(x: &Tensor, w: &Tensor, dout: &Tensor) -> Result<(Tensor, Tensor)> {
    let (rows, din) = x.dims2()?;
    let (_, dcols) = w.dims2()?;
    if dout.shape() != [rows, dcols] {
        return Err(shape_err("affine upstream", dout.shape(), &[rows, dcols]));
    }
    let mut dx = Tensor::zeros(&[rows, din]);
    let mut dw = Tensor::zeros(&[din, dcols]);
    let wv = w.values();
    for t in 0..rows {
        let xr = x.row(t);
        let gr = dout.row(t);
        let dxr = dx.row_mut(t);
        for i in 0..din {
            let wr = &wv[i * dcols..(i + 1) * dcols];
            dxr[i] = wr.iter().zip(gr).map(|(a, b)| a * b).sum();
        }
        let dwv = dw.values_mut();
        for (i, &xi) in xr.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (g, &d) in dwv[i * dcols..(i + 1) * dcols].iter_mut().zip(gr) {
                *g += xi * d;
            }
        }
    }
    Ok((dx, dw))
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.clear_grad();
    for v in out.values_mut() {
        // `<=` also maps -0.0 to +0.0
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Passes the upstream gradient where `x > 0`; the subgradient at 0 is 0.
pub fn relu_backward(x: &Tensor, dout: &Tensor) -> Result<Tensor> {
    if !x.same_shape(dout) {
        return Err(shape_err("relu", x.shape(), dout.shape()));
    }
    let vals = x
        .values()
        .iter()
        .zip(dout.values())
        .map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape(), vals)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding of `(k - 1) / 2` before each axis; output extent `ceil(n / stride)`.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug)]
struct AxisGeom {
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    output: usize,
}

impl AxisGeom {
    fn new(input: usize, kernel: usize, stride: usize, padding: Padding) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel extent {kernel} must be odd")));
        }
        if !(1..=2).contains(&stride) {
            return Err(Error::Config(format!("stride {stride} not in {{1, 2}}")));
        }
        match padding {
            Padding::Same => Ok(Self {
                input,
                kernel,
                stride,
                pad: (kernel - 1) / 2,
                output: input.div_ceil(stride),
            }),
            Padding::Valid => {
                if kernel > input {
                    return Err(Error::Config(format!(
                        "kernel extent {kernel} exceeds padded input extent {input}"
                    )));
                }
                Ok(Self { input, kernel, stride, pad: 0, output: (input - kernel) / stride + 1 })
            }
        }
    }

    /// For output `o`: the in-range taps `lo..hi` and the input index read
    /// by tap `lo` (tap `d` reads `first + d - lo`).
    #[inline]
    fn taps(&self, o: usize) -> (usize, usize, usize) {
        let origin = o * self.stride;
        let lo = self.pad.saturating_sub(origin);
        let hi = (self.input + self.pad - origin).min(self.kernel);
        (lo, hi.max(lo), origin + lo - self.pad)
    }
}

fn conv_geometry(
    x: &Tensor,
    kernels: &Tensor,
    stride: (usize, usize),
    padding: Padding,
) -> Result<(usize, usize, AxisGeom, AxisGeom)> {
    let [c, h, w] = x.shape()[..] else {
        return Err(Error::Shape(format!("conv input must be C x H x W, got {:?}", x.shape())));
    };
    let [k, kc, kh, kw] = kernels.shape()[..] else {
        return Err(Error::Shape(format!("kernels must be K x C x kh x kw, got {:?}", kernels.shape())));
    };
    if kc != c {
        return Err(shape_err("conv2d channels", x.shape(), kernels.shape()));
    }
    let gh = AxisGeom::new(h, kh, stride.0, padding)?;
    let gw = AxisGeom::new(w, kw, stride.1, padding)?;
    Ok((c, k, gh, gw))
}

/// Patch matrix: one row per output position `(oh, ow)`, columns ordered
/// `(c, dh, dw)` like a kernel row; out-of-range taps read zero.
fn im2col(xv: &[f64], c: usize, gh: &AxisGeom, gw: &AxisGeom) -> Vec<f64> {
    let cols = c * gh.kernel * gw.kernel;
    let mut p = vec![0.0; gh.output * gw.output * cols];
    for oh in 0..gh.output {
        let (hlo, hhi, ih0) = gh.taps(oh);
        for ow in 0..gw.output {
            let (wlo, whi, iw0) = gw.taps(ow);
            let row = &mut p[(oh * gw.output + ow) * cols..][..cols];
            for ci in 0..c {
                for dh in hlo..hhi {
                    let src = &xv[(ci * gh.input + ih0 + dh - hlo) * gw.input + iw0..][..whi - wlo];
                    row[(ci * gh.kernel + dh) * gw.kernel + wlo..][..whi - wlo].copy_from_slice(src);
                }
            }
        }
    }
    p
}

/// Inverse scatter of [`im2col`]: accumulates patch gradients into the input.
fn col2im(dp: &[f64], dxv: &mut [f64], c: usize, gh: &AxisGeom, gw: &AxisGeom) {
    let cols = c * gh.kernel * gw.kernel;
    for oh in 0..gh.output {
        let (hlo, hhi, ih0) = gh.taps(oh);
        for ow in 0..gw.output {
            let (wlo, whi, iw0) = gw.taps(ow);
            let row = &dp[(oh * gw.output + ow) * cols..][..cols];
            for ci in 0..c {
                for dh in hlo..hhi {
                    let dst = &mut dxv[(ci * gh.input + ih0 + dh - hlo) * gw.input + iw0..][..whi - wlo];
                    let src = &row[(ci * gh.kernel + dh) * gw.kernel + wlo..][..whi - wlo];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Cross-correlation of a `C x H x W` map with `K x C x kh x kw` kernels.
pub fn conv2d_forward(
    x: &Tensor,
    kernels: &Tensor,
    stride: (usize, usize),
    padding: Padding,
) -> Result<Tensor> {
    let (c, k, gh, gw) = conv_geometry(x, kernels, stride, padding)?;
    let positions = gh.output * gw.output;
    let cols = c * gh.kernel * gw.kernel;
    let patches = im2col(x.values(), c, &gh, &gw);
    let mut out = Tensor::zeros(&[k, gh.output, gw.output]);
    let ov = out.values_mut();
    for (ko, krow) in kernels.values().chunks_exact(cols).enumerate() {
        for (pos, prow) in patches.chunks_exact(cols).enumerate() {
            ov[ko * positions + pos] = krow.iter().zip(prow).map(|(a, b)| a * b).sum();
        }
    }
    Ok(out)
}

/// Returns `(dx, dkernels)`.
pub fn conv2d_backward(
    x: &Tensor,
    kernels: &Tensor,
    stride: (usize, usize),
    padding: Padding,
    dout: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (c, k, gh, gw) = conv_geometry(x, kernels, stride, padding)?;
    if dout.shape() != [k, gh.output, gw.output] {
        return Err(shape_err("conv2d upstream", dout.shape(), &[k, gh.output, gw.output]));
    }
    let positions = gh.output * gw.output;
    let cols = c * gh.kernel * gw.kernel;
    let patches = im2col(x.values(), c, &gh, &gw);
    let mut dpatches = vec![0.0; patches.len()];
    let mut dk = Tensor::zeros(kernels.shape());
    let gv = dout.values();
    for ko in 0..k {
        let krow = &kernels.values()[ko * cols..][..cols];
        let dkrow = &mut dk.values_mut()[ko * cols..][..cols];
        for pos in 0..positions {
            let g = gv[ko * positions + pos];
            if g == 0.0 {
                continue;
            }
            let prow = &patches[pos * cols..][..cols];
            for (d, p) in dkrow.iter_mut().zip(prow) {
                *d += g * p;
            }
            for (d, w) in dpatches[pos * cols..][..cols].iter_mut().zip(krow) {
                *d += g * w;
            }
        }
    }
    let mut dx = Tensor::zeros(x.shape());
    col2im(&dpatches, dx.values_mut(), c, &gh, &gw);
    Ok((dx, dk))
}

/// Output extent of one conv axis, for shape arithmetic outside the kernel.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> Result<usize> {
    Ok(AxisGeom::new(input, kernel, stride, padding)?.output)
}

/// Row-wise log-softmax of a `T x K` matrix.
pub fn log_softmax(x: &Tensor) -> Result<Tensor> {
    let (rows, _) = x.dims2()?;
    let mut out = x.clone();
    out.clear_grad();
    for t in 0..rows {
        let lse = logsumexp(x.row(t));
        for v in out.row_mut(t) {
            *v -= lse;
        }
    }
    Ok(out)
}

/// Backward of [`log_softmax`] given its output `y`: `dx = g - softmax * sum(g)`.
pub fn log_softmax_backward(y: &Tensor, dout: &Tensor) -> Result<Tensor> {
    if !y.same_shape(dout) {
        return Err(shape_err("log_softmax", y.shape(), dout.shape()));
    }
    let (rows, _) = y.dims2()?;
    let mut dx = dout.clone();
    for t in 0..rows {
        let gsum: f64 = dout.row(t).iter().sum();
        for (d, &yv) in dx.row_mut(t).iter_mut().zip(y.row(t)) {
            *d -= yv.exp() * gsum;
        }
    }
    Ok(dx)
}
