//! The FSMN memory block: learned per-dimension taps over past and future
//! frames of a hidden sequence, added onto a skip input.

use crate::error::{Error, Result};
use crate::net::config::MemoryBlockSpec;
use crate::tensor::Tensor;

/// `out[t] = skip[t] + [h[t]] + sum_i a_i * h[t - s1 i] + sum_j c_j * h[t + s2 j]`
///
/// Frames outside `[0, T)` read as zero vectors. `include_current` adds the
/// standalone `h[t]` term used by the deep-FSMN baseline.
pub fn memory_block_forward(
    h: &Tensor,
    skip_in: Option<&Tensor>,
    a: &Tensor,
    c: &Tensor,
    spec: &MemoryBlockSpec,
    include_current: bool,
) -> Result<Tensor> {
    let (frames, dim) = check_shapes(h, skip_in, a, c, spec)?;
    let mut out = match skip_in {
        Some(s) => {
            let mut o = s.clone();
            o.clear_grad();
            o
        }
        None => Tensor::zeros(&[frames, dim]),
    };
    for t in 0..frames {
        let orow = t * dim;
        let ov = out.values_mut();
        if include_current {
            for (o, hv) in ov[orow..orow + dim].iter_mut().zip(h.row(t)) {
                *o += hv;
            }
        }
        for i in 0..=spec.n1 {
            let Some(src) = t.checked_sub(spec.s1 * i) else { break };
            for ((o, av), hv) in ov[orow..orow + dim].iter_mut().zip(a.row(i)).zip(h.row(src)) {
                *o += av * hv;
            }
        }
        for j in 0..=spec.n2 {
            let src = t + spec.s2 * j;
            if src >= frames {
                break;
            }
            for ((o, cv), hv) in ov[orow..orow + dim].iter_mut().zip(c.row(j)).zip(h.row(src)) {
                *o += cv * hv;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct MemoryGrads {
    pub dh: Tensor,
    /// Equal to the upstream gradient; returned for symmetry.
    pub dskip: Tensor,
    pub da: Tensor,
    pub dc: Tensor,
}

pub fn memory_block_backward(
    h: &Tensor,
    a: &Tensor,
    c: &Tensor,
    spec: &MemoryBlockSpec,
    include_current: bool,
    dout: &Tensor,
) -> Result<MemoryGrads> {
    let (frames, dim) = check_shapes(h, Some(dout), a, c, spec)?;
    let mut dh = Tensor::zeros(&[frames, dim]);
    let mut da = Tensor::zeros(a.shape());
    let mut dc = Tensor::zeros(c.shape());
    for t in 0..frames {
        let g = dout.row(t);
        if include_current {
            for (d, gv) in dh.row_mut(t).iter_mut().zip(g) {
                *d += gv;
            }
        }
        for i in 0..=spec.n1 {
            let Some(src) = t.checked_sub(spec.s1 * i) else { break };
            let hrow = h.row(src);
            for k in 0..dim {
                da.values_mut()[i * dim + k] += g[k] * hrow[k];
                dh.values_mut()[src * dim + k] += g[k] * a.values()[i * dim + k];
            }
        }
        for j in 0..=spec.n2 {
            let src = t + spec.s2 * j;
            if src >= frames {
                break;
            }
            let hrow = h.row(src);
            for k in 0..dim {
                dc.values_mut()[j * dim + k] += g[k] * hrow[k];
                dh.values_mut()[src * dim + k] += g[k] * c.values()[j * dim + k];
            }
        }
    }
    let mut dskip = dout.clone();
    dskip.clear_grad();
    Ok(MemoryGrads { dh, dskip, da, dc })
}

fn check_shapes(
    h: &Tensor,
    other: Option<&Tensor>,
    a: &Tensor,
    c: &Tensor,
    spec: &MemoryBlockSpec,
) -> Result<(usize, usize)> {
    let (frames, dim) = h.dims2()?;
    if let Some(o) = other {
        if o.shape() != h.shape() {
            return Err(Error::Config(format!("memory block: h {:?} vs {:?}", h.shape(), o.shape())));
        }
    }
    if a.shape() != [spec.n1 + 1, dim] || c.shape() != [spec.n2 + 1, dim] {
        return Err(Error::Config(format!(
            "memory block taps {:?}/{:?} do not match orders ({}, {}) and width {dim}",
            a.shape(),
            c.shape(),
            spec.n1,
            spec.n2
        )));
    }
    if spec.s1 == 0 || spec.s2 == 0 {
        return Err(Error::Config("memory strides must be >= 1".into()));
    }
    Ok((frames, dim))
}

/// A memory block with its coefficient tensors.
#[derive(Clone, Debug)]
pub struct MemoryBlock {
    pub spec: MemoryBlockSpec,
    /// `(n1 + 1) x dim` past taps.
    pub a: Tensor,
    /// `(n2 + 1) x dim` future taps.
    pub c: Tensor,
}

impl MemoryBlock {
    /// Taps start at `1 / (n + 1)` so an untrained block averages its context.
    pub fn new(spec: MemoryBlockSpec, dim: usize) -> Self {
        let a = Tensor::filled(&[spec.n1 + 1, dim], 1.0 / (spec.n1 + 1) as f64);
        let c = Tensor::filled(&[spec.n2 + 1, dim], 1.0 / (spec.n2 + 1) as f64);
        Self { spec, a, c }
    }

    pub fn forward(&self, h: &Tensor, skip_in: Option<&Tensor>, include_current: bool) -> Result<Tensor> {
        memory_block_forward(h, skip_in, &self.a, &self.c, &self.spec, include_current)
    }

    /// Accumulates tap gradients; returns `(dh, dskip)`.
    pub fn backward(&mut self, h: &Tensor, include_current: bool, dout: &Tensor) -> Result<(Tensor, Tensor)> {
        let g = memory_block_backward(h, &self.a, &self.c, &self.spec, include_current, dout)?;
        self.a.accumulate_grad(g.da.values());
        self.c.accumulate_grad(g.dc.values());
        Ok((g.dh, g.dskip))
    }
}
