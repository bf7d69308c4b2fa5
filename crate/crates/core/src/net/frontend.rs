//! Residual CNN front end.
//!
//! Features `T x F` are viewed as a one-channel `T x F` map (time = rows,
//! frequency = columns). Each of the six layers is a "same"-padded conv with
//! per-channel bias followed by relu; subsampling layers stride 2 along
//! frequency only, so the frame count is preserved. At a kernel-size
//! transition the input of the layer before the transition is added to the
//! output of the layer after it, through a bias-free 1x1 projection when
//! channels or frequency extent differ.

use crate::error::{Error, Result};
use crate::net::config::{ConvSpec, FrontEndConfig};
use crate::net::init::glorot;
use crate::ops::{conv2d_backward, conv2d_forward, relu_backward, relu_forward, Padding};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    /// `channels x in_channels x k x k`
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    fn stride(&self) -> (usize, usize) {
        (1, if self.spec.subsample { 2 } else { 1 })
    }
}

#[derive(Clone, Debug)]
pub struct Shortcut {
    /// Stage receiving the shortcut (1-based layer index).
    pub target: usize,
    /// Stage read by the shortcut (0 = input map).
    pub source: usize,
    /// `out_ch x in_ch x 1 x 1`; `None` for an identity shortcut.
    pub proj: Option<Tensor>,
    pub stride: usize,
}

#[derive(Clone, Debug)]
pub struct FrontEnd {
    pub cfg: FrontEndConfig,
    pub layers: Vec<ConvLayer>,
    pub shortcuts: Vec<Shortcut>,
    input_dim: usize,
}

#[derive(Clone, Debug)]
pub struct FrontEndCache {
    /// `stages[0]` is the input map, `stages[i]` the output of layer `i`.
    stages: Vec<Tensor>,
    pre: Vec<Tensor>,
}

impl FrontEndCache {
    pub fn pre_activations(&self) -> impl Iterator<Item = &f64> {
        self.pre.iter().flat_map(|t| t.values())
    }
}

impl FrontEnd {
    pub fn new(cfg: &FrontEndConfig, input_dim: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if input_dim < cfg.min_input_dim() {
            return Err(Error::Config(format!(
                "feature dim {input_dim} too small for the conv stack; minimal feature dim is {}",
                cfg.min_input_dim()
            )));
        }
        let mut in_ch = 1;
        let mut stage_channels = vec![1];
        let mut layers = Vec::new();
        for spec in &cfg.layers {
            let k = spec.kernel;
            layers.push(ConvLayer {
                spec: *spec,
                kernel: glorot(&[spec.channels, in_ch, k, k], in_ch * k * k, spec.channels * k * k, rng),
                bias: Tensor::zeros(&[spec.channels]),
            });
            in_ch = spec.channels;
            stage_channels.push(in_ch);
        }
        let shortcuts = cfg
            .shortcuts()
            .into_iter()
            .map(|(target, source)| {
                let stride = (source..target).map(|i| if cfg.layers[i].subsample { 2 } else { 1 }).product();
                let proj = cfg.shortcut_needs_projection(target, source, &stage_channels).then(|| {
                    let (ci, co) = (stage_channels[source], stage_channels[target]);
                    glorot(&[co, ci, 1, 1], ci, co, rng)
                });
                Shortcut { target, source, proj, stride }
            })
            .collect();
        Ok(Self { cfg: cfg.clone(), layers, shortcuts, input_dim })
    }

    pub fn output_dim(&self) -> usize {
        self.cfg.output_dim(self.input_dim)
    }

    pub fn forward(&self, features: &Tensor) -> Result<(Tensor, FrontEndCache)> {
        let (frames, fdim) = features.dims2()?;
        if fdim != self.input_dim {
            return Err(Error::Config(format!("front end expects feature dim {}, got {fdim}", self.input_dim)));
        }
        let input = features.clone().reshape(&[1, frames, fdim])?;
        let mut stages = vec![input];
        let mut pre_acts = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = conv2d_forward(&stages[i], &layer.kernel, layer.stride(), Padding::Same)?;
            add_channel_bias(&mut pre, &layer.bias);
            let mut out = relu_forward(&pre);
            if let Some(sc) = self.shortcuts.iter().find(|s| s.target == i + 1) {
                let src = &stages[sc.source];
                let add = match &sc.proj {
                    Some(p) => conv2d_forward(src, p, (1, sc.stride), Padding::Same)?,
                    None => src.clone(),
                };
                if add.shape() != out.shape() {
                    return Err(Error::Shape(format!("shortcut {:?} vs layer output {:?}", add.shape(), out.shape())));
                }
                for (o, a) in out.values_mut().iter_mut().zip(add.values()) {
                    *o += a;
                }
            }
            pre_acts.push(pre);
            stages.push(out);
        }
        let flat = flatten_per_frame(stages.last().expect("six stages"))?;
        Ok((flat, FrontEndCache { stages, pre: pre_acts }))
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. features.
    pub fn backward(&mut self, cache: &FrontEndCache, dout: &Tensor) -> Result<Tensor> {
        let last = cache.stages.last().expect("six stages");
        let mut dstages: Vec<Tensor> = cache.stages.iter().map(|s| Tensor::zeros(s.shape())).collect();
        *dstages.last_mut().expect("six stages") = unflatten_per_frame(dout, last.shape())?;
        for i in (1..=self.layers.len()).rev() {
            let g = dstages[i].clone();
            if let Some(sc) = self.shortcuts.iter_mut().find(|s| s.target == i) {
                let src = &cache.stages[sc.source];
                let dsrc = match &mut sc.proj {
                    Some(p) => {
                        let (dx, dp) = conv2d_backward(src, p, (1, sc.stride), Padding::Same, &g)?;
                        p.accumulate_grad(dp.values());
                        dx
                    }
                    None => g.clone(),
                };
                add_into(&mut dstages[sc.source], &dsrc);
            }
            let layer = &mut self.layers[i - 1];
            let dpre = relu_backward(&cache.pre[i - 1], &g)?;
            let dbias = channel_sums(&dpre);
            layer.bias.accumulate_grad(&dbias);
            let stride = layer.stride();
            let (dx, dk) = conv2d_backward(&cache.stages[i - 1], &layer.kernel, stride, Padding::Same, &dpre)?;
            layer.kernel.accumulate_grad(dk.values());
            add_into(&mut dstages[i - 1], &dx);
        }
        let d0 = dstages.swap_remove(0);
        let [_, frames, fdim] = d0.shape()[..] else { unreachable!() };
        d0.reshape(&[frames, fdim])
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("front.conv{}.kernel", i + 1), &l.kernel));
            out.push((format!("front.conv{}.bias", i + 1), &l.bias));
        }
        for s in &self.shortcuts {
            if let Some(p) = &s.proj {
                out.push((format!("front.shortcut{}.proj", s.target), p));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("front.conv{}.kernel", i + 1), &mut l.kernel));
            out.push((format!("front.conv{}.bias", i + 1), &mut l.bias));
        }
        for s in &mut self.shortcuts {
            if let Some(p) = &mut s.proj {
                out.push((format!("front.shortcut{}.proj", s.target), p));
            }
        }
        out
    }
}

fn add_channel_bias(map: &mut Tensor, bias: &Tensor) {
    let per = map.len() / bias.len();
    for (c, b) in bias.values().iter().enumerate() {
        for v in &mut map.values_mut()[c * per..(c + 1) * per] {
            *v += b;
        }
    }
}

fn channel_sums(map: &Tensor) -> Vec<f64> {
    let ch = map.shape()[0];
    let per = map.len() / ch;
    (0..ch).map(|c| map.values()[c * per..(c + 1) * per].iter().sum()).collect()
}

fn add_into(acc: &mut Tensor, delta: &Tensor) {
    for (a, d) in acc.values_mut().iter_mut().zip(delta.values()) {
        *a += d;
    }
}

/// `C x T x F` map to `T x (C * F)`, channel-major within a frame.
fn flatten_per_frame(map: &Tensor) -> Result<Tensor> {
    let [ch, frames, freq] = map.shape()[..] else {
        return Err(Error::Shape(format!("expected C x T x F map, got {:?}", map.shape())));
    };
    let mut out = Tensor::zeros(&[frames, ch * freq]);
    for c in 0..ch {
        for t in 0..frames {
            let src = &map.values()[(c * frames + t) * freq..(c * frames + t + 1) * freq];
            out.row_mut(t)[c * freq..(c + 1) * freq].copy_from_slice(src);
        }
    }
    Ok(out)
}

fn unflatten_per_frame(flat: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let [ch, frames, freq] = shape[..] else { unreachable!() };
    if flat.shape() != [frames, ch * freq] {
        return Err(Error::Shape(format!("front-end gradient {:?} vs map {shape:?}", flat.shape())));
    }
    let mut map = Tensor::zeros(shape);
    for c in 0..ch {
        for t in 0..frames {
            let dst = (c * frames + t) * freq;
            map.values_mut()[dst..dst + freq].copy_from_slice(&flat.row(t)[c * freq..(c + 1) * freq]);
        }
    }
    Ok(map)
}

/// Functional form of the front end.
pub fn front_end_forward(front: &FrontEnd, features: &Tensor) -> Result<Tensor> {
    Ok(front.forward(features)?.0)
}
