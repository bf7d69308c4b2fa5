use crate::error::Result;
use crate::net::config::BlockConfig;
use crate::net::memory::MemoryBlock;
use crate::net::init::glorot;
use crate::ops::{affine_backward, affine_forward, linear_backward, linear_forward, relu_backward, relu_forward};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// One pyramidal-FSMN block: affine + relu, linear bottleneck, memory block.
#[derive(Clone, Debug)]
pub struct Block {
    pub cfg: BlockConfig,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub mem: MemoryBlock,
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    x: Tensor,
    pre: Tensor,
    act: Tensor,
    proj: Tensor,
}

impl BlockCache {
    /// Bottleneck output `h` that the memory block reads.
    pub fn proj(&self) -> &Tensor {
        &self.proj
    }

    pub fn pre_activation(&self) -> &Tensor {
        &self.pre
    }
}

impl Block {
    pub fn new(cfg: &BlockConfig, in_dim: usize, rng: &mut Rng) -> Self {
        Self {
            cfg: cfg.clone(),
            w1: glorot(&[in_dim, cfg.hidden_dim], in_dim, cfg.hidden_dim, rng),
            b1: Tensor::zeros(&[cfg.hidden_dim]),
            w2: glorot(&[cfg.hidden_dim, cfg.proj_dim], cfg.hidden_dim, cfg.proj_dim, rng),
            mem: MemoryBlock::new(cfg.mem.clone(), cfg.proj_dim),
        }
    }

    pub fn forward(&self, x: &Tensor, skip_in: Option<&Tensor>, include_current: bool) -> Result<(Tensor, BlockCache)> {
        let pre = affine_forward(x, &self.w1, &self.b1)?;
        let act = relu_forward(&pre);
        let proj = linear_forward(&act, &self.w2)?;
        let out = self.mem.forward(&proj, skip_in, include_current)?;
        Ok((out, BlockCache { x: x.clone(), pre, act, proj }))
    }

    /// Accumulates parameter gradients; returns `(dx, dskip)`.
    pub fn backward(&mut self, cache: &BlockCache, include_current: bool, dout: &Tensor) -> Result<(Tensor, Tensor)> {
        let (dproj, dskip) = self.mem.backward(&cache.proj, include_current, dout)?;
        let (dact, dw2) = linear_backward(&cache.act, &self.w2, &dproj)?;
        self.w2.accumulate_grad(dw2.values());
        let dpre = relu_backward(&cache.pre, &dact)?;
        let g = affine_backward(&cache.x, &self.w1, &dpre)?;
        self.w1.accumulate_grad(g.dw.values());
        self.b1.accumulate_grad(g.db.values());
        Ok((g.dx, dskip))
    }
}

/// Functional form: output of one block for input `x` and skip input.
pub fn block_forward(block: &Block, x: &Tensor, skip_in: Option<&Tensor>) -> Result<Tensor> {
    Ok(block.forward(x, skip_in, false)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, sign_signature, GradCheckConfig, Probe};
    use crate::net::config::MemoryBlockSpec;

    fn small(n1: usize, n2: usize) -> BlockConfig {
        BlockConfig { mem: MemoryBlockSpec::new(n1, n2, 1, 2, 1), hidden_dim: 5, proj_dim: 3 }
    }

    #[test]
    fn zero_block_returns_skip() {
        let mut rng = Rng::new(4);
        let mut b = Block::new(&small(2, 1), 4, &mut rng);
        b.w1 = Tensor::zeros(b.w1.shape());
        b.w2 = Tensor::zeros(b.w2.shape());
        b.mem.a = Tensor::zeros(b.mem.a.shape());
        b.mem.c = Tensor::zeros(b.mem.c.shape());
        let x = Tensor::randn(&[6, 4], 1.0, &mut rng);
        let skip = Tensor::randn(&[6, 3], 1.0, &mut rng);
        assert_eq!(block_forward(&b, &x, Some(&skip)).unwrap().values(), skip.values());
    }

    #[test]
    fn single_frame_uses_only_current_taps() {
        let mut rng = Rng::new(5);
        let b = Block::new(&small(3, 2), 4, &mut rng);
        let x = Tensor::randn(&[1, 4], 1.0, &mut rng);
        let full = block_forward(&b, &x, None).unwrap();
        let mut current_only = b.clone();
        for r in 1..current_only.mem.a.rows() {
            current_only.mem.a.row_mut(r).fill(0.0);
        }
        for r in 1..current_only.mem.c.rows() {
            current_only.mem.c.row_mut(r).fill(0.0);
        }
        assert_eq!(full.values(), block_forward(&current_only, &x, None).unwrap().values());
    }

    #[test]
    fn block_gradient_check() {
        for seed in 0..20u64 {
            let mut rng = Rng::new(seed);
            let include_current = seed % 3 == 0;
            let cfg = small(rng.int_inclusive(0, 3), rng.int_inclusive(0, 2));
            let mut b = Block::new(&cfg, 4, &mut rng);
            b.b1 = Tensor::randn(b.b1.shape(), 0.5, &mut rng);
            let frames = rng.int_inclusive(1, 6);
            let x = Tensor::randn(&[frames, 4], 1.0, &mut rng);
            let skip = Tensor::randn(&[frames, 3], 1.0, &mut rng);
            let up = Tensor::randn(&[frames, 3], 1.0, &mut rng);
            let (_, cache) = b.forward(&x, Some(&skip), include_current).unwrap();
            let (dx, dskip) = b.backward(&cache, include_current, &up).unwrap();
            let parts = [&b.w1, &b.b1, &b.w2, &b.mem.a, &b.mem.c];
            let theta: Vec<f64> = [x.values(), skip.values()].concat().into_iter().chain(parts.iter().flat_map(|t| t.values().to_vec())).collect();
            let analytic: Vec<f64> = [dx.values(), dskip.values()].concat().into_iter().chain(parts.iter().flat_map(|t| t.grad().unwrap().to_vec())).collect();
            let template = b.clone();
            let f = |p: &[f64]| {
                let mut blk = template.clone();
                let mut off = 0;
                let mut take = |shape: &[usize]| {
                    let n: usize = shape.iter().product();
                    let t = Tensor::from_vec(shape, p[off..off + n].to_vec()).unwrap();
                    off += n;
                    t
                };
                let x = take(&[frames, 4]);
                let s = take(&[frames, 3]);
                blk.w1 = take(template.w1.shape());
                blk.b1 = take(template.b1.shape());
                blk.w2 = take(template.w2.shape());
                blk.mem.a = take(template.mem.a.shape());
                blk.mem.c = take(template.mem.c.shape());
                let (out, cache) = blk.forward(&x, Some(&s), include_current).unwrap();
                Probe {
                    value: out.values().iter().zip(up.values()).map(|(o, u)| o * u).sum(),
                    signature: sign_signature(cache.pre_activation().values(), 0),
                }
            };
            let r = grad_check(&theta, &analytic, f, &GradCheckConfig { eps: 1e-6, tol: 1e-6, ..Default::default() });
            assert!(r.pass, "seed {seed}: {r:?}");
        }
    }
}
