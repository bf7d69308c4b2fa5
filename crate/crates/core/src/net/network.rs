use crate::error::{Error, Result};
use crate::net::block::{Block, BlockCache};
use crate::net::config::{MemoryMode, NetworkConfig};
use crate::net::frontend::{FrontEnd, FrontEndCache};
use crate::net::init::glorot;
use crate::ops::{affine_backward, affine_forward, log_softmax};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Two per-frame heads over the last block: unnormalized pseudo
/// log-likelihoods for the chain criterion and CE logits.
#[derive(Clone, Debug)]
pub struct NetworkOutput {
    pub chain: Tensor,
    pub ce_logits: Tensor,
}

impl NetworkOutput {
    pub fn ce_log_probs(&self) -> Tensor {
        log_softmax(&self.ce_logits).expect("logits are 2-D")
    }
}

#[derive(Clone, Debug)]
pub struct ForwardCache {
    front: Option<FrontEndCache>,
    blocks: Vec<BlockCache>,
    last_hidden: Tensor,
}

impl ForwardCache {
    /// Fingerprint of every relu pattern in the forward pass.
    pub fn relu_signature(&self) -> u64 {
        let mut h = 0;
        if let Some(f) = &self.front {
            h = crate::gradcheck::sign_signature(f.pre_activations(), h);
        }
        for b in &self.blocks {
            h = crate::gradcheck::sign_signature(b.pre_activation().values(), h);
        }
        h
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    pub cfg: NetworkConfig,
    pub front: Option<FrontEnd>,
    pub blocks: Vec<Block>,
    pub chain_w: Tensor,
    pub chain_b: Tensor,
    pub ce_w: Tensor,
    pub ce_b: Tensor,
}

impl Network {
    pub fn new(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(seed);
        let front = cfg
            .front_end
            .as_ref()
            .map(|fe| FrontEnd::new(fe, cfg.input_dim, &mut rng))
            .transpose()?;
        let mut din = cfg.stack_input_dim();
        let mut blocks = Vec::with_capacity(cfg.blocks.len());
        for b in &cfg.blocks {
            blocks.push(Block::new(b, din, &mut rng));
            din = b.proj_dim;
        }
        let out = cfg.output_dim;
        Ok(Self {
            cfg: cfg.clone(),
            front,
            blocks,
            chain_w: glorot(&[din, out], din, out, &mut rng),
            chain_b: Tensor::zeros(&[out]),
            ce_w: glorot(&[din, out], din, out, &mut rng),
            ce_b: Tensor::zeros(&[out]),
        })
    }

    fn include_current(&self) -> bool {
        self.cfg.mode == MemoryMode::Dfsmn
    }

    fn skip_source(&self, block: usize) -> Option<usize> {
        self.cfg.skip_junctions().into_iter().find(|&(to, _)| to == block).map(|(_, from)| from)
    }

    pub fn forward(&self, features: &Tensor) -> Result<(NetworkOutput, ForwardCache)> {
        let (_, fdim) = features.dims2()?;
        if fdim != self.cfg.input_dim {
            return Err(Error::Config(format!("network expects feature dim {}, got {fdim}", self.cfg.input_dim)));
        }
        let (stack_input, front) = match &self.front {
            Some(fe) => {
                let (x, c) = fe.forward(features)?;
                (x, Some(c))
            }
            None => (features.clone(), None),
        };
        let mut outs: Vec<Tensor> = Vec::with_capacity(self.blocks.len());
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (l, block) in self.blocks.iter().enumerate() {
            let x = if l == 0 { &stack_input } else { &outs[l - 1] };
            let skip = self.skip_source(l).map(|s| &outs[s]);
            let (out, cache) = block.forward(x, skip, self.include_current())?;
            outs.push(out);
            caches.push(cache);
        }
        let last_hidden = outs.pop().expect("at least one block");
        let chain = affine_forward(&last_hidden, &self.chain_w, &self.chain_b)?;
        let ce_logits = affine_forward(&last_hidden, &self.ce_w, &self.ce_b)?;
        Ok((NetworkOutput { chain, ce_logits }, ForwardCache { front, blocks: caches, last_hidden }))
    }

    /// Accumulates parameter gradients from the two head gradients; returns
    /// the gradient w.r.t. the input features.
    pub fn backward(&mut self, cache: &ForwardCache, d_chain: &Tensor, d_ce: &Tensor) -> Result<Tensor> {
        let gc = affine_backward(&cache.last_hidden, &self.chain_w, d_chain)?;
        self.chain_w.accumulate_grad(gc.dw.values());
        self.chain_b.accumulate_grad(gc.db.values());
        let ge = affine_backward(&cache.last_hidden, &self.ce_w, d_ce)?;
        self.ce_w.accumulate_grad(ge.dw.values());
        self.ce_b.accumulate_grad(ge.db.values());

        let n = self.blocks.len();
        let mut douts: Vec<Option<Tensor>> = vec![None; n];
        let mut dlast = gc.dx;
        for (d, e) in dlast.values_mut().iter_mut().zip(ge.dx.values()) {
            *d += e;
        }
        douts[n - 1] = Some(dlast);
        let include_current = self.include_current();
        let mut dstack = None;
        for l in (0..n).rev() {
            let g = douts[l].take().expect("every block output feeds the next stage");
            let skip = self.skip_source(l);
            let (dx, dskip) = self.blocks[l].backward(&cache.blocks[l], include_current, &g)?;
            if let Some(s) = skip {
                accumulate(&mut douts[s], dskip);
            }
            if l == 0 {
                dstack = Some(dx);
            } else {
                accumulate(&mut douts[l - 1], dx);
            }
        }
        let dstack = dstack.expect("block 0 visited");
        match (&mut self.front, &cache.front) {
            (Some(fe), Some(fc)) => fe.backward(fc, &dstack),
            _ => Ok(dstack),
        }
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.front.as_ref().map(FrontEnd::params).unwrap_or_default();
        for (l, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{l}.w1"), &b.w1));
            out.push((format!("block{l}.b1"), &b.b1));
            out.push((format!("block{l}.w2"), &b.w2));
            out.push((format!("block{l}.mem_a"), &b.mem.a));
            out.push((format!("block{l}.mem_c"), &b.mem.c));
        }
        out.push(("chain.w".into(), &self.chain_w));
        out.push(("chain.b".into(), &self.chain_b));
        out.push(("ce.w".into(), &self.ce_w));
        out.push(("ce.b".into(), &self.ce_b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.front.as_mut().map(FrontEnd::params_mut).unwrap_or_default();
        for (l, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{l}.w1"), &mut b.w1));
            out.push((format!("block{l}.b1"), &mut b.b1));
            out.push((format!("block{l}.w2"), &mut b.w2));
            out.push((format!("block{l}.mem_a"), &mut b.mem.a));
            out.push((format!("block{l}.mem_c"), &mut b.mem.c));
        }
        out.push(("chain.w".into(), &mut self.chain_w));
        out.push(("chain.b".into(), &mut self.chain_b));
        out.push(("ce.w".into(), &mut self.ce_w));
        out.push(("ce.b".into(), &mut self.ce_b));
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|(_, t)| t.values().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut off = 0;
        for (_, t) in self.params_mut() {
            let n = t.len();
            t.values_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|(_, t)| match t.grad() {
                Some(g) => g.to_vec(),
                None => vec![0.0; t.len()],
            })
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.params_mut() {
            t.zero_grad();
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, d) in acc.values_mut().iter_mut().zip(g.values()) {
                *a += d;
            }
        }
        None => *slot = Some(g),
    }
}

/// Chain-branch output for a feature matrix.
pub fn network_forward(net: &Network, features: &Tensor) -> Result<Tensor> {
    Ok(net.forward(features)?.0.chain)
}
