//! Network configuration, presets and the shape arithmetic derived from it
//! (receptive field, parameter count, skip-chain junctions).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Orders, strides and skip depth of one memory block. The coefficient
/// tensors themselves live in [`crate::net::MemoryBlock`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBlockSpec {
    /// Past taps beyond the current frame.
    pub n1: usize,
    /// Future taps beyond the current frame.
    pub n2: usize,
    pub s1: usize,
    pub s2: usize,
    /// Distance (in blocks) of the skip source when this block sits at a junction.
    pub skip_depth: usize,
}

impl MemoryBlockSpec {
    pub fn new(n1: usize, n2: usize, s1: usize, s2: usize, skip_depth: usize) -> Self {
        Self { n1, n2, s1, s2, skip_depth }
    }

    pub fn past_reach(&self) -> usize {
        self.n1 * self.s1
    }

    pub fn future_reach(&self) -> usize {
        self.n2 * self.s2
    }
}

/// `x -> relu(x W1 + b1) -> W2 -> memory block`. The memory block runs at
/// `proj_dim`, the bottleneck width.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub mem: MemoryBlockSpec,
    pub hidden_dim: usize,
    pub proj_dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    /// Square kernel extent, 3 or 5.
    pub kernel: usize,
    pub channels: usize,
    /// Halve the frequency axis (stride 2); the time axis is never strided.
    pub subsample: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontEndConfig {
    pub layers: Vec<ConvSpec>,
}

pub const FRONT_END_LAYERS: usize = 6;

impl FrontEndConfig {
    /// Kernels 5,5,5,3,3,3 with subsampling on layers 2, 4 and 6.
    pub fn with_channels(channels: [usize; FRONT_END_LAYERS]) -> Self {
        let layers = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| ConvSpec { kernel: if i < 3 { 5 } else { 3 }, channels: c, subsample: i % 2 == 1 })
            .collect();
        Self { layers }
    }

    pub fn desk() -> Self {
        Self::with_channels([8, 8, 16, 16, 32, 32])
    }

    pub fn paper() -> Self {
        Self::with_channels([32, 32, 64, 64, 128, 128])
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != FRONT_END_LAYERS {
            return Err(Error::Config(format!(
                "front end needs exactly {FRONT_END_LAYERS} conv layers, got {}",
                self.layers.len()
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel != 3 && l.kernel != 5 {
                return Err(Error::Config(format!("conv layer {}: kernel {} not in {{3, 5}}", i + 1, l.kernel)));
            }
            if l.channels == 0 {
                return Err(Error::Config(format!("conv layer {}: zero channels", i + 1)));
            }
            if l.subsample != (i % 2 == 1) {
                return Err(Error::Config(format!(
                    "conv layer {}: subsampling must be on every other layer (2, 4, 6)",
                    i + 1
                )));
            }
        }
        for (target, source) in self.shortcuts() {
            let stride: usize = (source..target).map(|i| if self.layers[i].subsample { 2 } else { 1 }).product();
            if stride > 2 {
                return Err(Error::Config(format!("shortcut into layer {target} spans two subsampling layers")));
            }
        }
        Ok(())
    }

    /// `(target, source)` stage pairs: the output of layer `target` (1-based)
    /// receives the input of layer `target - 1`, i.e. stage `target - 2`.
    /// One shortcut per kernel-size transition, spanning the two layers
    /// around it.
    pub fn shortcuts(&self) -> Vec<(usize, usize)> {
        (1..self.layers.len())
            .filter(|&i| self.layers[i].kernel != self.layers[i - 1].kernel)
            .map(|i| (i + 1, i - 1))
            .collect()
    }

    pub fn subsample_count(&self) -> usize {
        self.layers.iter().filter(|l| l.subsample).count()
    }

    /// Smallest feature dimension the stack accepts.
    pub fn min_input_dim(&self) -> usize {
        1 << self.subsample_count()
    }

    pub fn output_freq(&self, input_dim: usize) -> usize {
        self.layers.iter().fold(input_dim, |f, l| if l.subsample { f.div_ceil(2) } else { f })
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        self.layers.last().map_or(1, |l| l.channels) * self.output_freq(input_dim)
    }

    /// Frames of context each side along the time axis.
    pub fn reach(&self) -> usize {
        self.layers.iter().map(|l| (l.kernel - 1) / 2).sum()
    }

    pub fn param_count(&self) -> usize {
        let mut in_ch = 1;
        let mut stage_channels = vec![1];
        let mut n = 0;
        for l in &self.layers {
            n += l.channels * in_ch * l.kernel * l.kernel + l.channels;
            in_ch = l.channels;
            stage_channels.push(in_ch);
        }
        for (target, source) in self.shortcuts() {
            if self.shortcut_needs_projection(target, source, &stage_channels) {
                n += stage_channels[source] * stage_channels[target];
            }
        }
        n
    }

    pub(crate) fn shortcut_needs_projection(&self, target: usize, source: usize, stage_channels: &[usize]) -> bool {
        let strided = (source..target).any(|i| self.layers[i].subsample);
        strided || stage_channels[source] != stage_channels[target]
    }
}

/// How block outputs combine with earlier blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryMode {
    /// Skip connections only where the memory orders change; the current
    /// frame enters only through the i=0 / j=0 taps.
    Pyramidal,
    /// Baseline deep-FSMN update: skip from the previous block everywhere and
    /// a standalone current-frame term.
    Dfsmn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Desk,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub preset: Preset,
    pub mode: MemoryMode,
    pub input_dim: usize,
    pub front_end: Option<FrontEndConfig>,
    pub blocks: Vec<BlockConfig>,
    /// Number of pdf-ids.
    pub output_dim: usize,
    pub l2_coefficient: f64,
}

/// Past orders for ten paper-scale blocks; future orders are half of these.
pub const PAPER_PAST_ORDERS: [usize; 10] = [4, 4, 8, 8, 12, 12, 16, 16, 20, 20];
pub const PAPER_STRIDES: [usize; 10] = [1, 1, 1, 1, 1, 2, 2, 2, 2, 2];
pub const DESK_PAST_ORDERS: [usize; 4] = [2, 2, 4, 4];
pub const DESK_STRIDES: [usize; 4] = [1, 1, 2, 2];

/// Blocks for a schedule of past orders and strides; future order is
/// `n1 / 2` and every block uses skip depth 2.
pub fn schedule(past_orders: &[usize], strides: &[usize], hidden_dim: usize, proj_dim: usize) -> Vec<BlockConfig> {
    assert_eq!(past_orders.len(), strides.len());
    past_orders
        .iter()
        .zip(strides)
        .map(|(&n1, &s)| BlockConfig {
            mem: MemoryBlockSpec::new(n1, n1 / 2, s, s, 2),
            hidden_dim,
            proj_dim,
        })
        .collect()
}

impl NetworkConfig {
    pub fn desk(input_dim: usize, output_dim: usize) -> Self {
        Self {
            preset: Preset::Desk,
            mode: MemoryMode::Pyramidal,
            input_dim,
            front_end: Some(FrontEndConfig::desk()),
            blocks: schedule(&DESK_PAST_ORDERS, &DESK_STRIDES, 96, 32),
            output_dim,
            l2_coefficient: 1e-5,
        }
    }

    pub fn paper(input_dim: usize, output_dim: usize) -> Self {
        Self {
            preset: Preset::Paper,
            mode: MemoryMode::Pyramidal,
            input_dim,
            front_end: Some(FrontEndConfig::paper()),
            blocks: schedule(&PAPER_PAST_ORDERS, &PAPER_STRIDES, 1536, 256),
            output_dim,
            l2_coefficient: 1e-5,
        }
    }

    /// Same dims and depth with every block's memory spec replaced.
    pub fn with_memory(&self, mems: &[MemoryBlockSpec]) -> Self {
        assert_eq!(mems.len(), self.blocks.len());
        let mut cfg = self.clone();
        cfg.preset = Preset::Custom;
        for (b, m) in cfg.blocks.iter_mut().zip(mems) {
            b.mem = m.clone();
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("input and output dims must be positive".into()));
        }
        if self.blocks.is_empty() {
            return Err(Error::Config("at least one block is required".into()));
        }
        if let Some(fe) = &self.front_end {
            fe.validate()?;
            if self.input_dim < fe.min_input_dim() {
                return Err(Error::Config(format!(
                    "feature dim {} too small for the conv stack; minimal feature dim is {}",
                    self.input_dim,
                    fe.min_input_dim()
                )));
            }
        }
        for (l, b) in self.blocks.iter().enumerate() {
            if b.hidden_dim == 0 || b.proj_dim == 0 {
                return Err(Error::Config(format!("block {l}: dims must be positive")));
            }
            if b.mem.s1 == 0 || b.mem.s2 == 0 {
                return Err(Error::Config(format!("block {l}: strides must be >= 1")));
            }
            if b.mem.skip_depth == 0 {
                return Err(Error::Config(format!("block {l}: skip depth must be >= 1")));
            }
            if l > 0 && b.proj_dim != self.blocks[l - 1].proj_dim && self.mode == MemoryMode::Dfsmn {
                return Err(Error::Config(format!("block {l}: deep-FSMN skips need equal bottleneck widths")));
            }
        }
        for (to, from) in self.skip_junctions_unchecked() {
            let depth = self.blocks[to].mem.skip_depth;
            if self.mode == MemoryMode::Pyramidal && depth > to {
                return Err(Error::Config(format!("block {to}: skip depth {depth} exceeds block index")));
            }
            if self.blocks[to].proj_dim != self.blocks[from].proj_dim {
                return Err(Error::Config(format!("skip {from} -> {to}: bottleneck widths differ")));
            }
        }
        if self.preset != Preset::Custom {
            for w in self.blocks.windows(2) {
                if w[1].mem.n1 < w[0].mem.n1 || w[1].mem.n2 < w[0].mem.n2 {
                    return Err(Error::Config("pyramidal presets need non-decreasing orders with depth".into()));
                }
            }
        }
        if !(self.l2_coefficient >= 0.0) {
            return Err(Error::Config("l2 coefficient must be >= 0".into()));
        }
        Ok(())
    }

    fn skip_junctions_unchecked(&self) -> Vec<(usize, usize)> {
        match self.mode {
            MemoryMode::Dfsmn => (1..self.blocks.len()).map(|l| (l, l - 1)).collect(),
            MemoryMode::Pyramidal => (1..self.blocks.len())
                .filter(|&l| {
                    let (a, b) = (&self.blocks[l - 1].mem, &self.blocks[l].mem);
                    (a.n1, a.n2) != (b.n1, b.n2)
                })
                .map(|l| (l, l.saturating_sub(self.blocks[l].mem.skip_depth)))
                .collect(),
        }
    }

    /// `(block, source block)` for every skip-chain junction.
    pub fn skip_junctions(&self) -> Vec<(usize, usize)> {
        self.skip_junctions_unchecked()
    }

    /// Width of the first block's input.
    pub fn stack_input_dim(&self) -> usize {
        match &self.front_end {
            Some(fe) => fe.output_dim(self.input_dim),
            None => self.input_dim,
        }
    }

    pub fn receptive_field(&self) -> (usize, usize) {
        self.receptive_field_prefix(self.blocks.len())
    }

    /// Receptive field of the front end plus the first `k` blocks.
    pub fn receptive_field_prefix(&self, k: usize) -> (usize, usize) {
        let fe = self.front_end.as_ref().map_or(0, FrontEndConfig::reach);
        self.blocks[..k]
            .iter()
            .fold((fe, fe), |(p, f), b| (p + b.mem.past_reach(), f + b.mem.future_reach()))
    }

    pub fn param_count(&self) -> usize {
        let mut n = self.front_end.as_ref().map_or(0, FrontEndConfig::param_count);
        let mut din = self.stack_input_dim();
        for b in &self.blocks {
            n += affine_param_count(din, b.hidden_dim);
            n += b.hidden_dim * b.proj_dim;
            n += (b.mem.n1 + 1 + b.mem.n2 + 1) * b.proj_dim;
            din = b.proj_dim;
        }
        // chain head and CE head
        n + 2 * affine_param_count(din, self.output_dim)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

pub fn affine_param_count(din: usize, dout: usize) -> usize {
    din * dout + dout
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_front(blocks: Vec<BlockConfig>) -> NetworkConfig {
        NetworkConfig {
            preset: Preset::Custom,
            mode: MemoryMode::Pyramidal,
            input_dim: 4,
            front_end: None,
            blocks,
            output_dim: 3,
            l2_coefficient: 0.0,
        }
    }

    #[test]
    fn receptive_field_examples() {
        let one = BlockConfig { mem: MemoryBlockSpec::new(4, 0, 2, 1, 1), hidden_dim: 4, proj_dim: 4 };
        assert_eq!(no_front(vec![one.clone()]).receptive_field(), (8, 0));
        assert_eq!(no_front(vec![one.clone(), one]).receptive_field(), (16, 0));
    }

    #[test]
    fn paper_schedule_receptive_field() {
        let cfg = NetworkConfig::paper(40, 10);
        cfg.validate().unwrap();
        let past: usize = PAPER_PAST_ORDERS.iter().zip(PAPER_STRIDES).map(|(n, s)| n * s).sum();
        let future: usize = PAPER_PAST_ORDERS.iter().zip(PAPER_STRIDES).map(|(n, s)| n / 2 * s).sum();
        assert_eq!(past, 204);
        assert_eq!(future, 102);
        assert_eq!(cfg.receptive_field(), (past + 9, future + 9));
    }

    #[test]
    fn context_grows_with_depth() {
        for cfg in [NetworkConfig::paper(40, 10), NetworkConfig::desk(8, 10)] {
            let fields: Vec<_> = (0..=cfg.blocks.len()).map(|k| cfg.receptive_field_prefix(k)).collect();
            for w in fields.windows(2) {
                assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
        }
    }

    #[test]
    fn skip_junctions_follow_order_changes() {
        let cfg = NetworkConfig::paper(40, 10);
        assert_eq!(cfg.skip_junctions(), vec![(2, 0), (4, 2), (6, 4), (8, 6)]);
        let desk = NetworkConfig::desk(8, 10);
        assert_eq!(desk.skip_junctions(), vec![(2, 0)]);
        let mut dfsmn = desk.clone();
        dfsmn.mode = MemoryMode::Dfsmn;
        assert_eq!(dfsmn.skip_junctions().len(), 3);
    }

    #[test]
    fn junction_count_equals_order_changes_for_any_schedule() {
        let mut rng = crate::rng::Rng::new(11);
        for _ in 0..50 {
            let n = rng.int_inclusive(1, 8);
            let mut orders = vec![rng.int_inclusive(0, 3)];
            for _ in 1..n {
                let last = *orders.last().unwrap();
                orders.push(last + rng.int_inclusive(0, 1) * rng.int_inclusive(1, 3));
            }
            let strides = vec![1; n];
            let mut cfg = no_front(schedule(&orders, &strides, 4, 4));
            for b in &mut cfg.blocks {
                b.mem.skip_depth = 1;
            }
            let changes = orders.windows(2).filter(|w| w[0] != w[1]).count();
            assert_eq!(cfg.skip_junctions().len(), changes);
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn pyramid_is_cheaper_than_uniform() {
        let pyr = NetworkConfig::paper(40, 3000);
        let uniform_mems: Vec<_> = PAPER_STRIDES.iter().map(|&s| MemoryBlockSpec::new(20, 10, s, s, 2)).collect();
        let uni = pyr.with_memory(&uniform_mems);
        assert!(pyr.param_count() < uni.param_count());
    }

    #[test]
    fn affine_count() {
        assert_eq!(affine_param_count(2, 3), 9);
    }

    #[test]
    fn desk_param_count_by_hand() {
        // front end: conv weights + biases per layer, plus the 8->16 projection
        let fe = (8 * 25 + 8) + (8 * 8 * 25 + 8) + (16 * 8 * 25 + 16) + (16 * 16 * 9 + 16) + (32 * 16 * 9 + 32) + (32 * 32 * 9 + 32) + 8 * 16;
        assert_eq!(fe, 21368);
        // F = 8 halves three times -> 1 bin x 32 channels
        let block_affine = (32 * 96 + 96) + 96 * 32;
        let taps = (3 + 2) * 32 * 2 + (5 + 3) * 32 * 2;
        let heads = 2 * (32 * 10 + 10);
        assert_eq!(NetworkConfig::desk(8, 10).param_count(), fe + 4 * block_affine + taps + heads);
        assert_eq!(NetworkConfig::desk(8, 10).param_count(), 47820);
    }

    #[test]
    fn validation_errors() {
        let mut cfg = NetworkConfig::desk(4, 10);
        assert!(cfg.validate().unwrap_err().to_string().contains("minimal feature dim is 8"));
        cfg.input_dim = 8;
        cfg.validate().unwrap();
        let mut bad = cfg.clone();
        bad.front_end.as_mut().unwrap().layers[1].subsample = false;
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.front_end.as_mut().unwrap().layers.pop();
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.blocks[2].mem.skip_depth = 3;
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.blocks.swap(0, 3);
        assert!(bad.validate().is_err(), "decreasing orders in a preset");
    }

    #[test]
    fn shortcut_at_kernel_transition() {
        let fe = FrontEndConfig::desk();
        assert_eq!(fe.shortcuts(), vec![(4, 2)]);
        assert_eq!(fe.reach(), 9);
        assert_eq!(fe.output_dim(8), 32);
        assert_eq!(fe.output_dim(12), 64);
    }

    #[test]
    fn hash_tracks_config() {
        let a = NetworkConfig::desk(8, 10);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.output_dim = 11;
        assert_ne!(a.hash(), b.hash());
    }
}
