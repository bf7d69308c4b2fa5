//! Finite-difference checks of every layer and criterion over many seeds.

use serde::Serialize;

use crate::gradcheck::{grad_check, grad_check_smooth, sign_signature, GradCheckConfig, GradCheckReport, Probe};
use crate::graph::{build_denominator_graph, build_numerator_graph_with_lm, num_pdfs, PhoneLm};
use crate::loss::{ce_loss, joint_loss, l2_penalty, lfmmi_loss};
use crate::net::config::{schedule, FrontEndConfig, MemoryBlockSpec, MemoryMode, NetworkConfig, Preset};
use crate::net::{memory_block_backward, memory_block_forward, Network};
use crate::ops::{affine_backward, affine_forward, conv2d_backward, conv2d_forward, relu_backward, relu_forward, Padding};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Relative tolerance for composite layers and losses.
pub const TOL: f64 = 1e-5;
/// Relative tolerance for elementwise ops.
pub const ELEMENTWISE_TOL: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct CaseResult {
    pub name: &'static str,
    pub tol: f64,
    pub seeds: usize,
    pub checked: usize,
    pub excluded: usize,
    pub max_rel_err: f64,
    /// Seeds whose check failed.
    pub failed_seeds: Vec<u64>,
}

impl CaseResult {
    pub fn pass(&self) -> bool {
        self.failed_seeds.is_empty() && self.checked > 0
    }
}

type Check = fn(u64, f64) -> GradCheckReport;

/// All cases in a fixed order.
pub const CASES: [(&str, f64, Check); 9] = [
    ("affine", TOL, check_affine),
    ("relu", ELEMENTWISE_TOL, check_relu),
    ("conv2d", TOL, check_conv2d),
    ("memory_block", TOL, check_memory_block),
    ("network", TOL, check_network),
    ("ce", TOL, check_ce),
    ("lfmmi", TOL, check_lfmmi),
    ("joint", TOL, check_joint),
    ("l2", ELEMENTWISE_TOL, check_l2),
];

/// Runs every case for `seeds` consecutive seeds starting at `first_seed`.
pub fn run_gradient_suite(first_seed: u64, seeds: u64) -> Vec<CaseResult> {
    CASES.iter().map(|&(name, tol, check)| run_case(name, tol, check, first_seed, seeds)).collect()
}

pub fn run_case(name: &'static str, tol: f64, check: Check, first_seed: u64, seeds: u64) -> CaseResult {
    let mut res = CaseResult { name, tol, seeds: seeds as usize, checked: 0, excluded: 0, max_rel_err: 0.0, failed_seeds: vec![] };
    for seed in first_seed..first_seed + seeds {
        let r = check(seed, tol);
        res.checked += r.checked;
        res.excluded += r.excluded;
        res.max_rel_err = res.max_rel_err.max(r.max_rel_err);
        if !r.pass {
            res.failed_seeds.push(seed);
        }
    }
    res
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
}

/// Splits `p` into tensors of the given shapes.
fn unpack(p: &[f64], shapes: &[&[usize]]) -> Vec<Tensor> {
    let mut off = 0;
    shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            off += n;
            Tensor::from_vec(s, p[off - n..off].to_vec()).expect("shape matches slice")
        })
        .collect()
}

fn concat(ts: &[&Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.values().iter().copied()).collect()
}

fn cfg(eps: f64, tol: f64) -> GradCheckConfig {
    GradCheckConfig { eps, tol, ..Default::default() }
}

pub fn check_affine(seed: u64, tol: f64) -> GradCheckReport {
    let mut rng = Rng::new(seed);
    let (t, din, dout) = (rng.int_inclusive(1, 5), rng.int_inclusive(1, 6), rng.int_inclusive(1, 6));
    let x = Tensor::randn(&[t, din], 1.0, &mut rng);
    let w = Tensor::randn(&[din, dout], 1.0, &mut rng);
    let b = Tensor::randn(&[dout], 1.0, &mut rng);
    let up = Tensor::randn(&[t, dout], 1.0, &mut rng);
    let g = affine_backward(&x, &w, &up).expect("shapes agree");
    let shapes: [&[usize]; 3] = [x.shape(), w.shape(), b.shape()];
    let f = |p: &[f64]| {
        let v = unpack(p, &shapes);
        dot(&affine_forward(&v[0], &v[1], &v[2]).expect("shapes agree"), &up)
    };
    grad_check_smooth(&concat(&[&x, &w, &b]), &concat(&[&g.dx, &g.dw, &g.db]), f, &cfg(1e-5, tol))
}

pub fn check_relu(seed: u64, tol: f64) -> GradCheckReport {
    let mut rng = Rng::new(seed);
    let x = Tensor::randn(&[rng.int_inclusive(1, 5), rng.int_inclusive(1, 6)], 1.0, &mut rng);
    let up = Tensor::randn(x.shape(), 1.0, &mut rng);
    let dx = relu_backward(&x, &up).expect("shapes agree");
    let shape = x.shape().to_vec();
    let f = |p: &[f64]| Probe {
        value: dot(&relu_forward(&Tensor::from_vec(&shape, p.to_vec()).expect("shape")), &up),
        signature: sign_signature(p, 0),
    };
    grad_check(x.values(), dx.values(), f, &cfg(1e-6, tol))
}

pub fn check_conv2d(seed: u64, tol: f64) -> GradCheckReport {
    let mut rng = Rng::new(seed);
    let (c, k) = (rng.int_inclusive(1, 3), rng.int_inclusive(1, 3));
    let (h, w) = (rng.int_inclusive(3, 6), rng.int_inclusive(3, 8));
    let (kh, kw) = (2 * rng.int_inclusive(0, 1) + 1, 2 * rng.int_inclusive(0, 1) + 1);
    let stride = (rng.int_inclusive(1, 2), rng.int_inclusive(1, 2));
    let padding = if rng.below(2) == 0 { Padding::Same } else { Padding::Valid };
    let x = Tensor::randn(&[c, h, w], 1.0, &mut rng);
    let kern = Tensor::randn(&[k, c, kh, kw], 1.0, &mut rng);
    let out = conv2d_forward(&x, &kern, stride, padding).expect("kernel fits");
    let up = Tensor::randn(out.shape(), 1.0, &mut rng);
    let (dx, dk) = conv2d_backward(&x, &kern, stride, padding, &up).expect("kernel fits");
    let shapes: [&[usize]; 2] = [x.shape(), kern.shape()];
    let f = |p: &[f64]| {
        let v = unpack(p, &shapes);
        dot(&conv2d_forward(&v[0], &v[1], stride, padding).expect("kernel fits"), &up)
    };
    grad_check_smooth(&concat(&[&x, &kern]), &concat(&[&dx, &dk]), f, &cfg(1e-5, tol))
}

pub fn check_memory_block(seed: u64, tol: f64) -> GradCheckReport {
    let mut rng = Rng::new(seed);
    let spec = MemoryBlockSpec::new(rng.int_inclusive(0, 4), rng.int_inclusive(0, 3), rng.int_inclusive(1, 2), rng.int_inclusive(1, 2), 2);
    let include_current = rng.below(2) == 1;
    let (t, d) = (rng.int_inclusive(1, 9), rng.int_inclusive(1, 4));
    let h = Tensor::randn(&[t, d], 1.0, &mut rng);
    let skip = Tensor::randn(&[t, d], 1.0, &mut rng);
    let a = Tensor::randn(&[spec.n1 + 1, d], 1.0, &mut rng);
    let c = Tensor::randn(&[spec.n2 + 1, d], 1.0, &mut rng);
    let up = Tensor::randn(&[t, d], 1.0, &mut rng);
    let g = memory_block_backward(&h, &a, &c, &spec, include_current, &up).expect("shapes agree");
    let shapes: [&[usize]; 4] = [h.shape(), skip.shape(), a.shape(), c.shape()];
    let f = |p: &[f64]| {
        let v = unpack(p, &shapes);
        dot(&memory_block_forward(&v[0], Some(&v[1]), &v[2], &v[3], &spec, include_current).expect("shapes agree"), &up)
    };
    grad_check_smooth(&concat(&[&h, &skip, &a, &c]), &concat(&[&g.dh, &g.dskip, &g.da, &g.dc]), f, &cfg(1e-5, tol))
}

fn small_network_config(mode: MemoryMode) -> NetworkConfig {
    let mut blocks = schedule(&[1, 2], &[1, 2], 6, 4);
    for b in &mut blocks {
        b.mem.skip_depth = 1;
    }
    NetworkConfig {
        preset: Preset::Custom,
        mode,
        input_dim: 8,
        front_end: Some(FrontEndConfig::with_channels([2, 2, 3, 3, 2, 2])),
        blocks,
        output_dim: 6,
        l2_coefficient: 0.0,
    }
}

/// Parameters and input features of a small CNN + FSMN network at once.
pub fn check_network(seed: u64, tol: f64) -> GradCheckReport {
    let mode = if seed.is_multiple_of(2) { MemoryMode::Pyramidal } else { MemoryMode::Dfsmn };
    let ncfg = small_network_config(mode);
    let mut net = Network::new(&ncfg, seed).expect("valid config");
    let mut rng = Rng::new(seed ^ 0x5eed);
    for (_, p) in net.params_mut() {
        // nonzero biases and memory taps so every path carries gradient
        if p.values().iter().all(|&v| v == 0.0) {
            *p = Tensor::randn(p.shape(), 0.3, &mut rng);
        }
    }
    let frames = rng.int_inclusive(3, 7);
    let feats = Tensor::randn(&[frames, 8], 1.0, &mut rng);
    let (out, cache) = net.forward(&feats).expect("valid input");
    let gc = Tensor::randn(out.chain.shape(), 1.0, &mut rng);
    let ge = Tensor::randn(out.ce_logits.shape(), 1.0, &mut rng);
    net.zero_grads();
    let dfeat = net.backward(&cache, &gc, &ge).expect("valid cache");
    let np = net.num_params();
    let theta = [net.flat_params(), feats.values().to_vec()].concat();
    let analytic = [net.flat_grads(), dfeat.values().to_vec()].concat();
    let template = net.clone();
    let f = |p: &[f64]| {
        let mut n = template.clone();
        n.set_flat_params(&p[..np]);
        let x = Tensor::from_vec(&[frames, 8], p[np..].to_vec()).expect("shape");
        let (o, c) = n.forward(&x).expect("valid input");
        Probe { value: dot(&o.chain, &gc) + dot(&o.ce_logits, &ge), signature: c.relu_signature() }
    };
    // piecewise multilinear per coordinate, so a wide step only trims round-off
    grad_check(&theta, &analytic, f, &cfg(1e-4, tol))
}

struct SequenceInstance {
    num: crate::graph::Graph,
    den: crate::graph::Graph,
    loglik: Tensor,
    logits: Tensor,
    targets: Vec<u32>,
}

fn sequence_instance(seed: u64) -> SequenceInstance {
    let mut rng = Rng::new(seed);
    let v = rng.int_inclusive(2, 3) as u32;
    let t = rng.int_inclusive(3, 7);
    let n = rng.int_inclusive(1, 3.min(t));
    let phones: Vec<u32> = (0..n).map(|_| rng.below(v as usize) as u32).collect();
    let other: Vec<u32> = (0..4).map(|_| rng.below(v as usize) as u32).collect();
    let lm = PhoneLm::estimate(&[phones.clone(), other], v, 2, 0.1).expect("valid transcripts");
    let p = num_pdfs(v);
    SequenceInstance {
        num: build_numerator_graph_with_lm(&phones, t, &lm).expect("feasible"),
        den: build_denominator_graph(&lm, t).expect("feasible"),
        loglik: Tensor::randn(&[t, p], 1.0, &mut rng),
        logits: Tensor::randn(&[t, p], 1.0, &mut rng),
        targets: (0..t).map(|_| rng.below(p) as u32).collect(),
    }
}

pub fn check_ce(seed: u64, tol: f64) -> GradCheckReport {
    let x = sequence_instance(seed);
    let r = ce_loss(&x.logits, &x.targets).expect("valid targets");
    let shape = x.logits.shape().to_vec();
    let f = |p: &[f64]| ce_loss(&Tensor::from_vec(&shape, p.to_vec()).expect("shape"), &x.targets).expect("valid").value;
    grad_check_smooth(x.logits.values(), r.grad.values(), f, &cfg(1e-5, tol))
}

pub fn check_lfmmi(seed: u64, tol: f64) -> GradCheckReport {
    let x = sequence_instance(seed);
    let k = 0.5 + Rng::new(seed).uniform();
    let r = lfmmi_loss(&x.num, &x.den, &x.loglik, k).expect("feasible");
    let shape = x.loglik.shape().to_vec();
    let f = |p: &[f64]| {
        lfmmi_loss(&x.num, &x.den, &Tensor::from_vec(&shape, p.to_vec()).expect("shape"), k).expect("feasible").value
    };
    grad_check_smooth(x.loglik.values(), r.grad.values(), f, &cfg(1e-5, tol))
}

pub fn check_joint(seed: u64, tol: f64) -> GradCheckReport {
    let x = sequence_instance(seed);
    let alpha = Rng::new(seed).uniform();
    let j = joint_loss(&x.num, &x.den, &x.loglik, &x.logits, &x.targets, 1.0, alpha).expect("feasible");
    let shapes: [&[usize]; 2] = [x.loglik.shape(), x.logits.shape()];
    let f = |p: &[f64]| {
        let v = unpack(p, &shapes);
        joint_loss(&x.num, &x.den, &v[0], &v[1], &x.targets, 1.0, alpha).expect("feasible").value
    };
    grad_check_smooth(&concat(&[&x.loglik, &x.logits]), &concat(&[&j.chain_grad, &j.ce_grad]), f, &cfg(1e-5, tol))
}

pub fn check_l2(seed: u64, tol: f64) -> GradCheckReport {
    let mut rng = Rng::new(seed);
    let theta: Vec<f64> = (0..rng.int_inclusive(1, 30)).map(|_| rng.normal()).collect();
    let c = rng.uniform_range(1e-6, 0.1);
    let (_, g) = l2_penalty(&theta, c);
    grad_check_smooth(&theta, &g, |t| l2_penalty(t, c).0, &cfg(1e-5, tol))
}
