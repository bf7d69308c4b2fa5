//! Log-domain forward-backward over time-layered graphs.

use crate::error::{Error, Result};
use crate::graph::{Graph, Layering};
use crate::ops::logsumexp;
use crate::tensor::Tensor;

const NEG_INF: f64 = f64::NEG_INFINITY;

/// Posterior probability of emitting each pdf-id at each frame.
#[derive(Clone, Debug)]
pub struct Occupancy {
    /// `T x num_pdfs`.
    pub gamma: Tensor,
}

#[derive(Clone, Debug)]
pub struct ForwardBackward {
    /// Log-sum over all complete paths, from the forward pass.
    pub total: f64,
    /// The same quantity from the backward pass.
    pub backward_total: f64,
    pub occupancy: Occupancy,
}

pub(crate) fn check_loglik(g: &Graph, loglik: &Tensor) -> Result<(usize, usize)> {
    let (frames, pdfs) = loglik.dims2()?;
    if !loglik.is_finite() {
        return Err(Error::NonFinite("log-likelihoods".into()));
    }
    if let Some(m) = g.max_pdf() {
        if m as usize >= pdfs {
            return Err(Error::Shape(format!("graph uses pdf {m} but log-likelihoods have {pdfs} columns")));
        }
    }
    Ok((frames, pdfs))
}

#[inline]
fn arc_score(g: &Graph, loglik: &Tensor, k: f64, ai: usize, t: usize) -> f64 {
    let a = &g.arcs[ai];
    let pdf = a.pdf.expect("layered graphs are epsilon-free") as usize;
    k * loglik.at2(t, pdf) + a.weight
}

/// Scratch for a max-shifted log-sum-exp per target state.
struct Accumulator {
    max: Vec<f64>,
    sum: Vec<f64>,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Self { max: vec![NEG_INF; n], sum: vec![0.0; n] }
    }

    /// `out[target] = logsumexp` of the scores routed to each target.
    fn reduce(&mut self, items: &[(usize, f64)], out: &mut [f64]) {
        for &(s, v) in items {
            if v > self.max[s] {
                self.max[s] = v;
            }
        }
        for &(s, v) in items {
            if self.max[s] > NEG_INF {
                self.sum[s] += (v - self.max[s]).exp();
            }
        }
        // Targets left at -inf keep their initial -inf: every state is
        // written at exactly one frame.
        for &(s, _) in items {
            if self.max[s] > NEG_INF {
                out[s] = self.max[s] + self.sum[s].ln();
                self.max[s] = NEG_INF;
                self.sum[s] = 0.0;
            }
        }
    }
}

/// Arc score is `k * loglik[t, pdf] + log_weight`. Requires every state to
/// sit at a single frame index (see [`Layering`]); unroll compact graphs
/// first.
pub fn forward_backward(g: &Graph, loglik: &Tensor, k: f64) -> Result<ForwardBackward> {
    let (frames, pdfs) = check_loglik(g, loglik)?;
    let lay = Layering::new(g, frames)?;
    let (alpha, total) = forward(g, &lay, loglik, k)?;
    let mut acc = Accumulator::new(g.num_states);
    let mut beta = vec![NEG_INF; g.num_states];
    for &(s, w) in &lay.finals {
        beta[s] = w;
    }
    let mut items = Vec::new();
    for t in (0..frames).rev() {
        items.clear();
        items.extend(
            lay.arcs_by_frame[t]
                .iter()
                .map(|&ai| (g.arcs[ai].src, arc_score(g, loglik, k, ai, t) + beta[g.arcs[ai].dst])),
        );
        acc.reduce(&items, &mut beta);
    }
    let backward_total = beta[g.start];

    let mut gamma = Tensor::zeros(&[frames, pdfs]);
    for t in 0..frames {
        let row = gamma.row_mut(t);
        for &ai in &lay.arcs_by_frame[t] {
            let a = &g.arcs[ai];
            let lp = alpha[a.src] + arc_score(g, loglik, k, ai, t) + beta[a.dst] - total;
            row[a.pdf.expect("epsilon-free") as usize] += lp.exp();
        }
    }
    Ok(ForwardBackward { total, backward_total, occupancy: Occupancy { gamma } })
}

/// Forward pass only.
pub fn forward_total(g: &Graph, loglik: &Tensor, k: f64) -> Result<f64> {
    let (frames, _) = check_loglik(g, loglik)?;
    let lay = Layering::new(g, frames)?;
    Ok(forward(g, &lay, loglik, k)?.1)
}

fn forward(g: &Graph, lay: &Layering, loglik: &Tensor, k: f64) -> Result<(Vec<f64>, f64)> {
    let mut acc = Accumulator::new(g.num_states);
    let mut alpha = vec![NEG_INF; g.num_states];
    alpha[g.start] = 0.0;
    let mut items = Vec::new();
    for (t, arcs) in lay.arcs_by_frame.iter().enumerate() {
        // Sources sit at frame t and targets at t + 1, so updating in place
        // never reads a value written this frame.
        items.clear();
        items.extend(arcs.iter().map(|&ai| (g.arcs[ai].dst, alpha[g.arcs[ai].src] + arc_score(g, loglik, k, ai, t))));
        acc.reduce(&items, &mut alpha);
    }
    let ends: Vec<f64> = lay.finals.iter().map(|&(s, w)| alpha[s] + w).collect();
    let total = logsumexp(&ends);
    if total == NEG_INF {
        return Err(Error::Infeasible(format!("no complete path of {} frames", lay.frames)));
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("forward total".into()));
    }
    Ok((alpha, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn loglik(rng: &mut Rng, t: usize, p: usize) -> Tensor {
        Tensor::randn(&[t, p], 1.0, rng)
    }

    /// Brute force: total and gamma by enumerating every path.
    pub(crate) fn enumerate_fb(g: &Graph, ll: &Tensor, k: f64) -> (f64, Tensor) {
        let (t, p) = ll.dims2().unwrap();
        let paths = g.enumerate_paths(t, 10_000).unwrap();
        let scores: Vec<f64> = paths
            .iter()
            .map(|path| path.weight + path.pdfs.iter().enumerate().map(|(i, &d)| k * ll.at2(i, d as usize)).sum::<f64>())
            .collect();
        let total = logsumexp(&scores);
        let mut gamma = Tensor::zeros(&[t, p]);
        for (path, s) in paths.iter().zip(&scores) {
            let post = (s - total).exp();
            for (i, &d) in path.pdfs.iter().enumerate() {
                let v = gamma.at2(i, d as usize) + post;
                gamma.set2(i, d as usize, v);
            }
        }
        (total, gamma)
    }

    #[test]
    fn single_path() {
        let mut g = Graph::new(3, 0);
        g.add_arc(0, 1, Some(1), -0.5, None);
        g.add_arc(1, 2, Some(0), -0.25, None);
        g.set_final(2, -0.125);
        let ll = Tensor::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.7]]).unwrap();
        let fb = forward_backward(&g, &ll, 0.5).unwrap();
        let expect = 0.5 * (-1.0 + 2.0) - 0.5 - 0.25 - 0.125;
        assert!((fb.total - expect).abs() < 1e-15);
        assert_eq!(fb.occupancy.gamma.values(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn symmetric_branch_splits_evenly() {
        let mut g = Graph::new(4, 0);
        g.add_arc(0, 1, Some(0), 0.0, None);
        g.add_arc(0, 2, Some(1), 0.0, None);
        g.add_arc(1, 3, Some(2), 0.0, None);
        g.add_arc(2, 3, Some(2), 0.0, None);
        g.set_final(3, 0.0);
        let ll = Tensor::filled(&[2, 3], 0.4);
        let fb = forward_backward(&g, &ll, 1.0).unwrap();
        let expect = [0.5, 0.5, 0.0, 0.0, 0.0, 1.0];
        for (a, b) in fb.occupancy.gamma.values().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn matches_enumeration_on_random_graphs() {
        let mut rng = Rng::new(31);
        let mut tested = 0;
        while tested < 60 {
            let g = Graph::random(&mut rng, 6, 12, 4);
            let t = rng.int_inclusive(1, 6);
            let Ok(u) = g.unroll(t) else { continue };
            if u.enumerate_paths(t, 10_000).is_err() {
                continue;
            }
            let ll = loglik(&mut rng, t, 4);
            let k = rng.uniform_range(0.3, 1.5);
            let fb = forward_backward(&u, &ll, k).unwrap();
            let (total, gamma) = enumerate_fb(&u, &ll, k);
            assert!((fb.total - total).abs() < 1e-9);
            assert!((fb.total - fb.backward_total).abs() < 1e-10);
            for (a, b) in fb.occupancy.gamma.values().iter().zip(gamma.values()) {
                assert!((a - b).abs() < 1e-9);
            }
            for r in 0..t {
                assert!((fb.occupancy.gamma.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
            tested += 1;
        }
    }

    #[test]
    fn errors() {
        let mut g = Graph::new(2, 0);
        g.add_arc(0, 1, Some(0), 0.0, None);
        g.set_final(1, 0.0);
        let ll = Tensor::zeros(&[2, 1]);
        assert!(matches!(forward_backward(&g, &ll, 1.0), Err(Error::Infeasible(_))));
        let ll = Tensor::from_vec(&[1, 1], vec![f64::NAN]).unwrap();
        assert!(matches!(forward_backward(&g, &ll, 1.0), Err(Error::NonFinite(_))));
        let mut h = g.clone();
        h.arcs[0].pdf = Some(3);
        assert!(matches!(forward_backward(&h, &Tensor::zeros(&[1, 2]), 1.0), Err(Error::Shape(_))));
    }
}
