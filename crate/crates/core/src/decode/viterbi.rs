//! Best-path search over time-layered graphs.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Layering};
use crate::loss::check_loglik;
use crate::tensor::Tensor;

const NEG_INF: f64 = f64::NEG_INFINITY;

/// A decoded phone sequence with its scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub phones: Vec<u32>,
    /// Acoustic log-score of the best alignment (graph weights included).
    pub am_score: f64,
    pub lm_score: f64,
    pub combined: f64,
}

impl Hypothesis {
    pub fn new(phones: Vec<u32>, am_score: f64) -> Self {
        Self { phones, am_score, lm_score: 0.0, combined: am_score }
    }
}

/// Best path as arc indices, plus its score.
#[derive(Clone, Debug, PartialEq)]
pub struct BestPath {
    pub score: f64,
    pub arcs: Vec<usize>,
}

impl BestPath {
    pub fn phones(&self, g: &Graph) -> Vec<u32> {
        self.arcs.iter().filter_map(|&a| g.arcs[a].olabel).collect()
    }

    pub fn pdfs(&self, g: &Graph) -> Vec<u32> {
        self.arcs.iter().filter_map(|&a| g.arcs[a].pdf).collect()
    }
}

fn chain(back: &[Option<usize>], g: &Graph, mut state: usize) -> Vec<usize> {
    let mut arcs = Vec::new();
    while let Some(a) = back[state] {
        arcs.push(a);
        state = g.arcs[a].src;
    }
    arcs.reverse();
    arcs
}

/// Max-scoring path under arc score `k * loglik[t, pdf] + log_weight`.
/// Equal scores go to the lexicographically smallest arc-index sequence.
pub fn viterbi_path(g: &Graph, loglik: &Tensor, k: f64) -> Result<BestPath> {
    let (frames, _) = check_loglik(g, loglik)?;
    let lay = Layering::new(g, frames)?;
    let mut score = vec![NEG_INF; g.num_states];
    let mut back: Vec<Option<usize>> = vec![None; g.num_states];
    score[g.start] = 0.0;
    for (t, arcs) in lay.arcs_by_frame.iter().enumerate() {
        for &ai in arcs {
            let a = &g.arcs[ai];
            if score[a.src] == NEG_INF {
                continue;
            }
            let s = score[a.src] + k * loglik.at2(t, a.pdf.expect("epsilon-free") as usize) + a.weight;
            let better = match s.partial_cmp(&score[a.dst]) {
                Some(Ordering::Greater) => true,
                Some(Ordering::Equal) => {
                    let mut cand = chain(&back, g, a.src);
                    cand.push(ai);
                    cand < chain(&back, g, a.dst)
                }
                _ => false,
            };
            if better {
                score[a.dst] = s;
                back[a.dst] = Some(ai);
            }
        }
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for &(s, w) in &lay.finals {
        if score[s] == NEG_INF {
            continue;
        }
        let total = score[s] + w;
        let replace = match &best {
            None => true,
            Some((b, arcs)) => total > *b || (total == *b && chain(&back, g, s) < *arcs),
        };
        if replace {
            best = Some((total, chain(&back, g, s)));
        }
    }
    let (score, arcs) = best.ok_or_else(|| Error::Infeasible(format!("no complete path of {frames} frames")))?;
    Ok(BestPath { score, arcs })
}

pub fn viterbi(g: &Graph, loglik: &Tensor, k: f64) -> Result<Hypothesis> {
    let p = viterbi_path(g, loglik, k)?;
    Ok(Hypothesis::new(p.phones(g), p.score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn path_score(ll: &Tensor, k: f64, p: &crate::graph::Path) -> f64 {
        p.weight + p.pdfs.iter().enumerate().map(|(t, &d)| k * ll.at2(t, d as usize)).sum::<f64>()
    }

    #[test]
    fn single_path_score() {
        let mut g = Graph::new(3, 0);
        g.add_arc(0, 1, Some(0), -0.5, Some(7));
        g.add_arc(1, 2, Some(1), -0.5, None);
        g.set_final(2, -1.0);
        let ll = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let h = viterbi(&g, &ll, 1.0).unwrap();
        assert_eq!(h.phones, vec![7]);
        assert_eq!(h.am_score, 1.0 - 0.5 + 3.0 - 0.5 - 1.0);
    }

    #[test]
    fn strictly_better_path_wins() {
        let mut g = Graph::new(3, 0);
        g.add_arc(0, 1, Some(0), 0.0, Some(0));
        g.add_arc(0, 2, Some(1), 0.0, Some(1));
        g.set_final(1, 0.0);
        g.set_final(2, 0.0);
        let ll = Tensor::from_rows(&[vec![0.0, 0.1]]).unwrap();
        assert_eq!(viterbi(&g, &ll, 1.0).unwrap().phones, vec![1]);
    }

    #[test]
    fn ties_take_the_smallest_arc_sequence() {
        // Equal-score paths [1, 2] and [0, 3] meet in state 3; [1, 2] is
        // relaxed first, then [0, 3] replaces it.
        let mut g = Graph::new(4, 0);
        g.add_arc(0, 2, Some(0), 0.0, Some(5)); // arc 0
        g.add_arc(0, 1, Some(0), 0.0, Some(6)); // arc 1
        g.add_arc(1, 3, Some(0), 0.0, None); // arc 2
        g.add_arc(2, 3, Some(0), 0.0, None); // arc 3
        g.set_final(3, 0.0);
        let p = viterbi_path(&g, &Tensor::zeros(&[2, 1]), 1.0).unwrap();
        assert_eq!(p.arcs, vec![0, 3]);
    }

    #[test]
    fn matches_enumeration_argmax() {
        let mut rng = Rng::new(41);
        let mut tested = 0;
        while tested < 50 {
            let g = Graph::random(&mut rng, 6, 12, 4);
            let t = rng.int_inclusive(1, 6);
            let Ok(u) = g.unroll(t) else { continue };
            let Ok(paths) = u.enumerate_paths(t, 10_000) else { continue };
            let ll = Tensor::randn(&[t, 4], 1.0, &mut rng);
            let best = paths
                .iter()
                .map(|p| (path_score(&ll, 1.0, p), p))
                .fold(None::<(f64, &crate::graph::Path)>, |acc, (s, p)| match acc {
                    Some((bs, _)) if bs >= s => acc,
                    _ => Some((s, p)),
                })
                .unwrap();
            let v = viterbi_path(&u, &ll, 1.0).unwrap();
            assert!((v.score - best.0).abs() < 1e-12);
            assert_eq!(v.arcs, best.1.arcs);
            tested += 1;
        }
    }

    #[test]
    fn infeasible() {
        let mut g = Graph::new(2, 0);
        g.add_arc(0, 1, Some(0), 0.0, None);
        g.set_final(1, 0.0);
        assert!(matches!(viterbi(&g, &Tensor::zeros(&[3, 1]), 1.0), Err(Error::Infeasible(_))));
    }
}
