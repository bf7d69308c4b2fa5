//! Two-state phone HMMs and the numerator/denominator graphs built from them.
//!
//! Each phone `p` has an entry state A (pdf `2p`, mandatory, self-loop) and
//! an optional state B (pdf `2p + 1`, self-loop). Transition weights are
//! uniform over a state's options, counting the exit as one option: A has
//! three (stay, to B, exit), B has two (stay, exit).

use std::collections::HashMap;

use super::fsa::Graph;
use super::lm::PhoneLm;
use crate::error::{Error, Result};

pub const PDFS_PER_PHONE: u32 = 2;

pub fn pdf_a(phone: u32) -> u32 {
    PDFS_PER_PHONE * phone
}

pub fn pdf_b(phone: u32) -> u32 {
    PDFS_PER_PHONE * phone + 1
}

pub fn phone_of_pdf(pdf: u32) -> u32 {
    pdf / PDFS_PER_PHONE
}

pub fn num_pdfs(num_phones: u32) -> usize {
    (PDFS_PER_PHONE * num_phones) as usize
}

/// `log(1/3)`: each option out of state A.
pub fn a_option() -> f64 {
    -(3f64.ln())
}

/// `log(1/2)`: each option out of state B.
pub fn b_option() -> f64 {
    -(2f64.ln())
}

/// The compact (cyclic) HMM of one phone: start state 0, A = 1, B = 2.
/// Both emitting states are final with their exit weight.
pub fn build_phone_hmm(phone: u32, num_phones: u32) -> Result<Graph> {
    if phone >= num_phones {
        return Err(Error::UnknownPhone(phone));
    }
    let mut g = Graph::new(3, 0);
    g.add_arc(0, 1, Some(pdf_a(phone)), 0.0, Some(phone));
    g.add_arc(1, 1, Some(pdf_a(phone)), a_option(), None);
    g.add_arc(1, 2, Some(pdf_b(phone)), a_option(), None);
    g.add_arc(2, 2, Some(pdf_b(phone)), b_option(), None);
    g.set_final(1, a_option());
    g.set_final(2, b_option());
    Ok(g)
}

/// Appends an A/B pair for `phone`; returns `(a, b)`.
fn add_phone_states(g: &mut Graph, phone: u32) -> (usize, usize) {
    let a = g.add_state();
    let b = g.add_state();
    g.add_arc(a, a, Some(pdf_a(phone)), a_option(), None);
    g.add_arc(a, b, Some(pdf_b(phone)), a_option(), None);
    g.add_arc(b, b, Some(pdf_b(phone)), b_option(), None);
    (a, b)
}

fn compact_chain(phones: &[u32], num_phones: u32, lm: Option<&PhoneLm>) -> Result<Graph> {
    if phones.is_empty() {
        return Err(Error::Infeasible("empty phone sequence".into()));
    }
    let mut g = Graph::new(1, 0);
    let mut exits: Vec<(usize, f64)> = vec![(0, 0.0)];
    let mut history = lm.map(PhoneLm::start_history);
    for &p in phones {
        if p >= num_phones {
            return Err(Error::UnknownPhone(p));
        }
        let lm_w = match (lm, &history) {
            (Some(lm), Some(h)) => lm.log_prob(h, p),
            _ => 0.0,
        };
        let (a, b) = add_phone_states(&mut g, p);
        for &(src, w) in &exits {
            g.add_arc(src, a, Some(pdf_a(p)), w + lm_w, Some(p));
        }
        exits = vec![(a, a_option()), (b, b_option())];
        if let (Some(lm), Some(h)) = (lm, history.as_mut()) {
            *h = lm.advance(h, p);
        }
    }
    let end = match (lm, &history) {
        (Some(lm), Some(h)) => lm.end_log_prob(h),
        _ => 0.0,
    };
    for (s, w) in exits {
        g.set_final(s, w + end);
    }
    Ok(g)
}

/// Concatenated phone HMMs unrolled to exactly `frames` frames, with no
/// language-model weight.
pub fn build_numerator_graph(phones: &[u32], frames: usize, num_phones: u32) -> Result<Graph> {
    if phones.len() > frames {
        return Err(Error::Infeasible(format!("{} phones cannot fit in {frames} frames", phones.len())));
    }
    compact_chain(phones, num_phones, None)?.unroll(frames)
}

/// As [`build_numerator_graph`], with the phone LM's log-probabilities on
/// phone entries and the end event, so its paths carry exactly the weights
/// of the matching denominator paths.
pub fn build_numerator_graph_with_lm(phones: &[u32], frames: usize, lm: &PhoneLm) -> Result<Graph> {
    if phones.len() > frames {
        return Err(Error::Infeasible(format!("{} phones cannot fit in {frames} frames", phones.len())));
    }
    compact_chain(phones, lm.num_phones(), Some(lm))?.unroll(frames)
}

/// Compact cyclic acceptor for every phone sequence, weighted by the LM.
/// HMM states are keyed by `(history after the phone, phone)`; leaving a
/// phone enters the next phone's A state directly, so each exit arc
/// carries both the HMM exit weight and the LM log-probability.
pub fn build_lm_acceptor(lm: &PhoneLm) -> Result<Graph> {
    let v = lm.num_phones();
    if v == 0 {
        return Err(Error::Config("empty phone vocabulary".into()));
    }
    let mut keys: Vec<(Vec<u32>, u32)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for h in lm.reachable_histories() {
        for p in 0..v {
            let key = (lm.advance(&h, p), p);
            if seen.insert(key.clone()) {
                keys.push(key);
            }
        }
    }
    let mut g = Graph::new(1, 0);
    let mut states: HashMap<(Vec<u32>, u32), (usize, usize)> = HashMap::new();
    for key in &keys {
        let ab = add_phone_states(&mut g, key.1);
        states.insert(key.clone(), ab);
    }
    let start_h = lm.start_history();
    for p in 0..v {
        let (a, _) = states[&(lm.advance(&start_h, p), p)];
        g.add_arc(0, a, Some(pdf_a(p)), lm.log_prob(&start_h, p), Some(p));
    }
    for key in &keys {
        let (h, _) = key;
        let (a, b) = states[key];
        let probs = lm.log_probs(h);
        for (src, exit) in [(a, a_option()), (b, b_option())] {
            for q in 0..v {
                let (qa, _) = states[&(lm.advance(h, q), q)];
                g.add_arc(src, qa, Some(pdf_a(q)), exit + probs[q as usize], Some(q));
            }
            g.set_final(src, exit + lm.end_log_prob(h));
        }
    }
    Ok(g)
}

/// Every phone sequence of any length fitting in `frames`, weighted by the
/// phone LM and unrolled to exactly `frames` frames.
pub fn build_denominator_graph(lm: &PhoneLm, frames: usize) -> Result<Graph> {
    build_lm_acceptor(lm)?.unroll(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fsa::Path;

    fn count(g: &Graph, frames: usize) -> usize {
        g.enumerate_paths(frames, 1_000_000).unwrap().len()
    }

    /// Number of A/B alignments of `n` phones over `t` frames: each phone
    /// takes d ≥ 1 frames, split as d frames of A alone or A^i B^(d-i).
    fn alignments(n: usize, t: usize) -> usize {
        if n == 0 {
            return usize::from(t == 0);
        }
        (1..=t).map(|d| d * alignments(n - 1, t - d)).sum()
    }

    #[test]
    fn phone_hmm_topology() {
        let g = build_phone_hmm(2, 3).unwrap();
        assert_eq!(g.arcs.len(), 4);
        let pdfs: std::collections::BTreeSet<_> = g.arcs.iter().filter_map(|a| a.pdf).collect();
        assert_eq!(pdfs.into_iter().collect::<Vec<_>>(), vec![4, 5]);
        assert!(matches!(build_phone_hmm(3, 3), Err(Error::UnknownPhone(3))));
    }

    #[test]
    fn phone_hmm_path_counts() {
        let g = build_phone_hmm(0, 1).unwrap();
        let one = g.enumerate_paths(1, 10).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].pdfs, vec![0]);
        let three: Vec<Vec<u32>> = g.enumerate_paths(3, 10).unwrap().into_iter().map(|p| p.pdfs).collect();
        assert_eq!(three, vec![vec![0, 0, 0], vec![0, 0, 1], vec![0, 1, 1]]);
    }

    #[test]
    fn hmm_transitions_are_normalized() {
        // Over all durations, the path probabilities of a single phone sum to 1.
        let g = build_phone_hmm(0, 1).unwrap();
        let mass: f64 = (1..80)
            .flat_map(|t| g.enumerate_paths(t, 1_000).unwrap())
            .map(|p| p.weight.exp())
            .sum();
        assert!((mass - 1.0).abs() < 1e-9, "{mass}");
    }

    #[test]
    fn numerator_path_counts() {
        assert_eq!(count(&build_numerator_graph(&[0], 1, 2).unwrap(), 1), 1);
        assert_eq!(count(&build_numerator_graph(&[0, 1], 2, 2).unwrap(), 2), 1);
        let g = build_numerator_graph(&[0, 1], 4, 2).unwrap();
        assert_eq!(count(&g, 4), alignments(2, 4));
        assert_eq!(alignments(2, 4), 10);
        for t in 3..=7 {
            let g = build_numerator_graph(&[1, 0, 1], t, 2).unwrap();
            assert_eq!(count(&g, t), alignments(3, t));
        }
    }

    #[test]
    fn numerator_paths_follow_the_phones() {
        let phones = [2, 0, 2];
        let g = build_numerator_graph(&phones, 6, 3).unwrap();
        for p in g.enumerate_paths(6, 10_000).unwrap() {
            assert_eq!(p.olabels, phones);
            assert_eq!(p.pdfs[0], pdf_a(2));
            let mut seq: Vec<u32> = p.pdfs.iter().map(|&d| phone_of_pdf(d)).collect();
            seq.dedup();
            assert!(seq.len() <= 3);
        }
    }

    #[test]
    fn numerator_errors() {
        assert!(matches!(build_numerator_graph(&[0, 1, 0], 2, 2), Err(Error::Infeasible(_))));
        assert!(matches!(build_numerator_graph(&[0, 5], 4, 2), Err(Error::UnknownPhone(5))));
    }

    #[test]
    fn denominator_single_phone_unigram() {
        let lm = PhoneLm::uniform(1, 1, false).unwrap();
        let g = build_denominator_graph(&lm, 2).unwrap();
        let paths = g.enumerate_paths(2, 100).unwrap();
        let labels: Vec<Vec<u32>> = paths.iter().map(|p| p.olabels.clone()).collect();
        // AA, AB (one token) and A|A (two tokens).
        assert_eq!(paths.len(), 3);
        assert!(labels.contains(&vec![0]) && labels.contains(&vec![0, 0]));
    }

    #[test]
    fn denominator_single_frame() {
        let v = 4;
        let lm = PhoneLm::uniform(v, 1, false).unwrap();
        let paths = build_denominator_graph(&lm, 1).unwrap().enumerate_paths(1, 100).unwrap();
        assert_eq!(paths.len(), v as usize);
        for p in &paths {
            let lm_part = p.weight - a_option();
            assert!((lm_part - (1.0 / v as f64).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn denominator_covers_all_sequences() {
        let lm = PhoneLm::uniform(2, 2, true).unwrap();
        for t in 1..=5 {
            let den = build_denominator_graph(&lm, t).unwrap();
            let expected: usize = (1..=t).map(|n| (1usize << n) * alignments(n, t)).sum();
            assert_eq!(count(&den, t), expected);
        }
    }

    fn key(p: &Path) -> (Vec<u32>, Vec<u32>) {
        (p.pdfs.clone(), p.olabels.clone())
    }

    #[test]
    fn numerator_with_lm_is_contained_in_denominator() {
        let ts = vec![vec![0, 1, 2], vec![2, 2, 1, 0], vec![1]];
        for order in 1..=3 {
            let lm = PhoneLm::estimate(&ts, 3, order, 0.1).unwrap();
            let t = 6;
            let den: HashMap<_, f64> = build_denominator_graph(&lm, t)
                .unwrap()
                .enumerate_paths(t, 1_000_000)
                .unwrap()
                .iter()
                .map(|p| (key(p), p.weight))
                .collect();
            for phones in [vec![0, 1, 2], vec![2], vec![1, 1, 0, 2]] {
                let num = build_numerator_graph_with_lm(&phones, t, &lm).unwrap();
                let plain = build_numerator_graph(&phones, t, 3).unwrap();
                let plain_paths = plain.enumerate_paths(t, 10_000).unwrap();
                let num_paths = num.enumerate_paths(t, 10_000).unwrap();
                assert_eq!(plain_paths.len(), num_paths.len());
                let lm_score = lm.score(&phones).unwrap();
                for (p, q) in num_paths.iter().zip(&plain_paths) {
                    let dw = den[&key(p)];
                    assert!((dw - p.weight).abs() < 1e-12, "order {order}: {dw} vs {}", p.weight);
                    assert!((p.weight - q.weight - lm_score).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn denominator_validation() {
        let lm = PhoneLm::uniform(3, 4, true).unwrap();
        let g = build_lm_acceptor(&lm).unwrap();
        assert_eq!(g.num_states, 1 + 2 * (3 + 9 + 27));
        build_denominator_graph(&lm, 6).unwrap().topological_order().unwrap();
    }
}
