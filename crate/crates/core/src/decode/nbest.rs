//! Exact n-best distinct phone sequences by best-first search.
//!
//! Search nodes are `(state, phone prefix)` pairs scored by the path score so
//! far plus the exact best completion score from the state (a backward
//! Viterbi pass), so complete hypotheses leave the queue best-first and the
//! first arrival of each sequence carries its best alignment.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use super::viterbi::Hypothesis;
use crate::error::{Error, Result};
use crate::graph::{Graph, Layering};
use crate::loss::check_loglik;
use crate::tensor::Tensor;

const NEG_INF: f64 = f64::NEG_INFINITY;
const END: usize = usize::MAX;

pub const DEFAULT_MAX_QUEUE: usize = 100_000;

struct Node {
    f: f64,
    g: f64,
    state: usize,
    prefix: u32,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    /// Max-heap order: higher `f` first, then smaller prefix id and state.
    fn cmp(&self, other: &Self) -> Ordering {
        self.f
            .total_cmp(&other.f)
            .then_with(|| other.prefix.cmp(&self.prefix))
            .then_with(|| other.state.cmp(&self.state))
    }
}

/// Interned phone prefixes; id 0 is the empty prefix.
struct PrefixTrie {
    nodes: Vec<(u32, u32)>,
    index: HashMap<(u32, u32), u32>,
}

impl PrefixTrie {
    fn new() -> Self {
        Self { nodes: vec![(0, 0)], index: HashMap::new() }
    }

    fn child(&mut self, parent: u32, label: u32) -> u32 {
        let next = self.nodes.len() as u32;
        *self.index.entry((parent, label)).or_insert_with(|| {
            self.nodes.push((parent, label));
            next
        })
    }

    fn phones(&self, mut id: u32) -> Vec<u32> {
        let mut out = Vec::new();
        while id != 0 {
            let (parent, label) = self.nodes[id as usize];
            out.push(label);
            id = parent;
        }
        out.reverse();
        out
    }
}

/// Best completion score from every state (`-inf` where no complete path).
fn completion_scores(g: &Graph, lay: &Layering, loglik: &Tensor, k: f64) -> Vec<f64> {
    let mut h = vec![NEG_INF; g.num_states];
    for &(s, w) in &lay.finals {
        h[s] = w;
    }
    for t in (0..lay.frames).rev() {
        for &ai in &lay.arcs_by_frame[t] {
            let a = &g.arcs[ai];
            let v = k * loglik.at2(t, a.pdf.expect("epsilon-free") as usize) + a.weight + h[a.dst];
            if v > h[a.src] {
                h[a.src] = v;
            }
        }
    }
    h
}

/// Top `n` distinct phone sequences, each scored by its best alignment,
/// sorted by descending score. Returns fewer when the graph holds fewer.
pub fn nbest(g: &Graph, loglik: &Tensor, k: f64, n: usize) -> Result<Vec<Hypothesis>> {
    nbest_with_limit(g, loglik, k, n, DEFAULT_MAX_QUEUE)
}

/// [`nbest`] with an explicit cap on the search queue.
pub fn nbest_with_limit(g: &Graph, loglik: &Tensor, k: f64, n: usize, max_queue: usize) -> Result<Vec<Hypothesis>> {
    if n == 0 {
        return Err(Error::Config("n-best size must be at least 1".into()));
    }
    let (frames, _) = check_loglik(g, loglik)?;
    let lay = Layering::new(g, frames)?;
    let h = completion_scores(g, &lay, loglik, k);
    if h[g.start] == NEG_INF {
        return Err(Error::Infeasible(format!("no complete path of {frames} frames")));
    }
    let out_arcs = g.out_arcs();
    let final_w: HashMap<usize, f64> = lay.finals.iter().copied().collect();
    let mut trie = PrefixTrie::new();
    let mut heap = BinaryHeap::new();
    let mut closed: HashSet<(usize, u32)> = HashSet::new();
    let mut out = Vec::with_capacity(n);
    heap.push(Node { f: h[g.start], g: 0.0, state: g.start, prefix: 0 });

    while let Some(node) = heap.pop() {
        if !closed.insert((node.state, node.prefix)) {
            continue;
        }
        if node.state == END {
            out.push(Hypothesis::new(trie.phones(node.prefix), node.g));
            if out.len() == n {
                break;
            }
            continue;
        }
        let t = lay.depth[node.state].expect("queued states are reachable");
        if t == frames {
            if let Some(&w) = final_w.get(&node.state) {
                let g_end = node.g + w;
                heap.push(Node { f: g_end, g: g_end, state: END, prefix: node.prefix });
            }
            continue;
        }
        for &ai in &out_arcs[node.state] {
            let a = &g.arcs[ai];
            if h[a.dst] == NEG_INF {
                continue;
            }
            let g_next = node.g + k * loglik.at2(t, a.pdf.expect("epsilon-free") as usize) + a.weight;
            let prefix = match a.olabel {
                Some(l) => trie.child(node.prefix, l),
                None => node.prefix,
            };
            if closed.contains(&(a.dst, prefix)) {
                continue;
            }
            heap.push(Node { f: g_next + h[a.dst], g: g_next, state: a.dst, prefix });
        }
        if heap.len() > max_queue {
            return Err(Error::PathLimit { limit: max_queue });
        }
    }
    Ok(out)
}
