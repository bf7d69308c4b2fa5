//! Weighted finite-state acceptors over pdf-ids.
//!
//! Every non-epsilon arc consumes exactly one frame. Arcs may carry an
//! output label (the phone whose HMM they enter) so decoders can recover
//! phone sequences from a state path.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub src: usize,
    pub dst: usize,
    /// `None` is epsilon.
    pub pdf: Option<u32>,
    pub weight: f64,
    pub olabel: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub num_states: usize,
    pub start: usize,
    pub arcs: Vec<Arc>,
    /// `(state, final log-weight)`, at most one entry per state.
    pub finals: Vec<(usize, f64)>,
}

/// One complete path, as listed by [`Graph::enumerate_paths`].
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub arcs: Vec<usize>,
    pub pdfs: Vec<u32>,
    pub olabels: Vec<u32>,
    /// Arc weights plus the final weight.
    pub weight: f64,
}

impl Graph {
    /// Random epsilon-free graph with arcs between arbitrary states (cycles
    /// included). Roughly 40% of states are final. Used by tests and benches.
    pub fn random(rng: &mut Rng, states: usize, arcs: usize, pdfs: u32) -> Graph {
        let mut g = Graph::new(states, 0);
        for _ in 0..arcs {
            let (s, d) = (rng.below(states), rng.below(states));
            let pdf = rng.below(pdfs as usize) as u32;
            let olabel = (rng.uniform() < 0.5).then(|| rng.below(3) as u32);
            g.add_arc(s, d, Some(pdf), rng.uniform_range(-2.0, 0.0), olabel);
        }
        for s in 0..states {
            if rng.uniform() < 0.4 {
                g.set_final(s, rng.uniform_range(-1.0, 0.0));
            }
        }
        g
    }

    pub fn new(num_states: usize, start: usize) -> Self {
        Self { num_states, start, arcs: Vec::new(), finals: Vec::new() }
    }

    pub fn add_state(&mut self) -> usize {
        self.num_states += 1;
        self.num_states - 1
    }

    pub fn add_arc(&mut self, src: usize, dst: usize, pdf: Option<u32>, weight: f64, olabel: Option<u32>) {
        debug_assert!(src < self.num_states && dst < self.num_states);
        self.arcs.push(Arc { src, dst, pdf, weight, olabel });
    }

    pub fn set_final(&mut self, state: usize, weight: f64) {
        match self.finals.iter_mut().find(|(s, _)| *s == state) {
            Some(f) => f.1 = weight,
            None => self.finals.push((state, weight)),
        }
    }

    pub fn final_weight(&self, state: usize) -> Option<f64> {
        self.finals.iter().find(|(s, _)| *s == state).map(|&(_, w)| w)
    }

    pub fn is_epsilon_free(&self) -> bool {
        self.arcs.iter().all(|a| a.pdf.is_some())
    }

    pub fn max_pdf(&self) -> Option<u32> {
        self.arcs.iter().filter_map(|a| a.pdf).max()
    }

    /// Outgoing arc indices per state, in arc order.
    pub fn out_arcs(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_states];
        for (i, a) in self.arcs.iter().enumerate() {
            out[a.src].push(i);
        }
        out
    }

    fn require_epsilon_free(&self) -> Result<()> {
        if self.is_epsilon_free() {
            Ok(())
        } else {
            Err(Error::Config("graph has epsilon arcs; frame-synchronous algorithms need epsilon-free graphs".into()))
        }
    }

    /// Drop states that are not both accessible and co-accessible.
    /// Surviving states keep their relative order.
    pub fn trim(&self) -> Result<Graph> {
        let mut fwd = vec![false; self.num_states];
        let mut queue = VecDeque::from([self.start]);
        fwd[self.start] = true;
        let out = self.out_arcs();
        while let Some(s) = queue.pop_front() {
            for &ai in &out[s] {
                let d = self.arcs[ai].dst;
                if !fwd[d] {
                    fwd[d] = true;
                    queue.push_back(d);
                }
            }
        }
        let mut incoming = vec![Vec::new(); self.num_states];
        for (i, a) in self.arcs.iter().enumerate() {
            incoming[a.dst].push(i);
        }
        let mut bwd = vec![false; self.num_states];
        for &(s, _) in &self.finals {
            if !bwd[s] {
                bwd[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(s) = queue.pop_front() {
            for &ai in &incoming[s] {
                let src = self.arcs[ai].src;
                if !bwd[src] {
                    bwd[src] = true;
                    queue.push_back(src);
                }
            }
        }
        if !(fwd[self.start] && bwd[self.start]) {
            return Err(Error::EmptyGraph);
        }
        let mut map = vec![usize::MAX; self.num_states];
        let mut n = 0;
        for s in 0..self.num_states {
            if fwd[s] && bwd[s] {
                map[s] = n;
                n += 1;
            }
        }
        let mut g = Graph::new(n, map[self.start]);
        for a in &self.arcs {
            if map[a.src] != usize::MAX && map[a.dst] != usize::MAX {
                g.add_arc(map[a.src], map[a.dst], a.pdf, a.weight, a.olabel);
            }
        }
        for &(s, w) in &self.finals {
            if map[s] != usize::MAX {
                g.set_final(map[s], w);
            }
        }
        Ok(g)
    }

    /// Time-state product graph: state `(t, s)` for every state `s`
    /// reachable in exactly `t` arcs, trimmed to paths of exactly `frames`
    /// arcs ending in a final state.
    pub fn unroll(&self, frames: usize) -> Result<Graph> {
        self.require_epsilon_free()?;
        let out = self.out_arcs();
        let mut g = Graph::new(1, 0);
        let mut layer: Vec<(usize, usize)> = vec![(self.start, 0)];
        for _ in 0..frames {
            let mut index: HashMap<usize, usize> = HashMap::new();
            let mut next: Vec<(usize, usize)> = Vec::new();
            for &(s, id) in &layer {
                for &ai in &out[s] {
                    let a = &self.arcs[ai];
                    let did = *index.entry(a.dst).or_insert_with(|| {
                        let nid = g.add_state();
                        next.push((a.dst, nid));
                        nid
                    });
                    g.add_arc(id, did, a.pdf, a.weight, a.olabel);
                }
            }
            layer = next;
        }
        for &(s, id) in &layer {
            if let Some(w) = self.final_weight(s) {
                g.set_final(id, w);
            }
        }
        g.trim().map_err(|e| match e {
            Error::EmptyGraph => Error::Infeasible(format!("no path of exactly {frames} frames")),
            e => e,
        })
    }

    /// Kahn's algorithm; errors on a cycle.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let mut indeg = vec![0usize; self.num_states];
        for a in &self.arcs {
            indeg[a.dst] += 1;
        }
        let out = self.out_arcs();
        let mut queue: VecDeque<usize> = (0..self.num_states).filter(|&s| indeg[s] == 0).collect();
        let mut order = Vec::with_capacity(self.num_states);
        while let Some(s) = queue.pop_front() {
            order.push(s);
            for &ai in &out[s] {
                let d = self.arcs[ai].dst;
                indeg[d] -= 1;
                if indeg[d] == 0 {
                    queue.push_back(d);
                }
            }
        }
        if order.len() != self.num_states {
            return Err(Error::Config("graph has a cycle".into()));
        }
        Ok(order)
    }

    /// Every path of exactly `frames` arcs from the start to a final state,
    /// in lexicographic order of arc indices. Brute force; oracle use only.
    pub fn enumerate_paths(&self, frames: usize, limit: usize) -> Result<Vec<Path>> {
        self.require_epsilon_free()?;
        let out = self.out_arcs();
        let mut paths = Vec::new();
        let mut stack: Vec<usize> = Vec::with_capacity(frames);
        self.dfs(self.start, frames, &out, &mut stack, &mut paths, limit)?;
        Ok(paths)
    }

    fn dfs(
        &self,
        state: usize,
        remaining: usize,
        out: &[Vec<usize>],
        stack: &mut Vec<usize>,
        paths: &mut Vec<Path>,
        limit: usize,
    ) -> Result<()> {
        if remaining == 0 {
            if let Some(fw) = self.final_weight(state) {
                if paths.len() == limit {
                    return Err(Error::PathLimit { limit });
                }
                let arcs = stack.clone();
                let weight = arcs.iter().map(|&i| self.arcs[i].weight).sum::<f64>() + fw;
                paths.push(Path {
                    pdfs: arcs.iter().filter_map(|&i| self.arcs[i].pdf).collect(),
                    olabels: arcs.iter().filter_map(|&i| self.arcs[i].olabel).collect(),
                    arcs,
                    weight,
                });
            }
            return Ok(());
        }
        for &ai in &out[state] {
            stack.push(ai);
            self.dfs(self.arcs[ai].dst, remaining - 1, out, stack, paths, limit)?;
            stack.pop();
        }
        Ok(())
    }

    /// Text form: header `PFG1 num_states start`, one arc per line
    /// `src dst pdf_id log_weight [olabel]` (`eps` for epsilon), and final
    /// lines `F state final_log_weight`.
    pub fn to_text(&self) -> String {
        let mut s = format!("PFG1 {} {}\n", self.num_states, self.start);
        for a in &self.arcs {
            let pdf = a.pdf.map_or("eps".to_string(), |p| p.to_string());
            let _ = write!(s, "{} {} {} {}", a.src, a.dst, pdf, a.weight);
            if let Some(o) = a.olabel {
                let _ = write!(s, " {o}");
            }
            s.push('\n');
        }
        for &(st, w) in &self.finals {
            let _ = writeln!(s, "F {st} {w}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Graph> {
        let bad = |line: usize, msg: &str| Error::Format(format!("graph line {}: {msg}", line + 1));
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Format("empty graph text".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 3 || h[0] != "PFG1" {
            return Err(Error::Format(format!("bad graph header {header:?}")));
        }
        let num_states: usize = h[1].parse().map_err(|_| bad(0, "state count"))?;
        let start: usize = h[2].parse().map_err(|_| bad(0, "start state"))?;
        if start >= num_states {
            return Err(bad(0, "start state out of range"));
        }
        let mut g = Graph::new(num_states, start);
        let state = |tok: &str, i: usize| -> Result<usize> {
            let s: usize = tok.parse().map_err(|_| bad(i, "state id"))?;
            if s >= num_states {
                return Err(bad(i, "state out of range"));
            }
            Ok(s)
        };
        for (i, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                ["F", st, w] => {
                    let w: f64 = w.parse().map_err(|_| bad(i, "final weight"))?;
                    g.set_final(state(st, i)?, w);
                }
                [src, dst, pdf, w, rest @ ..] if rest.len() <= 1 => {
                    let pdf = match *pdf {
                        "eps" => None,
                        p => Some(p.parse().map_err(|_| bad(i, "pdf id"))?),
                    };
                    let w: f64 = w.parse().map_err(|_| bad(i, "weight"))?;
                    let olabel = match rest.first() {
                        Some(o) => Some(o.parse().map_err(|_| bad(i, "output label"))?),
                        None => None,
                    };
                    g.add_arc(state(src, i)?, state(dst, i)?, pdf, w, olabel);
                }
                _ => return Err(bad(i, "expected an arc or final line")),
            }
        }
        Ok(g)
    }
}

/// Per-state frame index of a time-layered (unrolled) graph.
#[derive(Clone, Debug)]
pub struct Layering {
    pub frames: usize,
    /// `None` for states unreachable from the start.
    pub depth: Vec<Option<usize>>,
    /// Arc indices grouped by the frame they consume; only arcs whose source
    /// is reachable at a frame `< frames`.
    pub arcs_by_frame: Vec<Vec<usize>>,
    /// Finals at depth `frames`.
    pub finals: Vec<(usize, f64)>,
}

impl Layering {
    /// Verifies that every reachable state sits at a unique depth (all
    /// paths reaching it have equal length); compact cyclic graphs fail and
    /// must be unrolled first.
    pub fn new(g: &Graph, frames: usize) -> Result<Self> {
        g.require_epsilon_free()?;
        let out = g.out_arcs();
        let mut depth = vec![None; g.num_states];
        depth[g.start] = Some(0);
        let mut queue = VecDeque::from([g.start]);
        let mut arcs_by_frame = vec![Vec::new(); frames];
        while let Some(s) = queue.pop_front() {
            let d = depth[s].expect("queued states have a depth");
            for &ai in &out[s] {
                let dst = g.arcs[ai].dst;
                match depth[dst] {
                    None => {
                        depth[dst] = Some(d + 1);
                        queue.push_back(dst);
                    }
                    Some(dd) if dd == d + 1 => {}
                    Some(_) => {
                        return Err(Error::Config("graph is not time-layered; unroll it first".into()));
                    }
                }
                if d < frames {
                    arcs_by_frame[d].push(ai);
                }
            }
        }
        for v in &mut arcs_by_frame {
            v.sort_unstable();
        }
        let finals = g.finals.iter().copied().filter(|&(s, _)| depth[s] == Some(frames)).collect();
        Ok(Self { frames, depth, arcs_by_frame, finals })
    }
}
