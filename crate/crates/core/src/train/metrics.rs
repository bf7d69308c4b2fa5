//! Frame and phone error rates.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::Utterance;
use crate::decode::viterbi;
use crate::error::{Error, Result};
use crate::graph::{build_denominator_graph, Graph, PhoneLm};
use crate::net::Network;

/// Levenshtein distance with unit costs, two-row dynamic programme.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Denominator graphs unrolled per utterance length, built once and shared.
#[derive(Debug)]
pub struct DenominatorGraphs {
    lm: PhoneLm,
    graphs: HashMap<usize, Graph>,
}

impl DenominatorGraphs {
    pub fn new(lm: PhoneLm) -> Self {
        Self { lm, graphs: HashMap::new() }
    }

    pub fn lm(&self) -> &PhoneLm {
        &self.lm
    }

    /// Builds the graphs for every length not yet cached.
    pub fn prepare(&mut self, lengths: impl IntoIterator<Item = usize>) -> Result<()> {
        let missing: Vec<usize> = lengths.into_iter().filter(|t| !self.graphs.contains_key(t)).collect::<BTreeSet<_>>().into_iter().collect();
        let built: Vec<(usize, Result<Graph>)> = missing.par_iter().map(|&t| (t, build_denominator_graph(&self.lm, t))).collect();
        for (t, g) in built {
            self.graphs.insert(t, g?);
        }
        Ok(())
    }

    pub fn get(&self, frames: usize) -> Result<&Graph> {
        self.graphs.get(&frames).ok_or_else(|| Error::Config(format!("no denominator graph prepared for {frames} frames")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub frame_error: f64,
    pub phone_error: f64,
    pub frames: usize,
    pub frame_errors: usize,
    pub ref_phones: usize,
    pub phone_edits: usize,
    pub utterances: usize,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Frame error of the CE head's argmax against the true alignment, and
/// phone error of the chain head's Viterbi decode over the denominator
/// graph against the reference phones.
pub fn evaluate(net: &Network, utts: &[Utterance], dens: &mut DenominatorGraphs, k: f64) -> Result<Metrics> {
    if utts.is_empty() {
        return Err(Error::Config("cannot evaluate an empty corpus".into()));
    }
    dens.prepare(utts.iter().map(Utterance::frames))?;
    let dens = &*dens;
    let per_utt: Vec<(usize, usize, usize)> = utts
        .par_iter()
        .map(|u| -> Result<(usize, usize, usize)> {
            let (out, _) = net.forward(&u.features)?;
            let frame_errors =
                (0..u.frames()).filter(|&t| argmax(out.ce_logits.row(t)) as u32 != u.alignment[t]).count();
            let hyp = viterbi(dens.get(u.frames())?, &out.chain, k)?;
            Ok((u.frames(), frame_errors, edit_distance(&hyp.phones, &u.phones)))
        })
        .collect::<Result<_>>()?;
    let frames: usize = per_utt.iter().map(|x| x.0).sum();
    let frame_errors: usize = per_utt.iter().map(|x| x.1).sum();
    let phone_edits: usize = per_utt.iter().map(|x| x.2).sum();
    let ref_phones: usize = utts.iter().map(|u| u.phones.len()).sum();
    Ok(Metrics {
        frame_error: frame_errors as f64 / frames as f64,
        phone_error: phone_edits as f64 / ref_phones as f64,
        frames,
        frame_errors,
        ref_phones,
        phone_edits,
        utterances: utts.len(),
    })
}
