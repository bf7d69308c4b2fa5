//! Corpus-level n-best decoding and LM-weight sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lm::{LmScorer, OracleLm};
use super::nbest::nbest;
use super::rescore::rescore;
use super::viterbi::Hypothesis;
use crate::error::{Error, Result};
use crate::net::Network;
use crate::train::{edit_distance, DenominatorGraphs, Utterance};

/// The n-best list of one utterance, best first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceNbest {
    pub utterance: usize,
    pub reference: Vec<u32>,
    pub hypotheses: Vec<Hypothesis>,
}

/// Phone error of the top hypotheses of a set of lists.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhoneErrorCount {
    pub phone_error: f64,
    pub phone_edits: usize,
    pub ref_phones: usize,
}

/// Top-1 phone error after rescoring at one LM weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lmwt: f64,
    #[serde(flatten)]
    pub error: PhoneErrorCount,
}

/// Decodes every utterance over its denominator graph with the chain head.
pub fn decode_nbest(
    net: &Network,
    utts: &[Utterance],
    dens: &mut DenominatorGraphs,
    k: f64,
    n: usize,
) -> Result<Vec<UtteranceNbest>> {
    dens.prepare(utts.iter().map(Utterance::frames))?;
    let dens = &*dens;
    utts.par_iter()
        .enumerate()
        .map(|(i, u)| {
            let (out, _) = net.forward(&u.features)?;
            let hypotheses = nbest(dens.get(u.frames())?, &out.chain, k, n)?;
            Ok(UtteranceNbest { utterance: i, reference: u.phones.clone(), hypotheses })
        })
        .collect()
}

/// Phone error of each list's first hypothesis.
pub fn top1_phone_error(lists: &[UtteranceNbest]) -> Result<PhoneErrorCount> {
    let ref_phones: usize = lists.iter().map(|l| l.reference.len()).sum();
    if ref_phones == 0 {
        return Err(Error::Config("no reference phones to score".into()));
    }
    let phone_edits = lists
        .iter()
        .map(|l| l.hypotheses.first().map_or(l.reference.len(), |h| edit_distance(&h.phones, &l.reference)))
        .sum::<usize>();
    Ok(PhoneErrorCount { phone_error: phone_edits as f64 / ref_phones as f64, phone_edits, ref_phones })
}

/// Lowest phone error reachable by picking the best entry of every list.
pub fn oracle_phone_error(lists: &[UtteranceNbest]) -> Result<PhoneErrorCount> {
    let best: Vec<UtteranceNbest> = lists
        .iter()
        .map(|l| {
            let pick = l.hypotheses.iter().min_by_key(|h| edit_distance(&h.phones, &l.reference));
            UtteranceNbest { utterance: l.utterance, reference: l.reference.clone(), hypotheses: pick.into_iter().cloned().collect() }
        })
        .collect();
    top1_phone_error(&best)
}

/// Fraction of utterances whose top hypothesis is exactly the reference.
pub fn top1_accuracy(lists: &[UtteranceNbest]) -> f64 {
    let hits = lists.iter().filter(|l| l.hypotheses.first().is_some_and(|h| h.phones == l.reference)).count();
    hits as f64 / lists.len().max(1) as f64
}

/// Fraction of utterances whose reference appears anywhere in the list.
pub fn nbest_oracle_accuracy(lists: &[UtteranceNbest]) -> f64 {
    let hits = lists.iter().filter(|l| l.hypotheses.iter().any(|h| h.phones == l.reference)).count();
    hits as f64 / lists.len().max(1) as f64
}

/// Rescores every list with one LM.
pub fn rescore_all(lists: &[UtteranceNbest], lm: &dyn LmScorer, lmwt: f64) -> Result<Vec<UtteranceNbest>> {
    lists
        .iter()
        .map(|l| Ok(UtteranceNbest { hypotheses: rescore(&l.hypotheses, lm, lmwt)?, ..l.clone() }))
        .collect()
}

/// Rescores every list with an oracle LM built from its own reference.
pub fn rescore_with_oracle(lists: &[UtteranceNbest], lmwt: f64) -> Result<Vec<UtteranceNbest>> {
    lists
        .iter()
        .map(|l| {
            let lm = OracleLm::new(l.reference.clone());
            Ok(UtteranceNbest { hypotheses: rescore(&l.hypotheses, &lm, lmwt)?, ..l.clone() })
        })
        .collect()
}

/// Top-1 phone error after rescoring at each weight.
pub fn lmwt_sweep(lists: &[UtteranceNbest], lm: &dyn LmScorer, weights: &[f64]) -> Result<Vec<SweepPoint>> {
    weights.iter().map(|&lmwt| Ok(SweepPoint { lmwt, error: top1_phone_error(&rescore_all(lists, lm, lmwt)?)? })).collect()
}
