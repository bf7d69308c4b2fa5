//! Phone n-gram language model with add-k smoothing.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ADD_K: f64 = 0.1;

/// Phone n-gram model. Histories hold the previous `order - 1` phones,
/// left-padded with the begin symbol `num_phones`. When `end_of_sentence`
/// is set, every context also predicts an end event (index `num_phones`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhoneLm {
    order: usize,
    num_phones: u32,
    end_of_sentence: bool,
    add_k: f64,
    /// Context → counts per event. Stored as a list so the JSON form keeps
    /// a stable order.
    counts: Vec<(Vec<u32>, Vec<f64>)>,
    #[serde(skip)]
    index: BTreeMap<Vec<u32>, usize>,
}

impl PhoneLm {
    /// Every event equally likely in every context.
    pub fn uniform(num_phones: u32, order: usize, end_of_sentence: bool) -> Result<Self> {
        Self::check(num_phones, order)?;
        Ok(Self {
            order,
            num_phones,
            end_of_sentence,
            add_k: 1.0,
            counts: Vec::new(),
            index: BTreeMap::new(),
        })
    }

    /// Maximum-likelihood counts with add-k smoothing, end-of-sentence on.
    pub fn estimate(transcripts: &[Vec<u32>], num_phones: u32, order: usize, add_k: f64) -> Result<Self> {
        Self::check(num_phones, order)?;
        if !(add_k > 0.0) {
            return Err(Error::Config("add-k must be positive".into()));
        }
        let mut lm = Self::uniform(num_phones, order, true)?;
        lm.add_k = add_k;
        let events = lm.num_events();
        let mut counts: BTreeMap<Vec<u32>, Vec<f64>> = BTreeMap::new();
        for phones in transcripts {
            let mut h = lm.start_history();
            for &p in phones {
                lm.check_phone(p)?;
                counts.entry(h.clone()).or_insert_with(|| vec![0.0; events])[p as usize] += 1.0;
                h = lm.advance(&h, p);
            }
            counts.entry(h).or_insert_with(|| vec![0.0; events])[num_phones as usize] += 1.0;
        }
        lm.counts = counts.into_iter().collect();
        lm.rebuild_index();
        Ok(lm)
    }

    fn check(num_phones: u32, order: usize) -> Result<()> {
        if num_phones == 0 {
            return Err(Error::Config("empty phone vocabulary".into()));
        }
        if !(1..=4).contains(&order) {
            return Err(Error::Config(format!("n-gram order {order} outside 1..=4")));
        }
        Ok(())
    }

    fn rebuild_index(&mut self) {
        self.index = self.counts.iter().enumerate().map(|(i, (h, _))| (h.clone(), i)).collect();
    }

    /// Restores the lookup index after deserialization.
    pub fn finish_load(mut self) -> Self {
        self.rebuild_index();
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("lm serializes")
    }

    /// Parses and validates the JSON form written by [`PhoneLm::to_json`].
    pub fn from_json(text: &str) -> Result<Self> {
        let lm: PhoneLm = serde_json::from_str(text)?;
        Self::check(lm.num_phones, lm.order)?;
        let events = lm.num_events();
        if lm.counts.iter().any(|(h, c)| h.len() != lm.order - 1 || c.len() != events) {
            return Err(Error::Format("lm counts do not match order and vocabulary".into()));
        }
        Ok(lm.finish_load())
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_phones(&self) -> u32 {
        self.num_phones
    }

    pub fn has_end_of_sentence(&self) -> bool {
        self.end_of_sentence
    }

    pub fn num_events(&self) -> usize {
        self.num_phones as usize + usize::from(self.end_of_sentence)
    }

    pub fn check_phone(&self, p: u32) -> Result<()> {
        if p < self.num_phones {
            Ok(())
        } else {
            Err(Error::UnknownPhone(p))
        }
    }

    pub fn begin_symbol(&self) -> u32 {
        self.num_phones
    }

    pub fn start_history(&self) -> Vec<u32> {
        vec![self.begin_symbol(); self.order - 1]
    }

    pub fn advance(&self, history: &[u32], phone: u32) -> Vec<u32> {
        if self.order == 1 {
            return Vec::new();
        }
        let mut h = history[1..].to_vec();
        h.push(phone);
        h
    }

    /// Log-probabilities of every event after `history`.
    pub fn log_probs(&self, history: &[u32]) -> Vec<f64> {
        let events = self.num_events();
        let zeros;
        let c = match self.index.get(history) {
            Some(&i) => &self.counts[i].1,
            None => {
                zeros = vec![0.0; events];
                &zeros
            }
        };
        let denom = (c.iter().sum::<f64>() + self.add_k * events as f64).ln();
        c.iter().map(|&n| (n + self.add_k).ln() - denom).collect()
    }

    pub fn log_prob(&self, history: &[u32], phone: u32) -> f64 {
        self.log_probs(history)[phone as usize]
    }

    /// `log p(end | history)`, or 0 when the model has no end event.
    pub fn end_log_prob(&self, history: &[u32]) -> f64 {
        if self.end_of_sentence {
            self.log_probs(history)[self.num_phones as usize]
        } else {
            0.0
        }
    }

    /// Log-probability of a complete phone sequence.
    pub fn score(&self, phones: &[u32]) -> Result<f64> {
        let mut h = self.start_history();
        let mut total = 0.0;
        for &p in phones {
            self.check_phone(p)?;
            total += self.log_prob(&h, p);
            h = self.advance(&h, p);
        }
        Ok(total + self.end_log_prob(&h))
    }

    /// Per-event perplexity (end events counted when modeled).
    pub fn perplexity(&self, transcripts: &[Vec<u32>]) -> Result<f64> {
        let mut total = 0.0;
        let mut events = 0usize;
        for t in transcripts {
            total += self.score(t)?;
            events += t.len() + usize::from(self.end_of_sentence);
        }
        if events == 0 {
            return Err(Error::Config("perplexity of an empty set".into()));
        }
        Ok((-total / events as f64).exp())
    }

    /// All histories reachable from the start history, in BFS order.
    pub fn reachable_histories(&self) -> Vec<Vec<u32>> {
        let start = self.start_history();
        let mut seen = BTreeSet::from([start.clone()]);
        let mut order = vec![start.clone()];
        let mut queue = VecDeque::from([start]);
        while let Some(h) = queue.pop_front() {
            for p in 0..self.num_phones {
                let n = self.advance(&h, p);
                if seen.insert(n.clone()) {
                    order.push(n.clone());
                    queue.push_back(n);
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_probabilities() {
        let lm = PhoneLm::uniform(4, 2, false).unwrap();
        for p in 0..4 {
            assert!((lm.log_prob(&[4], p) - (0.25f64).ln()).abs() < 1e-15);
        }
        assert_eq!(lm.end_log_prob(&[0]), 0.0);
        let lm = PhoneLm::uniform(4, 2, true).unwrap();
        assert!((lm.end_log_prob(&[0]) - (0.2f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn add_k_estimate_by_hand() {
        // Bigram, transcripts [0 1] and [0 0]: after BOS, counts (2, 0, end 0).
        let lm = PhoneLm::estimate(&[vec![0, 1], vec![0, 0]], 2, 2, 0.1).unwrap();
        let bos = lm.start_history();
        let expect = (2.1f64 / 2.3).ln();
        assert!((lm.log_prob(&bos, 0) - expect).abs() < 1e-14);
        // After phone 0: next 0 once, next 1 once, end once.
        assert!((lm.log_prob(&[0], 1) - (1.1f64 / 3.3).ln()).abs() < 1e-14);
        assert!((lm.end_log_prob(&[1]) - (1.1f64 / 1.3).ln()).abs() < 1e-14);
    }

    #[test]
    fn validation() {
        assert!(PhoneLm::uniform(0, 2, false).is_err());
        assert!(PhoneLm::uniform(3, 0, false).is_err());
        assert!(PhoneLm::uniform(3, 5, false).is_err());
        assert!(PhoneLm::estimate(&[vec![3]], 3, 2, 0.1).is_err());
        assert!(PhoneLm::estimate(&[vec![1]], 3, 2, 0.0).is_err());
    }

    #[test]
    fn reachable_history_count() {
        let lm = PhoneLm::uniform(5, 4, true).unwrap();
        assert_eq!(lm.reachable_histories().len(), 1 + 5 + 25 + 125);
        assert_eq!(PhoneLm::uniform(5, 1, true).unwrap().reachable_histories().len(), 1);
    }

    #[test]
    fn json_round_trip() {
        let lm = PhoneLm::estimate(&[vec![0, 1, 2], vec![2, 2]], 3, 3, 0.1).unwrap();
        let text = serde_json::to_string(&lm).unwrap();
        let back: PhoneLm = serde_json::from_str::<PhoneLm>(&text).unwrap().finish_load();
        assert_eq!(back, lm);
    }

    fn transcripts(v: u32) -> impl Strategy<Value = Vec<Vec<u32>>> {
        prop::collection::vec(prop::collection::vec(0..v, 0..8), 0..6)
    }

    proptest! {
        #[test]
        fn contexts_are_normalized(ts in transcripts(4), order in 1usize..=4) {
            let lm = PhoneLm::estimate(&ts, 4, order, DEFAULT_ADD_K).unwrap();
            for h in lm.reachable_histories() {
                let mass: f64 = lm.log_probs(&h).iter().map(|l| l.exp()).sum();
                prop_assert!((mass - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn sentence_probabilities_sum_below_one(ts in transcripts(2)) {
            // Summing over every sequence up to length 3 never exceeds 1.
            let lm = PhoneLm::estimate(&ts, 2, 2, DEFAULT_ADD_K).unwrap();
            let mut total = 0.0;
            for len in 0..=3u32 {
                for code in 0..(1u32 << len) {
                    let seq: Vec<u32> = (0..len).map(|i| (code >> i) & 1).collect();
                    total += lm.score(&seq).unwrap().exp();
                }
            }
            prop_assert!(total <= 1.0 + 1e-12);
        }
    }
}
