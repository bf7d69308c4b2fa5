//! Sequence scorers for n-best rescoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::PhoneLm;
use crate::rng::Rng;

/// Log-probability of a whole phone sequence, end event included.
pub trait LmScorer {
    fn score(&self, phones: &[u32]) -> Result<f64>;
}

/// Phone n-gram scorer.
#[derive(Clone, Debug)]
pub struct NGramLm(pub PhoneLm);

impl LmScorer for NGramLm {
    fn score(&self, phones: &[u32]) -> Result<f64> {
        self.0.score(phones)
    }
}

/// Scores one reference sequence 0 and everything else `penalty`.
#[derive(Clone, Debug)]
pub struct OracleLm {
    pub reference: Vec<u32>,
    pub penalty: f64,
}

impl OracleLm {
    pub fn new(reference: Vec<u32>) -> Self {
        Self { reference, penalty: -1e9 }
    }
}

impl LmScorer for OracleLm {
    fn score(&self, phones: &[u32]) -> Result<f64> {
        Ok(if phones == self.reference.as_slice() { 0.0 } else { self.penalty })
    }
}

/// `exp(-sum(score) / events)` where every sequence contributes its phones
/// plus one end event.
pub fn perplexity(lm: &dyn LmScorer, transcripts: &[Vec<u32>]) -> Result<f64> {
    let mut total = 0.0;
    let mut events = 0;
    for t in transcripts {
        total += lm.score(t)?;
        events += t.len() + 1;
    }
    if events == 0 {
        return Err(Error::Config("perplexity of an empty set".into()));
    }
    Ok((-total / events as f64).exp())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RnnLmConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Per-sequence gradient norm cap.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for RnnLmConfig {
    fn default() -> Self {
        Self { embed_dim: 8, hidden_dim: 24, epochs: 15, learning_rate: 0.05, clip_norm: 5.0, seed: 1 }
    }
}

/// Parameters of [`TinyRnnLm`], row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnParams {
    /// `(V + 1) x E`; row `V` embeds the begin symbol.
    pub embed: Vec<f64>,
    /// `E x H`.
    pub wx: Vec<f64>,
    /// `H x H`.
    pub wh: Vec<f64>,
    pub bh: Vec<f64>,
    /// `H x (V + 1)`; column `V` is the end event.
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
}

impl RnnParams {
    fn zeros_like(&self) -> Self {
        let z = |v: &Vec<f64>| vec![0.0; v.len()];
        Self { embed: z(&self.embed), wx: z(&self.wx), wh: z(&self.wh), bh: z(&self.bh), wo: z(&self.wo), bo: z(&self.bo) }
    }

    fn parts(&self) -> [&Vec<f64>; 6] {
        [&self.embed, &self.wx, &self.wh, &self.bh, &self.wo, &self.bo]
    }

    fn parts_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [&mut self.embed, &mut self.wx, &mut self.wh, &mut self.bh, &mut self.wo, &mut self.bo]
    }

    pub fn flat(&self) -> Vec<f64> {
        self.parts().iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for p in self.parts_mut() {
            let n = p.len();
            p.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        assert_eq!(off, flat.len());
    }
}

/// One embedding layer, one tanh recurrent layer and an output affine over
/// the phones plus the end event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TinyRnnLm {
    pub num_phones: u32,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub params: RnnParams,
}

struct Trace {
    inputs: Vec<usize>,
    targets: Vec<usize>,
    hidden: Vec<Vec<f64>>,
    log_probs: Vec<Vec<f64>>,
}

impl TinyRnnLm {
    pub fn new(num_phones: u32, embed_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        if num_phones == 0 || embed_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config("recurrent LM needs a vocabulary and non-zero widths".into()));
        }
        let mut rng = Rng::new(seed);
        let v = num_phones as usize + 1;
        let mut draw = |n: usize, scale: f64| -> Vec<f64> { (0..n).map(|_| scale * rng.normal()).collect() };
        let params = RnnParams {
            embed: draw(v * embed_dim, 0.3),
            wx: draw(embed_dim * hidden_dim, 1.0 / (embed_dim as f64).sqrt()),
            wh: draw(hidden_dim * hidden_dim, 0.5 / (hidden_dim as f64).sqrt()),
            bh: vec![0.0; hidden_dim],
            wo: draw(hidden_dim * v, 0.01),
            bo: vec![0.0; v],
        };
        Ok(Self { num_phones, embed_dim, hidden_dim, params })
    }

    fn events(&self) -> usize {
        self.num_phones as usize + 1
    }

    fn run(&self, phones: &[u32]) -> Result<Trace> {
        let (e, h, v) = (self.embed_dim, self.hidden_dim, self.events());
        // Index V is the begin symbol on the input side and the end event
        // on the output side.
        let marker = self.num_phones as usize;
        if let Some(&bad) = phones.iter().find(|&&p| p >= self.num_phones) {
            return Err(Error::UnknownPhone(bad));
        }
        let inputs: Vec<usize> = std::iter::once(marker).chain(phones.iter().map(|&p| p as usize)).collect();
        let targets: Vec<usize> = phones.iter().map(|&p| p as usize).chain(std::iter::once(marker)).collect();
        let p = &self.params;
        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(inputs.len());
        let mut log_probs = Vec::with_capacity(inputs.len());
        let mut prev = vec![0.0; h];
        for &x in &inputs {
            let emb = &p.embed[x * e..(x + 1) * e];
            let mut a = p.bh.clone();
            for (i, &ev) in emb.iter().enumerate() {
                for (j, aj) in a.iter_mut().enumerate() {
                    *aj += ev * p.wx[i * h + j];
                }
            }
            for (i, &hv) in prev.iter().enumerate() {
                for (j, aj) in a.iter_mut().enumerate() {
                    *aj += hv * p.wh[i * h + j];
                }
            }
            let cur: Vec<f64> = a.iter().map(|x| x.tanh()).collect();
            let mut z = p.bo.clone();
            for (i, &hv) in cur.iter().enumerate() {
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj += hv * p.wo[i * v + j];
                }
            }
            let lse = crate::ops::logsumexp(&z);
            log_probs.push(z.iter().map(|x| x - lse).collect());
            hidden.push(cur.clone());
            prev = cur;
        }
        Ok(Trace { inputs, targets, hidden, log_probs })
    }

    /// Negative log-probability of the sequence and its gradient.
    pub fn loss_and_grad(&self, phones: &[u32]) -> Result<(f64, RnnParams)> {
        let tr = self.run(phones)?;
        let (e, h, v) = (self.embed_dim, self.hidden_dim, self.events());
        let p = &self.params;
        let mut g = p.zeros_like();
        let mut loss = 0.0;
        let mut dh_next = vec![0.0; h];
        for t in (0..tr.inputs.len()).rev() {
            let y = tr.targets[t];
            loss -= tr.log_probs[t][y];
            let mut dz: Vec<f64> = tr.log_probs[t].iter().map(|l| l.exp()).collect();
            dz[y] -= 1.0;
            let cur = &tr.hidden[t];
            let mut dh = dh_next.clone();
            for i in 0..h {
                for j in 0..v {
                    g.wo[i * v + j] += cur[i] * dz[j];
                    dh[i] += p.wo[i * v + j] * dz[j];
                }
            }
            for (b, d) in g.bo.iter_mut().zip(&dz) {
                *b += d;
            }
            let da: Vec<f64> = dh.iter().zip(cur).map(|(d, c)| d * (1.0 - c * c)).collect();
            let x = tr.inputs[t];
            for i in 0..e {
                let ev = p.embed[x * e + i];
                let mut de = 0.0;
                for j in 0..h {
                    g.wx[i * h + j] += ev * da[j];
                    de += p.wx[i * h + j] * da[j];
                }
                g.embed[x * e + i] += de;
            }
            for (b, d) in g.bh.iter_mut().zip(&da) {
                *b += d;
            }
            dh_next = vec![0.0; h];
            if t > 0 {
                let prev = &tr.hidden[t - 1];
                for i in 0..h {
                    for j in 0..h {
                        g.wh[i * h + j] += prev[i] * da[j];
                        dh_next[i] += p.wh[i * h + j] * da[j];
                    }
                }
            }
        }
        Ok((loss, g))
    }
}

impl LmScorer for TinyRnnLm {
    fn score(&self, phones: &[u32]) -> Result<f64> {
        let tr = self.run(phones)?;
        Ok(tr.log_probs.iter().zip(&tr.targets).map(|(lp, &y)| lp[y]).sum())
    }
}

/// Next-phone cross-entropy training with per-sequence SGD, norm clipping
/// and a shuffled order per epoch.
pub fn train_tiny_rnnlm(transcripts: &[Vec<u32>], num_phones: u32, cfg: &RnnLmConfig) -> Result<TinyRnnLm> {
    if transcripts.is_empty() {
        return Err(Error::Config("no transcripts to train on".into()));
    }
    let mut lm = TinyRnnLm::new(num_phones, cfg.embed_dim, cfg.hidden_dim, cfg.seed)?;
    let mut rng = Rng::new(cfg.seed).fork(1);
    let mut order: Vec<usize> = (0..transcripts.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for &i in &order {
            let (loss, g) = lm.loss_and_grad(&transcripts[i])?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("recurrent LM loss on transcript {i}")));
            }
            let norm = g.parts().iter().flat_map(|p| p.iter()).map(|x| x * x).sum::<f64>().sqrt();
            let scale = cfg.learning_rate * if norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 };
            for (w, d) in lm.params.parts_mut().into_iter().zip(g.parts()) {
                for (wi, di) in w.iter_mut().zip(d) {
                    *wi -= scale * di;
                }
            }
        }
    }
    Ok(lm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check_smooth, GradCheckConfig};

    #[test]
    fn oracle_scores() {
        let lm = OracleLm::new(vec![1, 2]);
        assert_eq!(lm.score(&[1, 2]).unwrap(), 0.0);
        assert_eq!(lm.score(&[1]).unwrap(), -1e9);
    }

    #[test]
    fn rnn_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let mut lm = TinyRnnLm::new(3, 4, 5, seed).unwrap();
            // Trained-scale output weights, so recurrent gradients are not tiny.
            for w in lm.params.wo.iter_mut() {
                *w *= 50.0;
            }
            let seq: Vec<u32> = (0..(seed % 5)).map(|i| ((i * 7 + seed) % 3) as u32).collect();
            let (_, g) = lm.loss_and_grad(&seq).unwrap();
            let f = |th: &[f64]| {
                let mut m = lm.clone();
                m.params.set_flat(th);
                m.loss_and_grad(&seq).unwrap().0
            };
            let rep = grad_check_smooth(&lm.params.flat(), &g.flat(), f, &GradCheckConfig::default());
            assert!(rep.pass, "seed {seed}: {rep:?}");
        }
    }

    #[test]
    fn untrained_loss_is_near_uniform() {
        let v = 5;
        let lm = TinyRnnLm::new(v, 8, 24, 3).unwrap();
        let seqs = vec![vec![0, 1, 2, 3, 4], vec![4, 4, 1]];
        let ppl = perplexity(&lm, &seqs).unwrap();
        assert!((ppl.ln() - ((v + 1) as f64).ln()).abs() < 0.05, "{ppl}");
    }

    #[test]
    fn scores_are_log_probabilities() {
        let lm = TinyRnnLm::new(2, 3, 4, 8).unwrap();
        let mut total = 0.0;
        for len in 0..=10u32 {
            for code in 0..(1u32 << len) {
                let seq: Vec<u32> = (0..len).map(|i| (code >> i) & 1).collect();
                let s = lm.score(&seq).unwrap();
                assert!(s <= 0.0);
                total += s.exp();
            }
        }
        assert!(total <= 1.0 + 1e-12 && total > 0.5, "{total}");
        assert!(matches!(lm.score(&[2]), Err(Error::UnknownPhone(2))));
    }

    #[test]
    fn degenerate_vocabulary_is_learned() {
        let data = vec![vec![0, 0, 0]; 40];
        let cfg = RnnLmConfig { epochs: 30, ..Default::default() };
        let lm = train_tiny_rnnlm(&data, 1, &cfg).unwrap();
        let ppl = perplexity(&lm, &data).unwrap();
        assert!(ppl < 1.1, "{ppl}");
    }

    #[test]
    fn training_is_deterministic() {
        let data = vec![vec![0, 1, 2], vec![2, 1]];
        let cfg = RnnLmConfig { epochs: 3, ..Default::default() };
        assert_eq!(train_tiny_rnnlm(&data, 3, &cfg).unwrap(), train_tiny_rnnlm(&data, 3, &cfg).unwrap());
        assert!(train_tiny_rnnlm(&[], 3, &cfg).is_err());
    }
}
