//! Mini-batch SGD with momentum on `-lfmmi + alpha * ce + l2`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::Utterance;
use super::metrics::DenominatorGraphs;
use crate::error::{Error, Result};
use crate::graph::{build_numerator_graph_with_lm, PhoneLm, DEFAULT_ADD_K};
use crate::loss::{joint_loss, l2_penalty};
use crate::net::{Network, NetworkConfig};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub momentum: f64,
    /// CE weight.
    pub alpha: f64,
    /// Acoustic scale.
    pub k: f64,
    pub l2_coefficient: f64,
    /// Order of the phone LM behind the denominator graph.
    pub lm_order: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            learning_rate: 0.1,
            lr_decay: 0.5,
            decay_every: 5,
            momentum: 0.9,
            alpha: 0.1,
            k: 1.0,
            l2_coefficient: 1e-5,
            lm_order: 4,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.decay_every == 0 {
            return bad("epochs, batch_size and decay_every must be positive");
        }
        if !(self.learning_rate >= 0.0) || !(self.lr_decay > 0.0) {
            return bad("learning rate must be >= 0 and decay > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.alpha >= 0.0) || !(self.k >= 0.0) || !(self.l2_coefficient >= 0.0) {
            return bad("alpha, k and l2_coefficient must be >= 0");
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

/// Per-epoch training statistics, averaged per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// The minimized objective: `-lfmmi + alpha * ce` per frame, plus L2.
    pub joint: f64,
    pub lfmmi: f64,
    pub ce: f64,
    pub l2: f64,
    pub frame_accuracy: f64,
    pub learning_rate: f64,
    pub frames: usize,
    pub skipped: usize,
}

pub struct TrainOutcome {
    pub network: Network,
    pub history: Vec<EpochRecord>,
    /// The phone LM behind the denominator graphs.
    pub lm: PhoneLm,
}

/// History as newline-delimited JSON, one object per epoch.
pub fn history_ndjson(history: &[EpochRecord]) -> String {
    history.iter().map(|r| serde_json::to_string(r).expect("records serialize") + "\n").collect()
}

pub fn parse_history(text: &str) -> Result<Vec<EpochRecord>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// Utterance indices grouped into length-sorted batches.
pub fn length_buckets(utts: &[Utterance], batch_size: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..utts.len()).collect();
    idx.sort_by_key(|&i| (utts[i].frames(), i));
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

struct UttResult {
    grads: Vec<f64>,
    joint: f64,
    lfmmi: f64,
    ce: f64,
    correct: usize,
    frames: usize,
}

fn utterance_gradient(net: &Network, u: &Utterance, lm: &PhoneLm, dens: &DenominatorGraphs, tc: &TrainConfig) -> Result<Option<UttResult>> {
    let num = match build_numerator_graph_with_lm(&u.phones, u.frames(), lm) {
        Ok(g) => g,
        Err(Error::Infeasible(_) | Error::EmptyGraph) => return Ok(None),
        Err(e) => return Err(e),
    };
    let den = dens.get(u.frames())?;
    let mut local = net.clone();
    local.zero_grads();
    let (out, cache) = local.forward(&u.features)?;
    let report = match joint_loss(&num, den, &out.chain, &out.ce_logits, &u.alignment, tc.k, tc.alpha) {
        Ok(r) => r,
        Err(Error::SkipUtterance(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    local.backward(&cache, &report.chain_grad, &report.ce_grad)?;
    let correct = (0..u.frames())
        .filter(|&t| {
            let row = out.ce_logits.row(t);
            let best = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            best as u32 == u.alignment[t]
        })
        .count();
    Ok(Some(UttResult {
        grads: local.flat_grads(),
        joint: report.value,
        lfmmi: report.lfmmi,
        ce: report.ce,
        correct,
        frames: u.frames(),
    }))
}

/// Trains a fresh network initialized from `tc.seed`.
pub fn train(cfg: &NetworkConfig, utts: &[Utterance], tc: &TrainConfig) -> Result<TrainOutcome> {
    train_network(Network::new(cfg, tc.seed)?, utts, tc, |_| {})
}

/// Trains `net` in place; `on_epoch` sees each record as it completes.
pub fn train_network(
    mut net: Network,
    utts: &[Utterance],
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    tc.validate()?;
    if utts.is_empty() {
        return Err(Error::Config("cannot train on an empty corpus".into()));
    }
    let num_phones = (net.cfg.output_dim / 2) as u32;
    if let Some(u) = utts.iter().find(|u| u.features.cols() != net.cfg.input_dim) {
        return Err(Error::Config(format!("corpus feature dim {} but network expects {}", u.features.cols(), net.cfg.input_dim)));
    }
    let transcripts: Vec<Vec<u32>> = utts.iter().map(|u| u.phones.clone()).collect();
    let lm = PhoneLm::estimate(&transcripts, num_phones, tc.lm_order, DEFAULT_ADD_K)?;
    let mut dens = DenominatorGraphs::new(lm.clone());
    dens.prepare(utts.iter().map(Utterance::frames))?;

    let batches = length_buckets(utts, tc.batch_size);
    let mut rng = Rng::new(tc.seed).fork(0x7472);
    let mut velocity = vec![0.0; net.num_params()];
    let mut history = Vec::with_capacity(tc.epochs);
    let mut batch_id = 0usize;
    for epoch in 0..tc.epochs {
        let lr = tc.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..batches.len()).collect();
        rng.shuffle(&mut order);
        let (mut joint, mut lfmmi, mut ce) = (0.0, 0.0, 0.0);
        let (mut correct, mut frames, mut skipped) = (0usize, 0usize, 0usize);
        for &b in &order {
            let results: Vec<Option<UttResult>> = batches[b]
                .par_iter()
                .map(|&i| utterance_gradient(&net, &utts[i], &lm, &dens, tc))
                .collect::<Result<_>>()?;
            let mut grads = vec![0.0; velocity.len()];
            let mut batch_frames = 0usize;
            let mut batch_joint = 0.0;
            for r in results {
                let Some(r) = r else {
                    skipped += 1;
                    continue;
                };
                for (g, d) in grads.iter_mut().zip(&r.grads) {
                    *g += d;
                }
                batch_frames += r.frames;
                batch_joint += r.joint;
                lfmmi += r.lfmmi;
                ce += r.ce;
                correct += r.correct;
            }
            if !batch_joint.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("loss in batch {batch_id} (epoch {epoch})")));
            }
            joint += batch_joint;
            frames += batch_frames;
            batch_id += 1;
            if batch_frames == 0 {
                continue;
            }
            let theta = net.flat_params();
            let (_, l2_grad) = l2_penalty(&theta, tc.l2_coefficient);
            let scale = 1.0 / batch_frames as f64;
            let mut updated = theta;
            for ((v, (g, l)), w) in velocity.iter_mut().zip(grads.iter().zip(&l2_grad)).zip(updated.iter_mut()) {
                *v = tc.momentum * *v + g * scale + l;
                *w -= lr * *v;
            }
            net.set_flat_params(&updated);
        }
        let (l2, _) = l2_penalty(&net.flat_params(), tc.l2_coefficient);
        let per = |x: f64| if frames > 0 { x / frames as f64 } else { 0.0 };
        let record = EpochRecord {
            epoch: epoch + 1,
            joint: per(joint) + l2,
            lfmmi: per(lfmmi),
            ce: per(ce),
            l2,
            frame_accuracy: per(correct as f64),
            learning_rate: lr,
            frames,
            skipped,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome { network: net, history, lm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::corpus::{generate_corpus, GeneratorSpec};

    fn small() -> (NetworkConfig, Vec<Utterance>) {
        let spec = GeneratorSpec { num_phones: 3, phones_per_utterance: (2, 4), ..GeneratorSpec::desk(2) };
        (NetworkConfig::desk(8, 6), generate_corpus(&spec, 12).unwrap())
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (cfg, utts) = small();
        let tc = TrainConfig { epochs: 2, learning_rate: 0.0, lm_order: 2, ..Default::default() };
        let out = train(&cfg, &utts, &tc).unwrap();
        assert_eq!(out.network.flat_params(), Network::new(&cfg, tc.seed).unwrap().flat_params());
        assert_eq!(out.history[0].joint, out.history[1].joint);
        assert_eq!(out.history[0].ce, out.history[1].ce);
    }

    #[test]
    fn training_is_deterministic() {
        let (cfg, utts) = small();
        let tc = TrainConfig { epochs: 2, lm_order: 2, ..Default::default() };
        let a = train(&cfg, &utts, &tc).unwrap();
        let b = train(&cfg, &utts, &tc).unwrap();
        assert_eq!(history_ndjson(&a.history), history_ndjson(&b.history));
        assert_eq!(a.network.flat_params(), b.network.flat_params());
    }

    #[test]
    fn ce_decreases_on_a_separable_utterance() {
        let spec = GeneratorSpec { num_phones: 2, noise_stddev: 0.0, phones_per_utterance: (3, 3), ..GeneratorSpec::desk(6) };
        let utts = generate_corpus(&spec, 1).unwrap();
        let cfg = NetworkConfig::desk(8, 4);
        let tc = TrainConfig { epochs: 8, learning_rate: 2e-3, alpha: 1.0, lm_order: 1, ..Default::default() };
        let out = train(&cfg, &utts, &tc).unwrap();
        for w in out.history[1..].windows(2) {
            assert!(w[1].ce < w[0].ce, "{:?}", out.history.iter().map(|r| r.ce).collect::<Vec<_>>());
        }
    }

    #[test]
    fn history_round_trip_and_schedule() {
        let tc = TrainConfig::default();
        assert_eq!(tc.learning_rate_at(0), 0.1);
        assert_eq!(tc.learning_rate_at(4), 0.1);
        assert_eq!(tc.learning_rate_at(5), 0.05);
        assert_eq!(tc.learning_rate_at(10), 0.025);
        let r = EpochRecord {
            epoch: 1,
            joint: 0.5,
            lfmmi: -0.25,
            ce: 2.0,
            l2: 0.0,
            frame_accuracy: 0.5,
            learning_rate: 0.01,
            frames: 10,
            skipped: 0,
        };
        let text = history_ndjson(&[r.clone(), r.clone()]);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(parse_history(&text).unwrap(), vec![r.clone(), r]);
    }

    #[test]
    fn buckets_sorted_by_length() {
        let (_, utts) = small();
        let b = length_buckets(&utts, 5);
        assert_eq!(b.iter().map(Vec::len).sum::<usize>(), utts.len());
        let flat: Vec<usize> = b.concat().iter().map(|&i| utts[i].frames()).collect();
        assert!(flat.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (cfg, utts) = small();
        assert!(train(&cfg, &[], &TrainConfig::default()).is_err());
        assert!(train(&cfg, &utts, &TrainConfig { momentum: 1.0, ..Default::default() }).is_err());
        assert!(train(&NetworkConfig::desk(16, 6), &utts, &TrainConfig::default()).is_err());
    }
}
