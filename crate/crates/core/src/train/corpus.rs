//! Synthetic corpora with known alignments.
//!
//! File layout (`PFC1`): the 4 magic bytes, a little-endian `u32` header
//! length and the JSON header `{"count", "spec"}`; then per utterance a
//! `u32` length, a JSON record `{"phones", "alignment"}` and the feature
//! tensor in `PFT1` form.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{num_pdfs, pdf_a, pdf_b};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const CORPUS_MAGIC: &[u8; 4] = b"PFC1";

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    /// `T x F`.
    pub features: Tensor,
    pub phones: Vec<u32>,
    /// True pdf-id per frame.
    pub alignment: Vec<u32>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.alignment.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub num_phones: u32,
    pub feature_dim: usize,
    /// Inclusive frame-count range of the entry state.
    pub entry_frames: (usize, usize),
    /// Inclusive frame-count range of the optional second state (0 skips it).
    pub exit_frames: (usize, usize),
    pub noise_stddev: f64,
    /// Inclusive phone-count range per utterance.
    pub phones_per_utterance: (usize, usize),
    /// One `feature_dim` vector per pdf-id; drawn from the seed when absent.
    #[serde(default)]
    pub means: Option<Vec<Vec<f64>>>,
    /// Drawn means lie in `[-mean_range, mean_range]^F` ...
    pub mean_range: f64,
    /// ... at least this far apart.
    pub min_mean_distance: f64,
    /// Probability mass moved onto the successor phone `(prev + 1) mod V`;
    /// 0 gives a uniform phone prior.
    #[serde(default)]
    pub successor_bias: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    /// The standard desk corpus: 5 phones, 8-dim features, noise 0.5.
    pub fn desk(seed: u64) -> Self {
        Self {
            num_phones: 5,
            feature_dim: 8,
            entry_frames: (1, 4),
            exit_frames: (0, 3),
            noise_stddev: 0.5,
            phones_per_utterance: (3, 8),
            means: None,
            mean_range: 2.0,
            min_mean_distance: 2.0,
            successor_bias: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_phones == 0 || self.feature_dim == 0 {
            return bad("generator needs phones and a feature dimension".into());
        }
        if !(self.noise_stddev >= 0.0) {
            return bad(format!("noise stddev must be >= 0, got {}", self.noise_stddev));
        }
        if self.entry_frames.0 == 0 || self.entry_frames.0 > self.entry_frames.1 {
            return bad("entry state needs a range with minimum >= 1".into());
        }
        if self.exit_frames.0 > self.exit_frames.1 {
            return bad("empty exit-state duration range".into());
        }
        let (lo, hi) = self.phones_per_utterance;
        if lo == 0 || lo > hi {
            return bad("phone count range must satisfy 1 <= min <= max".into());
        }
        if !(0.0..1.0).contains(&self.successor_bias) {
            return bad("successor bias must lie in [0, 1)".into());
        }
        if let Some(m) = &self.means {
            if m.len() != num_pdfs(self.num_phones) || m.iter().any(|v| v.len() != self.feature_dim) {
                return bad(format!("need {} means of dimension {}", num_pdfs(self.num_phones), self.feature_dim));
            }
        }
        Ok(())
    }

    /// Explicit means, or means drawn by sequential rejection sampling.
    pub fn resolved_means(&self) -> Result<Vec<Vec<f64>>> {
        if let Some(m) = &self.means {
            return Ok(m.clone());
        }
        let mut rng = Rng::new(self.seed).fork(0x6d65616e);
        let mut means: Vec<Vec<f64>> = Vec::new();
        let mut attempts = 0;
        while means.len() < num_pdfs(self.num_phones) {
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::Config("cannot place emission means that far apart; lower min_mean_distance".into()));
            }
            let cand: Vec<f64> = (0..self.feature_dim).map(|_| rng.uniform_range(-self.mean_range, self.mean_range)).collect();
            let far = means.iter().all(|m| {
                m.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= self.min_mean_distance
            });
            if far {
                means.push(cand);
            }
        }
        Ok(means)
    }
}

/// `n` utterances drawn from `spec`; fully determined by `spec.seed`.
pub fn generate_corpus(spec: &GeneratorSpec, n: usize) -> Result<Vec<Utterance>> {
    spec.validate()?;
    let means = spec.resolved_means()?;
    let mut rng = Rng::new(spec.seed);
    let v = spec.num_phones as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = rng.int_inclusive(spec.phones_per_utterance.0, spec.phones_per_utterance.1);
        let mut phones = Vec::with_capacity(len);
        for i in 0..len {
            let p = if i > 0 && rng.uniform() < spec.successor_bias {
                (phones[i - 1] as usize + 1) % v
            } else {
                rng.below(v)
            };
            phones.push(p as u32);
        }
        let mut alignment = Vec::new();
        for &p in &phones {
            let a = rng.int_inclusive(spec.entry_frames.0, spec.entry_frames.1);
            let b = rng.int_inclusive(spec.exit_frames.0, spec.exit_frames.1);
            alignment.extend(std::iter::repeat_n(pdf_a(p), a));
            alignment.extend(std::iter::repeat_n(pdf_b(p), b));
        }
        let mut values = Vec::with_capacity(alignment.len() * spec.feature_dim);
        for &pdf in &alignment {
            for &m in &means[pdf as usize] {
                values.push(m + spec.noise_stddev * rng.normal());
            }
        }
        let features = Tensor::from_vec(&[alignment.len(), spec.feature_dim], values)?;
        out.push(Utterance { features, phones, alignment });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    count: usize,
    spec: Option<GeneratorSpec>,
}

#[derive(Serialize, Deserialize)]
struct RecordHeader {
    phones: Vec<u32>,
    alignment: Vec<u32>,
}

fn write_json<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec(value)?;
    let len = u32::try_from(bytes.len()).map_err(|_| Error::Format("record header too large".into()))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&bytes)?;
    Ok(())
}

fn read_json<R: Read, T: for<'de> Deserialize<'de>>(r: &mut R) -> Result<T> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    Ok(serde_json::from_slice(&buf)?)
}

pub fn write_corpus<W: Write>(w: &mut W, utts: &[Utterance], spec: Option<&GeneratorSpec>) -> Result<()> {
    w.write_all(CORPUS_MAGIC)?;
    write_json(w, &CorpusHeader { count: utts.len(), spec: spec.cloned() })?;
    for u in utts {
        write_json(w, &RecordHeader { phones: u.phones.clone(), alignment: u.alignment.clone() })?;
        u.features.write_to(w)?;
    }
    Ok(())
}

/// Reads a corpus and the generator spec recorded with it, if any.
pub fn read_corpus<R: Read>(r: &mut R) -> Result<(Vec<Utterance>, Option<GeneratorSpec>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CORPUS_MAGIC {
        return Err(Error::Format("not a corpus file (bad magic)".into()));
    }
    let header: CorpusHeader = read_json(r)?;
    let mut utts = Vec::with_capacity(header.count);
    for i in 0..header.count {
        let rec: RecordHeader = read_json(r)?;
        let features = Tensor::read_from(r)?;
        if features.rank() != 2 || features.rows() != rec.alignment.len() {
            return Err(Error::Format(format!("utterance {i}: features do not match the alignment length")));
        }
        utts.push(Utterance { features, phones: rec.phones, alignment: rec.alignment });
    }
    Ok((utts, header.spec))
}

pub fn save_corpus(path: &Path, utts: &[Utterance], spec: Option<&GeneratorSpec>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_corpus(&mut w, utts, spec)?;
    w.flush()?;
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<(Vec<Utterance>, Option<GeneratorSpec>)> {
    read_corpus(&mut BufReader::new(File::open(path)?))
}

/// The standard desk split: 600 utterances from `GeneratorSpec::desk(seed)`,
/// the first 500 for training and the last 100 for testing.
pub fn standard_corpus(seed: u64) -> Result<(Vec<Utterance>, Vec<Utterance>)> {
    let mut all = generate_corpus(&GeneratorSpec::desk(seed), 600)?;
    let test = all.split_off(500);
    Ok((all, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_numerator_graph;

    #[test]
    fn noiseless_features_equal_means() {
        let spec = GeneratorSpec { noise_stddev: 0.0, ..GeneratorSpec::desk(3) };
        let means = spec.resolved_means().unwrap();
        for u in generate_corpus(&spec, 20).unwrap() {
            for (t, &pdf) in u.alignment.iter().enumerate() {
                assert_eq!(u.features.row(t), means[pdf as usize].as_slice());
                // Nearest-mean classification is exact.
                let nearest = (0..means.len())
                    .min_by(|&a, &b| {
                        let d = |m: &Vec<f64>| m.iter().zip(u.features.row(t)).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
                        d(&means[a]).total_cmp(&d(&means[b]))
                    })
                    .unwrap();
                assert_eq!(nearest as u32, pdf);
            }
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let spec = GeneratorSpec::desk(9);
        let a = generate_corpus(&spec, 30).unwrap();
        let b = generate_corpus(&spec, 30).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&GeneratorSpec::desk(10), 30).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn alignments_are_numerator_paths() {
        let spec = GeneratorSpec::desk(4);
        for u in generate_corpus(&spec, 50).unwrap() {
            assert_eq!(u.features.rows(), u.alignment.len());
            let g = build_numerator_graph(&u.phones, u.frames(), spec.num_phones).unwrap();
            let out = g.out_arcs();
            let mut live = vec![g.start];
            for &pdf in &u.alignment {
                let mut next: Vec<usize> =
                    live.iter().flat_map(|&s| out[s].iter()).filter(|&&a| g.arcs[a].pdf == Some(pdf)).map(|&a| g.arcs[a].dst).collect();
                next.sort_unstable();
                next.dedup();
                live = next;
            }
            assert!(live.iter().any(|&s| g.final_weight(s).is_some()));
        }
    }

    #[test]
    fn phone_frequencies_near_uniform() {
        let spec = GeneratorSpec { num_phones: 3, ..GeneratorSpec::desk(5) };
        let utts = generate_corpus(&spec, 100).unwrap();
        let mut counts = [0usize; 3];
        for u in &utts {
            for &p in &u.phones {
                counts[p as usize] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        for c in counts {
            assert!((c as f64 / total as f64 - 1.0 / 3.0).abs() < 0.05, "{counts:?}");
        }
    }

    #[test]
    fn means_are_separated() {
        let spec = GeneratorSpec::desk(1);
        let m = spec.resolved_means().unwrap();
        for i in 0..m.len() {
            for j in 0..i {
                let d: f64 = m[i].iter().zip(&m[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                assert!(d >= spec.min_mean_distance);
            }
        }
    }

    #[test]
    fn invalid_specs() {
        let d = GeneratorSpec::desk(1);
        assert!(generate_corpus(&GeneratorSpec { noise_stddev: -0.1, ..d.clone() }, 1).is_err());
        assert!(generate_corpus(&GeneratorSpec { entry_frames: (0, 2), ..d.clone() }, 1).is_err());
        assert!(generate_corpus(&GeneratorSpec { means: Some(vec![vec![0.0; 8]]), ..d.clone() }, 1).is_err());
        assert!(GeneratorSpec { min_mean_distance: 100.0, ..d }.resolved_means().is_err());
    }

    #[test]
    fn file_round_trip() {
        let spec = GeneratorSpec::desk(2);
        let utts = generate_corpus(&spec, 7).unwrap();
        let mut buf = Vec::new();
        write_corpus(&mut buf, &utts, Some(&spec)).unwrap();
        let (back, s) = read_corpus(&mut buf.as_slice()).unwrap();
        assert_eq!(back, utts);
        assert_eq!(s, Some(spec));
        buf[0] = b'X';
        assert!(read_corpus(&mut buf.as_slice()).is_err());
    }
}
