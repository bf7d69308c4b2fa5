//! N-best rescoring with an external LM.

use super::lm::LmScorer;
use super::viterbi::Hypothesis;
use crate::error::Result;

/// Fills `lm_score`, sets `combined = am_score + lmwt * lm_score` and sorts
/// by descending combined score. The sort is stable, so equal scores keep
/// their input order.
pub fn rescore(hyps: &[Hypothesis], lm: &dyn LmScorer, lmwt: f64) -> Result<Vec<Hypothesis>> {
    let mut out = hyps
        .iter()
        .map(|h| {
            let lm_score = lm.score(&h.phones)?;
            Ok(Hypothesis { phones: h.phones.clone(), am_score: h.am_score, lm_score, combined: h.am_score + lmwt * lm_score })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| b.combined.total_cmp(&a.combined));
    Ok(out)
}

/// LM weights 0.2, 0.4, ..., 2.0.
pub fn lmwt_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 5.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::lm::{NGramLm, OracleLm};
    use crate::graph::PhoneLm;

    fn hyps() -> Vec<Hypothesis> {
        vec![
            Hypothesis::new(vec![0, 1], -3.0),
            Hypothesis::new(vec![1], -3.0),
            Hypothesis::new(vec![2, 2, 2], -4.5),
            Hypothesis::new(vec![1, 1], -7.0),
        ]
    }

    #[test]
    fn zero_weight_keeps_order() {
        let lm = NGramLm(PhoneLm::estimate(&[vec![2, 2, 2]], 3, 2, 0.1).unwrap());
        let out = rescore(&hyps(), &lm, 0.0).unwrap();
        let phones: Vec<_> = out.iter().map(|h| h.phones.clone()).collect();
        assert_eq!(phones, hyps().into_iter().map(|h| h.phones).collect::<Vec<_>>());
        assert!(out.iter().all(|h| h.lm_score < 0.0));
    }

    #[test]
    fn oracle_lm_promotes_reference() {
        let out = rescore(&hyps(), &OracleLm::new(vec![1, 1]), 0.2).unwrap();
        assert_eq!(out[0].phones, vec![1, 1]);
        assert_eq!(out[0].combined, -7.0);
    }

    #[test]
    fn idempotent() {
        let lm = NGramLm(PhoneLm::estimate(&[vec![1, 1], vec![0]], 3, 2, 0.1).unwrap());
        let once = rescore(&hyps(), &lm, 1.4).unwrap();
        assert_eq!(rescore(&once, &lm, 1.4).unwrap(), once);
        for w in once.windows(2) {
            assert!(w[0].combined >= w[1].combined);
        }
    }

    #[test]
    fn grid() {
        let g = lmwt_grid();
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], 0.2);
        assert_eq!(g[2].to_string(), "0.6");
        assert_eq!(g[9], 2.0);
    }
}
