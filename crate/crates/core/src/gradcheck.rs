//! Central finite-difference gradient checker.

use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Check at most this many coordinates, sampled without replacement.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { eps: 1e-5, tol: 1e-5, max_coords: None, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a kink.
    pub excluded: usize,
    pub non_finite: bool,
    pub pass: bool,
}

/// Value of the checked function plus a fingerprint of its piecewise region.
///
/// Smooth functions return signature 0. Functions with kinks (relu) return a
/// hash of their activation pattern; a coordinate whose +/-eps perturbation
/// changes the pattern sits within eps of a kink and is excluded.
#[derive(Clone, Copy, Debug)]
pub struct Probe {
    pub value: f64,
    pub signature: u64,
}

impl From<f64> for Probe {
    fn from(value: f64) -> Self {
        Probe { value, signature: 0 }
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

/// FNV-1a over the sign pattern of `values` (positive vs not).
pub fn sign_signature<'a>(values: impl IntoIterator<Item = &'a f64>, mut h: u64) -> u64 {
    if h == 0 {
        h = 0xcbf2_9ce4_8422_2325;
    }
    for v in values {
        h ^= (*v > 0.0) as u64 + 1;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn grad_check<F>(theta: &[f64], analytic: &[f64], mut f: F, cfg: &GradCheckConfig) -> GradCheckReport
where
    F: FnMut(&[f64]) -> Probe,
{
    assert_eq!(theta.len(), analytic.len(), "analytic gradient length mismatch");
    let mut coords: Vec<usize> = (0..theta.len()).collect();
    if let Some(m) = cfg.max_coords {
        if m < coords.len() {
            Rng::new(cfg.seed).shuffle(&mut coords);
            coords.truncate(m);
            coords.sort_unstable();
        }
    }

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: None,
        checked: 0,
        excluded: 0,
        non_finite: false,
        pass: false,
    };
    let base = f(theta);
    if !base.value.is_finite() || analytic.iter().any(|g| !g.is_finite()) {
        report.non_finite = true;
        return report;
    }

    let mut work = theta.to_vec();
    for i in coords {
        let orig = work[i];
        work[i] = orig + cfg.eps;
        let plus = f(&work);
        work[i] = orig - cfg.eps;
        let minus = f(&work);
        work[i] = orig;
        if !plus.value.is_finite() || !minus.value.is_finite() {
            report.non_finite = true;
            return report;
        }
        if plus.signature != base.signature || minus.signature != base.signature {
            report.excluded += 1;
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * cfg.eps);
        let e = rel_err(analytic[i], numeric);
        report.checked += 1;
        if e > report.max_rel_err || report.worst_index.is_none() {
            report.max_rel_err = report.max_rel_err.max(e);
            report.worst_index = Some(i);
        }
    }
    report.pass = report.max_rel_err <= cfg.tol;
    report
}

/// [`grad_check`] for functions without kinks.
pub fn grad_check_smooth<F>(theta: &[f64], analytic: &[f64], mut f: F, cfg: &GradCheckConfig) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    grad_check(theta, analytic, |t| Probe::from(f(t)), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{affine_backward, affine_forward, log_softmax, relu_backward, relu_forward};
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_matches_exactly() {
        let theta = [0.3, -1.2, 4.0, 0.0];
        let analytic: Vec<f64> = theta.iter().map(|t| 2.0 * t).collect();
        let cfg = GradCheckConfig { eps: 1e-4, tol: 1e-9, ..Default::default() };
        let r = grad_check_smooth(&theta, &analytic, |t| t.iter().map(|v| v * v).sum(), &cfg);
        assert!(r.pass, "{r:?}");
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn ce_of_two_class_affine_model() {
        // params: W (2x2) then b (2); one sample, target class 1
        let x = Tensor::from_vec(&[1, 2], vec![0.7, -1.3]).unwrap();
        let theta = vec![0.2, -0.5, 0.9, 0.1, 0.05, -0.3];
        let loss = |p: &[f64]| {
            let w = Tensor::from_vec(&[2, 2], p[..4].to_vec()).unwrap();
            let b = Tensor::from_vec(&[2], p[4..].to_vec()).unwrap();
            let z = affine_forward(&x, &w, &b).unwrap();
            -log_softmax(&z).unwrap().at2(0, 1)
        };
        // closed form: dL/dz = softmax - onehot
        let w = Tensor::from_vec(&[2, 2], theta[..4].to_vec()).unwrap();
        let b = Tensor::from_vec(&[2], theta[4..].to_vec()).unwrap();
        let z = affine_forward(&x, &w, &b).unwrap();
        let y = log_softmax(&z).unwrap();
        let dz = Tensor::from_vec(&[1, 2], vec![y.at2(0, 0).exp(), y.at2(0, 1).exp() - 1.0]).unwrap();
        let g = affine_backward(&x, &w, &dz).unwrap();
        let analytic = [g.dw.values(), g.db.values()].concat();
        let cfg = GradCheckConfig { eps: 1e-5, tol: 1e-6, ..Default::default() };
        let r = grad_check_smooth(&theta, &analytic, loss, &cfg);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn relu_kink_coordinate_excluded() {
        let theta = [0.0, 1.5, -2.0];
        let x = Tensor::from_vec(&[3], theta.to_vec()).unwrap();
        let analytic = relu_backward(&x, &Tensor::filled(&[3], 1.0)).unwrap().into_values();
        let probe = |t: &[f64]| Probe {
            value: relu_forward(&Tensor::from_vec(&[3], t.to_vec()).unwrap()).sum(),
            signature: sign_signature(t, 0),
        };
        let r = grad_check(&theta, &analytic, probe, &GradCheckConfig { eps: 1e-6, tol: 1e-9, ..Default::default() });
        assert_eq!(r.excluded, 1);
        assert_eq!(r.checked, 2);
        assert!(r.pass);
    }

    #[test]
    fn non_finite_reports_failure() {
        let r = grad_check_smooth(&[1.0], &[0.0], |t| if t[0] > 1.0 { f64::NAN } else { 0.0 }, &GradCheckConfig::default());
        assert!(r.non_finite);
        assert!(!r.pass);
    }

    #[test]
    fn wrong_gradient_fails() {
        let r = grad_check_smooth(&[1.0, 2.0], &[2.0, 5.0], |t| t.iter().map(|v| v * v).sum(), &GradCheckConfig::default());
        assert!(!r.pass);
        assert_eq!(r.worst_index, Some(1));
    }
}
