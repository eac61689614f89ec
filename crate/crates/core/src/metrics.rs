//! Normalized complex-voltage error.
//!
//! Each bus voltage is compared as the rectangular vector `[v cos a, v sin a]`.
//! The per-bus error is the Euclidean distance between predicted and true
//! vectors divided by the true vector's norm, and the aggregate is the maximum
//! over buses.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub per_bus: Vec<f64>,
    pub eps_inf: f64,
    pub worst_bus: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("vector lengths differ: pred v={pv} a={pa}, true v={tv} a={ta}")]
    Length { pv: usize, pa: usize, tv: usize, ta: usize },
    #[error("non-finite value at bus {0}")]
    NonFinite(usize),
}

/// Normalizes `diff` by `truth_norm`; buses with a zero true vector keep the
/// absolute error.
fn normalize(diff: f64, truth_norm: f64) -> f64 {
    if truth_norm == 0.0 {
        diff
    } else {
        diff / truth_norm
    }
}

pub fn vector_error(
    pred_v: &[f64],
    pred_a: &[f64],
    true_v: &[f64],
    true_a: &[f64],
) -> Result<ErrorReport, MetricError> {
    let n = true_v.len();
    if pred_v.len() != n || pred_a.len() != n || true_a.len() != n {
        return Err(MetricError::Length { pv: pred_v.len(), pa: pred_a.len(), tv: n, ta: true_a.len() });
    }
    let mut per_bus = Vec::with_capacity(n);
    let mut eps_inf = 0.0;
    let mut worst_bus = 0;
    for i in 0..n {
        let vals = [pred_v[i], pred_a[i], true_v[i], true_a[i]];
        if vals.iter().any(|x| !x.is_finite()) {
            return Err(MetricError::NonFinite(i));
        }
        let (ps, pc) = pred_a[i].sin_cos();
        let (ts, tc) = true_a[i].sin_cos();
        let dx = pred_v[i] * pc - true_v[i] * tc;
        let dy = pred_v[i] * ps - true_v[i] * ts;
        let truth_norm = (true_v[i] * tc).hypot(true_v[i] * ts);
        let e = normalize(dx.hypot(dy), truth_norm);
        if e > eps_inf {
            eps_inf = e;
            worst_bus = i;
        }
        per_bus.push(e);
    }
    Ok(ErrorReport { per_bus, eps_inf, worst_bus })
}

/// Shorthand for `vector_error(..)?.eps_inf`.
pub fn eps_inf(pred_v: &[f64], pred_a: &[f64], true_v: &[f64], true_a: &[f64]) -> Result<f64, MetricError> {
    vector_error(pred_v, pred_a, true_v, true_a).map(|r| r.eps_inf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;

    #[test]
    fn identity_is_zero() {
        let v = [1.0, 0.98, 0.95];
        let a = [0.0, -0.01, -0.03];
        let r = vector_error(&v, &a, &v, &a).unwrap();
        assert_eq!(r.per_bus, vec![0.0; 3]);
        assert_eq!(r.eps_inf, 0.0);
    }

    #[test]
    fn pure_magnitude_perturbation() {
        let r = vector_error(&[1.0, 1.01, 1.0], &[0.0; 3], &[1.0; 3], &[0.0; 3]).unwrap();
        assert!((r.per_bus[1] - 0.01).abs() <= 1e-12);
        assert!((r.eps_inf - 0.01).abs() <= 1e-12);
        assert_eq!(r.worst_bus, 1);
    }

    #[test]
    fn angle_perturbation_is_chord_length() {
        for theta in [0.01, 0.1] {
            let chord = (Complex64::from_polar(1.0, theta) - Complex64::new(1.0, 0.0)).norm();
            let r = vector_error(&[1.0], &[theta], &[1.0], &[0.0]).unwrap();
            assert!((r.eps_inf - chord).abs() <= 1e-12);
            assert!((r.eps_inf - 2.0 * (theta / 2.0).sin()).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_truth_uses_absolute_error() {
        let r = vector_error(&[0.3], &[0.0], &[0.0], &[0.0]).unwrap();
        assert!((r.eps_inf - 0.3).abs() < 1e-15);
    }

    #[test]
    fn nan_rejected() {
        assert_eq!(vector_error(&[f64::NAN], &[0.0], &[1.0], &[0.0]), Err(MetricError::NonFinite(0)));
        assert!(matches!(vector_error(&[1.0], &[0.0, 0.0], &[1.0], &[0.0]), Err(MetricError::Length { .. })));
    }

    proptest! {
        #[test]
        fn scale_invariant(v in 0.5f64..1.5, a in -0.5f64..0.5, dv in -0.1f64..0.1, da in -0.1f64..0.1, c in 0.1f64..10.0) {
            let e1 = eps_inf(&[v + dv], &[a + da], &[v], &[a]).unwrap();
            let e2 = eps_inf(&[c * (v + dv)], &[a + da], &[c * v], &[a]).unwrap();
            prop_assert!((e1 - e2).abs() <= 1e-12 * e1.max(1.0));
        }

        #[test]
        fn max_dominates(pv in prop::collection::vec(0.8f64..1.2, 1..10), seed in 0u64..1000) {
            let n = pv.len();
            let pa: Vec<f64> = (0..n).map(|i| ((i as u64 + seed) % 7) as f64 * 0.01).collect();
            let r = vector_error(&pv, &pa, &vec![1.0; n], &vec![0.0; n]).unwrap();
            prop_assert!(r.per_bus.iter().all(|&e| e <= r.eps_inf && e >= 0.0));
            prop_assert_eq!(r.per_bus[r.worst_bus], r.eps_inf);
        }
    }
}
