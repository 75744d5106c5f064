//! Finite-sample disappointment bounds and concentration inequalities.
//!
//! With `N` samples on a finite outcome space of cardinality `|Ξ|`, the
//! probability that the true risk exceeds the robust estimate computed with
//! radius `r` is at most `e^{-rN} (N+1)^{|Ξ|}`. Because `(N+1)^{|Ξ|}`
//! overflows quickly, bounds are computed in the log domain.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Natural log of the bound; positive values mean the bound is vacuous.
    pub log_probability_bound: f64,
    /// `min(1, exp(log_probability_bound))`.
    pub probability_bound: f64,
    pub radius: f64,
    pub sample_size: u64,
    /// Cardinality entering the polynomial factor.
    pub cardinality: u64,
}

impl BoundReport {
    fn new(log_bound: f64, radius: f64, sample_size: u64, cardinality: u64) -> Self {
        Self {
            log_probability_bound: log_bound,
            probability_bound: log_bound.exp().min(1.0),
            radius,
            sample_size,
            cardinality,
        }
    }
}

/// `log bound = |Ξ| log(N+1) - rN`.
pub fn finite_sample_bound(radius: f64, n: u64, cardinality: u64) -> Result<BoundReport> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(invalid("radius must be positive and finite"));
    }
    if n == 0 || cardinality == 0 {
        return Err(invalid("sample size and cardinality must be at least 1"));
    }
    let log_bound = cardinality as f64 * ((n + 1) as f64).ln() - radius * n as f64;
    Ok(BoundReport::new(log_bound, radius, n, cardinality))
}

/// Off-policy evaluation bound `(|S| + |A|) log(N+1) - rN` on the event that
/// the true long-run cost exceeds the robust estimate.
pub fn ope_bound(radius: f64, n: u64, n_states: u64, n_actions: u64) -> Result<BoundReport> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(invalid("radius must be nonnegative and finite"));
    }
    if n == 0 || n_states == 0 || n_actions == 0 {
        return Err(invalid("N, |S| and |A| must be at least 1"));
    }
    let k = n_states + n_actions;
    let log_bound = k as f64 * ((n + 1) as f64).ln() - radius * n as f64;
    Ok(BoundReport::new(log_bound, radius, n, k))
}

/// Hoeffding tail `exp(-2Nε²/b²)` of the IPS estimator with terms in `[0, b]`.
pub fn hoeffding_ips_bound(epsilon: f64, n: u64, b: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !(b > 0.0) || !epsilon.is_finite() || !b.is_finite() {
        return Err(invalid("ε and b must be positive and finite"));
    }
    if n == 0 {
        return Err(invalid("sample size must be at least 1"));
    }
    Ok((-2.0 * n as f64 * (epsilon / b).powi(2)).exp())
}

/// Smallest radius whose finite-sample bound is at most `target`:
/// `r = (|Ξ| log(N+1) + log(1/target)) / N`.
pub fn radius_for_confidence(n: u64, cardinality: u64, target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(invalid("target probability must lie in (0, 1)"));
    }
    if n == 0 || cardinality == 0 {
        return Err(invalid("sample size and cardinality must be at least 1"));
    }
    Ok((cardinality as f64 * ((n + 1) as f64).ln() - target.ln()) / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use proptest::prelude::*;

    /// `ln((N+1)^k)` from the exact integer power.
    fn exact_log_power(n: u64, k: u32) -> f64 {
        let big = BigUint::from(n + 1).pow(k);
        let bits = big.bits();
        let shift = bits.saturating_sub(60);
        let mantissa: BigUint = &big >> shift;
        let m: u64 = mantissa.iter_u64_digits().next().unwrap_or(0);
        (m as f64).ln() + shift as f64 * std::f64::consts::LN_2
    }

    #[test]
    fn finite_sample_examples() {
        let b = finite_sample_bound(0.1, 100, 2).unwrap();
        assert!((b.log_probability_bound - (2.0 * 101f64.ln() - 10.0)).abs() < 1e-12);
        assert!((b.log_probability_bound + 0.770).abs() < 1e-3);
        let r = 2.0 * 101f64.ln() / 100.0;
        let edge = finite_sample_bound(r, 100, 2).unwrap();
        assert!(edge.log_probability_bound.abs() < 1e-12);
        assert!((edge.probability_bound - 1.0).abs() < 1e-12);
        assert!(finite_sample_bound(0.0, 10, 2).is_err());
        assert!(finite_sample_bound(0.1, 0, 2).is_err());
    }

    #[test]
    fn bound_vanishes_beyond_crossover() {
        let mut prev = f64::INFINITY;
        for n in (1000..20000).step_by(500) {
            let b = finite_sample_bound(0.1, n, 3).unwrap();
            assert!(b.log_probability_bound < prev);
            prev = b.log_probability_bound;
        }
        assert!(finite_sample_bound(0.1, 100_000, 3).unwrap().probability_bound < 1e-300);
    }

    #[test]
    fn ope_examples() {
        let b = ope_bound(0.2, 500, 5, 4).unwrap();
        assert!((b.log_probability_bound - (9.0 * 501f64.ln() - 100.0)).abs() < 1e-12);
        assert!((b.log_probability_bound + 44.05).abs() < 1e-2);
        assert!(ope_bound(0.0, 500, 5, 4).unwrap().probability_bound >= 1.0);
        let mut n = 100;
        while n < 100_000 {
            let (a, b) = (ope_bound(0.2, n, 5, 4).unwrap(), ope_bound(0.2, 2 * n, 5, 4).unwrap());
            if n as f64 > 9.0 / 0.2 {
                assert!(b.log_probability_bound < a.log_probability_bound);
            }
            n *= 2;
        }
    }

    #[test]
    fn hoeffding_examples() {
        assert!((hoeffding_ips_bound(2.0, 1, 2.0).unwrap() - (-2f64).exp()).abs() < 1e-15);
        assert!(hoeffding_ips_bound(1e-12, 10, 1.0).unwrap() > 1.0 - 1e-20 - 1e-12);
        let a = hoeffding_ips_bound(0.2, 100, 1.5).unwrap();
        let b = hoeffding_ips_bound(0.1, 400, 1.5).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(hoeffding_ips_bound(0.0, 1, 1.0).is_err());
    }

    #[test]
    fn radius_examples() {
        let r = radius_for_confidence(100, 2, 0.05).unwrap();
        assert!((r - (2.0 * 101f64.ln() + 20f64.ln()) / 100.0).abs() < 1e-15);
        assert!((r - 0.1223).abs() < 1e-4);
        let limit = radius_for_confidence(100, 2, 1.0 - 1e-12).unwrap();
        assert!((limit - 2.0 * 101f64.ln() / 100.0).abs() < 1e-12);
        assert!(radius_for_confidence(100, 2, 1.0).is_err());
        assert!(radius_for_confidence(100, 2, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn log_bound_matches_exact_integer_power(n in 1u64..100_000, k in 1u32..40, r in 1e-4f64..2.0) {
            let b = finite_sample_bound(r, n, k as u64).unwrap();
            let exact = exact_log_power(n, k) - r * n as f64;
            prop_assert!((b.log_probability_bound - exact).abs() <= 1e-12 * exact.abs().max(1.0));
        }

        #[test]
        fn radius_round_trip(n in 1u64..1_000_000, k in 1u64..50, t in 1e-6f64..0.999) {
            let r = radius_for_confidence(n, k, t).unwrap();
            let b = finite_sample_bound(r, n, k).unwrap();
            prop_assert!(b.probability_bound <= t * (1.0 + 1e-9));
        }

        #[test]
        fn bounds_are_monotone(n in 1u64..10_000, k in 1u64..20, r in 1e-3f64..1.0) {
            let base = finite_sample_bound(r, n, k).unwrap().log_probability_bound;
            prop_assert!(finite_sample_bound(r * 1.5, n, k).unwrap().log_probability_bound <= base);
            prop_assert!(finite_sample_bound(r, n, k + 1).unwrap().log_probability_bound >= base);
        }
    }
}
