//! Logistic approximation of the change-point posterior given a detection.
//!
//! If the optimal detector fires at time `n`, its asymptotic delay law puts
//! the change roughly `|log α| / (KL + d)` samples earlier. We model
//! `P(λ | ν = n)` as a logistic law whose mean is that point and whose variance
//! matches the squared delay:
//!
//! ```text
//! μ = n − |log α| / (KL + d)
//! s = √3 · |log α| / (π (KL + d))
//! ```
//!
//! Observations older than the posterior mass are weighted as pre-change
//! (survival function), younger ones as post-change (cdf).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};

/// Lower bound on `KL + d` when building a posterior.
///
/// Before any learning the two estimates coincide and the divergence is 0,
/// which would push the mean to −∞.
pub const KL_FLOOR: f64 = 1e-4;

/// Change-point prior and error level used to shape the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Geometric prior parameter (0 when no prior is used).
    pub rho: f64,
    /// Prior tail exponent `d`.
    pub d: f64,
    pub alpha: f64,
    /// Cutting threshold associated with `alpha`.
    pub b_alpha: f64,
}

impl PriorSpec {
    /// Geometric prior with parameter `rho`: `d = −log(1 − ρ)`, `B = (1 − α)/α`.
    pub fn geometric(rho: f64, alpha: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(invalid_arg(format!("rho must lie in (0,1), got {rho}")));
        }
        check_alpha(alpha)?;
        Ok(Self {
            rho,
            d: -(1.0 - rho).ln(),
            alpha,
            b_alpha: (1.0 - alpha) / alpha,
        })
    }

    /// No prior (min-max setting): `d = 0`.
    pub fn minimax(alpha: f64, b_alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            rho: 0.0,
            d: 0.0,
            alpha,
            b_alpha,
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid_arg(format!("alpha must lie in (0,1), got {alpha}")))
    }
}

/// `Logistic(mu, s)` approximation of `P(λ | ν = n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticPosterior {
    pub mu: f64,
    pub s: f64,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticPosterior {
    /// Builds the posterior for a detection at time `n`.
    ///
    /// `kl + d` is floored at [`KL_FLOOR`].
    pub fn build(n: f64, alpha: f64, kl: f64, d: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(kl.is_finite() && d.is_finite()) || d < 0.0 {
            return Err(invalid_arg(format!("need finite kl and d >= 0, got kl={kl}, d={d}")));
        }
        let rate = (kl + d).max(KL_FLOOR);
        let log_alpha = alpha.ln().abs();
        Ok(Self {
            mu: n - log_alpha / rate,
            s: 3f64.sqrt() * log_alpha / (PI * rate),
        })
    }

    /// Mean of the logistic law.
    pub fn mean(&self) -> f64 {
        self.mu
    }

    /// `P(λ < t) = sigmoid((t − μ)/s)`.
    pub fn cdf(&self, t: f64) -> f64 {
        sigmoid((t - self.mu) / self.s)
    }

    /// Pre-change weight `P(λ > t − Δ)`.
    pub fn pre_weight(&self, t: f64, shift: f64) -> f64 {
        sigmoid(-(t - shift - self.mu) / self.s)
    }

    /// Post-change weight `P(λ < t)`.
    pub fn post_weight(&self, t: f64) -> f64 {
        self.cdf(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn direct_substitution() {
        let p = LogisticPosterior::build(100.0, (-1f64).exp(), 0.5, 0.0).unwrap();
        assert!((p.mu - 98.0).abs() < 1e-12);
        assert!((p.s - 3f64.sqrt() / (0.5 * PI)).abs() < 1e-12);
        assert!((p.s - 1.1027).abs() < 1e-4);
        assert!((p.post_weight(98.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn alpha_near_one_collapses_at_current_time() {
        let p = LogisticPosterior::build(50.0, 1.0 - 1e-12, 0.3, 0.0).unwrap();
        assert!((p.mu - 50.0).abs() < 1e-9);
        assert!(p.s > 0.0 && p.s < 1e-9);
    }

    #[test]
    fn doubling_rate_halves_delay_and_scale() {
        let a = LogisticPosterior::build(40.0, 0.01, 0.2, 0.05).unwrap();
        let b = LogisticPosterior::build(40.0, 0.01, 0.45, 0.05).unwrap();
        assert!(((40.0 - a.mu) / (40.0 - b.mu) - 2.0).abs() < 1e-12);
        assert!((a.s / b.s - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cold_start_uses_floor() {
        let p = LogisticPosterior::build(10.0, 0.5, 0.0, 0.0).unwrap();
        assert!((p.mu - (10.0 - 2f64.ln() / KL_FLOOR)).abs() < 1e-6);
        assert!(p.mu.is_finite() && p.s.is_finite());
    }

    #[test]
    fn weights_at_median_and_tail() {
        let p = LogisticPosterior { mu: 20.0, s: 3.0 };
        assert_eq!(p.pre_weight(20.0, 0.0), 0.5);
        assert_eq!(p.pre_weight(23.0, 3.0), 0.5);
        assert!((p.pre_weight(20.0 - 60.0, 0.0) - 1.0).abs() < 1e-8);
        assert_eq!(p.post_weight(20.0), 0.5);
    }

    #[test]
    fn rejects_bad_alpha() {
        assert!(LogisticPosterior::build(1.0, 0.0, 1.0, 0.0).is_err());
        assert!(LogisticPosterior::build(1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn geometric_prior_tail_exponent() {
        let p = PriorSpec::geometric(0.005, 0.01).unwrap();
        assert!((p.d + (0.995f64).ln()).abs() < 1e-15);
        assert!((p.b_alpha - 99.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn mean_formula_is_exact(n in 0.0f64..1e4, alpha in 1e-12f64..0.999, kl in 1e-3f64..10.0, d in 0.0f64..0.1) {
            let p = LogisticPosterior::build(n, alpha, kl, d).unwrap();
            let expected = n - alpha.ln().abs() / (kl + d);
            prop_assert!((p.mean() - expected).abs() <= 1e-12 * n.abs().max(1.0));
        }

        #[test]
        fn weights_are_complementary_and_monotone(mu in -500.0f64..500.0, s in 1e-3f64..100.0, t in -1000.0f64..1000.0, dt in 0.0f64..50.0) {
            let p = LogisticPosterior { mu, s };
            prop_assert!((p.pre_weight(t, 0.0) + p.post_weight(t) - 1.0).abs() <= 1e-12);
            prop_assert!(p.pre_weight(t + dt, 0.0) <= p.pre_weight(t, 0.0));
            prop_assert!(p.post_weight(t + dt) >= p.post_weight(t));
            prop_assert!(p.pre_weight(t, dt) >= p.pre_weight(t, 0.0));
        }

        #[test]
        fn shift_is_a_translation(mu in -100.0f64..100.0, s in 0.01f64..20.0, t in -200i64..200, shift in 0i64..40) {
            let p = LogisticPosterior { mu, s };
            let (t, shift) = (t as f64, shift as f64);
            prop_assert_eq!(p.pre_weight(t, shift), p.pre_weight(t - shift, 0.0));
        }
    }
}
