//! Recursive detection statistics and their batch reference forms.
//!
//! * Shiryaev (geometric prior `ρ`): `S₀ = 0`, `Sₙ₊₁ = (1 + Sₙ)/(1 − ρ) · Rₙ₊₁`
//! * Shiryaev–Roberts: the same recursion with `ρ = 0`
//! * CuSum (log domain): `S₀ = 0`, `Sₙ₊₁ = max(0, Sₙ + log Rₙ₊₁)`
//!
//! The Shiryaev value is carried linearly until it exceeds `1e100`, then as
//! `log S`, so threshold sweeps far beyond `f64::MAX` still work.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};

/// Linear values above this are carried in the log domain.
const LOG_SWITCH: f64 = 1e100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatisticKind {
    Shiryaev,
    ShiryaevRoberts,
    Cusum,
}

impl fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StatisticKind::Shiryaev => "shiryaev",
            StatisticKind::ShiryaevRoberts => "shiryaev-roberts",
            StatisticKind::Cusum => "cusum",
        })
    }
}

impl StatisticKind {
    /// Maps a cutting threshold onto the scale of [`StatisticState::level`].
    ///
    /// CuSum thresholds are already log-likelihoods; ratio-domain thresholds
    /// are compared through their logarithm.
    pub fn threshold_level(self, threshold: f64) -> f64 {
        match self {
            StatisticKind::Cusum => threshold,
            _ => threshold.ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Carry {
    Linear(f64),
    Log(f64),
}

/// Running value of one detection statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatisticState {
    kind: StatisticKind,
    rho: f64,
    carry: Carry,
}

impl StatisticState {
    pub fn new(kind: StatisticKind, rho: f64) -> Result<Self> {
        let rho = match kind {
            StatisticKind::Shiryaev => {
                if !(0.0..1.0).contains(&rho) {
                    return Err(invalid_arg(format!("rho must lie in [0,1), got {rho}")));
                }
                rho
            }
            _ => 0.0,
        };
        Ok(Self {
            kind,
            rho,
            carry: Carry::Linear(0.0),
        })
    }

    pub fn shiryaev(rho: f64) -> Result<Self> {
        Self::new(StatisticKind::Shiryaev, rho)
    }

    pub fn shiryaev_roberts() -> Self {
        Self::new(StatisticKind::ShiryaevRoberts, 0.0).expect("rho = 0 is valid")
    }

    pub fn cusum() -> Self {
        Self::new(StatisticKind::Cusum, 0.0).expect("rho = 0 is valid")
    }

    pub fn kind(&self) -> StatisticKind {
        self.kind
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// The statistic `S`: log-likelihood scale for CuSum, ratio scale otherwise.
    /// Ratio-scale values past `f64::MAX` read as `inf`; use [`level`](Self::level).
    pub fn value(&self) -> f64 {
        match self.carry {
            Carry::Linear(v) => v,
            Carry::Log(l) => l.exp(),
        }
    }

    /// `S` for CuSum, `log S` for the ratio statistics. Never overflows.
    pub fn level(&self) -> f64 {
        match (self.kind, self.carry) {
            (StatisticKind::Cusum, Carry::Linear(v)) => v,
            (_, Carry::Linear(v)) => v.ln(),
            (_, Carry::Log(l)) => l,
        }
    }

    /// `S > threshold`.
    pub fn exceeds(&self, threshold: f64) -> bool {
        match (self.kind, self.carry) {
            (_, Carry::Linear(v)) => v > threshold,
            (_, Carry::Log(l)) => l > threshold.ln(),
        }
    }

    pub fn reset(&mut self) {
        self.carry = Carry::Linear(0.0);
    }

    /// Feeds one likelihood ratio `R > 0`.
    pub fn push_ratio(&mut self, ratio: f64) -> Result<()> {
        if !(ratio > 0.0 && ratio.is_finite()) {
            return Err(Error::InvalidInput(format!("likelihood ratio must be positive and finite, got {ratio}")));
        }
        match self.kind {
            StatisticKind::Cusum => self.push_cusum(ratio.ln()),
            _ => {
                self.push_ratio_domain(ratio, ratio.ln());
                Ok(())
            }
        }
    }

    /// Feeds one log-likelihood ratio.
    pub fn push_llr(&mut self, llr: f64) -> Result<()> {
        if !llr.is_finite() {
            return Err(Error::InvalidInput(format!("log-likelihood ratio must be finite, got {llr}")));
        }
        match self.kind {
            StatisticKind::Cusum => self.push_cusum(llr),
            _ => {
                self.push_ratio_domain(llr.exp(), llr);
                Ok(())
            }
        }
    }

    fn push_cusum(&mut self, llr: f64) -> Result<()> {
        if !llr.is_finite() {
            return Err(Error::InvalidInput(format!("log-likelihood ratio must be finite, got {llr}")));
        }
        if let Carry::Linear(v) = self.carry {
            self.carry = Carry::Linear((v + llr).max(0.0));
        }
        Ok(())
    }

    fn push_ratio_domain(&mut self, ratio: f64, llr: f64) {
        let discount = 1.0 - self.rho;
        self.carry = match self.carry {
            Carry::Linear(v) => {
                let next = (1.0 + v) / discount * ratio;
                if next.is_finite() && next <= LOG_SWITCH {
                    Carry::Linear(next)
                } else {
                    Carry::Log(v.ln_1p() - discount.ln() + llr)
                }
            }
            Carry::Log(l) => Carry::Log(log1p_exp(l) - discount.ln() + llr),
        };
    }
}

/// `log(1 + e^x)` without overflow.
fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Direct evaluation of the geometric-prior Shiryaev statistic, returned as
/// `log S_n`:
///
/// `S_n = (1 − ρ)^{−n} Σ_{k=1..n} (1 − ρ)^{k−1} Π_{t=k..n} R_t`.
///
/// Quadratic in `n`; intended as a reference for the recursion.
pub fn shiryaev_batch_log(ratios: &[f64], rho: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) {
        return Err(invalid_arg(format!("rho must lie in [0,1), got {rho}")));
    }
    if let Some(r) = ratios.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidInput(format!("likelihood ratio must be positive and finite, got {r}")));
    }
    let n = ratios.len();
    if n == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let log_discount = (1.0 - rho).ln();
    let logs: Vec<f64> = ratios.iter().map(|r| r.ln()).collect();
    let terms: Vec<f64> = (1..=n)
        .map(|k| {
            let tail: f64 = logs[k - 1..].iter().sum();
            (k as f64 - 1.0) * log_discount + tail
        })
        .collect();
    Ok(log_sum_exp(&terms) - n as f64 * log_discount)
}

/// [`shiryaev_batch_log`] on the ratio scale (may overflow to `inf`).
pub fn shiryaev_batch(ratios: &[f64], rho: f64) -> Result<f64> {
    shiryaev_batch_log(ratios, rho).map(f64::exp)
}

/// `max(0, max_{k ≤ n} Σ_{t=k..n} log R_t)` by brute force over `k`.
pub fn cusum_batch(log_ratios: &[f64]) -> f64 {
    (0..log_ratios.len())
        .map(|k| log_ratios[k..].iter().sum::<f64>())
        .fold(0.0, f64::max)
}

/// Bayesian cutting threshold `B_α = (1 − α)/α`.
///
/// Only defined for the Shiryaev statistic; the other statistics are swept
/// over thresholds directly.
pub fn threshold_from_alpha(kind: StatisticKind, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid_arg(format!("alpha must lie in (0,1), got {alpha}")));
    }
    match kind {
        StatisticKind::Shiryaev => Ok((1.0 - alpha) / alpha),
        other => Err(Error::NotDerivable(other)),
    }
}

/// First index `t` (1-based) at which a level path exceeds `level_threshold`.
pub fn first_passage(levels: &[f64], level_threshold: f64) -> Option<usize> {
    levels.iter().position(|&l| l > level_threshold).map(|i| i + 1)
}
