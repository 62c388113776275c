//! Monte-Carlo estimates of detection performance.
//!
//! Censoring rules: runs that never fire are excluded from delay means
//! (ADD, CADD, regret) and counted separately; in FAR estimates they
//! contribute the horizon, which makes the reported rate an upper bound.
//! [`estimate_regret_censored`] instead keeps them at `horizon + 1`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of one detector run on one stream at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub detector: String,
    pub threshold: f64,
    pub trial: usize,
    pub seed: u64,
    /// `None` for streams without a change.
    pub lambda: Option<usize>,
    /// `None` when censored at the horizon.
    pub nu: Option<usize>,
    /// Oracle stopping time on the same stream and threshold, when paired.
    #[serde(default)]
    pub oracle_nu: Option<usize>,
    pub horizon: usize,
}

impl TrialRecord {
    pub fn fired(&self) -> bool {
        self.nu.is_some()
    }

    /// Delay `ν − λ` for runs that fired at or after the change.
    pub fn delay(&self) -> Option<usize> {
        match (self.nu, self.lambda) {
            (Some(nu), Some(l)) if nu >= l => Some(nu - l),
            _ => None,
        }
    }
}

/// A sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    /// Number of samples behind the mean.
    pub n: usize,
}

impl Estimate {
    fn of(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { value: mean, stderr, n }
    }
}

/// False-alarm rate estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FarEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
    pub n_censored: usize,
    /// Set when censored runs made `value` an upper bound.
    pub is_bound: bool,
}

fn undefined(what: &str) -> Error {
    Error::UndefinedResult(format!("{what}: no qualifying trials"))
}

/// `P(ν < λ)`; censored runs count as no alarm, and any alarm on a
/// no-change stream is early.
pub fn estimate_pfa(records: &[TrialRecord]) -> Result<Estimate> {
    if records.is_empty() {
        return Err(undefined("pfa"));
    }
    let early = records
        .iter()
        .filter(|r| match (r.nu, r.lambda) {
            (Some(nu), Some(l)) => nu < l,
            (Some(_), None) => true,
            (None, _) => false,
        })
        .count();
    let n = records.len();
    let p = early as f64 / n as f64;
    Ok(Estimate {
        value: p,
        stderr: (p * (1.0 - p) / n as f64).sqrt(),
        n,
    })
}

/// `E[ν − λ | ν ≥ λ]` over fired runs.
pub fn estimate_add(records: &[TrialRecord]) -> Result<Estimate> {
    let delays: Vec<f64> = records.iter().filter_map(|r| r.delay()).map(|d| d as f64).collect();
    if delays.is_empty() {
        return Err(undefined("add"));
    }
    Ok(Estimate::of(&delays))
}

/// `1 / E_∞[ν]` from no-change runs.
pub fn estimate_far(records: &[TrialRecord]) -> Result<FarEstimate> {
    if records.is_empty() {
        return Err(undefined("far"));
    }
    let times: Vec<f64> = records.iter().map(|r| r.nu.unwrap_or(r.horizon) as f64).collect();
    let n_censored = records.iter().filter(|r| !r.fired()).count();
    let mean = Estimate::of(&times);
    Ok(FarEstimate {
        value: 1.0 / mean.value,
        stderr: mean.stderr / (mean.value * mean.value),
        n: records.len(),
        n_censored,
        is_bound: n_censored > 0,
    })
}

/// Worst change-point-conditional mean delay.
pub fn estimate_cadd(records: &[TrialRecord]) -> Result<Estimate> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records {
        if let Some(l) = r.lambda {
            let g = groups.entry(l).or_default();
            if let Some(d) = r.delay() {
                g.push(d as f64);
            }
        }
    }
    if groups.len() < 2 {
        return Err(Error::UndefinedResult("cadd: needs at least two change-point groups".into()));
    }
    groups
        .values()
        .filter(|g| !g.is_empty())
        .map(|g| Estimate::of(g))
        .max_by(|a, b| a.value.total_cmp(&b.value))
        .ok_or_else(|| undefined("cadd"))
}

/// `E[(ν^a − ν)⁺ | ν^a ≥ ν ≥ λ]` against the paired oracle stopping time.
pub fn estimate_regret(records: &[TrialRecord]) -> Result<Estimate> {
    let gaps: Vec<f64> = records
        .iter()
        .filter_map(|r| match (r.nu, r.oracle_nu, r.lambda) {
            (Some(a), Some(o), Some(l)) if a >= o && o >= l => Some((a - o) as f64),
            _ => None,
        })
        .collect();
    if gaps.is_empty() {
        return Err(undefined("regret"));
    }
    Ok(Estimate::of(&gaps))
}

/// Regret with censored runs kept: a run that never fired counts as stopping
/// at `horizon + 1`, a lower bound on its delay. Conditions on `ν_oracle ≥ λ`
/// and on the run firing at or after the oracle or not at all.
pub fn estimate_regret_censored(records: &[TrialRecord]) -> Result<Estimate> {
    let gaps: Vec<f64> = records
        .iter()
        .filter_map(|r| match (r.oracle_nu, r.lambda) {
            (Some(o), Some(l)) if o >= l => {
                let a = r.nu.unwrap_or(r.horizon + 1);
                (a >= o).then(|| (a - o) as f64)
            }
            _ => None,
        })
        .collect();
    if gaps.is_empty() {
        return Err(undefined("regret"));
    }
    Ok(Estimate::of(&gaps))
}

/// One aggregate row per (detector, threshold) cell. Undefined estimates are `None`.
///
/// `n_trials` counts distinct trials; `n_censored` counts non-firing runs on
/// change streams (on no-change streams when the cell has no change runs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub detector: String,
    pub threshold: f64,
    pub n_trials: usize,
    pub n_censored: usize,
    pub pfa: Option<Estimate>,
    pub add: Option<Estimate>,
    pub far: Option<FarEstimate>,
    pub cadd: Option<Estimate>,
    pub regret: Option<Estimate>,
}

/// Aggregates one cell. Records with a change feed PFA/ADD/CADD/regret;
/// records without one feed FAR.
pub fn aggregate(detector: &str, threshold: f64, records: &[TrialRecord]) -> Aggregate {
    let (changed, unchanged): (Vec<TrialRecord>, Vec<TrialRecord>) =
        records.iter().cloned().partition(|r| r.lambda.is_some());
    let trials: std::collections::BTreeSet<usize> = records.iter().map(|r| r.trial).collect();
    let delay_base = if changed.is_empty() { &unchanged } else { &changed };
    Aggregate {
        detector: detector.to_string(),
        threshold,
        n_trials: trials.len(),
        n_censored: delay_base.iter().filter(|r| !r.fired()).count(),
        pfa: estimate_pfa(&changed).ok(),
        add: estimate_add(&changed).ok(),
        far: estimate_far(&unchanged).ok(),
        cadd: estimate_cadd(&changed).ok(),
        regret: estimate_regret(&changed).ok(),
    }
}
