//! Experiment configuration (a single JSON document).

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use twr_core::detectors::{AdaptiveConfig, DetectorSpec, GlrConfig, TwrConfig};
use twr_core::kernels::KernelSpec;
use twr_core::statistics::StatisticKind;

use crate::error::{HarnessError, Result};

/// Threshold grid: an explicit list or a log-spaced range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdGrid {
    List(Vec<f64>),
    LogSpaced { min: f64, max: f64, points: usize },
}

impl ThresholdGrid {
    pub fn values(&self) -> Vec<f64> {
        match *self {
            ThresholdGrid::List(ref v) => v.clone(),
            ThresholdGrid::LogSpaced { min, max, points } => {
                if points == 1 {
                    return vec![min];
                }
                let (a, b) = (min.ln(), max.ln());
                (0..points)
                    .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
                    .collect()
            }
        }
    }
}

/// Where the change happens in each trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ChangeModel {
    Fixed { lambda: usize },
    /// `λ` drawn per trial from a geometric prior, truncated to the horizon.
    Geometric { rho: f64 },
}

/// A detector with an optional label distinguishing several of one kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(flatten)]
    pub spec: DetectorSpec,
}

impl DetectorEntry {
    pub fn new(spec: DetectorSpec) -> Self {
        Self { label: None, spec }
    }

    pub fn labelled(label: &str, spec: DetectorSpec) -> Self {
        Self {
            label: Some(label.to_string()),
            spec,
        }
    }

    pub fn name(&self) -> &str {
        self.label.as_deref().unwrap_or_else(|| self.spec.name())
    }
}

/// Settings of the sequential multi-change study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiConfig {
    /// Number of change points.
    pub changes: usize,
    /// Fixed gap between change points; when absent it is `gap_factor` times
    /// the oracle ADD measured on pilot single-change runs.
    pub gap: Option<usize>,
    pub gap_factor: f64,
    pub pilot_trials: usize,
    /// Detection threshold; defaults to the largest grid value.
    pub threshold: Option<f64>,
}

impl Default for MultiConfig {
    fn default() -> Self {
        Self {
            changes: 3,
            gap: None,
            gap_factor: 10.0,
            pilot_trials: 20,
            threshold: None,
        }
    }
}

/// Variant coefficients of the ablation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Penalization coefficient of the "on" variants (the TWR entry's `c` if absent).
    pub penalty: Option<f64>,
    /// Annealing step of the "on" variants (the TWR entry's `ε` if absent).
    pub anneal: Option<f64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            penalty: None,
            anneal: None,
        }
    }
}

fn d_family() -> KernelSpec {
    KernelSpec::mlp_gaussian(4, 4, 0)
}
fn d_true() -> bool {
    true
}
fn d_target_kl() -> f64 {
    0.3
}
fn d_kl_tolerance() -> f64 {
    0.05
}
fn d_trials() -> usize {
    50
}
fn d_horizon() -> usize {
    400
}
fn d_change() -> ChangeModel {
    ChangeModel::Fixed { lambda: 200 }
}
fn d_thresholds() -> ThresholdGrid {
    ThresholdGrid::LogSpaced {
        min: 4.0,
        max: 32.0,
        points: 6,
    }
}
fn d_statistic() -> StatisticKind {
    StatisticKind::Cusum
}
fn d_rho() -> f64 {
    0.005
}
fn d_detectors() -> Vec<DetectorEntry> {
    vec![
        DetectorEntry::new(DetectorSpec::Oracle {
            statistic: StatisticKind::Cusum,
            rho: 0.0,
        }),
        DetectorEntry::new(DetectorSpec::Twr(TwrConfig::default())),
        DetectorEntry::new(DetectorSpec::Adaptive(AdaptiveConfig::default())),
        DetectorEntry::new(DetectorSpec::Glr(GlrConfig::default())),
    ]
}
fn d_seed() -> u64 {
    20_240_601
}
fn d_output_dir() -> PathBuf {
    PathBuf::from("twr-out")
}
fn d_trace_trials() -> usize {
    3
}

/// Full description of an experiment. Every field but `far_horizon` has a
/// desk-scale default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "d_family")]
    pub family: KernelSpec,
    /// Draw a fresh network per trial (seed derived from the trial seed).
    #[serde(default = "d_true")]
    pub resample_family: bool,
    #[serde(default = "d_target_kl")]
    pub target_kl: f64,
    #[serde(default = "d_kl_tolerance")]
    pub kl_tolerance: f64,
    #[serde(default = "d_trials")]
    pub trials: usize,
    #[serde(default = "d_horizon")]
    pub horizon: usize,
    #[serde(default = "d_change")]
    pub change: ChangeModel,
    /// Horizon of the no-change runs behind FAR estimates; 0 disables them.
    pub far_horizon: usize,
    #[serde(default = "d_thresholds")]
    pub thresholds: ThresholdGrid,
    /// Statistic used by every detector that has one.
    #[serde(default = "d_statistic")]
    pub statistic: StatisticKind,
    #[serde(default = "d_rho")]
    pub rho: f64,
    #[serde(default = "d_detectors")]
    pub detectors: Vec<DetectorEntry>,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub emit_traces: bool,
    #[serde(default = "d_true")]
    pub emit_plots: bool,
    /// Trials whose per-step traces are written when `emit_traces` is set.
    #[serde(default = "d_trace_trials")]
    pub trace_trials: usize,
    #[serde(default)]
    pub multi: MultiConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            family: d_family(),
            resample_family: true,
            target_kl: d_target_kl(),
            kl_tolerance: d_kl_tolerance(),
            trials: d_trials(),
            horizon: d_horizon(),
            change: d_change(),
            far_horizon: d_horizon(),
            thresholds: d_thresholds(),
            statistic: d_statistic(),
            rho: d_rho(),
            detectors: d_detectors(),
            seed: d_seed(),
            output_dir: d_output_dir(),
            emit_traces: false,
            emit_plots: true,
            trace_trials: d_trace_trials(),
            multi: MultiConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn threshold_values(&self) -> Vec<f64> {
        self.thresholds.values()
    }

    pub fn validate(&self) -> Result<()> {
        twr_core::kernels::KernelFamily::new(self.family.clone()).map_err(|e| bad(e.to_string()))?;
        if !(self.target_kl > 0.0 && self.kl_tolerance > 0.0) {
            return Err(bad("target_kl and kl_tolerance must be positive"));
        }
        if self.horizon < 2 {
            return Err(bad("horizon must be at least 2"));
        }
        match self.change {
            ChangeModel::Fixed { lambda } if lambda == 0 || lambda >= self.horizon => {
                return Err(bad("lambda must lie strictly inside (0, horizon)"));
            }
            ChangeModel::Geometric { rho } if !(rho > 0.0 && rho < 1.0) => {
                return Err(bad("geometric rho must lie in (0, 1)"));
            }
            _ => {}
        }
        let grid = self.threshold_values();
        if grid.is_empty() || grid.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(bad("thresholds must be a nonempty list of positive values"));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("thresholds must be strictly increasing"));
        }
        if self.detectors.is_empty() {
            return Err(bad("at least one detector is required"));
        }
        let mut seen = HashSet::new();
        for d in &self.detectors {
            if !seen.insert(d.name()) {
                return Err(bad(format!("duplicate detector name {:?}; add labels", d.name())));
            }
            if let DetectorSpec::Twr(c) = &d.spec {
                c.validate().map_err(|e| bad(e.to_string()))?;
            }
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(bad("rho must lie in [0, 1)"));
        }
        if self.multi.changes == 0 {
            return Err(bad("multi.changes must be at least 1"));
        }
        Ok(())
    }

    /// The configured detectors with the shared statistic applied.
    pub fn resolved_detectors(&self) -> Vec<DetectorEntry> {
        self.detectors
            .iter()
            .map(|d| {
                let spec = match &d.spec {
                    DetectorSpec::Oracle { .. } => DetectorSpec::Oracle {
                        statistic: self.statistic,
                        rho: self.rho,
                    },
                    DetectorSpec::Twr(c) => DetectorSpec::Twr(TwrConfig {
                        statistic: self.statistic,
                        rho: self.rho,
                        ..c.clone()
                    }),
                    DetectorSpec::Adaptive(c) => DetectorSpec::Adaptive(AdaptiveConfig {
                        statistic: self.statistic,
                        rho: self.rho,
                        ..c.clone()
                    }),
                    other => other.clone(),
                };
                DetectorEntry {
                    label: d.label.clone(),
                    spec,
                }
            })
            .collect()
    }

    /// The oracle used for regret pairing.
    pub fn oracle_spec(&self) -> DetectorSpec {
        DetectorSpec::Oracle {
            statistic: self.statistic,
            rho: self.rho,
        }
    }

    /// The first TWR entry, or the default TWR settings.
    pub fn twr_config(&self) -> TwrConfig {
        self.resolved_detectors()
            .into_iter()
            .find_map(|d| match d.spec {
                DetectorSpec::Twr(c) => Some(c),
                _ => None,
            })
            .unwrap_or_else(|| TwrConfig {
                statistic: self.statistic,
                rho: self.rho,
                ..TwrConfig::default()
            })
    }
}
