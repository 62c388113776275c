//! Sequential detectors and the driver that runs them over a stream.

mod adaptive;
mod glr;
mod oracle;
mod sgd;
mod twr;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::kernels::{KernelFamily, ParamVec};
use crate::rng::rng_from_seed;
use crate::simulation::Transition;
use crate::statistics::{first_passage, StatisticKind};

pub use adaptive::{AdaptiveConfig, AdaptiveDetector};
pub use glr::{GlrConfig, GlrDetector};
pub use oracle::OracleDetector;
pub use sgd::{fit_mle, SgdConfig};
pub use twr::{twr_loss_grads, twr_losses, LossKind, PreShift, TemporalWeights, TwrConfig, TwrDetector, TwrState};

/// Everything a detector reports after consuming one transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Number of transitions consumed so far.
    pub t: usize,
    /// Statistic on its natural scale.
    pub statistic: f64,
    /// Statistic on the scale compared against `kind.threshold_level(B)`.
    pub level: f64,
    pub llr: f64,
    pub llr_penalized: f64,
    pub kl_estimate: Option<f64>,
    pub delta: Option<usize>,
    pub p0: Option<f64>,
    pub d_bar: Option<f64>,
    pub mu: Option<f64>,
    pub s: Option<f64>,
}

impl StepRecord {
    pub(crate) fn plain(t: usize, statistic: f64, level: f64, llr: f64) -> Self {
        Self {
            t,
            statistic,
            level,
            llr,
            llr_penalized: llr,
            kl_estimate: None,
            delta: None,
            p0: None,
            d_bar: None,
            mu: None,
            s: None,
        }
    }
}

/// A detector consuming one transition at a time.
pub trait SequentialDetector: Send {
    fn step(&mut self, transition: &Transition) -> Result<StepRecord>;

    /// Scale on which [`StepRecord::level`] is reported.
    fn kind(&self) -> StatisticKind;

    /// Leading transitions of the stream already consumed at construction;
    /// the driver starts after them and reports level 0 there.
    fn warm_start(&self) -> usize {
        0
    }
}

/// Outcome of a run at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    /// `Some(ν)` when the detector fired at time `ν ≤ horizon`.
    pub stopping_time: Option<usize>,
    pub horizon: usize,
    pub trace: Option<Vec<StepRecord>>,
}

impl RunResult {
    pub fn fired(&self) -> bool {
        self.stopping_time.is_some()
    }
}

/// The per-step levels of a run, from which stopping times at any threshold
/// follow without rerunning the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelPath {
    pub kind: StatisticKind,
    /// `levels[t - 1]` is the level after `t` transitions.
    pub levels: Vec<f64>,
    pub horizon: usize,
    pub trace: Option<Vec<StepRecord>>,
}

impl LevelPath {
    /// First `t` with statistic `> threshold`.
    pub fn stopping_time(&self, threshold: f64) -> Option<usize> {
        first_passage(&self.levels, self.kind.threshold_level(threshold))
    }

    pub fn result(&self, threshold: f64) -> RunResult {
        let nu = self.stopping_time(threshold);
        RunResult {
            stopping_time: nu,
            horizon: self.horizon,
            trace: self.trace.as_ref().map(|tr| tr[..nu.unwrap_or(tr.len()).min(tr.len())].to_vec()),
        }
    }
}

/// Runs `detector` over at most `horizon` transitions, stopping early once the
/// level exceeds `stop_level` (if given).
pub fn run_levels(
    detector: &mut dyn SequentialDetector,
    stream: &[Transition],
    horizon: usize,
    stop_level: Option<f64>,
    keep_trace: bool,
) -> Result<LevelPath> {
    if horizon == 0 {
        return Err(invalid_arg("horizon must be at least 1"));
    }
    let n = horizon.min(stream.len());
    let skip = detector.warm_start().min(n);
    let mut levels = vec![0.0; skip];
    let mut trace = keep_trace.then(|| {
        (1..=skip)
            .map(|t| StepRecord::plain(t, 0.0, 0.0, 0.0))
            .collect::<Vec<_>>()
    });
    for tr in &stream[skip..n] {
        let rec = detector.step(tr)?;
        levels.push(rec.level);
        let level = rec.level;
        if let Some(t) = trace.as_mut() {
            t.push(rec);
        }
        if stop_level.is_some_and(|s| level > s) {
            break;
        }
    }
    Ok(LevelPath {
        kind: detector.kind(),
        levels,
        horizon,
        trace,
    })
}

/// Drives a detector to first passage over `threshold` or the horizon.
pub fn run_detector(
    detector: &mut dyn SequentialDetector,
    stream: &[Transition],
    threshold: f64,
    horizon: usize,
    keep_trace: bool,
) -> Result<RunResult> {
    let level = detector.kind().threshold_level(threshold);
    Ok(run_levels(detector, stream, horizon, Some(level), keep_trace)?.result(threshold))
}

/// Declarative detector choice, as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DetectorSpec {
    Oracle {
        #[serde(default = "default_statistic")]
        statistic: StatisticKind,
        #[serde(default)]
        rho: f64,
    },
    Twr(TwrConfig),
    Adaptive(AdaptiveConfig),
    Glr(GlrConfig),
}

fn default_statistic() -> StatisticKind {
    StatisticKind::Cusum
}

/// Per-stream inputs needed to instantiate a detector.
#[derive(Debug, Clone)]
pub struct StreamContext<'a> {
    pub family: Arc<KernelFamily>,
    pub theta0: &'a ParamVec,
    pub theta1: &'a ParamVec,
    pub stream: &'a [Transition],
    /// Change point used to size the adaptive baseline's history. For streams
    /// without a change the nominal change point of the experiment.
    pub nominal_change: usize,
    pub seed: u64,
}

impl DetectorSpec {
    /// Short identifier used in outputs.
    pub fn name(&self) -> &'static str {
        match self {
            DetectorSpec::Oracle { .. } => "oracle",
            DetectorSpec::Twr(_) => "twr",
            DetectorSpec::Adaptive(_) => "adaptive",
            DetectorSpec::Glr(_) => "glr",
        }
    }

    /// Statistic whose scale the detector's levels are reported on.
    pub fn statistic(&self) -> StatisticKind {
        match self {
            DetectorSpec::Oracle { statistic, .. } => *statistic,
            DetectorSpec::Twr(cfg) => cfg.statistic,
            DetectorSpec::Adaptive(cfg) => cfg.statistic,
            DetectorSpec::Glr(_) => StatisticKind::Cusum,
        }
    }

    pub fn build(&self, ctx: &StreamContext<'_>) -> Result<Box<dyn SequentialDetector>> {
        let rng = rng_from_seed(ctx.seed);
        Ok(match self {
            DetectorSpec::Oracle { statistic, rho } => Box::new(OracleDetector::new(
                ctx.family.clone(),
                ctx.theta0.clone(),
                ctx.theta1.clone(),
                *statistic,
                *rho,
            )?),
            DetectorSpec::Twr(cfg) => Box::new(TwrDetector::new(ctx.family.clone(), cfg.clone(), rng)?),
            DetectorSpec::Adaptive(cfg) => {
                let n = cfg.history_len(ctx.nominal_change).min(ctx.stream.len());
                Box::new(AdaptiveDetector::fit_from_history(
                    ctx.family.clone(),
                    &ctx.stream[..n],
                    cfg.clone(),
                    rng,
                )?)
            }
            DetectorSpec::Glr(cfg) => Box::new(GlrDetector::new(ctx.family.clone(), cfg.clone(), rng)?),
        })
    }
}
