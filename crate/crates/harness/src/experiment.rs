//! Trial preparation and execution.
//!
//! Every random quantity of trial `i` is keyed off `derive_seed(master, i)`:
//! sub-stream 1 draws the network, 2 the parameter pair, 3 the change point,
//! 4 the change stream, 5 the no-change stream and 6 seeds the detectors.
//! All detectors of a trial share one detector seed.

use std::sync::mpsc;
use std::sync::Arc;

use rayon::prelude::*;
use twr_core::detectors::{run_levels, DetectorSpec, LevelPath, StepRecord, StreamContext};
use twr_core::kernels::{KernelFamily, KernelKind, ParamVec};
use twr_core::metrics::TrialRecord;
use twr_core::posterior::PriorSpec;
use twr_core::rng::{derive_seed, rng_from_seed};
use twr_core::simulation::{generate, sample_change_point, sample_pair_at_kl, ChangeSpec, PairSearch, Transition};

use crate::config::{ChangeModel, DetectorEntry, ExperimentConfig};
use crate::error::{HarnessError, Result};

pub(crate) const SUB_FAMILY: u64 = 1;
pub(crate) const SUB_PAIR: u64 = 2;
pub(crate) const SUB_LAMBDA: u64 = 3;
pub(crate) const SUB_CHANGE: u64 = 4;
pub(crate) const SUB_NULL: u64 = 5;
pub(crate) const SUB_DETECTOR: u64 = 6;
pub(crate) const SUB_SUCCESSORS: u64 = 7;

/// Everything a trial's detectors run on.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub trial: usize,
    pub seed: u64,
    pub family: Arc<KernelFamily>,
    pub theta0: ParamVec,
    pub theta1: ParamVec,
    pub lambda: usize,
    pub change_stream: Vec<Transition>,
    /// Present when the config asks for no-change runs.
    pub null_stream: Option<Vec<Transition>>,
    pub detector_seed: u64,
}

/// Family of trial `seed`, with a fresh network when resampling is on.
pub fn trial_family(cfg: &ExperimentConfig, seed: u64) -> Result<Arc<KernelFamily>> {
    let mut spec = cfg.family.clone();
    if cfg.resample_family && spec.kind == KernelKind::MlpGaussian {
        spec.seed = derive_seed(seed, SUB_FAMILY);
    }
    Ok(Arc::new(KernelFamily::new(spec)?))
}

pub(crate) fn draw_lambda(cfg: &ExperimentConfig, seed: u64) -> Result<usize> {
    match cfg.change {
        ChangeModel::Fixed { lambda } => Ok(lambda),
        ChangeModel::Geometric { rho } => {
            let prior = PriorSpec::geometric(rho, 0.5)?;
            let mut rng = rng_from_seed(derive_seed(seed, SUB_LAMBDA));
            // Rejection keeps the prior's shape on [1, horizon).
            for _ in 0..10_000 {
                let l = sample_change_point(&prior, &mut rng)?;
                if l < cfg.horizon {
                    return Ok(l);
                }
            }
            Err(HarnessError::Config(format!(
                "geometric prior with rho={rho} almost never places the change before the horizon"
            )))
        }
    }
}

pub fn prepare_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialData> {
    let seed = derive_seed(cfg.seed, trial as u64);
    let family = trial_family(cfg, seed)?;
    let mut rng = rng_from_seed(derive_seed(seed, SUB_PAIR));
    let (theta0, theta1) = sample_pair_at_kl(&family, cfg.target_kl, cfg.kl_tolerance, &PairSearch::default(), &mut rng)?;
    let lambda = draw_lambda(cfg, seed)?;
    let x0 = vec![0.0; family.state_dim()];
    let change = ChangeSpec::single(theta0.clone(), theta1.clone(), lambda, cfg.horizon, x0.clone());
    let change_stream = generate(&family, &change, derive_seed(seed, SUB_CHANGE))?.transitions();
    let null_stream = if cfg.far_horizon > 0 {
        let spec = ChangeSpec::no_change(theta0.clone(), cfg.far_horizon, x0);
        Some(generate(&family, &spec, derive_seed(seed, SUB_NULL))?.transitions())
    } else {
        None
    };
    Ok(TrialData {
        trial,
        seed,
        family,
        theta0,
        theta1,
        lambda,
        change_stream,
        null_stream,
        detector_seed: derive_seed(seed, SUB_DETECTOR),
    })
}

/// Records and optional change-stream traces of one trial.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: usize,
    pub records: Vec<TrialRecord>,
    /// Full-horizon traces on the change stream, by detector name.
    pub traces: Vec<(String, Vec<StepRecord>)>,
}

impl TrialData {
    pub fn context<'a>(&'a self, stream: &'a [Transition]) -> StreamContext<'a> {
        StreamContext {
            family: self.family.clone(),
            theta0: &self.theta0,
            theta1: &self.theta1,
            stream,
            nominal_change: self.lambda,
            seed: self.detector_seed,
        }
    }

    /// Level path of `spec` on one of the trial's streams. With `full` the
    /// path runs to the horizon and keeps its trace; otherwise it stops once
    /// the largest threshold is crossed.
    pub fn path(&self, spec: &DetectorSpec, stream: &[Transition], top: f64, full: bool) -> Result<LevelPath> {
        let mut det = spec.build(&self.context(stream))?;
        let stop = (!full).then(|| det.kind().threshold_level(top));
        Ok(run_levels(det.as_mut(), stream, stream.len(), stop, full)?)
    }
}

fn records_for(
    name: &str,
    data: &TrialData,
    grid: &[f64],
    path: &LevelPath,
    oracle: &LevelPath,
    lambda: Option<usize>,
) -> Vec<TrialRecord> {
    grid.iter()
        .map(|&b| TrialRecord {
            detector: name.to_string(),
            threshold: b,
            trial: data.trial,
            seed: data.seed,
            lambda,
            nu: path.stopping_time(b),
            oracle_nu: oracle.stopping_time(b),
            horizon: path.horizon,
        })
        .collect()
}

/// Runs every detector on the trial's change stream (and no-change stream if
/// present) and records one row per threshold.
pub fn run_trial(
    cfg: &ExperimentConfig,
    detectors: &[DetectorEntry],
    data: &TrialData,
    keep_traces: bool,
) -> Result<TrialOutcome> {
    let grid = cfg.threshold_values();
    let top = *grid.last().expect("validated grid");
    let oracle_spec = cfg.oracle_spec();
    let mut streams = vec![(&data.change_stream, Some(data.lambda))];
    if let Some(null) = &data.null_stream {
        streams.push((null, None));
    }
    let mut records = Vec::new();
    let mut traces = Vec::new();
    for (stream, lambda) in streams {
        let is_change = lambda.is_some();
        let full = keep_traces && is_change;
        let oracle = data.path(&oracle_spec, stream, top, full)?;
        for d in detectors {
            let path = if d.spec == oracle_spec {
                oracle.clone()
            } else {
                data.path(&d.spec, stream, top, full)?
            };
            records.extend(records_for(d.name(), data, &grid, &path, &oracle, lambda));
            if full {
                traces.push((d.name().to_string(), path.trace.unwrap_or_default()));
            }
        }
    }
    Ok(TrialOutcome {
        trial: data.trial,
        records,
        traces,
    })
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot build worker pool: {e}")))
}

/// Runs `job` for each trial on a pool of `workers` threads (0 = all cores),
/// handing results to `sink` on the calling thread as they complete.
pub fn for_each_trial<T, F, S>(trials: &[usize], workers: usize, job: F, mut sink: S) -> Result<()>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
    S: FnMut(T) -> Result<()>,
{
    let pool = thread_pool(workers)?;
    let (tx, rx) = mpsc::channel::<Result<T>>();
    std::thread::scope(|scope| {
        let job = &job;
        let pool = &pool;
        scope.spawn(move || {
            pool.install(|| {
                trials.par_iter().for_each_with(tx, |tx, &i| {
                    let _ = tx.send(job(i));
                });
            });
        });
        let mut first_err = None;
        for res in rx {
            let res = res.and_then(&mut sink);
            if let (Err(e), None) = (res, &first_err) {
                first_err = Some(e);
            }
        }
        first_err.map_or(Ok(()), Err)
    })
}

/// Runs the listed trials and returns their outcomes in trial order.
pub fn run_trials(
    cfg: &ExperimentConfig,
    detectors: &[DetectorEntry],
    trials: &[usize],
    workers: usize,
    keep_traces: impl Fn(usize) -> bool + Sync,
) -> Result<Vec<TrialOutcome>> {
    let mut out = Vec::with_capacity(trials.len());
    for_each_trial(
        trials,
        workers,
        |i| {
            let data = prepare_trial(cfg, i)?;
            run_trial(cfg, detectors, &data, keep_traces(i))
        },
        |o| {
            out.push(o);
            Ok(())
        },
    )?;
    out.sort_by_key(|o| o.trial);
    Ok(out)
}
