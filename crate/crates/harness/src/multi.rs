//! Sequential detection of several changes with one TWR instance.

use twr_core::detectors::{DetectorSpec, SequentialDetector, TwrDetector};
use twr_core::metrics::{estimate_add, Estimate};
use twr_core::rng::{derive_seed, rng_from_seed};
use twr_core::simulation::{generate, sample_pair_at_kl, sample_successor_at_kl, ChangeSpec, PairSearch};

use crate::config::{DetectorEntry, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::experiment::{draw_lambda, for_each_trial, prepare_trial, run_trial, trial_family, SUB_CHANGE, SUB_DETECTOR, SUB_PAIR, SUB_SUCCESSORS};
use crate::output::{ensure_dir, echo_config, write_file};

/// Outcome of one multi-change trial.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTrial {
    pub trial: usize,
    pub change_points: Vec<usize>,
    /// Every alarm, in stream time.
    pub alarms: Vec<usize>,
    /// Per change, in change order: delay of the first alarm inside its segment.
    pub delays: Vec<Option<usize>>,
    /// Alarms before the first change or repeated within a segment.
    pub false_alarms: usize,
}

impl MultiTrial {
    pub fn all_detected(&self) -> bool {
        self.delays.iter().all(Option::is_some)
    }
}

#[derive(Debug, Clone)]
pub struct MultiSummary {
    pub gap: usize,
    pub threshold: f64,
    pub trials: Vec<MultiTrial>,
}

impl MultiSummary {
    /// Fraction of trials where every change was detected within its segment.
    pub fn success_rate(&self) -> f64 {
        if self.trials.is_empty() {
            return 0.0;
        }
        self.trials.iter().filter(|t| t.all_detected()).count() as f64 / self.trials.len() as f64
    }

    /// Mean delay of change `k` over the trials that detected it.
    pub fn mean_delay(&self, k: usize) -> Option<Estimate> {
        let d: Vec<f64> = self.trials.iter().filter_map(|t| t.delays[k]).map(|d| d as f64).collect();
        if d.is_empty() {
            return None;
        }
        let n = d.len() as f64;
        let m = d.iter().sum::<f64>() / n;
        let se = if d.len() > 1 {
            (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Some(Estimate {
            value: m,
            stderr: se,
            n: d.len(),
        })
    }
}

/// The multi-change threshold: configured, or the middle of the grid.
pub fn multi_threshold(cfg: &ExperimentConfig) -> f64 {
    cfg.multi.threshold.unwrap_or_else(|| {
        let g = cfg.threshold_values();
        g[g.len() / 2]
    })
}

/// Oracle ADD at `threshold` over single-change pilot trials.
pub fn pilot_oracle_add(cfg: &ExperimentConfig, threshold: f64, exec_workers: usize) -> Result<Estimate> {
    let pilot = ExperimentConfig {
        trials: cfg.multi.pilot_trials,
        far_horizon: 0,
        thresholds: crate::config::ThresholdGrid::List(vec![threshold]),
        detectors: vec![DetectorEntry::new(cfg.oracle_spec())],
        ..cfg.clone()
    };
    let trials: Vec<usize> = (0..pilot.trials).collect();
    let mut records = Vec::new();
    for_each_trial(
        &trials,
        exec_workers,
        |i| run_trial(&pilot, &pilot.detectors, &prepare_trial(&pilot, i)?, false),
        |o| {
            records.extend(o.records);
            Ok(())
        },
    )?;
    estimate_add(&records)
        .map_err(|_| HarnessError::Config("pilot oracle runs never detected the change; raise the horizon".into()))
}

/// Gap between consecutive changes.
pub fn multi_gap(cfg: &ExperimentConfig, threshold: f64, workers: usize) -> Result<usize> {
    match cfg.multi.gap {
        Some(g) if g >= 1 => Ok(g),
        Some(_) => Err(HarnessError::Config("multi.gap must be positive".into())),
        None => {
            let add = pilot_oracle_add(cfg, threshold, workers)?;
            Ok(((cfg.multi.gap_factor * add.value).ceil() as usize).max(1))
        }
    }
}

/// Runs one trial: changes at `λ, λ + gap, …`, and after the last change
/// `max(horizon − λ, gap)` more transitions. With `K = 1` and
/// `gap ≤ horizon − λ` the stream and detector coincide with the trial of the
/// single-change experiment.
pub fn run_multi_trial(cfg: &ExperimentConfig, trial: usize, gap: usize, threshold: f64) -> Result<MultiTrial> {
    let k = cfg.multi.changes;
    let seed = derive_seed(cfg.seed, trial as u64);
    let lambda = draw_lambda(cfg, seed)?;
    let family = trial_family(cfg, seed)?;
    let mut pair_rng = rng_from_seed(derive_seed(seed, SUB_PAIR));
    let (theta0, theta1) = sample_pair_at_kl(&family, cfg.target_kl, cfg.kl_tolerance, &PairSearch::default(), &mut pair_rng)?;
    let mut params = vec![theta0, theta1];
    let mut succ_rng = rng_from_seed(derive_seed(seed, SUB_SUCCESSORS));
    while params.len() < k + 1 {
        let last = params.last().expect("nonempty");
        let next = sample_successor_at_kl(&family, last, cfg.target_kl, cfg.kl_tolerance, &PairSearch::default(), &mut succ_rng)?;
        params.push(next);
    }
    let change_points: Vec<usize> = (0..k).map(|j| lambda + j * gap).collect();
    let horizon = lambda + (k - 1) * gap + (cfg.horizon - lambda).max(gap);
    let spec = ChangeSpec {
        change_points: change_points.clone(),
        params,
        horizon,
        x0: vec![0.0; family.state_dim()],
        burn_in: twr_core::simulation::DEFAULT_BURN_IN,
    };
    let stream = generate(&family, &spec, derive_seed(seed, SUB_CHANGE))?.transitions();

    let twr = cfg.twr_config();
    let level = twr.statistic.threshold_level(threshold);
    let mut det = TwrDetector::new(family, twr, rng_from_seed(derive_seed(seed, SUB_DETECTOR)))?;
    let mut alarms = Vec::new();
    for (i, tr) in stream.iter().enumerate() {
        if det.step(tr)?.level > level {
            alarms.push(i + 1);
            det.reset_for_next_change();
        }
    }

    let mut delays = vec![None; k];
    let mut false_alarms = 0;
    for &a in &alarms {
        match change_points.iter().rposition(|&c| c <= a) {
            Some(j) if delays[j].is_none() => delays[j] = Some(a - change_points[j]),
            _ => false_alarms += 1,
        }
    }
    Ok(MultiTrial {
        trial,
        change_points,
        alarms,
        delays,
        false_alarms,
    })
}

/// Runs the multi-change study and writes multi.csv and multi_summary.csv.
pub fn run_multi_change(cfg: &ExperimentConfig, workers: usize) -> Result<MultiSummary> {
    cfg.validate()?;
    if !cfg.detectors.iter().any(|d| matches!(d.spec, DetectorSpec::Twr(_))) {
        return Err(HarnessError::Config("the multi-change study needs a twr detector entry".into()));
    }
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    echo_config(dir, cfg)?;
    let threshold = multi_threshold(cfg);
    let gap = multi_gap(cfg, threshold, workers)?;
    let ids: Vec<usize> = (0..cfg.trials).collect();
    let mut trials = Vec::new();
    for_each_trial(
        &ids,
        workers,
        |i| run_multi_trial(cfg, i, gap, threshold),
        |t| {
            trials.push(t);
            Ok(())
        },
    )?;
    trials.sort_by_key(|t| t.trial);
    let summary = MultiSummary { gap, threshold, trials };

    let mut rows = String::from("trial,change,lambda,nu,delay,detected\n");
    for t in &summary.trials {
        for (j, (&c, d)) in t.change_points.iter().zip(&t.delays).enumerate() {
            let nu = d.map(|d| (c + d).to_string()).unwrap_or_default();
            let delay = d.map(|d| d.to_string()).unwrap_or_default();
            rows.push_str(&format!("{},{},{c},{nu},{delay},{}\n", t.trial, j + 1, d.is_some()));
        }
    }
    write_file(&dir.join("multi.csv"), rows.as_bytes())?;

    let mut sum = String::from("change,detected,missed,mean_delay,mean_delay_stderr\n");
    for j in 0..cfg.multi.changes {
        let detected = summary.trials.iter().filter(|t| t.delays[j].is_some()).count();
        let missed = summary.trials.len() - detected;
        let (m, se) = summary
            .mean_delay(j)
            .map(|e| (e.value.to_string(), e.stderr.to_string()))
            .unwrap_or_default();
        sum.push_str(&format!("{},{detected},{missed},{m},{se}\n", j + 1));
    }
    let false_alarms: usize = summary.trials.iter().map(|t| t.false_alarms).sum();
    let meta = serde_json::json!({
        "gap": gap,
        "threshold": threshold,
        "trials": summary.trials.len(),
        "success_rate": summary.success_rate(),
        "false_alarms": false_alarms,
    });
    write_file(&dir.join("multi_meta.json"), (serde_json::to_string_pretty(&meta).expect("json") + "\n").as_bytes())?;
    write_file(&dir.join("multi_summary.csv"), sum.as_bytes())?;
    Ok(summary)
}
