//! The `run` and `sweep` studies.

use std::collections::BTreeMap;
use std::path::Path;

use twr_core::metrics::{Aggregate, TrialRecord};
use twr_core::statistics::StatisticKind;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::experiment::{for_each_trial, prepare_trial, run_trial};
use crate::output::{
    aggregate_all, aggregate_csv, canonical, echo_config, ensure_dir, read_records, trace_csv, write_file, write_records,
    RecordLog, AGGREGATE_FILE, RECORDS_FILE,
};
use crate::plot::{line_chart, Series};

/// What a finished `run` produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<Aggregate>,
    /// Trials taken from an earlier interrupted run.
    pub resumed_trials: usize,
}

/// Options that do not affect any output byte.
#[derive(Debug, Clone, Copy, Default)]
pub struct Execution {
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

fn expected_per_trial(cfg: &ExperimentConfig) -> usize {
    let streams = if cfg.far_horizon > 0 { 2 } else { 1 };
    cfg.detectors.len() * cfg.threshold_values().len() * streams
}

/// Runs every (detector, threshold, trial) cell of the config and writes
/// records.jsonl, aggregate.csv, traces and plots into `cfg.output_dir`.
///
/// Records of trials completed by an earlier run with the identical resolved
/// config are reused.
pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    let same_config = echo_config(dir, cfg)?;
    let records_path = dir.join(RECORDS_FILE);
    let previous = if same_config { read_records(&records_path)? } else { Vec::new() };
    if !same_config {
        write_file(&records_path, b"")?;
    }
    let detectors = cfg.resolved_detectors();
    let mut by_trial: BTreeMap<usize, Vec<TrialRecord>> = BTreeMap::new();
    for r in canonical(previous, &detectors) {
        if r.trial < cfg.trials {
            by_trial.entry(r.trial).or_default().push(r);
        }
    }
    let expected = expected_per_trial(cfg);
    by_trial.retain(|_, v| v.len() == expected);
    let resumed_trials = by_trial.len();
    let pending: Vec<usize> = (0..cfg.trials).filter(|i| !by_trial.contains_key(i)).collect();

    let grid = cfg.threshold_values();
    let top = *grid.last().expect("validated grid");
    let mut log = RecordLog::open(&records_path)?;
    let mut fresh = Vec::new();
    for_each_trial(
        &pending,
        exec.workers,
        |i| {
            let data = prepare_trial(cfg, i)?;
            run_trial(cfg, &detectors, &data, cfg.emit_traces && i < cfg.trace_trials)
        },
        |outcome| {
            log.append(&outcome.records)?;
            for (name, trace) in &outcome.traces {
                let file = dir.join("traces").join(format!("{name}_trial{}.csv", outcome.trial));
                write_file(&file, &trace_csv(name, trace, top)?)?;
            }
            fresh.extend(outcome.records);
            Ok(())
        },
    )?;
    drop(log);

    let mut all: Vec<TrialRecord> = by_trial.into_values().flatten().collect();
    all.extend(fresh);
    let records = canonical(all, &detectors);
    write_records(&records_path, &records)?;
    let names: Vec<&str> = detectors.iter().map(|d| d.name()).collect();
    let aggregates = aggregate_all(&records, &names, &grid);
    write_file(&dir.join(AGGREGATE_FILE), &aggregate_csv(&aggregates)?)?;
    if cfg.emit_plots {
        write_metric_plots(dir, &aggregates, &names)?;
    }
    Ok(RunSummary {
        records,
        aggregates,
        resumed_trials,
    })
}

type Metric = fn(&Aggregate) -> Option<f64>;

const METRICS: [(&str, Metric); 5] = [
    ("pfa", |a| a.pfa.map(|e| e.value)),
    ("add", |a| a.add.map(|e| e.value)),
    ("far", |a| a.far.map(|e| e.value)),
    ("cadd", |a| a.cadd.map(|e| e.value)),
    ("regret", |a| a.regret.map(|e| e.value)),
];

fn write_metric_plots(dir: &Path, aggregates: &[Aggregate], names: &[&str]) -> Result<()> {
    for (metric, get) in METRICS {
        let series: Vec<Series> = names
            .iter()
            .map(|n| Series {
                name: n.to_string(),
                points: aggregates
                    .iter()
                    .filter(|a| a.detector == *n)
                    .filter_map(|a| get(a).map(|v| (a.threshold, v)))
                    .collect(),
            })
            .collect();
        let svg = line_chart(&format!("{} vs threshold", metric.to_uppercase()), "B (log scale)", metric, &series, true);
        write_file(&dir.join("plots").join(format!("{metric}.svg")), svg.as_bytes())?;
    }
    Ok(())
}

/// Least-squares line with its coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
}

/// Ordinary least squares; `None` with fewer than two distinct abscissae.
pub fn fit_line(points: &[(f64, f64)]) -> Option<LineFit> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some(LineFit {
        slope,
        intercept: my - slope * mx,
        r2,
        n,
    })
}

/// Fits ADD against the log-likelihood-ratio level of the threshold, per
/// detector: `B` itself for CuSum, `ln B` for the ratio statistics.
pub fn delay_fits(aggregates: &[Aggregate], detectors: &[(&str, StatisticKind)]) -> Vec<(String, Option<LineFit>)> {
    detectors
        .iter()
        .map(|&(n, kind)| {
            let pts: Vec<(f64, f64)> = aggregates
                .iter()
                .filter(|a| a.detector == n)
                .filter_map(|a| a.add.map(|e| (kind.threshold_level(a.threshold), e.value)))
                .collect();
            (n.to_string(), fit_line(&pts))
        })
        .collect()
}

/// `run` followed by a delay-scaling fit written to delay_fit.csv.
pub fn run_sweep(cfg: &ExperimentConfig, exec: Execution) -> Result<(RunSummary, Vec<(String, Option<LineFit>)>)> {
    let summary = run_experiment(cfg, exec)?;
    let detectors = cfg.resolved_detectors();
    let names: Vec<&str> = detectors.iter().map(|d| d.name()).collect();
    let kinds: Vec<(&str, StatisticKind)> = detectors.iter().map(|d| (d.name(), d.spec.statistic())).collect();
    let fits = delay_fits(&summary.aggregates, &kinds);
    let mut text = String::from("detector,slope,intercept,r2,points\n");
    for (name, fit) in &fits {
        match fit {
            Some(f) => text.push_str(&format!("{name},{},{},{},{}\n", f.slope, f.intercept, f.r2, f.n)),
            None => text.push_str(&format!("{name},,,,0\n")),
        }
    }
    write_file(&cfg.output_dir.join("delay_fit.csv"), text.as_bytes())?;
    if cfg.emit_plots {
        let series: Vec<Series> = names
            .iter()
            .map(|n| Series {
                name: n.to_string(),
                points: summary
                    .aggregates
                    .iter()
                    .filter(|a| a.detector == *n)
                    .filter_map(|a| a.add.map(|e| (a.threshold, e.value)))
                    .collect(),
            })
            .collect();
        let svg = line_chart("Delay scaling", "B (log scale)", "ADD", &series, true);
        write_file(&cfg.output_dir.join("plots").join("delay_fit.svg"), svg.as_bytes())?;
    }
    Ok((summary, fits))
}
