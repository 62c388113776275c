//! Trial-averaged log-likelihood-ratio traces.

use twr_core::detectors::{AdaptiveConfig, DetectorSpec, StepRecord};

use crate::config::{DetectorEntry, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::experiment::run_trials;
use crate::output::{echo_config, ensure_dir, write_file};
use crate::plot::{line_chart, Series};

/// Per-step means over trials; row `i` is the step consuming transition `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LlrTrace {
    pub oracle: Vec<f64>,
    pub twr_raw: Vec<f64>,
    pub twr_penalized: Vec<f64>,
    pub adaptive: Vec<f64>,
    pub trials: usize,
}

impl LlrTrace {
    pub fn len(&self) -> usize {
        self.oracle.len()
    }

    pub fn is_empty(&self) -> bool {
        self.oracle.is_empty()
    }
}

/// The three traced detectors: oracle, the config's TWR and its adaptive
/// baseline (defaults when absent).
pub fn trace_detectors(cfg: &ExperimentConfig) -> Vec<DetectorEntry> {
    let resolved = cfg.resolved_detectors();
    let adaptive = resolved
        .iter()
        .find_map(|d| match &d.spec {
            DetectorSpec::Adaptive(c) => Some(c.clone()),
            _ => None,
        })
        .unwrap_or_else(|| AdaptiveConfig {
            statistic: cfg.statistic,
            rho: cfg.rho,
            ..AdaptiveConfig::default()
        });
    vec![
        DetectorEntry::new(cfg.oracle_spec()),
        DetectorEntry::new(DetectorSpec::Twr(cfg.twr_config())),
        DetectorEntry::new(DetectorSpec::Adaptive(adaptive)),
    ]
}

fn mean_into(acc: &mut [f64], trace: &[StepRecord], get: impl Fn(&StepRecord) -> f64) {
    for (a, r) in acc.iter_mut().zip(trace) {
        *a += get(r);
    }
}

/// Averages full-horizon change-stream traces over `cfg.trials` trials.
pub fn compute_llr_trace(cfg: &ExperimentConfig, workers: usize) -> Result<LlrTrace> {
    if cfg.trials == 0 {
        return Err(HarnessError::Config("the trace study needs at least one trial".into()));
    }
    let run_cfg = ExperimentConfig {
        far_horizon: 0,
        detectors: trace_detectors(cfg),
        ..cfg.clone()
    };
    let ids: Vec<usize> = (0..cfg.trials).collect();
    let outcomes = run_trials(&run_cfg, &run_cfg.detectors, &ids, workers, |_| true)?;
    let h = cfg.horizon;
    let mut out = LlrTrace {
        oracle: vec![0.0; h],
        twr_raw: vec![0.0; h],
        twr_penalized: vec![0.0; h],
        adaptive: vec![0.0; h],
        trials: cfg.trials,
    };
    for o in &outcomes {
        for (name, trace) in &o.traces {
            match name.as_str() {
                "oracle" => mean_into(&mut out.oracle, trace, |r| r.llr),
                "twr" => {
                    mean_into(&mut out.twr_raw, trace, |r| r.llr);
                    mean_into(&mut out.twr_penalized, trace, |r| r.llr_penalized);
                }
                "adaptive" => mean_into(&mut out.adaptive, trace, |r| r.llr),
                _ => {}
            }
        }
    }
    let n = cfg.trials as f64;
    for v in [&mut out.oracle, &mut out.twr_raw, &mut out.twr_penalized, &mut out.adaptive] {
        v.iter_mut().for_each(|x| *x /= n);
    }
    Ok(out)
}

/// Writes traces/llr_trace.csv (one row per step) and the overlay chart.
pub fn run_llr_trace(cfg: &ExperimentConfig, workers: usize) -> Result<LlrTrace> {
    cfg.validate()?;
    let trace = compute_llr_trace(cfg, workers)?;
    ensure_dir(&cfg.output_dir)?;
    echo_config(&cfg.output_dir, cfg)?;
    let mut text = String::from("t,oracle_L,twr_L_raw,twr_L_penalized,adaptive_L\n");
    for i in 0..trace.len() {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            i + 1,
            trace.oracle[i],
            trace.twr_raw[i],
            trace.twr_penalized[i],
            trace.adaptive[i]
        ));
    }
    write_file(&cfg.output_dir.join("traces").join("llr_trace.csv"), text.as_bytes())?;
    if cfg.emit_plots {
        let series = |name: &str, v: &[f64]| Series {
            name: name.to_string(),
            points: v.iter().enumerate().map(|(i, &y)| ((i + 1) as f64, y)).collect(),
        };
        let all = [
            series("oracle", &trace.oracle),
            series("twr raw", &trace.twr_raw),
            series("twr penalized", &trace.twr_penalized),
            series("adaptive", &trace.adaptive),
        ];
        let svg = line_chart("Mean log-likelihood ratio", "t", "LLR", &all, false);
        write_file(&cfg.output_dir.join("plots").join("llr_trace.svg"), svg.as_bytes())?;
    }
    Ok(trace)
}
