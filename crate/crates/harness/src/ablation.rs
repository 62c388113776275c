//! TWR with annealing and penalization switched on and off.

use twr_core::detectors::{DetectorSpec, TwrConfig};
use twr_core::metrics::{estimate_regret_censored, Aggregate, TrialRecord};

use crate::config::{DetectorEntry, ExperimentConfig};
use crate::error::Result;
use crate::output::write_file;
use crate::plot::{line_chart, Series};
use crate::run::{run_experiment, Execution, RunSummary};

/// Variant labels in output order.
pub const VARIANTS: [&str; 4] = ["twr+anneal+pen", "twr+anneal-pen", "twr-anneal+pen", "twr-anneal-pen"];

/// TWR settings of one variant. Annealing off means `ε = 0` and a frozen
/// shift; penalization off means `c = 0` (the floor `L_min` stays).
pub fn variant(base: &TwrConfig, anneal: f64, penalty: f64, anneal_on: bool, penalty_on: bool) -> TwrConfig {
    TwrConfig {
        anneal: if anneal_on { anneal } else { 0.0 },
        anneal_shift: anneal_on,
        penalty: if penalty_on { penalty } else { 0.0 },
        ..base.clone()
    }
}

/// The experiment config actually run by the ablation: change streams only,
/// with the four variants as detectors.
pub fn ablation_config(cfg: &ExperimentConfig) -> ExperimentConfig {
    let base = cfg.twr_config();
    let anneal = cfg.ablation.anneal.unwrap_or(base.anneal);
    let penalty = cfg.ablation.penalty.unwrap_or(base.penalty);
    let flags = [(true, true), (true, false), (false, true), (false, false)];
    let detectors = VARIANTS
        .iter()
        .zip(flags)
        .map(|(label, (a, p))| DetectorEntry::labelled(label, DetectorSpec::Twr(variant(&base, anneal, penalty, a, p))))
        .collect();
    ExperimentConfig {
        detectors,
        far_horizon: 0,
        ..cfg.clone()
    }
}

/// Runs the variants and writes ablation.csv (regret per variant and threshold).
pub fn run_ablation(cfg: &ExperimentConfig, exec: Execution) -> Result<RunSummary> {
    let acfg = ablation_config(cfg);
    let summary = run_experiment(&acfg, exec)?;
    let mut text = String::from("variant,B,regret,regret_stderr,regret_n,n_censored,regret_censored,regret_censored_stderr\n");
    for a in &summary.aggregates {
        let (v, se, n) = a
            .regret
            .map(|e| (e.value.to_string(), e.stderr.to_string(), e.n))
            .unwrap_or((String::new(), String::new(), 0));
        let cell: Vec<TrialRecord> = summary
            .records
            .iter()
            .filter(|r| r.detector == a.detector && r.threshold == a.threshold)
            .cloned()
            .collect();
        let (cv, cse) = estimate_regret_censored(&cell)
            .map(|e| (e.value.to_string(), e.stderr.to_string()))
            .unwrap_or_default();
        text.push_str(&format!("{},{},{v},{se},{n},{},{cv},{cse}\n", a.detector, a.threshold, a.n_censored));
    }
    write_file(&acfg.output_dir.join("ablation.csv"), text.as_bytes())?;
    if acfg.emit_plots {
        let series = regret_series(&summary.aggregates);
        let svg = line_chart("Ablation: regret vs threshold", "B (log scale)", "regret", &series, true);
        write_file(&acfg.output_dir.join("plots").join("ablation.svg"), svg.as_bytes())?;
    }
    Ok(summary)
}

fn regret_series(aggregates: &[Aggregate]) -> Vec<Series> {
    VARIANTS
        .iter()
        .map(|v| Series {
            name: v.to_string(),
            points: aggregates
                .iter()
                .filter(|a| a.detector == *v)
                .filter_map(|a| a.regret.map(|e| (a.threshold, e.value)))
                .collect(),
        })
        .collect()
}
