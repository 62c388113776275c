//! Configuration-driven experiment runner for the `twr-core` detectors.
//!
//! Each study reads one [`ExperimentConfig`] and writes plain files:
//!
//! | study | files |
//! |---|---|
//! | [`run_experiment`] | `records.jsonl`, `aggregate.csv`, `traces/*.csv`, `plots/*.svg` |
//! | [`run_sweep`] | the above plus `delay_fit.csv` |
//! | [`run_ablation`] | the above for four TWR variants plus `ablation.csv` |
//! | [`run_multi_change`] | `multi.csv`, `multi_summary.csv`, `multi_meta.json` |
//! | [`run_llr_trace`] | `traces/llr_trace.csv`, `plots/llr_trace.svg` |
//!
//! Every study also echoes the resolved config to `resolved_config.json`.
//! Outputs depend only on the config, never on the worker count.

pub mod ablation;
pub mod config;
pub mod error;
pub mod experiment;
pub mod multi;
pub mod output;
pub mod plot;
pub mod run;
pub mod trace;

pub use ablation::run_ablation;
pub use config::{ChangeModel, DetectorEntry, ExperimentConfig, ThresholdGrid};
pub use error::{HarnessError, Result};
pub use multi::run_multi_change;
pub use run::{run_experiment, run_sweep, Execution, RunSummary};
pub use trace::run_llr_trace;
pub use twr_core;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
    #[doc = include_str!("../../../book/src/config.md")]
    mod config {}
}
