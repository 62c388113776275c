//! Quickest change detection with unknown pre- and post-change parameters.
//!
//! The crate provides parametric Markov kernels, the logistic change-point
//! posterior used to weight past observations, the classical detection
//! statistics, four detectors (oracle, TWR, adaptive, GLR), a stream
//! simulator and Monte-Carlo performance estimates.
//!
//! ```
//! use std::sync::Arc;
//! use twr_core::detectors::{run_detector, OracleDetector};
//! use twr_core::kernels::{KernelFamily, KernelSpec, ParamVec};
//! use twr_core::simulation::{generate, ChangeSpec};
//! use twr_core::statistics::StatisticKind;
//!
//! let family = Arc::new(KernelFamily::new(KernelSpec::iid_gaussian_mean(1, 1.0))?);
//! let (pre, post) = (ParamVec::from(vec![0.0]), ParamVec::from(vec![1.0]));
//! let spec = ChangeSpec::single(pre.clone(), post.clone(), 100, 300, vec![0.0]);
//! let stream = generate(&family, &spec, 7)?.transitions();
//!
//! let mut oracle = OracleDetector::new(family, pre, post, StatisticKind::Cusum, 0.0)?;
//! let run = run_detector(&mut oracle, &stream, 8.0, 300, false)?;
//! assert!(run.stopping_time.is_some_and(|nu| nu > 100));
//! # Ok::<(), twr_core::Error>(())
//! ```

pub mod detectors;
pub mod error;
pub mod kernels;
pub mod metrics;
pub mod posterior;
pub mod rng;
pub mod simulation;
pub mod statistics;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/posterior.md")]
    mod posterior {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    mod statistics {}
    #[doc = include_str!("../../../book/src/twr.md")]
    mod twr {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
}
