//! Adaptive baseline: pre-change parameter fixed from historical data,
//! post-change parameter tracked by unweighted likelihood ascent.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::kernels::{KernelFamily, ParamVec};
use crate::rng::SimRng;
use crate::simulation::Transition;
use crate::statistics::{StatisticKind, StatisticState};

use super::sgd::{fit_mle, mle_step, sample_batch, SgdConfig};
use super::{SequentialDetector, StepRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveConfig {
    /// Share of the pre-change segment given as history.
    pub pre_fraction: f64,
    /// Fit of the pre-change parameter on the history.
    pub fit: SgdConfig,
    pub n_epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub clip: f64,
    pub statistic: StatisticKind,
    pub rho: f64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            pre_fraction: 0.1,
            fit: SgdConfig::default(),
            n_epochs: 5,
            batch_size: 32,
            step_size: 0.01,
            clip: 10.0,
            statistic: StatisticKind::Cusum,
            rho: 0.005,
        }
    }
}

impl AdaptiveConfig {
    /// History length for a change at `lambda`: `⌈pre_fraction · λ⌉`, at least 1.
    pub fn history_len(&self, lambda: usize) -> usize {
        ((self.pre_fraction * lambda as f64).ceil() as usize).max(1)
    }

    fn sgd(&self) -> SgdConfig {
        SgdConfig {
            epochs: self.n_epochs,
            batch_size: self.batch_size,
            step_size: self.step_size,
            clip: self.clip,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptiveDetector {
    family: Arc<KernelFamily>,
    config: AdaptiveConfig,
    theta0: ParamVec,
    theta1: ParamVec,
    stat: StatisticState,
    buffer: Vec<Transition>,
    history: usize,
    rng: SimRng,
    grad: Vec<f64>,
}

impl AdaptiveDetector {
    /// `θ1` starts at `θ0`, so the first log-ratio is 0.
    pub fn with_known_theta0(
        family: Arc<KernelFamily>,
        theta0: ParamVec,
        config: AdaptiveConfig,
        rng: SimRng,
    ) -> Result<Self> {
        if theta0.len() != family.param_dim() {
            return Err(invalid_arg("theta0 does not match the family"));
        }
        let stat = StatisticState::new(config.statistic, config.rho)?;
        Ok(Self {
            grad: vec![0.0; family.param_dim()],
            theta1: theta0.clone(),
            theta0,
            family,
            config,
            stat,
            buffer: Vec::new(),
            history: 0,
            rng,
        })
    }

    /// Fits `θ0` on `history`, which must be the leading transitions of the
    /// stream the detector will then see. Those transitions count as consumed.
    pub fn fit_from_history(
        family: Arc<KernelFamily>,
        history: &[Transition],
        config: AdaptiveConfig,
        mut rng: SimRng,
    ) -> Result<Self> {
        if history.is_empty() {
            return Err(invalid_arg("adaptive detector needs a nonempty history or a known theta0"));
        }
        let init = family.random_param(&mut rng);
        let theta0 = fit_mle(&family, history, &init, &config.fit, &mut rng)?;
        let mut det = Self::with_known_theta0(family, theta0, config, rng)?;
        det.buffer = history.to_vec();
        det.history = history.len();
        Ok(det)
    }

    /// Replaces the online estimate; with the true post-change parameter and
    /// no epochs this is the oracle.
    pub fn set_theta1(&mut self, theta1: ParamVec) {
        self.theta1 = theta1;
    }

    pub fn theta0(&self) -> &ParamVec {
        &self.theta0
    }

    pub fn theta1(&self) -> &ParamVec {
        &self.theta1
    }
}

impl SequentialDetector for AdaptiveDetector {
    fn step(&mut self, transition: &Transition) -> Result<StepRecord> {
        let llr0 = self.family.log_density(&self.theta0, &transition.state, &transition.next)?;
        self.buffer.push(transition.clone());
        let n = self.buffer.len();
        let sgd = self.config.sgd();
        for _ in 0..sgd.epochs {
            let idx = sample_batch(&mut self.rng, 0, n, sgd.batch_size);
            mle_step(&self.family, &mut self.theta1, &self.buffer, &idx, &sgd, &mut self.grad);
        }
        let llr = self.family.log_density(&self.theta1, &transition.state, &transition.next)? - llr0;
        self.stat.push_llr(llr)?;
        Ok(StepRecord::plain(n, self.stat.value(), self.stat.level(), llr))
    }

    fn kind(&self) -> StatisticKind {
        self.stat.kind()
    }

    fn warm_start(&self) -> usize {
        self.history
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::{run_levels, OracleDetector};
    use crate::kernels::KernelSpec;
    use crate::rng::rng_from_seed;
    use crate::simulation::{generate, ChangeSpec};

    fn iid1() -> Arc<KernelFamily> {
        Arc::new(KernelFamily::new(KernelSpec::iid_gaussian_mean(1, 1.0)).unwrap())
    }

    fn p(v: f64) -> ParamVec {
        ParamVec::from(vec![v])
    }

    #[test]
    fn known_theta0_starts_at_zero_llr() {
        let f = iid1();
        let cfg = AdaptiveConfig { n_epochs: 0, ..AdaptiveConfig::default() };
        let mut det = AdaptiveDetector::with_known_theta0(f, p(0.4), cfg, rng_from_seed(0)).unwrap();
        let rec = det.step(&Transition { state: vec![0.0], next: vec![3.0] }).unwrap();
        assert_eq!(rec.llr, 0.0);
    }

    #[test]
    fn empty_history_is_rejected() {
        let err = AdaptiveDetector::fit_from_history(iid1(), &[], AdaptiveConfig::default(), rng_from_seed(0));
        assert!(err.is_err());
    }

    #[test]
    fn history_length_rounds_up() {
        let cfg = AdaptiveConfig::default();
        assert_eq!(cfg.history_len(200), 20);
        assert_eq!(cfg.history_len(5), 1);
        assert_eq!(cfg.history_len(0), 1);
    }

    #[test]
    fn true_theta1_without_epochs_is_the_oracle() {
        let f = iid1();
        let stream = generate(&f, &ChangeSpec::single(p(0.0), p(1.0), 50, 150, vec![0.0]), 4)
            .unwrap()
            .transitions();
        let cfg = AdaptiveConfig { n_epochs: 0, ..AdaptiveConfig::default() };
        let mut det = AdaptiveDetector::with_known_theta0(f.clone(), p(0.0), cfg, rng_from_seed(1)).unwrap();
        det.set_theta1(p(1.0));
        let mut oracle = OracleDetector::new(f, p(0.0), p(1.0), StatisticKind::Cusum, 0.0).unwrap();
        let a = run_levels(&mut det, &stream, 150, None, false).unwrap();
        let b = run_levels(&mut oracle, &stream, 150, None, false).unwrap();
        assert_eq!(a.levels, b.levels);
    }

    #[test]
    fn history_is_skipped_by_the_driver() {
        let f = iid1();
        let stream = generate(&f, &ChangeSpec::no_change(p(0.0), 60, vec![0.0]), 2)
            .unwrap()
            .transitions();
        let mut det =
            AdaptiveDetector::fit_from_history(f, &stream[..10], AdaptiveConfig::default(), rng_from_seed(3)).unwrap();
        assert!(det.theta0()[0].abs() < 1.0);
        let path = run_levels(&mut det, &stream, 60, None, true).unwrap();
        assert_eq!(path.levels.len(), 60);
        assert!(path.levels[..10].iter().all(|&l| l == 0.0));
        let trace = path.trace.unwrap();
        assert_eq!(trace[10].t, 11);
    }
}
