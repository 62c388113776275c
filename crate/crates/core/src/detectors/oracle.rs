use std::sync::Arc;

use crate::error::{invalid_arg, Result};
use crate::kernels::{KernelFamily, ParamVec};
use crate::simulation::Transition;
use crate::statistics::{StatisticKind, StatisticState};

use super::{SequentialDetector, StepRecord};

/// Detector that knows both true parameters.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    family: Arc<KernelFamily>,
    theta0: ParamVec,
    theta1: ParamVec,
    stat: StatisticState,
    t: usize,
}

impl OracleDetector {
    pub fn new(
        family: Arc<KernelFamily>,
        theta0: ParamVec,
        theta1: ParamVec,
        kind: StatisticKind,
        rho: f64,
    ) -> Result<Self> {
        if theta0.len() != family.param_dim() || theta1.len() != family.param_dim() {
            return Err(invalid_arg("oracle parameters do not match the family"));
        }
        Ok(Self {
            family,
            theta0,
            theta1,
            stat: StatisticState::new(kind, rho)?,
            t: 0,
        })
    }

    /// `log f_θ1(x|state) − log f_θ0(x|state)`.
    pub fn llr(&self, transition: &Transition) -> Result<f64> {
        let l1 = self.family.log_density(&self.theta1, &transition.state, &transition.next)?;
        let l0 = self.family.log_density(&self.theta0, &transition.state, &transition.next)?;
        Ok(l1 - l0)
    }

    pub fn statistic(&self) -> &StatisticState {
        &self.stat
    }
}

impl SequentialDetector for OracleDetector {
    fn step(&mut self, transition: &Transition) -> Result<StepRecord> {
        let llr = self.llr(transition)?;
        self.stat.push_llr(llr)?;
        self.t += 1;
        Ok(StepRecord::plain(self.t, self.stat.value(), self.stat.level(), llr))
    }

    fn kind(&self) -> StatisticKind {
        self.stat.kind()
    }
}
