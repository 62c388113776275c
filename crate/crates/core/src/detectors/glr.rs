//! Generalized likelihood ratio baseline over candidate split points.
//!
//! `S_n = max_k [sup_θ1 Σ_{τ≥k} log f + sup_θ0 Σ_{τ<k} log f − sup_θ Σ_{τ<n} log f]`,
//! floored at 0. Sups are closed form for the iid Gaussian mean family and
//! warm-started SGD fits otherwise.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::kernels::{KernelFamily, KernelKind, ParamVec};
use crate::rng::SimRng;
use crate::simulation::Transition;
use crate::statistics::StatisticKind;

use super::sgd::{mle_step, sample_batch, SgdConfig};
use super::{SequentialDetector, StepRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlrConfig {
    /// Candidate split points are the multiples of `stride`.
    pub stride: usize,
    /// SGD epochs spent on a sup when its segment is first fitted.
    pub sup_epochs: usize,
    /// SGD epochs per step refining each growing segment's fit.
    pub refine_epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub clip: f64,
    /// Use sample means for the iid Gaussian mean family.
    pub exact_iid: bool,
}

impl Default for GlrConfig {
    fn default() -> Self {
        Self {
            stride: 5,
            sup_epochs: 20,
            refine_epochs: 1,
            batch_size: 32,
            step_size: 0.05,
            clip: 10.0,
            exact_iid: true,
        }
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    k: usize,
    /// Fitted sup over `[0, k)`, frozen once `k` is reached.
    ll_pre: f64,
    theta_post: ParamVec,
}

#[derive(Debug, Clone)]
pub struct GlrDetector {
    family: Arc<KernelFamily>,
    config: GlrConfig,
    buffer: Vec<Transition>,
    /// Prefix sums of the observations (exact iid path).
    sums: Vec<Vec<f64>>,
    candidates: Vec<Candidate>,
    theta_full: ParamVec,
    level: f64,
    argmax: Option<usize>,
    rng: SimRng,
    grad: Vec<f64>,
}

impl GlrDetector {
    pub fn new(family: Arc<KernelFamily>, config: GlrConfig, mut rng: SimRng) -> Result<Self> {
        if config.stride == 0 || config.batch_size == 0 || !(config.step_size > 0.0) {
            return Err(invalid_arg(format!("invalid GLR configuration: {config:?}")));
        }
        let theta_full = family.random_param(&mut rng);
        let d = family.obs_dim();
        Ok(Self {
            grad: vec![0.0; family.param_dim()],
            family,
            config,
            buffer: Vec::new(),
            sums: vec![vec![0.0; d]],
            candidates: Vec::new(),
            theta_full,
            level: 0.0,
            argmax: None,
            rng,
        })
    }

    /// Split point achieving the current maximum.
    pub fn argmax(&self) -> Option<usize> {
        self.argmax
    }

    fn exact(&self) -> bool {
        self.config.exact_iid && self.family.spec().kind == KernelKind::IidGaussianMean
    }

    fn sgd(&self, epochs: usize) -> SgdConfig {
        SgdConfig {
            epochs,
            batch_size: self.config.batch_size,
            step_size: self.config.step_size,
            clip: self.config.clip,
        }
    }

    fn fit(&mut self, theta: &mut ParamVec, lo: usize, hi: usize, epochs: usize) {
        let sgd = self.sgd(epochs);
        for _ in 0..epochs {
            let idx = sample_batch(&mut self.rng, lo, hi - lo, sgd.batch_size);
            mle_step(&self.family, theta, &self.buffer, &idx, &sgd, &mut self.grad);
        }
    }

    fn loglik(&self, theta: &[f64], lo: usize, hi: usize) -> f64 {
        self.buffer[lo..hi]
            .iter()
            .map(|tr| self.family.conditional_unchecked(theta, &tr.state).log_density(&tr.next))
            .sum()
    }

    fn step_exact(&mut self) {
        let n = self.buffer.len();
        let sigma = self.family.spec().sigma.max(self.family.spec().varsigma_min);
        let total = &self.sums[n];
        let mut best = (0.0, None);
        for k in (self.config.stride..n).step_by(self.config.stride) {
            let pre = &self.sums[k];
            let (kf, nf) = (k as f64, n as f64);
            let dist2: f64 = pre
                .iter()
                .zip(total)
                .map(|(a, b)| {
                    let m_pre = a / kf;
                    let m_post = (b - a) / (nf - kf);
                    (m_pre - m_post).powi(2)
                })
                .sum();
            let glr = kf * (nf - kf) / nf * dist2 / (2.0 * sigma * sigma);
            if glr > best.0 || best.1.is_none() {
                best = (glr, Some(k));
            }
        }
        self.level = best.0.max(0.0);
        self.argmax = best.1;
    }

    fn step_sgd(&mut self) {
        let n = self.buffer.len();
        let mut full = self.theta_full.clone();
        let epochs = if n == 1 { self.config.sup_epochs } else { self.config.refine_epochs };
        self.fit(&mut full, 0, n, epochs);
        self.theta_full = full;
        let k_new = n - 1;
        if k_new >= self.config.stride && k_new % self.config.stride == 0 {
            let mut pre = self.theta_full.clone();
            self.fit(&mut pre, 0, k_new, self.config.sup_epochs);
            let ll_pre = self.loglik(&pre, 0, k_new);
            self.candidates.push(Candidate {
                k: k_new,
                ll_pre,
                theta_post: self.theta_full.clone(),
            });
        }
        let ll_full = self.loglik(&self.theta_full, 0, n);
        let mut candidates = std::mem::take(&mut self.candidates);
        let mut best = (0.0, None);
        for c in &mut candidates {
            let mut post = c.theta_post.clone();
            self.fit(&mut post, c.k, n, self.config.refine_epochs);
            c.theta_post = post;
            let glr = c.ll_pre + self.loglik(&c.theta_post, c.k, n) - ll_full;
            if glr > best.0 || best.1.is_none() {
                best = (glr, Some(c.k));
            }
        }
        self.candidates = candidates;
        self.level = best.0.max(0.0);
        self.argmax = best.1;
    }
}

impl SequentialDetector for GlrDetector {
    fn step(&mut self, transition: &Transition) -> Result<StepRecord> {
        if transition.state.len() != self.family.state_dim() || transition.next.len() != self.family.obs_dim() {
            return Err(invalid_arg("transition does not match the kernel family"));
        }
        self.buffer.push(transition.clone());
        if self.exact() {
            let last = self.sums.last().expect("prefix sums start with zeros");
            let next: Vec<f64> = last.iter().zip(&transition.next).map(|(a, b)| a + b).collect();
            self.sums.push(next);
            self.step_exact();
        } else {
            self.step_sgd();
        }
        Ok(StepRecord::plain(self.buffer.len(), self.level, self.level, 0.0))
    }

    /// Levels are on the log-likelihood scale, like CuSum.
    fn kind(&self) -> StatisticKind {
        StatisticKind::Cusum
    }
}
