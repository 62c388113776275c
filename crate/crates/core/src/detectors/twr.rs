//! Temporal weight redistribution.
//!
//! Both parameters are learned online from every past transition. Transition
//! `τ` enters the pre-change objective with weight `P(λ > τ)` and the
//! post-change objective with weight `P(λ < τ)`, both taken from the logistic
//! posterior of the change point given a detection now.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};
use crate::kernels::{KernelFamily, ParamVec};
use crate::posterior::{LogisticPosterior, KL_FLOOR};
use crate::rng::SimRng;
use crate::simulation::Transition;
use crate::statistics::{StatisticKind, StatisticState};

use super::sgd::{apply, clip, sample_batch};
use super::{SequentialDetector, StepRecord};

/// Link `g` applied to the likelihood ratio `r = f_θ1 / f_θ0` inside the losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `g(r) = log r`.
    #[default]
    Kl,
    /// `g(r) = √r − 1`.
    Sqrt,
    /// `g(r) = (r − 1) log r`.
    Xlogx,
}

impl LossKind {
    /// `g(e^l)` as a function of the log-ratio `l`.
    pub fn value(self, l: f64) -> f64 {
        match self {
            LossKind::Kl => l,
            LossKind::Sqrt => (0.5 * l).exp() - 1.0,
            LossKind::Xlogx => l.exp_m1() * l,
        }
    }

    /// `d/dl g(e^l)`.
    pub fn slope(self, l: f64) -> f64 {
        match self {
            LossKind::Kl => 1.0,
            LossKind::Sqrt => 0.5 * (0.5 * l).exp(),
            LossKind::Xlogx => l.exp() * (l + 1.0) - 1.0,
        }
    }
}

/// How the annealing shift `Δ` moves the pre-change weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreShift {
    /// Pre-change weights come from the posterior of a detection `Δ` steps
    /// ago: `P(λ > τ + Δ)` under the current posterior.
    #[default]
    Delayed,
    /// `P(λ > τ − Δ)` under the current posterior.
    Translated,
}

/// Pre- and post-change weights at one time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalWeights {
    pub posterior: LogisticPosterior,
    /// Signed shift passed to [`LogisticPosterior::pre_weight`].
    pub pre_shift: f64,
}

impl TemporalWeights {
    pub fn pre(&self, tau: usize) -> f64 {
        self.posterior.pre_weight(tau as f64, self.pre_shift)
    }

    pub fn post(&self, tau: usize) -> f64 {
        self.posterior.post_weight(tau as f64)
    }

    /// Factors turning weighted sums over a uniform batch of `batch` indices
    /// from `[0, t)` into unbiased estimates of the normalized expectations.
    pub fn batch_scales(&self, t: usize, batch: usize) -> (f64, f64) {
        let (w0, w1) = (0..t).fold((0.0, 0.0), |(a, b), tau| (a + self.pre(tau), b + self.post(tau)));
        let scale = |w: f64| if w > 0.0 { t as f64 / (batch as f64 * w) } else { 0.0 };
        (scale(w0), scale(w1))
    }
}

/// TWR hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwrConfig {
    pub n_epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    /// Gradient-norm clip.
    pub clip: f64,
    /// Penalization coefficient `c`.
    pub penalty: f64,
    /// Decrement `ε` of the pre-change update probability.
    pub anneal: f64,
    /// Whether `Δ` grows with the annealing.
    pub anneal_shift: bool,
    pub pre_shift: PreShift,
    pub l_min: f64,
    /// Error level shaping the posterior.
    pub alpha: f64,
    pub statistic: StatisticKind,
    /// Geometric prior parameter, used by the Shiryaev statistic.
    pub rho: f64,
    pub kl_window: usize,
    pub loss: LossKind,
    pub theta0_init: Option<ParamVec>,
    pub theta1_init: Option<ParamVec>,
    /// Start an unpinned `θ1` at `θ0` instead of an independent draw.
    pub shared_init: bool,
}

impl Default for TwrConfig {
    fn default() -> Self {
        Self {
            n_epochs: 10,
            batch_size: 32,
            step_size: 0.1,
            clip: 10.0,
            penalty: 0.1,
            anneal: 0.01,
            anneal_shift: true,
            pre_shift: PreShift::Delayed,
            l_min: -1.5,
            alpha: 0.1,
            statistic: StatisticKind::Cusum,
            rho: 0.005,
            kl_window: 64,
            loss: LossKind::Kl,
            theta0_init: None,
            theta1_init: None,
            shared_init: true,
        }
    }
}

impl TwrConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size >= 1
            && self.kl_window >= 1
            && self.step_size > 0.0
            && self.clip > 0.0
            && self.penalty >= 0.0
            && self.anneal >= 0.0
            && self.l_min < 0.0
            && self.alpha > 0.0
            && self.alpha < 1.0;
        if !ok {
            return Err(invalid_arg(format!("invalid TWR configuration: {self:?}")));
        }
        StatisticState::new(self.statistic, self.rho)?;
        Ok(())
    }

    /// Prior tail exponent: `−log(1 − ρ)` for Shiryaev, 0 otherwise.
    pub fn prior_d(&self) -> f64 {
        match self.statistic {
            StatisticKind::Shiryaev => -(1.0 - self.rho).ln(),
            _ => 0.0,
        }
    }

    /// `L̂ = max(L − c / max(KL, floor), L_min)`.
    pub fn penalize(&self, llr: f64, kl: f64) -> f64 {
        (llr - self.penalty / kl.max(KL_FLOOR)).max(self.l_min)
    }
}

/// Mutable TWR state.
#[derive(Debug, Clone, PartialEq)]
pub struct TwrState {
    pub theta0: ParamVec,
    pub theta1: ParamVec,
    pub statistic: StatisticState,
    pub delta: usize,
    pub p0: f64,
    pub d_bar: f64,
    /// Transitions consumed since the last origin.
    pub t: usize,
    pub buffer: Vec<Transition>,
    /// Epochs dropped because of a non-finite gradient.
    pub skipped_epochs: usize,
}

/// The TWR detector.
#[derive(Debug, Clone)]
pub struct TwrDetector {
    family: Arc<KernelFamily>,
    config: TwrConfig,
    state: TwrState,
    rng: SimRng,
    grad0: Vec<f64>,
    grad1: Vec<f64>,
    scratch: Scratch,
}

impl TwrDetector {
    /// Unpinned initial parameters are drawn from the family's reference law.
    pub fn new(family: Arc<KernelFamily>, config: TwrConfig, mut rng: SimRng) -> Result<Self> {
        config.validate()?;
        let p = family.param_dim();
        let mut init = |pinned: &Option<ParamVec>| -> Result<ParamVec> {
            match pinned {
                Some(v) if v.len() != p => Err(invalid_arg("pinned TWR parameter has the wrong dimension")),
                Some(v) => Ok(v.clone()),
                None => Ok(family.random_param(&mut rng)),
            }
        };
        let theta0 = init(&config.theta0_init)?;
        let theta1 = match (&config.theta1_init, config.shared_init) {
            (None, true) => theta0.clone(),
            (pinned, _) => init(pinned)?,
        };
        let statistic = StatisticState::new(config.statistic, config.rho)?;
        Ok(Self {
            state: TwrState {
                theta0,
                theta1,
                statistic,
                delta: 0,
                p0: 1.0,
                d_bar: 0.0,
                t: 0,
                buffer: Vec::new(),
                skipped_epochs: 0,
            },
            grad0: vec![0.0; p],
            grad1: vec![0.0; p],
            scratch: Scratch::new(p),
            family,
            config,
            rng,
        })
    }

    pub fn state(&self) -> &TwrState {
        &self.state
    }

    pub fn config(&self) -> &TwrConfig {
        &self.config
    }

    /// Prepares for the next change after a detection: the post-change
    /// estimate becomes the new pre-change one and time restarts at 0.
    pub fn reset_for_next_change(&mut self) {
        let s = &mut self.state;
        s.statistic.reset();
        s.delta = 0;
        s.p0 = 1.0;
        s.d_bar = 0.0;
        s.theta0 = s.theta1.clone();
        s.t = 0;
        s.buffer.clear();
    }

    /// KL rate between the current estimates over the last `W` states.
    pub fn kl_estimate(&self) -> f64 {
        let s = &self.state;
        let start = s.buffer.len().saturating_sub(self.config.kl_window);
        let window = &s.buffer[start..];
        if window.is_empty() {
            return 0.0;
        }
        let kl = window
            .iter()
            .map(|tr| {
                let a = self.family.conditional_unchecked(&s.theta0, &tr.state);
                let b = self.family.conditional_unchecked(&s.theta1, &tr.state);
                a.kl_to(&b)
            })
            .sum::<f64>()
            / window.len() as f64;
        if kl.is_finite() {
            kl
        } else {
            KL_CEILING
        }
    }

    /// Weights at the current time for a given KL estimate.
    pub fn weights(&self, kl: f64) -> Result<TemporalWeights> {
        let posterior = LogisticPosterior::build(self.state.t as f64, self.config.alpha, kl, self.config.prior_d())?;
        let delta = self.state.delta as f64;
        let pre_shift = match self.config.pre_shift {
            PreShift::Delayed => -delta,
            PreShift::Translated => delta,
        };
        Ok(TemporalWeights { posterior, pre_shift })
    }

    fn epoch(&mut self) -> Result<()> {
        let t = self.state.t;
        let idx = sample_batch(&mut self.rng, 0, t, self.config.batch_size);
        let update0 = self.rng.random::<f64>() < self.state.p0;
        let weights = self.weights(self.kl_estimate())?;
        let scale = weights.batch_scales(t, idx.len());
        self.grad0.fill(0.0);
        self.grad1.fill(0.0);
        accumulate(
            &self.family,
            &self.state.theta0,
            &self.state.theta1,
            &self.state.buffer,
            &weights,
            scale,
            &idx,
            self.config.loss,
            (update0, true),
            NEGLIGIBLE_WEIGHT,
            &mut self.grad0,
            &mut self.grad1,
            &mut self.scratch,
        );
        let finite0 = clip(&mut self.grad0, self.config.clip);
        let finite1 = clip(&mut self.grad1, self.config.clip);
        if !(finite0 && finite1) {
            self.state.skipped_epochs += 1;
            return Ok(());
        }
        if update0 {
            apply(&mut self.state.theta0, &self.grad0, -self.config.step_size);
        }
        apply(&mut self.state.theta1, &self.grad1, self.config.step_size);
        Ok(())
    }
}

/// Stand-in for a non-finite KL estimate.
const KL_CEILING: f64 = 1e6;

/// Weights below this are left out of training gradients.
const NEGLIGIBLE_WEIGHT: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Scratch {
    g0: Vec<f64>,
    g1: Vec<f64>,
}

impl Scratch {
    fn new(p: usize) -> Self {
        Self {
            g0: vec![0.0; p],
            g1: vec![0.0; p],
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn accumulate(
    family: &KernelFamily,
    theta0: &[f64],
    theta1: &[f64],
    data: &[Transition],
    weights: &TemporalWeights,
    (scale0, scale1): (f64, f64),
    indices: &[usize],
    loss: LossKind,
    (need0, need1): (bool, bool),
    cutoff: f64,
    grad0: &mut [f64],
    grad1: &mut [f64],
    scratch: &mut Scratch,
) {
    for &tau in indices {
        let tr = &data[tau];
        let w0 = scale0 * weights.pre(tau);
        let w1 = scale1 * weights.post(tau);
        let a0 = need0 && w0 > cutoff;
        let a1 = need1 && w1 > cutoff;
        if !(a0 || a1) {
            continue;
        }
        if loss == LossKind::Kl {
            if a0 {
                family.log_density_and_grad(theta0, &tr.state, &tr.next, -w0, grad0);
            }
            if a1 {
                family.log_density_and_grad(theta1, &tr.state, &tr.next, w1, grad1);
            }
            continue;
        }
        scratch.g0.fill(0.0);
        scratch.g1.fill(0.0);
        let l0 = family.log_density_and_grad(theta0, &tr.state, &tr.next, 1.0, &mut scratch.g0);
        let l1 = family.log_density_and_grad(theta1, &tr.state, &tr.next, 1.0, &mut scratch.g1);
        let h = loss.slope(l1 - l0);
        if a0 {
            apply(grad0, &scratch.g0, -w0 * h);
        }
        if a1 {
            apply(grad1, &scratch.g1, w1 * h);
        }
    }
}

fn check_indices(data: &[Transition], indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(invalid_arg("index set must be nonempty"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
        return Err(invalid_arg(format!("index {bad} outside [0, {})", data.len())));
    }
    Ok(())
}

/// The weighted losses `(L0, L1) = (Σ w0·g(r), Σ w1·g(r))` over `indices`.
pub fn twr_losses(
    family: &KernelFamily,
    theta0: &[f64],
    theta1: &[f64],
    data: &[Transition],
    weights: &TemporalWeights,
    indices: &[usize],
    loss: LossKind,
) -> Result<(f64, f64)> {
    check_indices(data, indices)?;
    let (mut l0, mut l1) = (0.0, 0.0);
    for &tau in indices {
        let tr = &data[tau];
        let r = family.log_density(theta1, &tr.state, &tr.next)? - family.log_density(theta0, &tr.state, &tr.next)?;
        let g = loss.value(r);
        l0 += weights.pre(tau) * g;
        l1 += weights.post(tau) * g;
    }
    Ok((l0, l1))
}

/// Gradients of [`twr_losses`]: `∂L0/∂θ0` (to descend) and `∂L1/∂θ1` (to ascend).
pub fn twr_loss_grads(
    family: &KernelFamily,
    theta0: &[f64],
    theta1: &[f64],
    data: &[Transition],
    weights: &TemporalWeights,
    indices: &[usize],
    loss: LossKind,
) -> Result<(ParamVec, ParamVec)> {
    check_indices(data, indices)?;
    for tr in indices.iter().map(|&i| &data[i]) {
        family.log_density(theta0, &tr.state, &tr.next)?;
        family.log_density(theta1, &tr.state, &tr.next)?;
    }
    let p = family.param_dim();
    let (mut g0, mut g1) = (vec![0.0; p], vec![0.0; p]);
    accumulate(
        family,
        theta0,
        theta1,
        data,
        weights,
        (1.0, 1.0),
        indices,
        loss,
        (true, true),
        f64::NEG_INFINITY,
        &mut g0,
        &mut g1,
        &mut Scratch::new(p),
    );
    Ok((ParamVec::from(g0), ParamVec::from(g1)))
}

impl SequentialDetector for TwrDetector {
    fn step(&mut self, transition: &Transition) -> Result<StepRecord> {
        if transition.state.len() != self.family.state_dim() || transition.next.len() != self.family.obs_dim() {
            return Err(invalid_arg("transition does not match the kernel family"));
        }
        self.state.buffer.push(transition.clone());
        self.state.t += 1;
        for _ in 0..self.config.n_epochs {
            self.epoch()?;
        }
        let kl = self.kl_estimate();
        let s = &self.state;
        let llr = self.family.conditional_unchecked(&s.theta1, &transition.state).log_density(&transition.next)
            - self.family.conditional_unchecked(&s.theta0, &transition.state).log_density(&transition.next);
        let llr_hat = self.config.penalize(llr, kl);
        if !llr_hat.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite log-likelihood ratio at t={}", s.t)));
        }
        let posterior = self.weights(kl)?.posterior;
        let s = &mut self.state;
        s.statistic.push_llr(llr_hat)?;
        if kl > s.d_bar {
            if self.config.anneal_shift {
                s.delta += 1;
            }
            s.p0 = (s.p0 - self.config.anneal).max(0.0);
        }
        let t = s.t as f64;
        s.d_bar = (t - 1.0) / t * s.d_bar + kl / t;
        Ok(StepRecord {
            t: s.t,
            statistic: s.statistic.value(),
            level: s.statistic.level(),
            llr,
            llr_penalized: llr_hat,
            kl_estimate: Some(kl),
            delta: Some(s.delta),
            p0: Some(s.p0),
            d_bar: Some(s.d_bar),
            mu: Some(posterior.mu),
            s: Some(posterior.s),
        })
    }

    fn kind(&self) -> StatisticKind {
        self.config.statistic
    }
}

#[cfg(test)]
mod tests;
