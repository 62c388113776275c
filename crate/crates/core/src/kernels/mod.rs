//! Parametric Markov transition kernels `f_θ(x' | x)`.
//!
//! Every family produces a diagonal Gaussian conditional law whose mean and
//! standard deviation depend on the task parameter `θ` and on the
//! conditioning state. The state is the concatenation of the last `window`
//! observations (`window = 1` gives an ordinary first-order chain).
//!
//! | family               | mean                         | std                          |
//! |----------------------|------------------------------|------------------------------|
//! | `iid-gaussian-mean`  | `θ`                          | `σ`                          |
//! | `linear-gaussian-ar` | `A·x + b`, `(A, b)` from `θ` | `σ`                          |
//! | `mlp-gaussian`       | `φ_μ(θ, x)`                  | `softplus(φ_σ(θ, x)) + ς_min` |

mod mlp;

use std::ops::{Deref, DerefMut};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::rng::rng_from_seed;
pub use mlp::Activation;
use mlp::{sigmoid, softplus, Mlp, Tape};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// A point in the task-parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVec(Vec<f64>);

impl ParamVec {
    /// Wraps `values`, rejecting non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(invalid_arg(format!("non-finite parameter entry {v}")));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl Deref for ParamVec {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVec {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVec {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    IidGaussianMean,
    LinearGaussianAr,
    MlpGaussian,
}

fn default_sigma() -> f64 {
    1.0
}
fn default_varsigma_min() -> f64 {
    1e-3
}
fn default_window() -> usize {
    1
}
fn default_widths() -> Vec<usize> {
    vec![16, 16]
}

/// Serializable description of a kernel family.
///
/// Two families built from equal specs are bit-identical, including the
/// random network weights of `mlp-gaussian`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub obs_dim: usize,
    pub param_dim: usize,
    #[serde(default)]
    pub seed: u64,
    /// Hidden-layer widths of both networks (`mlp-gaussian` only).
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    /// Fixed noise scale of the iid and linear families.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Floor added to every conditional standard deviation.
    #[serde(default = "default_varsigma_min")]
    pub varsigma_min: f64,
    /// Markov order: number of past observations in the conditioning state.
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl KernelSpec {
    pub fn iid_gaussian_mean(dim: usize, sigma: f64) -> Self {
        Self {
            kind: KernelKind::IidGaussianMean,
            obs_dim: dim,
            param_dim: dim,
            seed: 0,
            widths: Vec::new(),
            sigma,
            varsigma_min: default_varsigma_min(),
            window: 1,
            activation: Activation::Tanh,
        }
    }

    /// First-order linear Gaussian autoregression: `θ = (vec(A), b)`.
    pub fn linear_gaussian_ar(dim: usize, sigma: f64) -> Self {
        Self {
            kind: KernelKind::LinearGaussianAr,
            obs_dim: dim,
            param_dim: dim * dim + dim,
            ..Self::iid_gaussian_mean(dim, sigma)
        }
    }

    /// Desk-scale network family: two hidden layers of width 16, tanh.
    pub fn mlp_gaussian(obs_dim: usize, param_dim: usize, seed: u64) -> Self {
        Self {
            kind: KernelKind::MlpGaussian,
            obs_dim,
            param_dim,
            seed,
            widths: default_widths(),
            sigma: default_sigma(),
            varsigma_min: default_varsigma_min(),
            window: 1,
            activation: Activation::Tanh,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.obs_dim * self.window
    }
}

/// The conditional law `f_θ(·|x)`: independent Gaussians per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ConditionalGaussian {
    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.std)
            .zip(x)
            .map(|((m, s), xi)| {
                let z = (xi - m) / s;
                -HALF_LN_2PI - s.ln() - 0.5 * z * z
            })
            .sum()
    }

    /// `KL(self || other)` in closed form.
    pub fn kl_to(&self, other: &ConditionalGaussian) -> f64 {
        let mut kl = 0.0;
        for i in 0..self.mean.len() {
            let (ma, sa) = (self.mean[i], self.std[i]);
            let (mb, sb) = (other.mean[i], other.std[i]);
            let dm = ma - mb;
            kl += (sb / sa).ln() + (sa * sa + dm * dm) / (2.0 * sb * sb) - 0.5;
        }
        kl
    }
}

#[derive(Debug, Clone, PartialEq)]
struct NetPair {
    mean: Mlp,
    std: Mlp,
}

/// A constructed kernel family. Immutable and `Sync`; share it freely.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelFamily {
    spec: KernelSpec,
    nets: Option<NetPair>,
}

impl KernelFamily {
    pub fn new(spec: KernelSpec) -> Result<Self> {
        if spec.obs_dim == 0 || spec.param_dim == 0 {
            return Err(invalid_arg("obs_dim and param_dim must be positive"));
        }
        if spec.window == 0 {
            return Err(invalid_arg("window must be at least 1"));
        }
        if !(spec.varsigma_min > 0.0 && spec.varsigma_min.is_finite()) {
            return Err(invalid_arg("varsigma_min must be positive"));
        }
        let state_dim = spec.state_dim();
        let nets = match spec.kind {
            KernelKind::IidGaussianMean | KernelKind::LinearGaussianAr => {
                if !(spec.sigma > 0.0 && spec.sigma.is_finite()) {
                    return Err(invalid_arg("sigma must be positive"));
                }
                let expected = match spec.kind {
                    KernelKind::IidGaussianMean => spec.obs_dim,
                    _ => spec.obs_dim * state_dim + spec.obs_dim,
                };
                if spec.param_dim != expected {
                    return Err(invalid_arg(format!(
                        "{:?} with obs_dim {} and window {} needs param_dim {expected}, got {}",
                        spec.kind, spec.obs_dim, spec.window, spec.param_dim
                    )));
                }
                None
            }
            KernelKind::MlpGaussian => {
                if spec.widths.iter().any(|&w| w == 0) {
                    return Err(invalid_arg("hidden widths must be positive"));
                }
                let mut rng = rng_from_seed(spec.seed);
                let in_dim = spec.param_dim + state_dim;
                let mean = Mlp::random(in_dim, &spec.widths, spec.obs_dim, spec.activation, &mut rng);
                let std = Mlp::random(in_dim, &spec.widths, spec.obs_dim, spec.activation, &mut rng);
                Some(NetPair { mean, std })
            }
        };
        Ok(Self { spec, nets })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }
    pub fn obs_dim(&self) -> usize {
        self.spec.obs_dim
    }
    pub fn param_dim(&self) -> usize {
        self.spec.param_dim
    }
    /// Length of the conditioning state (`obs_dim * window`).
    pub fn state_dim(&self) -> usize {
        self.spec.state_dim()
    }

    fn check(&self, theta: &[f64], state: &[f64]) -> Result<()> {
        if theta.len() != self.param_dim() {
            return Err(invalid_arg(format!(
                "parameter has length {}, family expects {}",
                theta.len(),
                self.param_dim()
            )));
        }
        if state.len() != self.state_dim() {
            return Err(invalid_arg(format!(
                "state has length {}, family expects {}",
                state.len(),
                self.state_dim()
            )));
        }
        Ok(())
    }

    fn check_obs(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.obs_dim() {
            return Err(invalid_arg(format!(
                "observation has length {}, family expects {}",
                x.len(),
                self.obs_dim()
            )));
        }
        Ok(())
    }

    /// The conditional law `f_θ(·|state)`.
    pub fn conditional(&self, theta: &[f64], state: &[f64]) -> Result<ConditionalGaussian> {
        self.check(theta, state)?;
        Ok(self.conditional_unchecked(theta, state))
    }

    pub(crate) fn conditional_unchecked(&self, theta: &[f64], state: &[f64]) -> ConditionalGaussian {
        let d = self.obs_dim();
        let sigma = self.spec.sigma.max(self.spec.varsigma_min);
        match self.spec.kind {
            KernelKind::IidGaussianMean => ConditionalGaussian {
                mean: theta.to_vec(),
                std: vec![sigma; d],
            },
            KernelKind::LinearGaussianAr => {
                let sd = self.state_dim();
                let (a, b) = theta.split_at(d * sd);
                let mean = a
                    .chunks_exact(sd)
                    .zip(b)
                    .map(|(row, bi)| row.iter().zip(state).map(|(w, x)| w * x).sum::<f64>() + bi)
                    .collect();
                ConditionalGaussian {
                    mean,
                    std: vec![sigma; d],
                }
            }
            KernelKind::MlpGaussian => {
                let nets = self.nets.as_ref().expect("mlp family carries networks");
                let input = concat(theta, state);
                let mut tape = Tape::default();
                nets.mean.forward(&input, &mut tape);
                let mean = tape.output().to_vec();
                nets.std.forward(&input, &mut tape);
                let std = tape
                    .output()
                    .iter()
                    .map(|&o| softplus(o) + self.spec.varsigma_min)
                    .collect();
                ConditionalGaussian { mean, std }
            }
        }
    }

    /// `log f_θ(x | state)`.
    pub fn log_density(&self, theta: &[f64], state: &[f64], x: &[f64]) -> Result<f64> {
        self.check(theta, state)?;
        self.check_obs(x)?;
        Ok(self.conditional_unchecked(theta, state).log_density(x))
    }

    /// Gradient of `log f_θ(x | state)` with respect to `θ`.
    pub fn grad_log_density(&self, theta: &[f64], state: &[f64], x: &[f64]) -> Result<ParamVec> {
        self.check(theta, state)?;
        self.check_obs(x)?;
        let mut grad = vec![0.0; self.param_dim()];
        self.log_density_and_grad(theta, state, x, 1.0, &mut grad);
        Ok(ParamVec(grad))
    }

    /// Returns `log f_θ(x|state)` and adds `scale * ∇_θ log f_θ(x|state)` to `grad`.
    pub(crate) fn log_density_and_grad(
        &self,
        theta: &[f64],
        state: &[f64],
        x: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        let d = self.obs_dim();
        match self.spec.kind {
            KernelKind::IidGaussianMean => {
                let s = self.spec.sigma.max(self.spec.varsigma_min);
                let inv_var = 1.0 / (s * s);
                let mut ll = 0.0;
                for i in 0..d {
                    let r = x[i] - theta[i];
                    ll += -HALF_LN_2PI - s.ln() - 0.5 * r * r * inv_var;
                    grad[i] += scale * r * inv_var;
                }
                ll
            }
            KernelKind::LinearGaussianAr => {
                let s = self.spec.sigma.max(self.spec.varsigma_min);
                let inv_var = 1.0 / (s * s);
                let sd = self.state_dim();
                let mut ll = 0.0;
                for i in 0..d {
                    let row = &theta[i * sd..(i + 1) * sd];
                    let mean = row.iter().zip(state).map(|(w, x)| w * x).sum::<f64>() + theta[d * sd + i];
                    let r = x[i] - mean;
                    ll += -HALF_LN_2PI - s.ln() - 0.5 * r * r * inv_var;
                    let dmu = scale * r * inv_var;
                    for (g, xj) in grad[i * sd..(i + 1) * sd].iter_mut().zip(state) {
                        *g += dmu * xj;
                    }
                    grad[d * sd + i] += dmu;
                }
                ll
            }
            KernelKind::MlpGaussian => {
                let nets = self.nets.as_ref().expect("mlp family carries networks");
                let input = concat(theta, state);
                let mut mean_tape = Tape::default();
                let mut std_tape = Tape::default();
                nets.mean.forward(&input, &mut mean_tape);
                nets.std.forward(&input, &mut std_tape);
                let mut ll = 0.0;
                let mut d_mean = vec![0.0; d];
                let mut d_raw = vec![0.0; d];
                for i in 0..d {
                    let m = mean_tape.output()[i];
                    let o = std_tape.output()[i];
                    let s = softplus(o) + self.spec.varsigma_min;
                    let z = (x[i] - m) / s;
                    ll += -HALF_LN_2PI - s.ln() - 0.5 * z * z;
                    d_mean[i] = scale * z / s;
                    d_raw[i] = scale * (z * z - 1.0) / s * sigmoid(o);
                }
                let p = self.param_dim();
                nets.mean.backward_inputs(&mean_tape, &d_mean, p, grad);
                nets.std.backward_inputs(&std_tape, &d_raw, p, grad);
                ll
            }
        }
    }

    /// Draws `x ~ f_θ(·|state)`.
    pub fn sample<R: Rng + ?Sized>(&self, theta: &[f64], state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        self.check(theta, state)?;
        Ok(self.sample_unchecked(theta, state, rng))
    }

    pub(crate) fn sample_unchecked<R: Rng + ?Sized>(&self, theta: &[f64], state: &[f64], rng: &mut R) -> Vec<f64> {
        let c = self.conditional_unchecked(theta, state);
        c.mean
            .iter()
            .zip(&c.std)
            .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Closed-form `KL(f_θa(·|state) || f_θb(·|state))`.
    pub fn kl_conditional(&self, theta_a: &[f64], theta_b: &[f64], state: &[f64]) -> Result<f64> {
        self.check(theta_a, state)?;
        self.check(theta_b, state)?;
        Ok(self.kl_unchecked(theta_a, theta_b, state))
    }

    fn kl_unchecked(&self, theta_a: &[f64], theta_b: &[f64], state: &[f64]) -> f64 {
        self.conditional_unchecked(theta_a, state)
            .kl_to(&self.conditional_unchecked(theta_b, state))
    }

    /// Monte-Carlo KL divergence rate: the conditional KL averaged over `base_states`.
    pub fn kl_rate_estimate<'a, I>(&self, theta_a: &[f64], theta_b: &[f64], base_states: I) -> Result<f64>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        if theta_a.len() != self.param_dim() || theta_b.len() != self.param_dim() {
            return Err(invalid_arg("parameter length does not match the family"));
        }
        let mut sum = 0.0;
        let mut n = 0usize;
        for state in base_states {
            self.check(theta_a, state)?;
            sum += self.kl_unchecked(theta_a, theta_b, state);
            n += 1;
        }
        if n == 0 {
            return Err(invalid_arg("KL rate needs at least one base state"));
        }
        Ok(sum / n as f64)
    }

    /// Runs the chain for `burn_in` steps from `state0` and returns the final state.
    pub fn stationary_warmup<R: Rng + ?Sized>(
        &self,
        theta: &[f64],
        state0: &[f64],
        burn_in: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.check(theta, state0)?;
        let mut state = state0.to_vec();
        for _ in 0..burn_in {
            let x = self.sample_unchecked(theta, &state, rng);
            push_observation(&mut state, &x);
        }
        Ok(state)
    }

    /// Draws a parameter from the family's reference law.
    ///
    /// Standard normal entries, except that the transition matrix block of the
    /// linear family is shrunk so that typical draws are stable.
    pub fn random_param<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVec {
        let mut v: Vec<f64> = (0..self.param_dim())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        if self.spec.kind == KernelKind::LinearGaussianAr {
            let sd = self.state_dim();
            let shrink = 0.5 / (sd as f64).sqrt();
            for a in &mut v[..self.obs_dim() * sd] {
                *a *= shrink;
            }
        }
        ParamVec(v)
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// Shifts a conditioning state left by one observation and appends `x`.
pub fn push_observation(state: &mut [f64], x: &[f64]) {
    let d = x.len();
    state.copy_within(d.., 0);
    let n = state.len();
    state[n - d..].copy_from_slice(x);
}

#[cfg(test)]
mod tests;
