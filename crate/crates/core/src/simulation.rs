//! Stream generation under piecewise-constant task parameters.
//!
//! `X_{t+1} ~ f_{θ_k}(· | X_t)` where `k` is the number of change points
//! `≤ t`. With one change point `λ`, the first post-change observation is
//! `X_{λ+1}`.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};

use crate::error::{invalid_arg, Error, Result};
use crate::kernels::{push_observation, KernelFamily, ParamVec};
use crate::posterior::PriorSpec;
use crate::rng::rng_from_seed;

/// One observed transition: the conditioning state and the next observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub next: Vec<f64>,
}

/// Where the parameter changes and what it changes to.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeSpec {
    /// Strictly increasing, each inside `(0, horizon)`.
    pub change_points: Vec<usize>,
    /// `change_points.len() + 1` parameters, one per segment.
    pub params: Vec<ParamVec>,
    /// Number of transitions to simulate.
    pub horizon: usize,
    /// Initial conditioning state before burn-in.
    pub x0: Vec<f64>,
    pub burn_in: usize,
}

pub const DEFAULT_BURN_IN: usize = 200;

impl ChangeSpec {
    pub fn single(theta0: ParamVec, theta1: ParamVec, lambda: usize, horizon: usize, x0: Vec<f64>) -> Self {
        Self {
            change_points: vec![lambda],
            params: vec![theta0, theta1],
            horizon,
            x0,
            burn_in: DEFAULT_BURN_IN,
        }
    }

    pub fn no_change(theta0: ParamVec, horizon: usize, x0: Vec<f64>) -> Self {
        Self {
            change_points: Vec::new(),
            params: vec![theta0],
            horizon,
            x0,
            burn_in: DEFAULT_BURN_IN,
        }
    }

    /// The change point when there is exactly one.
    pub fn lambda(&self) -> Option<usize> {
        match self.change_points.as_slice() {
            [l] => Some(*l),
            _ => None,
        }
    }

    /// Index of the parameter generating `X_{t+1}`.
    pub fn segment_of(&self, t: usize) -> usize {
        self.change_points.partition_point(|&c| c <= t)
    }

    pub fn validate(&self, family: &KernelFamily) -> Result<()> {
        if self.params.len() != self.change_points.len() + 1 {
            return Err(invalid_arg("need exactly one more parameter than change points"));
        }
        if self.change_points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid_arg("change points must be strictly increasing"));
        }
        if self.change_points.iter().any(|&c| c == 0 || c >= self.horizon) {
            return Err(invalid_arg("change points must lie strictly inside (0, horizon)"));
        }
        if self.x0.len() != family.state_dim() {
            return Err(invalid_arg(format!(
                "x0 has length {}, family state has {}",
                self.x0.len(),
                family.state_dim()
            )));
        }
        if self.params.iter().any(|p| p.len() != family.param_dim()) {
            return Err(invalid_arg("parameter dimension does not match the family"));
        }
        Ok(())
    }
}

/// A simulated observation sequence with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `X_0 ..= X_horizon`.
    pub observations: Vec<Vec<f64>>,
    /// Conditioning state whose newest observation is `X_0`.
    pub initial_state: Vec<f64>,
    pub spec: ChangeSpec,
    pub seed: u64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.spec.horizon
    }

    /// Transitions `(state_τ, X_{τ+1})` for `τ = 0 .. horizon`.
    pub fn transitions(&self) -> Vec<Transition> {
        let mut state = self.initial_state.clone();
        self.observations[1..]
            .iter()
            .map(|x| {
                let tr = Transition {
                    state: state.clone(),
                    next: x.clone(),
                };
                push_observation(&mut state, x);
                tr
            })
            .collect()
    }

    /// CSV export: `t, x_1..x_d, segment`. Row `t` holds `X_t`; the segment is
    /// the one that generated it (row 0 is the warm-up state, segment 0).
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.observations.first().map_or(0, Vec::len);
        write!(w, "t")?;
        for i in 1..=d {
            write!(w, ",x_{i}")?;
        }
        writeln!(w, ",segment")?;
        for (t, x) in self.observations.iter().enumerate() {
            write!(w, "{t}")?;
            for v in x {
                write!(w, ",{v}")?;
            }
            let seg = if t == 0 { 0 } else { self.spec.segment_of(t - 1) };
            writeln!(w, ",{seg}")?;
        }
        Ok(())
    }
}

/// Simulates a stream. Equal `(family, spec, seed)` give bit-identical output.
pub fn generate(family: &KernelFamily, spec: &ChangeSpec, seed: u64) -> Result<Trajectory> {
    spec.validate(family)?;
    let mut rng = rng_from_seed(seed);
    let mut state = family.stationary_warmup(&spec.params[0], &spec.x0, spec.burn_in, &mut rng)?;
    let d = family.obs_dim();
    let mut observations = Vec::with_capacity(spec.horizon + 1);
    observations.push(state[state.len() - d..].to_vec());
    let initial_state = state.clone();
    for t in 0..spec.horizon {
        let theta = &spec.params[spec.segment_of(t)];
        let x = family.sample_unchecked(theta, &state, &mut rng);
        push_observation(&mut state, &x);
        observations.push(x);
    }
    Ok(Trajectory {
        observations,
        initial_state,
        spec: spec.clone(),
        seed,
    })
}

/// Tuning of the divergence-targeted parameter search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSearch {
    pub s_max: f64,
    pub max_retries: usize,
    /// Stationary states used to estimate the KL rate.
    pub base_points: usize,
    pub burn_in: usize,
}

impl Default for PairSearch {
    fn default() -> Self {
        Self {
            s_max: 50.0,
            max_retries: 20,
            base_points: 512,
            burn_in: DEFAULT_BURN_IN,
        }
    }
}

/// Consecutive states of the `θ` chain after a burn-in from the origin.
pub fn stationary_states<R: Rng + ?Sized>(
    family: &KernelFamily,
    theta: &[f64],
    n: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let mut state = family.stationary_warmup(theta, &vec![0.0; family.state_dim()], burn_in, rng)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(state.clone());
        let x = family.sample_unchecked(theta, &state, rng);
        push_observation(&mut state, &x);
    }
    Ok(out)
}

/// Draws `θ0` from the family's reference law and a partner `θ1` with
/// `KL(f_θ0 || f_θ1)` within `tol` (relative) of `target_kl`.
pub fn sample_pair_at_kl<R: Rng + ?Sized>(
    family: &KernelFamily,
    target_kl: f64,
    tol: f64,
    search: &PairSearch,
    rng: &mut R,
) -> Result<(ParamVec, ParamVec)> {
    let theta0 = family.random_param(rng);
    let theta1 = sample_successor_at_kl(family, &theta0, target_kl, tol, search, rng)?;
    Ok((theta0, theta1))
}

/// Finds `θ1 = θ0 + s·u` along random unit directions `u`, bisecting on `s`.
pub fn sample_successor_at_kl<R: Rng + ?Sized>(
    family: &KernelFamily,
    theta0: &ParamVec,
    target_kl: f64,
    tol: f64,
    search: &PairSearch,
    rng: &mut R,
) -> Result<ParamVec> {
    if !(target_kl > 0.0 && tol > 0.0) {
        return Err(invalid_arg("target_kl and tol must be positive"));
    }
    let base = stationary_states(family, theta0, search.base_points.max(1), search.burn_in, rng)?;
    let (lower, upper) = (target_kl * (1.0 - tol), target_kl * (1.0 + tol));
    let p = family.param_dim();
    for _ in 0..search.max_retries {
        let mut u: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        u.iter_mut().for_each(|v| *v /= norm);
        let at = |s: f64| -> Result<(ParamVec, f64)> {
            let theta1 = ParamVec::from(theta0.iter().zip(&u).map(|(a, b)| a + s * b).collect::<Vec<_>>());
            let kl = family.kl_rate_estimate(theta0, &theta1, base.iter().map(Vec::as_slice))?;
            Ok((theta1, kl))
        };
        let (cand, kl_max) = at(search.s_max)?;
        if kl_max.is_finite() && kl_max < lower {
            continue;
        }
        if (lower..=upper).contains(&kl_max) {
            return Ok(cand);
        }
        let (mut lo, mut hi) = (0.0, search.s_max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let (cand, kl) = at(mid)?;
            if (lower..=upper).contains(&kl) {
                return Ok(cand);
            }
            if kl.is_finite() && kl < lower {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    Err(Error::Unreachable {
        target: target_kl,
        retries: search.max_retries,
    })
}

/// Geometric change point with `P(λ > n) = (1 − ρ)^n`, `λ ≥ 1`.
pub fn sample_change_point<R: Rng + ?Sized>(prior: &PriorSpec, rng: &mut R) -> Result<usize> {
    let geo = Geometric::new(prior.rho).map_err(|e| invalid_arg(format!("bad geometric prior: {e}")))?;
    Ok(geo.sample(rng) as usize + 1)
}
