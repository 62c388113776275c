//! Plain SGD helpers shared by the learning detectors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::kernels::{KernelFamily, ParamVec};
use crate::simulation::Transition;

/// Maximum-likelihood fit settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub clip: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            step_size: 0.05,
            clip: 10.0,
        }
    }
}

/// Rescales `g` to norm at most `max_norm`. Returns false if `g` is not finite.
pub(crate) fn clip(g: &mut [f64], max_norm: f64) -> bool {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return false;
    }
    if norm > max_norm {
        let k = max_norm / norm;
        g.iter_mut().for_each(|v| *v *= k);
    }
    true
}

/// `theta += step * g`.
pub(crate) fn apply(theta: &mut [f64], g: &[f64], step: f64) {
    for (t, v) in theta.iter_mut().zip(g) {
        *t += step * v;
    }
}

/// `min(batch, n)` distinct indices from `[lo, lo + n)`.
pub(crate) fn sample_batch<R: Rng + ?Sized>(rng: &mut R, lo: usize, n: usize, batch: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, n, batch.min(n))
        .into_iter()
        .map(|i| lo + i)
        .collect()
}

/// One ascent step on the mean log-likelihood of `indices`. Returns false
/// (and leaves `theta` untouched) on a non-finite gradient.
pub(crate) fn mle_step(
    family: &KernelFamily,
    theta: &mut ParamVec,
    data: &[Transition],
    indices: &[usize],
    cfg: &SgdConfig,
    grad: &mut [f64],
) -> bool {
    grad.fill(0.0);
    let w = 1.0 / indices.len() as f64;
    for &i in indices {
        let tr = &data[i];
        family.log_density_and_grad(theta, &tr.state, &tr.next, w, grad);
    }
    if !clip(grad, cfg.clip) {
        return false;
    }
    apply(theta, grad, cfg.step_size);
    true
}

/// Fits `θ` by stochastic ascent on the mean log-likelihood of `data`.
pub fn fit_mle<R: Rng + ?Sized>(
    family: &KernelFamily,
    data: &[Transition],
    init: &ParamVec,
    cfg: &SgdConfig,
    rng: &mut R,
) -> Result<ParamVec> {
    if data.is_empty() {
        return Err(invalid_arg("cannot fit on an empty sample"));
    }
    if init.len() != family.param_dim() {
        return Err(invalid_arg("initial parameter has the wrong dimension"));
    }
    let mut theta = init.clone();
    let mut grad = vec![0.0; family.param_dim()];
    for _ in 0..cfg.epochs {
        let idx = sample_batch(rng, 0, data.len(), cfg.batch_size);
        mle_step(family, &mut theta, data, &idx, cfg, &mut grad);
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use crate::rng::rng_from_seed;
    use crate::simulation::{generate, ChangeSpec};

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![30.0, 40.0];
        assert!(clip(&mut g, 10.0));
        assert!((g[0] - 6.0).abs() < 1e-12 && (g[1] - 8.0).abs() < 1e-12);
        let mut small = vec![0.3, 0.4];
        clip(&mut small, 10.0);
        assert_eq!(small, vec![0.3, 0.4]);
        assert!(!clip(&mut [f64::NAN], 1.0));
    }

    #[test]
    fn batches_are_distinct_and_in_range() {
        let mut rng = rng_from_seed(0);
        let mut b = sample_batch(&mut rng, 5, 10, 32);
        b.sort_unstable();
        assert_eq!(b, (5..15).collect::<Vec<_>>());
        let b = sample_batch(&mut rng, 0, 100, 32);
        assert_eq!(b.len(), 32);
        let mut d = b.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 32);
    }

    #[test]
    fn mle_recovers_iid_mean() {
        let f = KernelFamily::new(KernelSpec::iid_gaussian_mean(2, 1.0)).unwrap();
        let truth = ParamVec::from(vec![1.5, -0.5]);
        let tr = generate(&f, &ChangeSpec::no_change(truth.clone(), 2000, vec![0.0; 2]), 3).unwrap();
        let data = tr.transitions();
        let fit = fit_mle(&f, &data, &ParamVec::zeros(2), &SgdConfig::default(), &mut rng_from_seed(1)).unwrap();
        let emp: Vec<f64> = (0..2)
            .map(|i| data.iter().map(|t| t.next[i]).sum::<f64>() / data.len() as f64)
            .collect();
        for i in 0..2 {
            assert!((fit[i] - emp[i]).abs() < 0.1, "{:?} vs {:?}", fit, emp);
        }
        assert!(fit_mle(&f, &[], &truth, &SgdConfig::default(), &mut rng_from_seed(1)).is_err());
    }
}
