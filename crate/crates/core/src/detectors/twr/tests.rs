use super::*;
use crate::detectors::run_levels;
use crate::kernels::KernelSpec;
use crate::rng::rng_from_seed;
use crate::simulation::{generate, ChangeSpec};
use proptest::prelude::*;
use rand::Rng;

fn iid1() -> Arc<KernelFamily> {
    Arc::new(KernelFamily::new(KernelSpec::iid_gaussian_mean(1, 1.0)).unwrap())
}

fn p(v: f64) -> ParamVec {
    ParamVec::from(vec![v])
}

fn weights(mu: f64, s: f64, shift: f64) -> TemporalWeights {
    TemporalWeights {
        posterior: LogisticPosterior { mu, s },
        pre_shift: shift,
    }
}

fn families() -> Vec<KernelFamily> {
    let mut ar2 = KernelSpec::linear_gaussian_ar(2, 0.7);
    ar2.window = 2;
    ar2.param_dim = 10;
    vec![
        KernelFamily::new(KernelSpec::iid_gaussian_mean(3, 1.3)).unwrap(),
        KernelFamily::new(ar2).unwrap(),
        KernelFamily::new(KernelSpec::mlp_gaussian(3, 4, 11)).unwrap(),
    ]
}

fn random_data(f: &KernelFamily, n: usize, rng: &mut SimRng) -> Vec<Transition> {
    (0..n)
        .map(|_| Transition {
            state: (0..f.state_dim()).map(|_| rng.random_range(-1.5..1.5)).collect(),
            next: (0..f.obs_dim()).map(|_| rng.random_range(-1.5..1.5)).collect(),
        })
        .collect()
}

#[test]
fn loss_slopes_match_numerical_derivatives() {
    for loss in [LossKind::Kl, LossKind::Sqrt, LossKind::Xlogx] {
        for l in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (loss.value(l + h) - loss.value(l - h)) / (2.0 * h);
            assert!((fd - loss.slope(l)).abs() < 1e-6 * fd.abs().max(1.0), "{loss:?} at {l}");
        }
    }
    assert_eq!(LossKind::Sqrt.value(0.0), 0.0);
    assert_eq!(LossKind::Xlogx.value(0.0), 0.0);
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = rng_from_seed(17);
    for f in families() {
        for loss in [LossKind::Kl, LossKind::Sqrt, LossKind::Xlogx] {
            for _ in 0..5 {
                let data = random_data(&f, 12, &mut rng);
                let th0: Vec<f64> = (0..f.param_dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
                let th1: Vec<f64> = (0..f.param_dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
                let w = weights(rng.random_range(0.0..12.0), rng.random_range(0.5..4.0), 1.0);
                let idx: Vec<usize> = (0..12).step_by(2).collect();
                let (g0, g1) = twr_loss_grads(&f, &th0, &th1, &data, &w, &idx, loss).unwrap();
                let h = 1e-6;
                for j in 0..f.param_dim() {
                    let mut a = th0.clone();
                    let mut b = th0.clone();
                    a[j] += h;
                    b[j] -= h;
                    let fd0 = (twr_losses(&f, &a, &th1, &data, &w, &idx, loss).unwrap().0
                        - twr_losses(&f, &b, &th1, &data, &w, &idx, loss).unwrap().0)
                        / (2.0 * h);
                    let mut a = th1.clone();
                    let mut b = th1.clone();
                    a[j] += h;
                    b[j] -= h;
                    let fd1 = (twr_losses(&f, &th0, &a, &data, &w, &idx, loss).unwrap().1
                        - twr_losses(&f, &th0, &b, &data, &w, &idx, loss).unwrap().1)
                        / (2.0 * h);
                    for (g, fd) in [(g0[j], fd0), (g1[j], fd1)] {
                        assert!((g - fd).abs() <= 1e-4 * fd.abs().max(1e-3), "{loss:?} j={j}: {g} vs {fd}");
                    }
                }
            }
        }
    }
}

#[test]
fn zero_weights_give_zero_gradients() {
    let f = iid1();
    let data = random_data(&f, 5, &mut rng_from_seed(1));
    let w = weights(1e4, 1.0, -2e4);
    assert_eq!((w.pre(3), w.post(3)), (0.0, 0.0));
    let (g0, g1) = twr_loss_grads(&f, &[0.3], &[-0.2], &data, &w, &[0, 1, 4], LossKind::Kl).unwrap();
    assert_eq!((g0[0], g1[0]), (0.0, 0.0));
}

#[test]
fn kl_loss_reduces_to_weighted_score() {
    let f = KernelFamily::new(KernelSpec::mlp_gaussian(2, 3, 5)).unwrap();
    let data = random_data(&f, 4, &mut rng_from_seed(2));
    let (th0, th1) = ([0.1, -0.3, 0.2], [0.5, 0.0, -0.4]);
    let w = weights(2.0, 1.5, 0.0);
    let (g0, g1) = twr_loss_grads(&f, &th0, &th1, &data, &w, &[3], LossKind::Kl).unwrap();
    let s0 = f.grad_log_density(&th0, &data[3].state, &data[3].next).unwrap();
    let s1 = f.grad_log_density(&th1, &data[3].state, &data[3].next).unwrap();
    for j in 0..3 {
        assert!((g0[j] + w.pre(3) * s0[j]).abs() < 1e-14);
        assert!((g1[j] - w.post(3) * s1[j]).abs() < 1e-14);
    }
}

#[test]
fn empty_or_out_of_range_indices_are_rejected() {
    let f = iid1();
    let data = random_data(&f, 3, &mut rng_from_seed(0));
    let w = weights(1.0, 1.0, 0.0);
    assert!(twr_loss_grads(&f, &[0.0], &[0.0], &data, &w, &[], LossKind::Kl).is_err());
    assert!(twr_loss_grads(&f, &[0.0], &[0.0], &data, &w, &[3], LossKind::Kl).is_err());
}

#[test]
fn all_pre_change_weights_recover_the_unweighted_objective() {
    let f = KernelFamily::new(KernelSpec::mlp_gaussian(2, 2, 8)).unwrap();
    let data = random_data(&f, 50, &mut rng_from_seed(4));
    let t = data.len() as f64;
    let w = weights(t + 1000.0, 10.0, 0.0);
    let idx: Vec<usize> = (0..50).collect();
    assert!(idx.iter().all(|&i| w.pre(i) >= 1.0 - 1e-6));
    let (th0, th1) = ([0.2, -0.1], [-0.3, 0.4]);
    let (weighted, _) = twr_losses(&f, &th0, &th1, &data, &w, &idx, LossKind::Kl).unwrap();
    let plain: f64 = data
        .iter()
        .map(|tr| f.log_density(&th1, &tr.state, &tr.next).unwrap() - f.log_density(&th0, &tr.state, &tr.next).unwrap())
        .sum();
    assert!((weighted - plain).abs() <= 1e-6 * plain.abs());
}

#[test]
fn shift_modes_move_pre_weights_in_opposite_directions() {
    let f = iid1();
    let cfg = |mode| TwrConfig { pre_shift: mode, n_epochs: 0, ..TwrConfig::default() };
    let mut a = TwrDetector::new(f.clone(), cfg(PreShift::Delayed), rng_from_seed(0)).unwrap();
    let mut b = TwrDetector::new(f, cfg(PreShift::Translated), rng_from_seed(0)).unwrap();
    for det in [&mut a, &mut b] {
        det.state.t = 100;
        det.state.delta = 5;
    }
    let (wa, wb) = (a.weights(0.5).unwrap(), b.weights(0.5).unwrap());
    let unshifted = wa.posterior.pre_weight(90.0, 0.0);
    assert!(wa.pre(90) < unshifted && wb.pre(90) > unshifted);
    assert_eq!(wa.pre(90), wa.posterior.pre_weight(95.0, 0.0));
    assert_eq!(wb.pre(90), wb.posterior.pre_weight(85.0, 0.0));
}

#[test]
fn no_op_configuration_never_fires() {
    let f = iid1();
    let stream = generate(&f, &ChangeSpec::single(p(0.0), p(3.0), 50, 200, vec![0.0]), 1)
        .unwrap()
        .transitions();
    let cfg = TwrConfig {
        n_epochs: 0,
        penalty: 0.0,
        anneal: 0.0,
        theta0_init: Some(p(0.7)),
        theta1_init: Some(p(0.7)),
        ..TwrConfig::default()
    };
    let mut det = TwrDetector::new(f, cfg, rng_from_seed(0)).unwrap();
    let path = run_levels(&mut det, &stream, 200, None, true).unwrap();
    assert!(path.levels.iter().all(|&l| l == 0.0));
    assert!(path.trace.unwrap().iter().all(|r| r.llr == 0.0 && r.p0 == Some(1.0)));
}

#[test]
fn unoptimized_parameters_drive_the_raw_llr() {
    let f = iid1();
    let cfg = TwrConfig {
        n_epochs: 0,
        penalty: 0.0,
        anneal: 0.0,
        theta0_init: Some(p(0.0)),
        theta1_init: Some(p(1.0)),
        ..TwrConfig::default()
    };
    let mut det = TwrDetector::new(f, cfg, rng_from_seed(0)).unwrap();
    let rec = det.step(&Transition { state: vec![0.0], next: vec![1.0] }).unwrap();
    assert!((rec.llr - 0.5).abs() < 1e-15);
    assert_eq!(rec.llr_penalized, rec.llr);
    assert_eq!(rec.statistic, rec.llr);
}

fn mlp_trace(cfg: TwrConfig, seed: u64) -> Vec<StepRecord> {
    let f = Arc::new(KernelFamily::new(KernelSpec::mlp_gaussian(2, 2, 3)).unwrap());
    let spec = ChangeSpec::single(ParamVec::from(vec![0.0, 0.0]), ParamVec::from(vec![1.5, -1.0]), 60, 120, vec![0.0; 2]);
    let stream = generate(&f, &spec, seed).unwrap().transitions();
    let mut det = TwrDetector::new(f, cfg, rng_from_seed(seed)).unwrap();
    run_levels(&mut det, &stream, 120, None, true).unwrap().trace.unwrap()
}

#[test]
fn annealing_bookkeeping_is_exact() {
    let cfg = TwrConfig { n_epochs: 2, ..TwrConfig::default() };
    let eps = cfg.anneal;
    let trace = mlp_trace(cfg, 5);
    let (mut delta, mut p0, mut d_bar) = (0, 1.0f64, 0.0f64);
    for r in &trace {
        let kl = r.kl_estimate.unwrap();
        if kl > d_bar {
            delta += 1;
            p0 = (p0 - eps).max(0.0);
        }
        let t = r.t as f64;
        d_bar = (t - 1.0) / t * d_bar + kl / t;
        assert_eq!(r.delta, Some(delta));
        assert_eq!(r.p0, Some(p0));
        assert_eq!(r.d_bar, Some(d_bar));
    }
    assert!(delta > 0);
}

#[test]
fn zero_anneal_keeps_p0_at_one() {
    let cfg = TwrConfig { n_epochs: 1, anneal: 0.0, anneal_shift: false, ..TwrConfig::default() };
    assert!(mlp_trace(cfg, 2).iter().all(|r| r.p0 == Some(1.0) && r.delta == Some(0)));
}

#[test]
fn penalized_llr_respects_its_bounds() {
    let trace = mlp_trace(TwrConfig { n_epochs: 2, ..TwrConfig::default() }, 9);
    for r in &trace {
        assert!(r.llr_penalized >= -1.5);
        assert!(r.llr_penalized <= r.llr.max(-1.5));
    }
}

#[test]
fn floor_applies_under_default_settings() {
    let cfg = TwrConfig::default();
    assert_eq!(cfg.penalize(-1.4, 0.5), -1.5);
    assert_eq!(cfg.penalize(-1.0, 0.5), -1.2);
    assert_eq!(cfg.penalize(2.0, 0.5), 2.0 - 0.2);
    assert_eq!(cfg.penalize(0.0, 0.0), -1.5);
}

#[test]
fn runs_are_deterministic() {
    let cfg = TwrConfig { n_epochs: 2, ..TwrConfig::default() };
    assert_eq!(mlp_trace(cfg.clone(), 4), mlp_trace(cfg, 4));
}

#[test]
fn reset_restarts_the_origin() {
    let f = iid1();
    let stream = generate(&f, &ChangeSpec::no_change(p(0.0), 30, vec![0.0]), 0).unwrap().transitions();
    let mut det = TwrDetector::new(f, TwrConfig { n_epochs: 1, ..TwrConfig::default() }, rng_from_seed(0)).unwrap();
    for tr in &stream {
        det.step(tr).unwrap();
    }
    let theta1 = det.state().theta1.clone();
    det.reset_for_next_change();
    let s = det.state().clone();
    assert_eq!((s.t, s.delta, s.p0, s.d_bar, s.buffer.len()), (0, 0, 1.0, 0.0, 0));
    assert_eq!(s.statistic.value(), 0.0);
    assert_eq!(s.theta0, theta1);
    assert_eq!(s.theta1, theta1);
    det.reset_for_next_change();
    assert_eq!(det.state(), &s);
    let rec = det.step(&stream[0]).unwrap();
    assert_eq!(rec.t, 1);
}

#[test]
fn invalid_configs_are_rejected() {
    let f = iid1();
    for cfg in [
        TwrConfig { l_min: 0.0, ..TwrConfig::default() },
        TwrConfig { alpha: 1.0, ..TwrConfig::default() },
        TwrConfig { penalty: -0.1, ..TwrConfig::default() },
        TwrConfig { theta0_init: Some(ParamVec::zeros(2)), ..TwrConfig::default() },
    ] {
        assert!(TwrDetector::new(f.clone(), cfg, rng_from_seed(0)).is_err());
    }
}

proptest! {
    #[test]
    fn anneal_is_monotone(seed in 0u64..1000) {
        let f = iid1();
        let stream = generate(&f, &ChangeSpec::single(p(0.0), p(1.0), 20, 40, vec![0.0]), seed).unwrap().transitions();
        let mut det = TwrDetector::new(f, TwrConfig { n_epochs: 1, anneal: 0.05, ..TwrConfig::default() }, rng_from_seed(seed)).unwrap();
        let trace = run_levels(&mut det, &stream, 40, None, true).unwrap().trace.unwrap();
        let mut last = (0usize, 1.0f64);
        for r in trace {
            let (d, p0) = (r.delta.unwrap(), r.p0.unwrap());
            prop_assert!(d == last.0 || d == last.0 + 1);
            prop_assert!(p0 <= last.1 && (0.0..=1.0).contains(&p0));
            if d > last.0 {
                prop_assert_eq!(p0, (last.1 - 0.05).max(0.0));
            }
            last = (d, p0);
        }
    }
}
