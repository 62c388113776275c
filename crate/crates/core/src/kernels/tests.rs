use std::f64::consts::PI;

use super::*;
use crate::rng::{rng_from_seed, SimRng};
use proptest::{prop_assert, proptest};

fn iid(dim: usize) -> KernelFamily {
    KernelFamily::new(KernelSpec::iid_gaussian_mean(dim, 1.0)).unwrap()
}

fn desk_mlp(seed: u64) -> KernelFamily {
    KernelFamily::new(KernelSpec::mlp_gaussian(4, 4, seed)).unwrap()
}

fn normal_vec(rng: &mut SimRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Central finite differences of the log-density in θ.
fn fd_grad(f: &KernelFamily, theta: &[f64], state: &[f64], x: &[f64], h: f64) -> Vec<f64> {
    (0..theta.len())
        .map(|i| {
            let mut p = theta.to_vec();
            let mut m = theta.to_vec();
            p[i] += h;
            m[i] -= h;
            (f.log_density(&p, state, x).unwrap() - f.log_density(&m, state, x).unwrap()) / (2.0 * h)
        })
        .collect()
}

fn assert_grad_close(analytic: &[f64], numeric: &[f64]) {
    for (a, n) in analytic.iter().zip(numeric) {
        let tol = (1e-4 * a.abs()).max(1e-7);
        assert!((a - n).abs() <= tol, "analytic {a} vs finite-difference {n}");
    }
}

#[test]
fn iid_conditional_is_identity_parameterized() {
    let f = iid(1);
    let c = f.conditional(&[0.0], &[3.7]).unwrap();
    assert_eq!(c.mean, vec![0.0]);
    assert_eq!(c.std, vec![1.0]);
}

#[test]
fn linear_ar_zero_map_has_zero_mean() {
    let f = KernelFamily::new(KernelSpec::linear_gaussian_ar(2, 0.5)).unwrap();
    let c = f.conditional(&[0.0; 6], &[5.0, -2.0]).unwrap();
    assert_eq!(c.mean, vec![0.0, 0.0]);
    assert_eq!(c.std, vec![0.5, 0.5]);
}

#[test]
fn mlp_golden_values_at_origin() {
    let f = desk_mlp(7);
    let c = f.conditional(&[0.0; 4], &[0.0; 4]).unwrap();
    for i in 0..4 {
        assert!((c.mean[i] - GOLDEN_MEAN[i]).abs() < 1e-12, "mean[{i}] = {:e}", c.mean[i]);
        assert!((c.std[i] - GOLDEN_STD[i]).abs() < 1e-12, "std[{i}] = {:e}", c.std[i]);
    }
}

// Snapshot of the seed-7 desk-scale construction at θ = 0, x = 0.
const GOLDEN_MEAN: [f64; 4] = [0.19118507584818228, 0.28981792203257917, 0.04731418292914343, -0.042804526951065444];
const GOLDEN_STD: [f64; 4] = [0.6732843570325723, 0.7317813327905394, 0.76622268115835, 0.7560114167636656];

#[test]
fn reconstruction_is_bit_identical() {
    let a = desk_mlp(11);
    let b = desk_mlp(11);
    assert_eq!(a, b);
    let mut rng = rng_from_seed(1);
    for _ in 0..20 {
        let theta = normal_vec(&mut rng, 4);
        let x = normal_vec(&mut rng, 4);
        let ca = a.conditional(&theta, &x).unwrap();
        let cb = b.conditional(&theta, &x).unwrap();
        assert_eq!(ca.mean.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), cb.mean.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(ca.std.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), cb.std.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
    assert_ne!(desk_mlp(12), a);
}

#[test]
fn standard_normal_log_density_at_mode() {
    let f = iid(1);
    let ll = f.log_density(&[0.0], &[0.0], &[0.0]).unwrap();
    assert!((ll - (-0.5 * (2.0 * PI).ln())).abs() < 1e-15);
    assert!((ll + 0.918939).abs() < 1e-6);
    let f2 = iid(2);
    let ll2 = f2.log_density(&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
    assert!((ll2 - 2.0 * ll).abs() < 1e-15);
}

#[test]
fn mlp_density_integrates_to_one() {
    let mut spec = KernelSpec::mlp_gaussian(1, 3, 5);
    spec.widths = vec![8, 8];
    let f = KernelFamily::new(spec).unwrap();
    let mut rng = rng_from_seed(9);
    for _ in 0..5 {
        let theta = normal_vec(&mut rng, 3);
        let state = normal_vec(&mut rng, 1);
        let c = f.conditional(&theta, &state).unwrap();
        let (m, s) = (c.mean[0], c.std[0]);
        let n = 20_000;
        let (lo, hi) = (m - 8.0 * s, m + 8.0 * s);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for k in 0..=n {
            let x = lo + k as f64 * h;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            total += w * f.log_density(&theta, &state, &[x]).unwrap().exp();
        }
        total *= h;
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }
}

#[test]
fn iid_gradient_closed_form() {
    let f = iid(1);
    let g = f.grad_log_density(&[0.0], &[0.0], &[1.0]).unwrap();
    assert_eq!(&g[..], &[1.0]);
}

#[test]
fn gradient_vanishes_at_mode_when_std_is_fixed() {
    let f = KernelFamily::new(KernelSpec::linear_gaussian_ar(2, 0.7)).unwrap();
    let theta = [0.3, -0.1, 0.2, 0.4, 1.0, -1.0];
    let state = [0.5, 2.0];
    let c = f.conditional(&theta, &state).unwrap();
    let g = f.grad_log_density(&theta, &state, &c.mean).unwrap();
    assert!(g.iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn gradients_match_finite_differences_for_every_family() {
    let mut ar2 = KernelSpec::linear_gaussian_ar(2, 0.8);
    ar2.window = 2;
    ar2.param_dim = 2 * 4 + 2;
    let mut relu = KernelSpec::mlp_gaussian(3, 2, 4);
    relu.activation = Activation::Relu;
    let families = [
        KernelFamily::new(KernelSpec::iid_gaussian_mean(3, 0.7)).unwrap(),
        KernelFamily::new(KernelSpec::linear_gaussian_ar(2, 0.8)).unwrap(),
        KernelFamily::new(ar2).unwrap(),
        desk_mlp(7),
        KernelFamily::new(relu).unwrap(),
    ];
    let mut rng = rng_from_seed(2024);
    for f in &families {
        for _ in 0..100 {
            let theta = normal_vec(&mut rng, f.param_dim());
            let state = normal_vec(&mut rng, f.state_dim());
            let x = normal_vec(&mut rng, f.obs_dim());
            let g = f.grad_log_density(&theta, &state, &x).unwrap();
            assert_grad_close(&g, &fd_grad(f, &theta, &state, &x, 1e-5));
        }
    }
}

#[test]
fn degenerate_noise_samples_at_the_mean() {
    let mut spec = KernelSpec::iid_gaussian_mean(2, 1e-9);
    spec.varsigma_min = 1e-9;
    let f = KernelFamily::new(spec).unwrap();
    let mut rng = rng_from_seed(0);
    let x = f.sample(&[1.5, -2.0], &[0.0, 0.0], &mut rng).unwrap();
    assert!((x[0] - 1.5).abs() < 6e-9 && (x[1] + 2.0).abs() < 6e-9);
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let f = desk_mlp(3);
    let a = f.sample(&[0.1; 4], &[0.2; 4], &mut rng_from_seed(5)).unwrap();
    let b = f.sample(&[0.1; 4], &[0.2; 4], &mut rng_from_seed(5)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sample_moments_match_standard_normal() {
    let f = iid(1);
    let mut rng = rng_from_seed(77);
    let n = 100_000;
    let xs: Vec<f64> = (0..n).map(|_| f.sample(&[0.0], &[0.0], &mut rng).unwrap()[0]).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!(mean.abs() < 0.02);
    assert!((var.sqrt() - 1.0).abs() < 0.02);
}

#[test]
fn kl_closed_form_cases() {
    let f = iid(1);
    assert_eq!(f.kl_conditional(&[0.3], &[0.3], &[0.0]).unwrap(), 0.0);
    assert!((f.kl_conditional(&[0.0], &[1.0], &[0.0]).unwrap() - 0.5).abs() < 1e-15);
}

proptest! {
    #[test]
    fn kl_is_nonnegative(seed in 0u64..1000) {
        let f = desk_mlp(seed % 7);
        let mut rng = rng_from_seed(seed);
        let a = normal_vec(&mut rng, 4);
        let b = normal_vec(&mut rng, 4);
        let x = normal_vec(&mut rng, 4);
        let kl = f.kl_conditional(&a, &b, &x).unwrap();
        prop_assert!(kl >= 0.0);
        prop_assert!(f.kl_conditional(&a, &a, &x).unwrap().abs() < 1e-12);
    }

    #[test]
    fn conditional_std_respects_floor(seed in 0u64..500) {
        let f = desk_mlp(seed);
        let mut rng = rng_from_seed(seed);
        let theta: Vec<f64> = normal_vec(&mut rng, 4).iter().map(|v| 30.0 * v).collect();
        let x = normal_vec(&mut rng, 4);
        let c = f.conditional(&theta, &x).unwrap();
        prop_assert!(c.std.iter().all(|&s| s >= f.spec().varsigma_min));
    }
}

#[test]
fn kl_rate_of_iid_family_is_x_independent() {
    let f = iid(2);
    let base: Vec<Vec<f64>> = vec![vec![0.0, 1.0], vec![5.0, -3.0], vec![2.0, 2.0]];
    let rate = f
        .kl_rate_estimate(&[0.0, 0.0], &[1.0, 0.5], base.iter().map(Vec::as_slice))
        .unwrap();
    let exact = f.kl_conditional(&[0.0, 0.0], &[1.0, 0.5], &[9.0, 9.0]).unwrap();
    assert!((rate - exact).abs() < 1e-15);
    let zero = f.kl_rate_estimate(&[1.0, 0.5], &[1.0, 0.5], base.iter().map(Vec::as_slice)).unwrap();
    assert_eq!(zero, 0.0);
    let empty: Vec<&[f64]> = Vec::new();
    assert!(matches!(f.kl_rate_estimate(&[0.0, 0.0], &[0.0, 0.0], empty), Err(crate::Error::InvalidArgument(_))));
}

#[test]
fn kl_rate_matches_stationary_linear_gaussian_value() {
    let sigma = 0.8;
    let f = KernelFamily::new(KernelSpec::linear_gaussian_ar(1, sigma)).unwrap();
    let (a_a, b_a) = (0.6, 0.5);
    let (a_b, b_b) = (0.3, 0.9);
    let mut rng = rng_from_seed(31);
    let mut state = f.stationary_warmup(&[a_a, b_a], &[0.0], 500, &mut rng).unwrap();
    let mut base = Vec::with_capacity(100_000);
    for _ in 0..100_000 {
        base.push(state.clone());
        let x = f.sample(&[a_a, b_a], &state, &mut rng).unwrap();
        push_observation(&mut state, &x);
    }
    let est = f.kl_rate_estimate(&[a_a, b_a], &[a_b, b_b], base.iter().map(Vec::as_slice)).unwrap();
    // Stationary law of the θa chain: N(b/(1-a), σ²/(1-a²)).
    let m = b_a / (1.0 - a_a);
    let v = sigma * sigma / (1.0 - a_a * a_a);
    let (da, db) = (a_a - a_b, b_a - b_b);
    let exact = ((da * m + db).powi(2) + da * da * v) / (2.0 * sigma * sigma);
    assert!((est / exact - 1.0).abs() < 0.05, "estimate {est} vs analytic {exact}");
}

#[test]
fn warmup_with_zero_steps_is_identity() {
    let f = desk_mlp(1);
    let s = f.stationary_warmup(&[0.0; 4], &[0.25; 4], 0, &mut rng_from_seed(0)).unwrap();
    assert_eq!(s, vec![0.25; 4]);
}

/// Solves `(I - A⊗A) vec(P) = σ² vec(I)` for the stationary covariance.
fn lyapunov_2d(a: [[f64; 2]; 2], sigma: f64) -> [[f64; 2]; 2] {
    let mut m = [[0.0; 5]; 4];
    for i in 0..2 {
        for j in 0..2 {
            let row = 2 * i + j;
            for k in 0..2 {
                for l in 0..2 {
                    let col = 2 * k + l;
                    m[row][col] = if row == col { 1.0 } else { 0.0 } - a[i][k] * a[j][l];
                }
            }
            m[row][4] = if i == j { sigma * sigma } else { 0.0 };
        }
    }
    for c in 0..4 {
        let p = (c..4).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, p);
        for r in 0..4 {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..5 {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    let v: Vec<f64> = (0..4).map(|r| m[r][4] / m[r][r]).collect();
    [[v[0], v[1]], [v[2], v[3]]]
}

#[test]
fn warmup_reaches_lyapunov_stationary_variance() {
    let sigma = 0.5;
    let f = KernelFamily::new(KernelSpec::linear_gaussian_ar(2, sigma)).unwrap();
    let a = [[0.5, 0.2], [-0.3, 0.4]];
    let theta = [a[0][0], a[0][1], a[1][0], a[1][1], 0.0, 0.0];
    let p = lyapunov_2d(a, sigma);
    let mut rng = rng_from_seed(8);
    let runs = 20_000;
    let (mut s0, mut s1) = (0.0, 0.0);
    for _ in 0..runs {
        let x = f.stationary_warmup(&theta, &[0.0, 0.0], 40, &mut rng).unwrap();
        s0 += x[0] * x[0];
        s1 += x[1] * x[1];
    }
    let (v0, v1) = (s0 / runs as f64, s1 / runs as f64);
    assert!((v0 / p[0][0] - 1.0).abs() < 0.05, "{v0} vs {}", p[0][0]);
    assert!((v1 / p[1][1] - 1.0).abs() < 0.05, "{v1} vs {}", p[1][1]);
}

#[test]
fn dimension_mismatch_is_rejected() {
    let f = desk_mlp(0);
    assert!(matches!(f.conditional(&[0.0; 3], &[0.0; 4]), Err(crate::Error::InvalidArgument(_))));
    assert!(matches!(f.log_density(&[0.0; 4], &[0.0; 4], &[0.0; 2]), Err(crate::Error::InvalidArgument(_))));
    assert!(KernelFamily::new(KernelSpec { param_dim: 3, ..KernelSpec::iid_gaussian_mean(2, 1.0) }).is_err());
}

#[test]
fn spec_json_round_trips_bit_exactly() {
    let mut spec = KernelSpec::mlp_gaussian(4, 4, 99);
    spec.sigma = 0.1 + 0.2;
    spec.varsigma_min = 1.0e-3 / 3.0;
    let json = serde_json::to_string(&spec).unwrap();
    assert!(json.contains("\"kind\":\"mlp-gaussian\""));
    let back: KernelSpec = serde_json::from_str(&json).unwrap();
    assert_eq!(back, spec);
    assert_eq!(back.sigma.to_bits(), spec.sigma.to_bits());
    assert_eq!(back.varsigma_min.to_bits(), spec.varsigma_min.to_bits());
    let minimal: KernelSpec = serde_json::from_str(r#"{"kind":"iid-gaussian-mean","obs_dim":1,"param_dim":1}"#).unwrap();
    assert_eq!(minimal.window, 1);
    assert_eq!(minimal.varsigma_min, 1e-3);
}

#[test]
fn push_observation_shifts_the_window() {
    let mut s = vec![1.0, 2.0, 3.0, 4.0];
    push_observation(&mut s, &[5.0, 6.0]);
    assert_eq!(s, vec![3.0, 4.0, 5.0, 6.0]);
}
