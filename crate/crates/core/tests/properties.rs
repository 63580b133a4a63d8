use proptest::prelude::*;

use mu_estimate::estimator::{gamma_to_mu, stable_window, LogLogFit, MuFromGamma};
use mu_estimate::exec::{dist, dot, norm, Execution};
use mu_estimate::landweber::{landweber_run, LandweberConfig, StepSize};
use mu_estimate::operator::{DenseMatrix, LinearOperator, DEFAULT_SVD_FLOOR};
use mu_estimate::problems::{add_noise, make_deriv2, make_power_law, ProblemSpec};
use mu_estimate::validation::{
    apriori_alpha, tikhonov_solve, tikhonov_solve_iterative, verify_smoothness,
};
use mu_estimate::{estimate_track, EstimatorConfig};

fn unit() -> impl Strategy<Value = f64> {
    -1.0f64..1.0
}

fn dense(max: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1..=max, 1..=max)
        .prop_flat_map(|(m, n)| (Just(m), Just(n), prop::collection::vec(unit(), m * n)))
}

fn sigmas(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, 1..=max).prop_map(|mut v| {
        v.sort_by(|a, b| b.total_cmp(a));
        v
    })
}

fn diagonal_problem(sig: Vec<f64>, x: Vec<f64>) -> ProblemSpec {
    let op = LinearOperator::diagonal(sig).unwrap();
    let y_clean = op.apply(&x).unwrap();
    ProblemSpec {
        operator: op,
        x_true: Some(x),
        y_clean,
        mu_exact: None,
        source_w: None,
        label: "random diagonal".into(),
        params: Default::default(),
    }
}

fn run(p: &ProblemSpec, iters: usize) -> mu_estimate::IterationTrace {
    let cfg = LandweberConfig {
        step: StepSize::Auto,
        max_iters: iters,
        ..Default::default()
    };
    landweber_run(p, &p.y_clean, &cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjoint_consistency((m, n, data) in dense(8), seed in any::<u64>()) {
        let op = LinearOperator::dense(DenseMatrix::from_row_major(m, n, data).unwrap());
        let x: Vec<f64> = (0..n).map(|i| ((seed.wrapping_add(i as u64) % 17) as f64 - 8.0) / 8.0).collect();
        let y: Vec<f64> = (0..m).map(|i| ((seed.wrapping_mul(3).wrapping_add(i as u64) % 13) as f64 - 6.0) / 6.0).collect();
        let ax = op.apply(&x).unwrap();
        let aty = op.apply_adjoint(&y).unwrap();
        let scale = norm(&ax) * norm(&y) + norm(&x) * norm(&aty);
        prop_assert!((dot(&ax, &y) - dot(&x, &aty)).abs() <= 1e-12 * scale.max(1e-300));
    }

    #[test]
    fn norm_dominates_every_image((m, n, data) in dense(8), x in prop::collection::vec(unit(), 8)) {
        let op = LinearOperator::dense(DenseMatrix::from_row_major(m, n, data).unwrap());
        let x = &x[..n];
        let a = op.operator_norm(1e-12, 100_000).unwrap();
        prop_assert!(norm(&op.apply(x).unwrap()) <= a * norm(x) * (1.0 + 1e-8) + 1e-300);
    }

    #[test]
    fn svd_reconstructs_operator((m, n, data) in dense(6)) {
        let op = LinearOperator::dense(DenseMatrix::from_row_major(m, n, data.clone()).unwrap());
        let sd = op.svd(0.0).unwrap();
        for w in sd.sigmas.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        let mut rebuilt = vec![0.0; m * n];
        for (i, s) in sd.sigmas.iter().enumerate() {
            let u = sd.left.vector(i);
            let v = sd.right.vector(i);
            for r in 0..m {
                for c in 0..n {
                    rebuilt[r * n + c] += s * u[r] * v[c];
                }
            }
        }
        let scale = norm(&data).max(1.0);
        prop_assert!(dist(&rebuilt, &data) <= 1e-10 * scale);
        // orthonormal singular vectors
        for i in 0..sd.rank() {
            for j in 0..sd.rank() {
                let e = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot(&sd.left.vector(i), &sd.left.vector(j)) - e).abs() < 1e-10);
                prop_assert!((dot(&sd.right.vector(i), &sd.right.vector(j)) - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn landweber_trace_invariants(sig in sigmas(40), seed in any::<u64>()) {
        let n = sig.len();
        let x: Vec<f64> = (0..n).map(|i| 1.0 + ((seed >> (i % 60)) & 7) as f64).collect();
        let p = diagonal_problem(sig, x);
        let t = run(&p, 200);
        let a = t.operator_norm;
        let errors = t.errors.as_ref().unwrap();
        // round-off floor once the iteration has resolved the data
        let floor = 1e-12 * norm(p.x_true.as_ref().unwrap());
        for (k, e) in errors.iter().enumerate().take(t.usable_len()) {
            let (r, g) = (t.residuals[k], t.gradient_norms[k]);
            prop_assert!(g <= a * r * (1.0 + 1e-10) + a * floor);
            prop_assert!(t.lower_bounds[k] <= e * (1.0 + 1e-10) + floor);
            if k > 0 {
                prop_assert!(r <= t.residuals[k - 1] * (1.0 + 1e-12) + floor);
            }
        }
    }

    #[test]
    fn diagonal_trace_matches_filter_factors(sig in sigmas(30), beta in 0.1f64..1.0) {
        let n = sig.len();
        let x: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let p = diagonal_problem(sig.clone(), x.clone());
        let cfg = LandweberConfig { step: StepSize::Fixed(beta), max_iters: 40, ..Default::default() };
        let t = landweber_run(&p, &p.y_clean, &cfg).unwrap();
        // Ax - y cancels; absolute error is a few ulps of ‖y‖
        let floor = 1e-13 * norm(&p.y_clean);
        for k in 0..t.usable_len() {
            let r2: f64 = sig.iter().zip(&x)
                .map(|(s, xi)| (s * xi).powi(2) * (1.0 - beta * s * s).powi(2 * (k as i32 + 1)))
                .sum();
            prop_assert!((t.residuals[k] - r2.sqrt()).abs() <= 1e-10 * r2.sqrt() + floor);
        }
    }

    #[test]
    fn scaling_data_scales_norms(sig in sigmas(20), s in 0.1f64..10.0) {
        let n = sig.len();
        let x: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let base = diagonal_problem(sig.clone(), x.clone());
        let scaled = diagonal_problem(sig, x.iter().map(|v| v * s).collect());
        let (a, b) = (run(&base, 60), run(&scaled, 60));
        let floor = 1e-12 * s * norm(&base.y_clean);
        for k in 0..a.usable_len().min(b.usable_len()) {
            prop_assert!((b.residuals[k] - s * a.residuals[k]).abs() <= 1e-10 * s * a.residuals[k] + floor);
            prop_assert!((b.gradient_norms[k] - s * a.gradient_norms[k]).abs() <= 1e-10 * s * a.gradient_norms[k] + floor);
        }
    }

    #[test]
    fn regression_recovers_exact_power_law(gamma in 1.05f64..3.0, logc in -5.0f64..5.0, n in 3usize..60) {
        let mut fit = LogLogFit::default();
        for i in 0..n {
            let x = -(i as f64) * 0.3;
            fit.push(x, gamma * x + logc);
        }
        let f = fit.fit().unwrap();
        prop_assert!((f.gamma - gamma).abs() < 1e-9);
        prop_assert!((f.intercept - logc).abs() < 1e-9);
    }

    #[test]
    fn regression_slope_survives_rescaling(gamma in 1.05f64..3.0, scale in -20.0f64..20.0) {
        let (mut a, mut b) = (LogLogFit::default(), LogLogFit::default());
        for i in 0..40 {
            let x = -(i as f64) * 0.25;
            let y = gamma * x + 0.1 * (i as f64 * 1.7).sin();
            a.push(x, y);
            b.push(x + scale, y + gamma * scale);
        }
        prop_assert!((a.fit().unwrap().gamma - b.fit().unwrap().gamma).abs() < 1e-8);
    }

    #[test]
    fn gamma_mu_round_trip(mu in 0.001f64..50.0) {
        let gamma = (2.0 * mu + 2.0) / (2.0 * mu + 1.0);
        match gamma_to_mu(gamma) {
            MuFromGamma::Finite(m) => prop_assert!((m - mu).abs() <= 1e-8 * mu.max(1.0)),
            other => prop_assert!(false, "unexpected {other:?}"),
        }
    }

    #[test]
    fn apriori_alpha_increases_with_noise(d1 in 1e-8f64..1.0, d2 in 1e-8f64..1.0, mu in 0.01f64..5.0) {
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(apriori_alpha(lo, mu) <= apriori_alpha(hi, mu));
    }

    #[test]
    fn tikhonov_direct_matches_cg(sig in sigmas(30), alpha in 1e-3f64..1.0) {
        let n = sig.len();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
        let p = diagonal_problem(sig, x);
        let a = tikhonov_solve(&p.operator, &p.y_clean, alpha).unwrap();
        let b = tikhonov_solve_iterative(&p.operator, &p.y_clean, alpha).unwrap();
        prop_assert!(dist(&a, &b) <= 1e-7 * norm(&a).max(1e-12));
    }

    #[test]
    fn noise_has_exact_level(level in 1e-4f64..0.2, seed in any::<u64>()) {
        let p = make_power_law(200, 2.0, 2.0).unwrap();
        let d = add_noise(&p, level, seed).unwrap();
        let target = level * norm(&p.y_clean);
        prop_assert!((dist(&d.y_delta, &p.y_clean) - target).abs() <= 1e-12 * target);
        prop_assert!((d.delta_abs - target).abs() <= 1e-12 * target);
        prop_assert_eq!(add_noise(&p, level, seed).unwrap(), d);
    }

    #[test]
    fn stable_window_respects_tolerances(
        mu in prop::collection::vec(0.0f64..1.0, 0..80),
        c in prop::collection::vec(0.5f64..2.0, 80),
        w_min in 1usize..10,
        eps_mu in 0.0f64..0.3,
        eps_c in 0.0f64..0.5,
    ) {
        let c = &c[..mu.len()];
        if let Some((a, b)) = stable_window(&mu, c, w_min, eps_mu, eps_c) {
            prop_assert!(b + 1 - a >= w_min);
            let w = &mu[a..=b];
            let wc = &c[a..=b];
            prop_assert!(w.iter().all(|m| *m > 0.0 && m.is_finite()));
            let spread = w.iter().copied().fold(f64::MIN, f64::max) - w.iter().copied().fold(f64::MAX, f64::min);
            prop_assert!(spread <= eps_mu);
            let ratio = wc.iter().copied().fold(f64::MIN, f64::max) / wc.iter().copied().fold(f64::MAX, f64::min);
            prop_assert!(ratio <= 1.0 + eps_c);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn admissible_set_is_downward_closed(eta in 0.8f64..3.0, beta in 0.8f64..3.0) {
        let p = make_power_law(2000, eta, beta).unwrap();
        let sd = p.operator.svd(DEFAULT_SVD_FLOOR).unwrap();
        let grid: Vec<f64> = (1..=30).map(|i| i as f64 * 0.05).collect();
        let v = verify_smoothness(&sd, &p.y_clean, &grid, 1.5, Execution::Sequential).unwrap();
        if let Some(first_bad) = v.admissible.iter().position(|a| !a) {
            prop_assert!(v.admissible[first_bad..].iter().all(|a| !a));
        }
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise(n in 8usize..96, seed in any::<u64>()) {
        let p = make_deriv2(n).unwrap();
        let noisy = add_noise(&p, 0.01, seed).unwrap();
        let cfg = LandweberConfig { max_iters: 150, ..Default::default() };
        let run_with = |exec| {
            let mut q = p.clone();
            q.operator = q.operator.with_execution(exec);
            landweber_run(&q, &noisy.y_delta, &cfg).unwrap()
        };
        let (s, par) = (run_with(Execution::Sequential), run_with(Execution::Parallel));
        prop_assert_eq!(&s.residuals, &par.residuals);
        prop_assert_eq!(&s.gradient_norms, &par.gradient_norms);
        let (ts, tp) = (
            estimate_track(&s, &EstimatorConfig::default()).unwrap(),
            estimate_track(&par, &EstimatorConfig::default()).unwrap(),
        );
        prop_assert_eq!(ts.mu_hat.map(f64::to_bits), tp.mu_hat.map(f64::to_bits));
        prop_assert_eq!(ts.verdict, tp.verdict);
    }
}
