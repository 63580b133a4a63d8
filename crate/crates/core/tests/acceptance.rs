//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mu_estimate::config::ExperimentConfig;
use mu_estimate::estimator::{
    detect_discretization_saturation, estimate_track, mu_to_model, rate_exponent, regress_prefix,
    EstimateTrack, EstimatorConfig, Verdict,
};
use mu_estimate::exec::{linear_fit, norm, Execution};
use mu_estimate::experiment;
use mu_estimate::io;
use mu_estimate::landweber::{landweber_run, IterationTrace, LandweberConfig};
use mu_estimate::operator::{DenseMatrix, DEFAULT_SVD_FLOOR};
use mu_estimate::problems::{
    add_noise, load_external, make_deriv2, make_exp_operator, make_exp_solution, make_gravity,
    make_power_law, ProblemSpec,
};
use mu_estimate::validation::{
    bound_curves, default_mu_grid, log_spaced_levels, rate_experiment, verify_smoothness,
    DEFAULT_GROWTH_THRESHOLD,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

const BENCHMARKS: [(f64, f64); 3] = [(1.0, 2.5), (2.0, 2.0), (3.0, 1.5)];

fn run_clean(p: &ProblemSpec, iters: usize) -> IterationTrace {
    let cfg = LandweberConfig {
        max_iters: iters,
        ..Default::default()
    };
    landweber_run(p, &p.y_clean, &cfg).expect("landweber run")
}

fn track(trace: &IterationTrace) -> EstimateTrack {
    estimate_track(trace, &EstimatorConfig::default()).expect("estimate track")
}

fn mu_hat_diag(eta: f64, beta: f64) -> Result<(f64, EstimateTrack), String> {
    let p = make_power_law(10_000, eta, beta).map_err(|e| e.to_string())?;
    let t = track(&run_clean(&p, 2000));
    let mu = t
        .mu_hat
        .ok_or_else(|| format!("no stable window for eta={eta}, beta={beta}"))?;
    Ok((mu, t))
}

fn criterion_1() -> Outcome {
    let mut parts = Vec::new();
    for (eta, beta) in BENCHMARKS {
        let exact = (2.0 * eta - 1.0) / (4.0 * beta);
        let (mu, t) = mu_hat_diag(eta, beta)?;
        ensure!(
            (mu - exact).abs() <= 0.05,
            "eta={eta}, beta={beta}: mu_hat {mu:.4} vs exact {exact:.4}"
        );
        ensure!(
            t.verdict == Verdict::Stable,
            "eta={eta}, beta={beta}: verdict {:?}",
            t.verdict
        );
        parts.push(format!("{mu:.4}/{exact:.4}"));
    }
    Ok(format!("mu_hat/exact = {}", parts.join(", ")))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for case in 0..20 {
        let eta = rng.random_range(0.6..3.0);
        let beta = rng.random_range(0.5..3.0);
        let n = rng.random_range(10..=1000);
        let k_max = rng.random_range(10..=200);
        let p = make_power_law(n, eta, beta).map_err(|e| e.to_string())?;
        let trace = run_clean(&p, k_max);
        let step = trace.step_beta;
        let sig = p.operator.diagonal_sigmas().unwrap();
        let x = p.x_true.as_ref().unwrap();
        let errors = trace.errors.as_ref().unwrap();
        ensure!(
            trace.len() == k_max,
            "case {case}: trace stopped early at {}",
            trace.len()
        );
        for k in 1..=k_max {
            let (mut r2, mut g2, mut e2) = (0.0, 0.0, 0.0);
            for (s, xi) in sig.iter().zip(x) {
                let f = (1.0 - step * s * s).powi(k as i32);
                let ei = xi * f;
                r2 += (s * ei).powi(2);
                g2 += (s * s * ei).powi(2);
                e2 += ei * ei;
            }
            for (got, want, what) in [
                (trace.residuals[k - 1], r2.sqrt(), "R"),
                (trace.gradient_norms[k - 1], g2.sqrt(), "G"),
                (errors[k - 1], e2.sqrt(), "error"),
            ] {
                let rel = (got - want).abs() / want;
                worst = worst.max(rel);
                ensure!(
                    rel <= 1e-10,
                    "case {case} (eta={eta:.3}, beta={beta:.3}, n={n}) k={k}: {what} rel. deviation {rel:e}"
                );
            }
        }
    }
    Ok(format!("20 cases, worst relative deviation {worst:.2e}"))
}

fn criterion_3() -> Outcome {
    let c = 0.7f64;
    let mut worst_orth = 0.0f64;
    for gamma in [1.1, 1.5, 1.9] {
        let r: Vec<f64> = (1..=60)
            .map(|i| (-0.15 * i as f64).exp() * (1.0 + 0.3 / i as f64))
            .collect();
        let g: Vec<f64> = r.iter().map(|r| c * r.powf(gamma)).collect();
        let t = IterationTrace::from_norms(r.clone(), g).unwrap();
        let f = regress_prefix(&t, r.len()).map_err(|e| e.to_string())?;
        ensure!(
            (f.gamma - gamma).abs() <= 1e-10,
            "gamma {gamma}: recovered {}",
            f.gamma
        );
        ensure!(
            (f.c() - c).abs() <= 1e-10,
            "gamma {gamma}: recovered c {}",
            f.c()
        );

        // perturbed data: the misfit must be orthogonal to both regressor columns
        let g: Vec<f64> = r
            .iter()
            .enumerate()
            .map(|(i, r)| c * r.powf(gamma) * (0.2 * (i as f64 * 1.7).sin()).exp())
            .collect();
        let t = IterationTrace::from_norms(r.clone(), g.clone()).unwrap();
        let f = regress_prefix(&t, r.len()).map_err(|e| e.to_string())?;
        let lx: Vec<f64> = r.iter().map(|v| v.ln()).collect();
        let misfit: Vec<f64> = lx
            .iter()
            .zip(&g)
            .map(|(x, g)| g.ln() - f.gamma * x - f.intercept)
            .collect();
        let me = norm(&misfit);
        let ones = vec![1.0; misfit.len()];
        for col in [&ones, &lx] {
            let rel = mu_estimate::exec::dot(&misfit, col).abs() / (me * norm(col));
            worst_orth = worst_orth.max(rel);
            ensure!(
                rel <= 1e-8,
                "gamma {gamma}: misfit not orthogonal ({rel:e})"
            );
        }
    }
    Ok(format!(
        "gamma in {{1.1, 1.5, 1.9}} exact; worst orthogonality {worst_orth:.1e}"
    ))
}

fn criterion_4() -> Outcome {
    let mut problems = Vec::new();
    for (eta, beta) in BENCHMARKS {
        problems.push(make_power_law(10_000, eta, beta).unwrap());
    }
    problems.push(make_exp_solution(10_000, 1.5).unwrap());
    problems.push(make_exp_operator(400, 2.0).unwrap());
    problems.push(make_deriv2(256).unwrap());
    problems.push(make_gravity(256, 0.25).unwrap());
    let mut checked = 0usize;
    for p in &problems {
        let t = run_clean(p, 2000);
        let errs = t.errors.as_ref().unwrap();
        for (k, (lb, e)) in t.lower_bounds.iter().zip(errs).enumerate() {
            ensure!(
                *lb <= e * (1.0 + 1e-12),
                "{}: k={} lower bound {lb:e} > error {e:e}",
                p.label,
                k + 1
            );
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} iterates over {} problems, no violation",
        problems.len()
    ))
}

fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).map_or(f64::NAN, |f| f.0)
}

fn criterion_5() -> Outcome {
    let p = make_power_law(10_000, 2.0, 2.0).unwrap();
    let trace = run_clean(&p, 2000);
    let mu = p.mu_exact.unwrap();
    let model = mu_to_model(mu, 1.0).unwrap();
    let b = bound_curves(&trace, &model, p.source_w_norm());
    let upper = b.upper.as_ref().unwrap();
    let errs = trace.errors.as_ref().unwrap();
    for k in 0..trace.len() {
        ensure!(
            b.lower[k] <= errs[k] * (1.0 + 1e-12),
            "k={}: lower > error",
            k + 1
        );
        ensure!(
            errs[k] <= upper[k] * (1.0 + 1e-6),
            "k={}: error {} > upper {}",
            k + 1,
            errs[k],
            upper[k]
        );
    }
    let end = track(&trace).saturation_k.map_or(trace.len(), |k| k - 1);
    let r = &trace.residuals[..end];
    let target = rate_exponent(mu);
    let slopes = [
        ("lower", log_slope(r, &b.lower[..end])),
        ("error", log_slope(r, &errs[..end])),
        ("upper", log_slope(r, &upper[..end])),
    ];
    for (name, s) in slopes {
        ensure!(
            (s - target).abs() <= 0.05,
            "{name} slope {s:.4} vs {target:.4}"
        );
    }
    Ok(format!(
        "sandwich holds at all {} iterates; slopes lower/error/upper = {:.4}/{:.4}/{:.4} vs 3/7",
        trace.len(),
        slopes[0].1,
        slopes[1].1,
        slopes[2].1
    ))
}

fn criterion_6() -> Outcome {
    for (mu, want) in [(0.13, 0.206), (0.2, 0.2857), (0.3, 0.375)] {
        let got = rate_exponent(mu);
        ensure!(
            (got - want).abs() < 5e-4,
            "mu={mu}: predicted {got:.4} vs {want}"
        );
    }
    let (mu_hat, _) = mu_hat_diag(2.0, 2.0)?;
    let p = make_power_law(10_000, 2.0, 2.0).unwrap();
    let levels = log_spaced_levels(0.1, 0.001, 10);
    let seeds: Vec<u64> = (0..5).collect();
    let r = rate_experiment(&p, mu_hat, &levels, &seeds, Execution::Parallel)
        .map_err(|e| e.to_string())?;
    let d = (r.observed_exponent - r.predicted_exponent).abs();
    ensure!(
        d <= 0.05,
        "observed {:.4} vs predicted {:.4} (|diff| {d:.4})",
        r.observed_exponent,
        r.predicted_exponent
    );
    Ok(format!(
        "mu_hat {mu_hat:.4}: observed {:.4} vs predicted {:.4}; table arithmetic 0.206/0.2857/0.375 ok",
        r.observed_exponent, r.predicted_exponent
    ))
}

fn criterion_7() -> Outcome {
    let p = make_exp_operator(400, 2.0).unwrap();
    let t = track(&run_clean(&p, 2000));
    ensure!(
        t.verdict == Verdict::UnstableSuspectViolation,
        "verdict {:?} (window {:?}, lower-bound cycles {})",
        t.verdict,
        t.stable_window,
        t.lower_bound_cycles
    );
    let sd = p.operator.svd(DEFAULT_SVD_FLOOR).unwrap();
    let v = verify_smoothness(
        &sd,
        &p.y_clean,
        &default_mu_grid(),
        DEFAULT_GROWTH_THRESHOLD,
        Execution::Parallel,
    )
    .map_err(|e| e.to_string())?;
    let admitted: Vec<f64> = v
        .mu_tested
        .iter()
        .zip(&v.admissible)
        .filter(|(_, a)| **a)
        .map(|(m, _)| *m)
        .collect();
    ensure!(admitted.is_empty(), "admissible mu values {admitted:?}");
    Ok(format!(
        "verdict unstable-suspect-violation ({} lower-bound cycles); 0 of {} tested mu admissible",
        t.lower_bound_cycles,
        v.mu_tested.len()
    ))
}

fn noisy_track(level: f64) -> Result<EstimateTrack, String> {
    let p = make_power_law(10_000, 2.0, 2.0).unwrap();
    let noisy = add_noise(&p, level, 0).map_err(|e| e.to_string())?;
    let cfg = LandweberConfig {
        max_iters: 2000,
        ..Default::default()
    };
    let trace = landweber_run(&p, &noisy.y_delta, &cfg).map_err(|e| e.to_string())?;
    estimate_track(&trace, &EstimatorConfig::default()).map_err(|e| e.to_string())
}

fn noise_clause(level: f64, lo: f64, hi: f64) -> Outcome {
    let t = noisy_track(level)?;
    let ks = t
        .noise_takeover_k
        .ok_or_else(|| format!("{level}: no noise takeover detected"))?;
    let i = t.k_values.partition_point(|&k| k < ks);
    let (mu_after, c_after) = (*t.mu_k.last().unwrap(), *t.c_k.last().unwrap());
    ensure!(
        i < t.mu_k.len() && mu_after < t.mu_k[i] && c_after > t.c_k[i],
        "{level}: after k*={ks} mu {:.3}->{mu_after:.3}, c {:.3e}->{c_after:.3e}",
        t.mu_k[i.min(t.mu_k.len() - 1)],
        t.c_k[i.min(t.c_k.len() - 1)]
    );
    let mu = t.mu_hat.ok_or_else(|| {
        format!("{level}: k*={ks}, but no stable window of >= 50 iterations before it")
    })?;
    ensure!(
        (lo..=hi).contains(&mu),
        "{level}: mu_hat {mu:.4} outside [{lo}, {hi}]"
    );
    Ok(format!(
        "{level}: mu_hat {mu:.4} in window {:?}, k*={ks}, mu_k falls to {mu_after:.3}, c_k rises",
        t.stable_window.unwrap()
    ))
}

fn criterion_8() -> Outcome {
    let fine = noise_clause(0.001, 0.3, 0.5);
    let coarse = noise_clause(0.01, 0.25, 0.45);
    match (coarse, fine) {
        (Ok(a), Ok(b)) => Ok(format!("{a}; {b}")),
        (a, b) => Err(format!(
            "{}; {}",
            a.unwrap_or_else(|e| format!("FAILED {e}")),
            b.unwrap_or_else(|e| format!("FAILED {e}"))
        )),
    }
}

fn criterion_9() -> Outcome {
    let cfg = EstimatorConfig::default();
    let band = (cfg.saturation_low, cfg.saturation_high);

    let coarse = make_power_law(1000, 2.0, 1.0).unwrap();
    let t = run_clean(&coarse, 2_000_000);
    let onset = detect_discretization_saturation(&t, cfg.saturation_window, band)
        .ok_or("n=1e3, K=2e6: no saturation detected")?;
    let r = &t.residuals[onset - 1..];
    let slope = log_slope(r, &t.lower_bounds[onset - 1..]);
    ensure!(
        (band.0..=band.1).contains(&slope),
        "n=1e3: post-onset slope {slope:.4} outside band"
    );

    let fine = make_power_law(100_000, 2.0, 1.0).unwrap();
    let t = run_clean(&fine, 2000);
    let fine_onset = detect_discretization_saturation(&t, cfg.saturation_window, band);
    if let Some(k) = fine_onset {
        ensure!(k >= 5 * onset, "n=1e5: onset {k} < 5 x {onset}");
    }
    Ok(format!(
        "n=1e3: onset k={onset}, post-onset slope {slope:.4}; n=1e5 (K=2000): {}",
        fine_onset.map_or("no onset".to_string(), |k| format!("onset {k}"))
    ))
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);

    // round trip of a random 10x8 matrix
    let data: Vec<f64> = (0..80).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let m = DenseMatrix::from_row_major(10, 8, data.clone()).unwrap();
    let mpath = dir.path().join("rt.mtx");
    io::write_matrix_market(&mpath, &m).map_err(|e| e.to_string())?;
    let back = io::read_matrix_market(&mpath).map_err(|e| e.to_string())?;
    let worst = back
        .row_major()
        .iter()
        .zip(&data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure!(worst <= 1e-15, "round-trip deviation {worst:e}");

    // 100x100 ill-conditioned: Hilbert-type matrix plus a small random part
    let n = 100;
    let a = DenseMatrix::from_fn(n, n, |i, j| {
        1.0 / (i + j + 1) as f64 + 1e-9 * (((i * 31 + j * 17) % 13) as f64 - 6.0)
    })
    .unwrap();
    let x: Vec<f64> = (0..n)
        .map(|i| ((i as f64 + 0.5) / n as f64).powi(2))
        .collect();
    let op = mu_estimate::LinearOperator::dense(a.clone());
    let y = op.apply(&x).unwrap();
    let (ap, yp, xp) = (
        dir.path().join("a.mtx"),
        dir.path().join("y.txt"),
        dir.path().join("x.txt"),
    );
    io::write_matrix_market(&ap, &a).unwrap();
    io::write_vector(&yp, &y).unwrap();
    io::write_vector(&xp, &x).unwrap();
    let p = load_external(&ap, &yp, Some(&xp)).map_err(|e| e.to_string())?;
    ensure!(
        p.operator.rows() == n && p.operator.cols() == n,
        "loaded dims wrong"
    );

    let text = "\
problem.kind = external
problem.matrix = a.mtx
problem.rhs = y.txt
problem.x_true = x.txt
noise.level = 0.001
landweber.iters = 2000
validation.tikhonov = true
validation.svd_check = true
";
    let cfg_path = dir.path().join("ext.cfg");
    std::fs::write(&cfg_path, text).unwrap();
    let cfg = ExperimentConfig::load(&cfg_path).map_err(|e| e.to_string())?;
    let report = experiment::run_estimate(&cfg).map_err(|e| format!("pipeline failed: {e}"))?;
    ensure!(dir.path().join("trace.csv").exists(), "trace CSV missing");
    ensure!(dir.path().join("report.json").exists(), "report missing");
    let final_res = report["landweber"]["final_residual"]
        .as_f64()
        .unwrap_or(f64::NAN);
    ensure!(final_res.is_finite(), "final residual not finite");
    Ok(format!(
        "10x8 round trip exact; 100x100 external pipeline ok (verdict {}, mu_hat {})",
        report["verdict"], report["mu_hat"]
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("mu recovery on diagonal benchmarks", criterion_1),
        ("landweber closed-form oracle", criterion_2),
        ("regression oracle", criterion_3),
        ("unconditional lower bound", criterion_4),
        ("sandwich bound", criterion_5),
        ("tikhonov rate cross-check", criterion_6),
        ("violation detection", criterion_7),
        ("noise behavior", criterion_8),
        ("discretization saturation", criterion_9),
        ("external data path", criterion_10),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("criterion {}", i + 1);
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|s| id.contains(s.as_str()) || name.contains(s.as_str()))
        {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id:>12} [{name}] ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id:>12} [{name}] ({secs:.1}s): {detail}");
            }
        }
    }
    println!("acceptance: {} failed", failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
