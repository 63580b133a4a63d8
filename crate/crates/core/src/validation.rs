//! Independent checks of an estimated μ: error bounds along the Landweber
//! trace, a Tikhonov convergence-rate experiment and a spectral summability test.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{rate_exponent, SourceConditionModel};
use crate::exec::{self, linear_fit, Execution};
use crate::landweber::IterationTrace;
use crate::operator::{LinearOperator, SpectralDecomposition};
use crate::problems::{add_noise, ProblemSpec};

pub const CG_TOL: f64 = 1e-10;
pub const DEFAULT_GROWTH_THRESHOLD: f64 = 1.5;
/// Coefficients below this fraction of the largest are treated as rounding noise.
pub const COEFFICIENT_FLOOR: f64 = 1e-12;
pub const FIT_MIN_R2: f64 = 0.99;
const MU_SEARCH_LO: f64 = 0.01;
const MU_SEARCH_HI: f64 = 5.0;

/// Minimizer of `‖Ax − y‖² + α‖x‖²`.
///
/// Diagonal operators use the closed form; everything else goes through
/// [`tikhonov_solve_iterative`].
pub fn tikhonov_solve(op: &LinearOperator, y: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if let Some(sigmas) = op.diagonal_sigmas() {
        if y.len() != sigmas.len() {
            return Err(Error::DimensionMismatch {
                context: "tikhonov data",
                expected: sigmas.len(),
                got: y.len(),
            });
        }
        return Ok(sigmas
            .iter()
            .zip(y)
            .map(|(s, yi)| s * yi / (s * s + alpha))
            .collect());
    }
    tikhonov_solve_iterative(op, y, alpha)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be > 0, got {alpha}"
        )));
    }
    Ok(())
}

/// Conjugate gradients on `(A*A + αI) x = A*y` from `x = 0`, to relative
/// residual [`CG_TOL`] within `10 n` iterations.
pub fn tikhonov_solve_iterative(op: &LinearOperator, y: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let n = op.cols();
    let b = op.apply_adjoint(y)?;
    let b_norm = exec::norm(&b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = b;
    let mut p = r.clone();
    let mut rr = exec::dot(&r, &r);
    let mut ap = vec![0.0; op.rows()];
    let mut q = vec![0.0; n];
    let cap = 10 * n;
    for _ in 0..cap {
        op.apply_into(&p, &mut ap)?;
        op.apply_adjoint_into(&ap, &mut q)?;
        exec::axpy(alpha, &p, &mut q);
        let pq = exec::dot(&p, &q);
        if !(pq > 0.0) {
            break;
        }
        let step = rr / pq;
        exec::axpy(step, &p, &mut x);
        exec::axpy(-step, &q, &mut r);
        let rr_new = exec::dot(&r, &r);
        if rr_new.sqrt() <= CG_TOL * b_norm {
            return Ok(x);
        }
        let ratio = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + ratio * *pi;
        }
        rr = rr_new;
    }
    // recompute the true residual before giving up
    let ax = op.apply(&x)?;
    let mut res = op.apply_adjoint(&ax)?;
    exec::axpy(alpha, &x, &mut res);
    let b = op.apply_adjoint(y)?;
    let rel = exec::dist(&res, &b) / b_norm;
    if rel <= CG_TOL {
        return Ok(x);
    }
    Err(Error::SolverNotConverged {
        iters: cap,
        residual: rel,
    })
}

/// A-priori choice `α = δ^{2/(2μ+1)}`; zero for `δ = 0`.
pub fn apriori_alpha(delta_abs: f64, mu: f64) -> f64 {
    if delta_abs == 0.0 {
        return 0.0;
    }
    delta_abs.powf(2.0 / (2.0 * mu + 1.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct RateExperimentResult {
    pub mu_hat: f64,
    /// Relative levels, strictly decreasing.
    pub noise_levels: Vec<f64>,
    pub delta_abs: Vec<f64>,
    /// Mean reconstruction error over seeds, per level.
    pub errors: Vec<f64>,
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Slope of `log error` against `log δ_abs`.
    pub observed_exponent: f64,
    /// Same slope against `log δ_rel`; equal up to rounding since `δ_abs = δ_rel ‖y‖`.
    pub observed_exponent_rel: f64,
    pub predicted_exponent: f64,
    pub notes: Vec<String>,
}

/// `n` levels spaced evenly in log between `hi` and `lo`, decreasing.
pub fn log_spaced_levels(hi: f64, lo: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let (a, b) = (hi.ln(), lo.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Tikhonov with the a-priori rule at each (level, seed); the observed rate
/// is the log-log slope of the seed-averaged error against the noise norm.
pub fn rate_experiment(
    p: &ProblemSpec,
    mu_hat: f64,
    levels: &[f64],
    seeds: &[u64],
    exec: Execution,
) -> Result<RateExperimentResult> {
    let x_true = p.x_true.as_deref().ok_or_else(|| {
        Error::InvalidParameter("rate experiment needs a known exact solution".into())
    })?;
    if !(mu_hat.is_finite() && mu_hat > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mu_hat must be > 0, got {mu_hat}"
        )));
    }
    if levels.len() < 3 {
        return Err(Error::InvalidParameter(
            "rate experiment needs at least 3 noise levels".into(),
        ));
    }
    if let Some(l) = levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        return Err(Error::InvalidParameter(format!(
            "noise level {l} outside (0, 1)"
        )));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidParameter(
            "rate experiment needs at least one seed".into(),
        ));
    }
    let mut sorted = levels.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidParameter(
            "noise levels must be distinct".into(),
        ));
    }

    let cells: Vec<(usize, u64)> = (0..sorted.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let outcomes = exec.map(&cells, |&(i, seed)| -> Result<(f64, f64, f64)> {
        let noisy = add_noise(p, sorted[i], seed)?;
        let alpha = apriori_alpha(noisy.delta_abs, mu_hat);
        let x = tikhonov_solve(&p.operator, &noisy.y_delta, alpha)?;
        Ok((noisy.delta_abs, alpha, exec::dist(&x, x_true)))
    });

    let mut res = RateExperimentResult {
        mu_hat,
        noise_levels: Vec::new(),
        delta_abs: Vec::new(),
        errors: Vec::new(),
        alphas: Vec::new(),
        seeds: seeds.to_vec(),
        observed_exponent: f64::NAN,
        observed_exponent_rel: f64::NAN,
        predicted_exponent: rate_exponent(mu_hat),
        notes: Vec::new(),
    };
    for (i, chunk) in outcomes.chunks(seeds.len()).enumerate() {
        let mut sum = 0.0;
        let mut delta = 0.0;
        let mut alpha = 0.0;
        let mut failed = None;
        for out in chunk {
            match out {
                Ok((d, a, e)) => {
                    sum += e;
                    delta = *d;
                    alpha = *a;
                }
                Err(e) => failed = Some(e.to_string()),
            }
        }
        if let Some(msg) = failed {
            res.notes
                .push(format!("level {} excluded: {msg}", sorted[i]));
            continue;
        }
        res.noise_levels.push(sorted[i]);
        res.delta_abs.push(delta);
        res.alphas.push(alpha);
        res.errors.push(sum / seeds.len() as f64);
    }
    if res.noise_levels.len() < 2 {
        return Err(Error::DegenerateRegression(format!(
            "only {} noise levels survived; {}",
            res.noise_levels.len(),
            res.notes.join("; ")
        )));
    }
    let log_err: Vec<f64> = res.errors.iter().map(|e| e.ln()).collect();
    let log_abs: Vec<f64> = res.delta_abs.iter().map(|d| d.ln()).collect();
    let log_rel: Vec<f64> = res.noise_levels.iter().map(|d| d.ln()).collect();
    res.observed_exponent = linear_fit(&log_abs, &log_err)
        .ok_or_else(|| Error::DegenerateRegression("noise norms coincide".into()))?
        .0;
    res.observed_exponent_rel = linear_fit(&log_rel, &log_err).map_or(f64::NAN, |f| f.0);
    Ok(res)
}

#[derive(Debug, Clone, Serialize)]
pub struct SmoothnessVerdict {
    /// Tested exponents, ascending.
    pub mu_tested: Vec<f64>,
    /// `S_n / S_{n/2}` per tested μ.
    pub partial_sum_growth: Vec<f64>,
    /// Log-log slope of the summands over the last quarter of the spectrum.
    pub tail_slope: Vec<f64>,
    pub admissible: Vec<bool>,
    /// Largest admissible tested μ.
    pub mu_max_estimate: Option<f64>,
    pub threshold: f64,
}

/// `0.01, 0.05, 0.10, …, 2.0`.
pub fn default_mu_grid() -> Vec<f64> {
    let mut g = vec![0.01];
    g.extend((1..=40).map(|i| i as f64 * 0.05));
    g
}

/// Logs of `|⟨y,u_i⟩|² / σ_i^{2+4μ}`; `-inf` for vanishing coefficients.
fn log_terms(log_sigma: &[f64], log_coef2: &[f64], mu: f64) -> Vec<f64> {
    log_sigma
        .iter()
        .zip(log_coef2)
        .map(|(ls, lc)| lc - (2.0 + 4.0 * mu) * ls)
        .collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

struct Spectrum {
    log_sigma: Vec<f64>,
    log_coef2: Vec<f64>,
}

impl Spectrum {
    fn new(sd: &SpectralDecomposition, y: &[f64]) -> Result<Self> {
        let coef = sd.left_coefficients(y)?;
        Ok(Self {
            log_sigma: sd.sigmas.iter().map(|s| s.ln()).collect(),
            log_coef2: coef.iter().map(|c| (c * c).ln()).collect(),
        })
    }

    /// `(growth ratio, tail slope)` for one μ.
    fn growth(&self, mu: f64) -> (f64, f64) {
        let n = self.log_sigma.len();
        let terms = log_terms(&self.log_sigma, &self.log_coef2, mu);
        let full = log_sum_exp(&terms);
        let half = log_sum_exp(&terms[..n / 2]);
        let ratio = if full == f64::NEG_INFINITY {
            1.0
        } else if half == f64::NEG_INFINITY || !full.is_finite() {
            f64::INFINITY
        } else {
            (full - half).exp()
        };
        let start = (3 * n) / 4;
        let (xs, ys): (Vec<f64>, Vec<f64>) = (start..n)
            .filter(|&i| terms[i].is_finite())
            .map(|i| (((i + 1) as f64).ln(), terms[i]))
            .unzip();
        let slope = linear_fit(&xs, &ys).map_or(f64::NAN, |f| f.0);
        (ratio, slope)
    }

    fn admissible(&self, mu: f64, threshold: f64) -> bool {
        let (ratio, slope) = self.growth(mu);
        ratio.is_finite() && ratio <= threshold && !(slope >= 0.0)
    }
}

/// Summability test of `Σ |⟨y,u_i⟩|² / σ_i^{2+4μ}` for each μ.
///
/// A μ passes when the partial sums have saturated (`S_n/S_{n/2} ≤ threshold`)
/// and the summands still decay over the last quarter of the spectrum. The
/// admissible set is then closed downward.
pub fn verify_smoothness(
    sd: &SpectralDecomposition,
    y: &[f64],
    mu_list: &[f64],
    threshold: f64,
    exec: Execution,
) -> Result<SmoothnessVerdict> {
    if sd.rank() < 2 {
        return Err(Error::InvalidParameter(
            "spectral test needs at least two singular values".into(),
        ));
    }
    if let Some(m) = mu_list.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "tested mu must be >= 0, got {m}"
        )));
    }
    let spectrum = Spectrum::new(sd, y)?;
    let mut mus = mu_list.to_vec();
    mus.sort_by(f64::total_cmp);
    mus.dedup();
    let stats = exec.map(&mus, |&mu| spectrum.growth(mu));

    let mut admissible = Vec::with_capacity(mus.len());
    let mut open = true;
    for &(ratio, slope) in &stats {
        open = open && ratio.is_finite() && ratio <= threshold && !(slope >= 0.0);
        admissible.push(open);
    }
    let mu_max_estimate = mus
        .iter()
        .zip(&admissible)
        .rev()
        .find(|(_, a)| **a)
        .map(|(m, _)| *m);
    Ok(SmoothnessVerdict {
        partial_sum_growth: stats.iter().map(|s| s.0).collect(),
        tail_slope: stats.iter().map(|s| s.1).collect(),
        mu_tested: mus,
        admissible,
        mu_max_estimate,
        threshold,
    })
}

/// Largest μ for which the spectral sum converges.
///
/// First tries decay fits: `σ_i ~ i^{-b}` and `|⟨y,u_i⟩| ~ σ_i^{s}` give
/// `μ = (s−1)/2 − 1/(4b)`, used when both fits have `R² ≥ 0.99` and the value
/// passes the summability test. Otherwise bisects the summability test on
/// `[0.01, 5]`. `None` when even `μ = 0.01` fails.
pub fn max_mu_spectral(
    sd: &SpectralDecomposition,
    y: &[f64],
    threshold: f64,
) -> Result<Option<f64>> {
    if sd.rank() < 2 {
        return Err(Error::InvalidParameter(
            "spectral test needs at least two singular values".into(),
        ));
    }
    let spectrum = Spectrum::new(sd, y)?;
    if let Some(mu) = fitted_mu(sd, y)? {
        if mu > 0.0 && spectrum.admissible(mu, threshold) {
            return Ok(Some(mu));
        }
    }
    if !spectrum.admissible(MU_SEARCH_LO, threshold) {
        return Ok(None);
    }
    if spectrum.admissible(MU_SEARCH_HI, threshold) {
        return Ok(Some(MU_SEARCH_HI));
    }
    let (mut lo, mut hi) = (MU_SEARCH_LO, MU_SEARCH_HI);
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        if spectrum.admissible(mid, threshold) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(lo))
}

fn fitted_mu(sd: &SpectralDecomposition, y: &[f64]) -> Result<Option<f64>> {
    let coef = sd.left_coefficients(y)?;
    let log_i: Vec<f64> = (1..=sd.rank()).map(|i| (i as f64).ln()).collect();
    let log_s: Vec<f64> = sd.sigmas.iter().map(|s| s.ln()).collect();
    let Some((slope_s, _, r2_s)) = linear_fit(&log_i, &log_s) else {
        return Ok(None);
    };
    let cmax = coef.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let floor = COEFFICIENT_FLOOR * cmax;
    let (xs, ys): (Vec<f64>, Vec<f64>) = coef
        .iter()
        .zip(&log_s)
        .filter(|(c, _)| c.abs() >= floor && c.abs() > 0.0)
        .map(|(c, ls)| (*ls, c.abs().ln()))
        .unzip();
    let Some((s, _, r2_c)) = linear_fit(&xs, &ys) else {
        return Ok(None);
    };
    let b = -slope_s;
    if r2_s < FIT_MIN_R2 || r2_c < FIT_MIN_R2 || !(b > 0.0) {
        return Ok(None);
    }
    Ok(Some((s - 1.0) / 2.0 - 1.0 / (4.0 * b)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCurves {
    /// `R_k²/G_k`; NaN where `G_k = 0`.
    pub lower: Vec<f64>,
    /// `‖w‖^{1/(2μ+1)} R_k^{2μ/(2μ+1)}` when `‖w‖` is known.
    pub upper: Option<Vec<f64>>,
    /// Indices skipped because `G_k = 0`.
    pub skipped: Vec<usize>,
}

pub fn bound_curves(
    trace: &IterationTrace,
    model: &SourceConditionModel,
    w_norm: Option<f64>,
) -> BoundCurves {
    let mut skipped = Vec::new();
    let lower = trace
        .residuals
        .iter()
        .zip(&trace.gradient_norms)
        .enumerate()
        .map(|(i, (r, g))| {
            if *g == 0.0 {
                skipped.push(i);
                f64::NAN
            } else {
                r * r / g
            }
        })
        .collect();
    let upper = w_norm.map(|w| {
        let d = 2.0 * model.mu + 1.0;
        let cw = w.powf(1.0 / d);
        trace
            .residuals
            .iter()
            .map(|r| cw * r.powf(model.rate_exponent))
            .collect()
    });
    BoundCurves {
        lower,
        upper,
        skipped,
    }
}
