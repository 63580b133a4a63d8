//! Benchmark problem generators, noise injection and external data loading.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::exec;
use crate::io;
use crate::operator::{Kernel, LinearOperator};

/// Largest size for [`make_exp_operator`]; `e^{-i}` stays comfortably above
/// the subnormal range up to here.
pub const EXP_OPERATOR_MAX_N: usize = 400;
pub const DEFAULT_GRAVITY_DEPTH: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub operator: LinearOperator,
    pub x_true: Option<Vec<f64>>,
    /// Exact data `A x†`, or the observed right-hand side for loaded problems.
    pub y_clean: Vec<f64>,
    pub mu_exact: Option<f64>,
    /// `w` with `x† = (A*A)^μ w` at `μ = mu_exact`.
    pub source_w: Option<Vec<f64>>,
    pub label: String,
    pub params: BTreeMap<String, Value>,
}

impl ProblemSpec {
    pub fn source_w_norm(&self) -> Option<f64> {
        self.source_w.as_deref().map(exec::norm)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyData {
    pub y_delta: Vec<f64>,
    /// `‖y_delta − y_clean‖`.
    pub delta_abs: f64,
    pub rel_level: f64,
    pub seed: u64,
}

impl NoisyData {
    pub fn summary(&self) -> NoiseSummary {
        NoiseSummary {
            rel_level: self.rel_level,
            delta_abs: self.delta_abs,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseSummary {
    pub rel_level: f64,
    pub delta_abs: f64,
    pub seed: u64,
}

fn check_n(n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(Error::InvalidParameter(format!(
            "n must be >= {min}, got {n}"
        )));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "{name} must be a positive number, got {v}"
        )));
    }
    Ok(())
}

fn from_solution(
    operator: LinearOperator,
    x_true: Vec<f64>,
    label: String,
    params: BTreeMap<String, Value>,
) -> Result<ProblemSpec> {
    let y_clean = operator.apply(&x_true)?;
    Ok(ProblemSpec {
        operator,
        x_true: Some(x_true),
        y_clean,
        mu_exact: None,
        source_w: None,
        label,
        params,
    })
}

fn power_sigmas(n: usize, beta: f64) -> Vec<f64> {
    (1..=n).map(|i| (i as f64).powf(-beta)).collect()
}

/// `σ_i = i^{-β}`, `x†_i = i^{-η}`; the source condition holds for every
/// `μ < (2η−1)/(4β)`.
pub fn make_power_law(n: usize, eta: f64, beta: f64) -> Result<ProblemSpec> {
    check_n(n, 2)?;
    check_positive("beta", beta)?;
    if !(eta.is_finite() && eta > 0.5) {
        return Err(Error::InvalidParameter(format!(
            "eta must be > 1/2, got {eta}"
        )));
    }
    let sigmas = power_sigmas(n, beta);
    let x_true: Vec<f64> = (1..=n).map(|i| (i as f64).powf(-eta)).collect();
    let mu = (2.0 * eta - 1.0) / (4.0 * beta);
    let source_w = x_true
        .iter()
        .zip(&sigmas)
        .map(|(x, s)| x * s.powf(-2.0 * mu))
        .collect();
    let params = BTreeMap::from([
        ("kind".to_string(), json!("power_law")),
        ("n".to_string(), json!(n)),
        ("eta".to_string(), json!(eta)),
        ("beta".to_string(), json!(beta)),
    ]);
    let mut p = from_solution(
        LinearOperator::diagonal(sigmas)?,
        x_true,
        format!("power-law diagonal (eta={eta}, beta={beta}, n={n})"),
        params,
    )?;
    p.mu_exact = Some(mu);
    p.source_w = Some(source_w);
    Ok(p)
}

/// `σ_i = i^{-β}`, `x†_i = e^{-i}`: smooth of every order.
pub fn make_exp_solution(n: usize, beta: f64) -> Result<ProblemSpec> {
    check_n(n, 2)?;
    check_positive("beta", beta)?;
    let x_true = (1..=n).map(|i| (-(i as f64)).exp()).collect();
    let params = BTreeMap::from([
        ("kind".to_string(), json!("exp_solution")),
        ("n".to_string(), json!(n)),
        ("beta".to_string(), json!(beta)),
    ]);
    from_solution(
        LinearOperator::diagonal(power_sigmas(n, beta))?,
        x_true,
        format!("supersmooth solution (beta={beta}, n={n})"),
        params,
    )
}

/// `σ_i = e^{-i}`, `x†_i = i^{-η}`: no power-type source condition holds.
pub fn make_exp_operator(n: usize, eta: f64) -> Result<ProblemSpec> {
    check_n(n, 2)?;
    check_positive("eta", eta)?;
    if n > EXP_OPERATOR_MAX_N {
        return Err(Error::InvalidParameter(format!(
            "exponential operator limited to n <= {EXP_OPERATOR_MAX_N}, got {n}"
        )));
    }
    let sigmas = (1..=n).map(|i| (-(i as f64)).exp()).collect();
    let x_true = (1..=n).map(|i| (i as f64).powf(-eta)).collect();
    let params = BTreeMap::from([
        ("kind".to_string(), json!("exp_operator")),
        ("n".to_string(), json!(n)),
        ("eta".to_string(), json!(eta)),
    ]);
    from_solution(
        LinearOperator::diagonal(sigmas)?,
        x_true,
        format!("exponential operator, source condition violated (eta={eta}, n={n})"),
        params,
    )
}

fn midpoints(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
}

/// Second-derivative Green's function on `[0, 1]` with `x†(t) = t`.
pub fn make_deriv2(n: usize) -> Result<ProblemSpec> {
    check_n(n, 8)?;
    let op = LinearOperator::kernel_quadrature(Kernel::SecondDerivative, n)?;
    let params = BTreeMap::from([
        ("kind".to_string(), json!("deriv2")),
        ("n".to_string(), json!(n)),
    ]);
    from_solution(op, midpoints(n), format!("deriv2 analog (n={n})"), params)
}

/// Gravity kernel `d (d² + (s−t)²)^{-3/2}` with a smooth trigonometric solution.
pub fn make_gravity(n: usize, depth: f64) -> Result<ProblemSpec> {
    check_n(n, 8)?;
    check_positive("depth", depth)?;
    let op = LinearOperator::kernel_quadrature(Kernel::Gravity { depth }, n)?;
    let x_true = midpoints(n)
        .into_iter()
        .map(|t| (PI * t).sin() + 0.5 * (2.0 * PI * t).sin())
        .collect();
    let params = BTreeMap::from([
        ("kind".to_string(), json!("gravity")),
        ("n".to_string(), json!(n)),
        ("depth".to_string(), json!(depth)),
    ]);
    from_solution(
        op,
        x_true,
        format!("gravity analog, severely ill-posed candidate (depth={depth}, n={n})"),
        params,
    )
}

/// Add Gaussian noise rescaled to exactly `rel_level · ‖y_clean‖`.
pub fn add_noise(p: &ProblemSpec, rel_level: f64, seed: u64) -> Result<NoisyData> {
    if !(rel_level.is_finite() && rel_level >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise level must be >= 0, got {rel_level}"
        )));
    }
    let y = &p.y_clean;
    let target = rel_level * exec::norm(y);
    if target == 0.0 {
        return Ok(NoisyData {
            y_delta: y.clone(),
            delta_abs: 0.0,
            rel_level,
            seed,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e: Vec<f64> = (0..y.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let ne = exec::norm(&e);
    exec::scale(target / ne, &mut e);
    let y_delta: Vec<f64> = y.iter().zip(&e).map(|(a, b)| a + b).collect();
    Ok(NoisyData {
        delta_abs: exec::dist(&y_delta, y),
        y_delta,
        rel_level,
        seed,
    })
}

/// Dense operator from a MatrixMarket file, data from a vector file.
pub fn load_external(
    matrix_path: &Path,
    y_path: &Path,
    x_true_path: Option<&Path>,
) -> Result<ProblemSpec> {
    let matrix = io::read_matrix_market(matrix_path)?;
    let y = io::read_vector(y_path)?;
    if y.len() != matrix.rows() {
        return Err(Error::DimensionMismatch {
            context: "right-hand side vs matrix rows",
            expected: matrix.rows(),
            got: y.len(),
        });
    }
    let x_true = match x_true_path {
        Some(path) => {
            let x = io::read_vector(path)?;
            if x.len() != matrix.cols() {
                return Err(Error::DimensionMismatch {
                    context: "exact solution vs matrix columns",
                    expected: matrix.cols(),
                    got: x.len(),
                });
            }
            Some(x)
        }
        None => None,
    };
    let params = BTreeMap::from([
        ("kind".to_string(), json!("external")),
        (
            "matrix".to_string(),
            json!(matrix_path.display().to_string()),
        ),
        ("rhs".to_string(), json!(y_path.display().to_string())),
        (
            "x_true".to_string(),
            json!(x_true_path.map(|p| p.display().to_string())),
        ),
        ("m".to_string(), json!(matrix.rows())),
        ("n".to_string(), json!(matrix.cols())),
    ]);
    Ok(ProblemSpec {
        label: format!(
            "external {}x{} ({})",
            matrix.rows(),
            matrix.cols(),
            matrix_path.display()
        ),
        operator: LinearOperator::dense(matrix),
        x_true,
        y_clean: y,
        mu_exact: None,
        source_w: None,
        params,
    })
}
