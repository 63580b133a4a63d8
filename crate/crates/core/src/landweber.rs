//! Landweber iteration `x_{k+1} = x_k − β A*(A x_k − y)` with per-step logging.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec;
use crate::operator::{DEFAULT_NORM_MAX_ITERS, DEFAULT_NORM_TOL};
use crate::problems::{NoiseSummary, ProblemSpec};

/// Norms below this are treated as exact convergence.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// `1 / ‖A‖²` with the power-iteration estimate of `‖A‖`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialGuess {
    Zero,
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandweberConfig {
    pub step: StepSize,
    pub max_iters: usize,
    pub x0: InitialGuess,
    /// Keep `x_k` every `⌈K/100⌉` iterations.
    pub record_iterates: bool,
}

impl Default for LandweberConfig {
    fn default() -> Self {
        Self {
            step: StepSize::Auto,
            max_iters: 2000,
            x0: InitialGuess::Zero,
            record_iterates: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    ExactConvergence,
}

/// Everything recorded by one run. Index `i` holds iteration `k = i + 1`.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub residuals: Vec<f64>,
    pub gradient_norms: Vec<f64>,
    pub errors: Option<Vec<f64>>,
    /// `R_k² / G_k`; NaN where `G_k = 0` and `R_k > 0`.
    pub lower_bounds: Vec<f64>,
    pub step_beta: f64,
    pub operator_norm: f64,
    pub norm_converged: bool,
    pub problem_label: String,
    pub noise: Option<NoiseSummary>,
    pub stop: StopReason,
    pub snapshots: Vec<(usize, Vec<f64>)>,
}

pub fn lower_bound(r: f64, g: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else if g == 0.0 {
        f64::NAN
    } else {
        r * r / g
    }
}

impl IterationTrace {
    /// Trace built from given norm sequences; used for synthetic data.
    pub fn from_norms(residuals: Vec<f64>, gradient_norms: Vec<f64>) -> Result<Self> {
        if residuals.len() != gradient_norms.len() {
            return Err(Error::DimensionMismatch {
                context: "residuals vs gradient norms",
                expected: residuals.len(),
                got: gradient_norms.len(),
            });
        }
        let lower_bounds = residuals
            .iter()
            .zip(&gradient_norms)
            .map(|(r, g)| lower_bound(*r, *g))
            .collect();
        Ok(Self {
            residuals,
            gradient_norms,
            errors: None,
            lower_bounds,
            step_beta: f64::NAN,
            operator_norm: f64::NAN,
            norm_converged: false,
            problem_label: "synthetic".into(),
            noise: None,
            stop: StopReason::MaxIters,
            snapshots: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    /// Number of leading entries with `R_k, G_k` finite and positive, the part
    /// usable in log space.
    pub fn usable_len(&self) -> usize {
        self.residuals
            .iter()
            .zip(&self.gradient_norms)
            .position(|(r, g)| !(r.is_finite() && g.is_finite() && *r > 0.0 && *g > 0.0))
            .unwrap_or(self.len())
    }
}

/// Run Landweber on `data` for the operator of `p`.
pub fn landweber_run(
    p: &ProblemSpec,
    data: &[f64],
    cfg: &LandweberConfig,
) -> Result<IterationTrace> {
    let op = &p.operator;
    let (m, n) = (op.rows(), op.cols());
    if data.len() != m {
        return Err(Error::DimensionMismatch {
            context: "landweber data",
            expected: m,
            got: data.len(),
        });
    }
    if cfg.max_iters == 0 {
        return Err(Error::InvalidParameter(
            "landweber needs at least one iteration".into(),
        ));
    }
    let norm = op.estimate_norm(DEFAULT_NORM_TOL, DEFAULT_NORM_MAX_ITERS)?;
    if norm.value <= 0.0 {
        return Err(Error::InvalidParameter("operator is zero".into()));
    }
    let limit = 2.0 / (norm.value * norm.value);
    let beta = match cfg.step {
        StepSize::Auto => 1.0 / (norm.value * norm.value),
        StepSize::Fixed(b) => {
            if !(b > 0.0 && b < limit) {
                return Err(Error::StepOutOfRange { step: b, limit });
            }
            b
        }
    };

    let mut x = match &cfg.x0 {
        InitialGuess::Zero => vec![0.0; n],
        InitialGuess::Vector(v) => {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "landweber initial guess",
                    expected: n,
                    got: v.len(),
                });
            }
            v.clone()
        }
    };
    let x_true = p.x_true.as_deref().filter(|xt| xt.len() == n);

    let k_max = cfg.max_iters;
    let stride = k_max.div_ceil(100);
    let mut residuals = Vec::with_capacity(k_max);
    let mut gradients = Vec::with_capacity(k_max);
    let mut lower = Vec::with_capacity(k_max);
    let mut errors = x_true.map(|_| Vec::with_capacity(k_max));
    let mut snapshots = Vec::new();
    let mut stop = StopReason::MaxIters;

    // r = A x − y, g = A* r
    let mut r = vec![0.0; m];
    let mut g = vec![0.0; n];
    op.apply_into(&x, &mut r)?;
    exec::axpy(-1.0, data, &mut r);
    op.apply_adjoint_into(&r, &mut g)?;

    for k in 1..=k_max {
        exec::axpy(-beta, &g, &mut x);
        op.apply_into(&x, &mut r)?;
        exec::axpy(-1.0, data, &mut r);
        op.apply_adjoint_into(&r, &mut g)?;

        let rk = exec::norm(&r);
        let gk = exec::norm(&g);
        if !(rk.is_finite() && gk.is_finite()) {
            return Err(Error::NonFinite { iteration: k });
        }
        residuals.push(rk);
        gradients.push(gk);
        lower.push(lower_bound(rk, gk));
        if let (Some(errs), Some(xt)) = (errors.as_mut(), x_true) {
            errs.push(exec::dist(&x, xt));
        }
        if cfg.record_iterates && (k % stride == 0 || k == k_max) {
            snapshots.push((k, x.clone()));
        }
        if rk < UNDERFLOW_FLOOR || gk < UNDERFLOW_FLOOR {
            stop = StopReason::ExactConvergence;
            if cfg.record_iterates && snapshots.last().map(|s| s.0) != Some(k) {
                snapshots.push((k, x.clone()));
            }
            break;
        }
    }

    Ok(IterationTrace {
        residuals,
        gradient_norms: gradients,
        errors,
        lower_bounds: lower,
        step_beta: beta,
        operator_norm: norm.value,
        norm_converged: norm.converged,
        problem_label: p.label.clone(),
        noise: None,
        stop,
        snapshots,
    })
}

/// Optional per-iteration columns appended to the trace CSV; each slice is
/// aligned with the trace (NaN for undefined entries).
#[derive(Debug, Clone, Copy, Default)]
pub struct TraceColumns<'a> {
    pub mu_k: Option<&'a [f64]>,
    pub c_k: Option<&'a [f64]>,
    pub upper_bound: Option<&'a [f64]>,
}

pub const TRACE_HEADER: [&str; 8] = [
    "k",
    "residual",
    "gradient_norm",
    "lower_bound",
    "error",
    "mu_k",
    "c_k",
    "upper_bound",
];

/// 17 significant digits; undefined values become empty cells.
pub fn fmt_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        String::new()
    }
}

fn column(col: Option<&[f64]>, i: usize) -> String {
    col.and_then(|c| c.get(i))
        .map_or_else(String::new, |v| fmt_value(*v))
}

/// Write the rows `rows` (0-based trace indices) as CSV.
pub fn write_trace_csv<W: Write>(
    out: W,
    trace: &IterationTrace,
    extra: &TraceColumns<'_>,
    rows: &[usize],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for &i in rows {
        w.write_record([
            (i + 1).to_string(),
            fmt_value(trace.residuals[i]),
            fmt_value(trace.gradient_norms[i]),
            fmt_value(trace.lower_bounds[i]),
            column(trace.errors.as_deref(), i),
            column(extra.mu_k, i),
            column(extra.c_k, i),
            column(extra.upper_bound, i),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Row indices for a trace of length `len`: all of them when `max_rows` is 0
/// or not smaller than `len`, otherwise about `max_rows` indices spaced
/// evenly in `log k`, always including the first and last.
pub fn log_thinned_rows(len: usize, max_rows: usize) -> Vec<usize> {
    if max_rows == 0 || len <= max_rows {
        return (0..len).collect();
    }
    let mut rows = Vec::with_capacity(max_rows);
    let top = (len as f64).ln();
    for j in 0..max_rows {
        let k = (top * j as f64 / (max_rows - 1) as f64).exp().round() as usize;
        let i = k.clamp(1, len) - 1;
        if rows.last() != Some(&i) {
            rows.push(i);
        }
    }
    if rows.last() != Some(&(len - 1)) {
        rows.push(len - 1);
    }
    rows
}
