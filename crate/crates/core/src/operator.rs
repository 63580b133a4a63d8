//! Linear operators `A: R^n -> R^m` with forward and adjoint application,
//! norm estimation and a full SVD for small dense cases.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{self, Execution};

pub const DEFAULT_NORM_TOL: f64 = 1e-10;
pub const DEFAULT_NORM_MAX_ITERS: usize = 10_000;
/// Relative singular-value floor for computed (dense) decompositions.
pub const DEFAULT_SVD_FLOOR: f64 = 1e-14;
/// Largest `min(m, n)` accepted by [`LinearOperator::svd`].
pub const MAX_SVD_DIM: usize = 2048;

const POWER_SEED: u64 = 0x005e_ed0f_a11a;

/// Row-major dense matrix. A transposed copy is kept so that both `A x` and
/// `Aᵀ y` stream through contiguous rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    transposed: Vec<f64>,
}

impl DenseMatrix {
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter("matrix must be non-empty".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "dense matrix data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        let mut transposed = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                transposed[j * rows + i] = data[i * cols + j];
            }
        }
        Ok(Self {
            rows,
            cols,
            data,
            transposed,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_row_major(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row_major(&self) -> &[f64] {
        &self.data
    }

    fn mul_into(&self, x: &[f64], out: &mut [f64], exec: Execution) {
        let cols = self.cols;
        let data = &self.data;
        exec.fill(out, self.rows * cols, |i| {
            exec::dot(&data[i * cols..(i + 1) * cols], x)
        });
    }

    fn mul_transpose_into(&self, y: &[f64], out: &mut [f64], exec: Execution) {
        let rows = self.rows;
        let t = &self.transposed;
        exec.fill(out, self.rows * self.cols, |j| {
            exec::dot(&t[j * rows..(j + 1) * rows], y)
        });
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

/// Integral kernels discretized by the midpoint rule on `[0, 1]²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kernel", rename_all = "snake_case")]
pub enum Kernel {
    /// Green's function of `-u''` with homogeneous Dirichlet conditions.
    SecondDerivative,
    /// Vertical gravity field of a mass layer at the given depth.
    Gravity { depth: f64 },
}

impl Kernel {
    pub fn eval(&self, s: f64, t: f64) -> f64 {
        match *self {
            Kernel::SecondDerivative => {
                if s <= t {
                    s * (t - 1.0)
                } else {
                    t * (s - 1.0)
                }
            }
            Kernel::Gravity { depth } => {
                let d2 = depth * depth + (s - t) * (s - t);
                depth * d2.powf(-1.5)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum OperatorKind {
    /// `A = diag(σ_1, …, σ_n)` with `σ_1 ≥ σ_2 ≥ … > 0`.
    Diagonal {
        sigmas: Vec<f64>,
    },
    Dense(DenseMatrix),
    /// Kernel operator; the quadrature is materialized into `matrix` at construction.
    KernelQuadrature {
        kernel: Kernel,
        nodes: Vec<f64>,
        weights: Vec<f64>,
        matrix: DenseMatrix,
    },
}

/// Immutable linear operator. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct LinearOperator {
    kind: OperatorKind,
    exec: Execution,
}

/// Result of power iteration, including the non-converged case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub rel_change: f64,
}

impl LinearOperator {
    pub fn diagonal(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::InvalidParameter(
                "diagonal operator needs at least one sigma".into(),
            ));
        }
        if let Some(i) = sigmas.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "sigma[{i}] = {} is not strictly positive",
                sigmas[i]
            )));
        }
        if let Some(i) = sigmas.windows(2).position(|w| w[1] > w[0]) {
            return Err(Error::InvalidParameter(format!(
                "sigmas must be non-increasing (sigma[{}] > sigma[{i}])",
                i + 1
            )));
        }
        Ok(Self {
            kind: OperatorKind::Diagonal { sigmas },
            exec: Execution::default(),
        })
    }

    pub fn dense(matrix: DenseMatrix) -> Self {
        Self {
            kind: OperatorKind::Dense(matrix),
            exec: Execution::default(),
        }
    }

    /// Midpoint-rule discretization with `n` equal cells in both variables.
    pub fn kernel_quadrature(kernel: Kernel, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "kernel discretization needs n >= 1".into(),
            ));
        }
        let h = 1.0 / n as f64;
        let nodes: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * h).collect();
        let weights = vec![h; n];
        let matrix =
            DenseMatrix::from_fn(n, n, |i, j| weights[j] * kernel.eval(nodes[i], nodes[j]))?;
        Ok(Self {
            kind: OperatorKind::KernelQuadrature {
                kernel,
                nodes,
                weights,
                matrix,
            },
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            OperatorKind::Diagonal { .. } => "diagonal",
            OperatorKind::Dense(_) => "dense",
            OperatorKind::KernelQuadrature { .. } => "kernel-quadrature",
        }
    }

    /// Output dimension `m`.
    pub fn rows(&self) -> usize {
        match &self.kind {
            OperatorKind::Diagonal { sigmas } => sigmas.len(),
            OperatorKind::Dense(m) | OperatorKind::KernelQuadrature { matrix: m, .. } => m.rows(),
        }
    }

    /// Input dimension `n`.
    pub fn cols(&self) -> usize {
        match &self.kind {
            OperatorKind::Diagonal { sigmas } => sigmas.len(),
            OperatorKind::Dense(m) | OperatorKind::KernelQuadrature { matrix: m, .. } => m.cols(),
        }
    }

    pub fn diagonal_sigmas(&self) -> Option<&[f64]> {
        match &self.kind {
            OperatorKind::Diagonal { sigmas } => Some(sigmas),
            _ => None,
        }
    }

    pub fn dense_matrix(&self) -> Option<&DenseMatrix> {
        match &self.kind {
            OperatorKind::Dense(m) | OperatorKind::KernelQuadrature { matrix: m, .. } => Some(m),
            OperatorKind::Diagonal { .. } => None,
        }
    }

    /// Drop the kernel description and keep only the quadrature matrix.
    pub fn to_dense(&self) -> Result<LinearOperator> {
        match &self.kind {
            OperatorKind::Dense(_) => Ok(self.clone()),
            OperatorKind::KernelQuadrature { matrix, .. } => {
                Ok(LinearOperator::dense(matrix.clone()).with_execution(self.exec))
            }
            OperatorKind::Diagonal { sigmas } => {
                let n = sigmas.len();
                let m = DenseMatrix::from_fn(n, n, |i, j| if i == j { sigmas[i] } else { 0.0 })?;
                Ok(LinearOperator::dense(m).with_execution(self.exec))
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.rows()];
        self.apply_into(x, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("apply input", self.cols(), x.len())?;
        check_len("apply output", self.rows(), out.len())?;
        match &self.kind {
            OperatorKind::Diagonal { sigmas } => {
                self.exec.fill(out, sigmas.len(), |i| sigmas[i] * x[i]);
            }
            OperatorKind::Dense(m) | OperatorKind::KernelQuadrature { matrix: m, .. } => {
                m.mul_into(x, out, self.exec)
            }
        }
        Ok(())
    }

    pub fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.cols()];
        self.apply_adjoint_into(y, &mut out)?;
        Ok(out)
    }

    pub fn apply_adjoint_into(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("adjoint input", self.rows(), y.len())?;
        check_len("adjoint output", self.cols(), out.len())?;
        match &self.kind {
            OperatorKind::Diagonal { sigmas } => {
                self.exec.fill(out, sigmas.len(), |i| sigmas[i] * y[i]);
            }
            OperatorKind::Dense(m) | OperatorKind::KernelQuadrature { matrix: m, .. } => {
                m.mul_transpose_into(y, out, self.exec)
            }
        }
        Ok(())
    }

    /// Power iteration on `A*A` from a fixed pseudo-random start vector.
    ///
    /// Never fails on slow convergence; the caller decides whether a
    /// non-converged estimate is acceptable. Diagonal operators are exact.
    pub fn estimate_norm(&self, tol: f64, max_iters: usize) -> Result<NormEstimate> {
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "norm tolerance must be > 0, got {tol}"
            )));
        }
        if let OperatorKind::Diagonal { sigmas } = &self.kind {
            return Ok(NormEstimate {
                value: sigmas.iter().copied().fold(0.0, f64::max),
                iterations: 0,
                converged: true,
                rel_change: 0.0,
            });
        }
        let n = self.cols();
        let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
        let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let nv = exec::norm(&v);
        exec::scale(1.0 / nv, &mut v);

        let mut av = vec![0.0; self.rows()];
        let mut w = vec![0.0; n];
        let mut estimate = 0.0;
        let mut rel_change = f64::INFINITY;
        for it in 1..=max_iters.max(1) {
            self.apply_into(&v, &mut av)?;
            let current = exec::norm(&av);
            self.apply_adjoint_into(&av, &mut w)?;
            let nw = exec::norm(&w);
            if current == 0.0 || nw == 0.0 {
                return Ok(NormEstimate {
                    value: current,
                    iterations: it,
                    converged: true,
                    rel_change: 0.0,
                });
            }
            rel_change = (current - estimate).abs() / current;
            estimate = current;
            if rel_change <= tol {
                return Ok(NormEstimate {
                    value: estimate,
                    iterations: it,
                    converged: true,
                    rel_change,
                });
            }
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / nw;
            }
        }
        Ok(NormEstimate {
            value: estimate,
            iterations: max_iters,
            converged: false,
            rel_change,
        })
    }

    /// `‖A‖` by power iteration; non-convergence is an error carrying the best iterate.
    pub fn operator_norm(&self, tol: f64, max_iters: usize) -> Result<f64> {
        let est = self.estimate_norm(tol, max_iters)?;
        if est.converged {
            Ok(est.value)
        } else {
            Err(Error::NormNotConverged {
                iters: est.iterations,
                estimate: est.value,
                rel_change: est.rel_change,
            })
        }
    }

    /// Singular value decomposition.
    ///
    /// Diagonal operators return their sigmas (all of them, they are exact)
    /// with canonical bases. Dense operators are decomposed in full and
    /// singular values below `floor · σ_1` are dropped. Kernel operators must
    /// be converted with [`LinearOperator::to_dense`] first.
    pub fn svd(&self, floor: f64) -> Result<SpectralDecomposition> {
        match &self.kind {
            OperatorKind::Diagonal { sigmas } => Ok(SpectralDecomposition {
                sigmas: sigmas.clone(),
                left: SingularBasis::Canonical { dim: sigmas.len() },
                right: SingularBasis::Canonical { dim: sigmas.len() },
            }),
            OperatorKind::KernelQuadrature { .. } => Err(Error::Unsupported(
                "kernel-quadrature operator must be materialized with to_dense() before svd".into(),
            )),
            OperatorKind::Dense(m) => dense_svd(m, floor),
        }
    }
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

fn dense_svd(m: &DenseMatrix, floor: f64) -> Result<SpectralDecomposition> {
    let k = m.rows().min(m.cols());
    if k > MAX_SVD_DIM {
        return Err(Error::Unsupported(format!(
            "full SVD limited to min(m, n) <= {MAX_SVD_DIM}, got {k}"
        )));
    }
    if !(floor >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "svd floor must be >= 0, got {floor}"
        )));
    }
    let svd = m
        .to_nalgebra()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::SvdFailed("bidiagonal QR iteration did not converge".into()))?;
    let u = svd
        .u
        .ok_or_else(|| Error::SvdFailed("left vectors missing".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::SvdFailed("right vectors missing".into()))?;
    let values = svd.singular_values;

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let sigma_max = order.first().map(|&i| values[i]).unwrap_or(0.0);
    let cutoff = floor * sigma_max;
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| values[i] > 0.0 && values[i] >= cutoff)
        .collect();

    let (rows, cols) = (m.rows(), m.cols());
    let mut left = Vec::with_capacity(rows * kept.len());
    let mut right = Vec::with_capacity(cols * kept.len());
    for &i in &kept {
        left.extend(u.column(i).iter());
        right.extend(v_t.row(i).iter());
    }
    Ok(SpectralDecomposition {
        sigmas: kept.iter().map(|&i| values[i]).collect(),
        left: SingularBasis::Dense {
            dim: rows,
            columns: left,
        },
        right: SingularBasis::Dense {
            dim: cols,
            columns: right,
        },
    })
}

/// Orthonormal singular vectors, stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub enum SingularBasis {
    /// `e_1, e_2, …` in a space of dimension `dim`.
    Canonical {
        dim: usize,
    },
    Dense {
        dim: usize,
        columns: Vec<f64>,
    },
}

impl SingularBasis {
    pub fn dim(&self) -> usize {
        match self {
            SingularBasis::Canonical { dim } | SingularBasis::Dense { dim, .. } => *dim,
        }
    }

    pub fn vector(&self, i: usize) -> Vec<f64> {
        match self {
            SingularBasis::Canonical { dim } => {
                let mut e = vec![0.0; *dim];
                e[i] = 1.0;
                e
            }
            SingularBasis::Dense { dim, columns } => columns[i * dim..(i + 1) * dim].to_vec(),
        }
    }

    /// `⟨z, b_i⟩` for the first `count` basis vectors.
    fn coefficients(&self, z: &[f64], count: usize) -> Vec<f64> {
        match self {
            SingularBasis::Canonical { .. } => z[..count].to_vec(),
            SingularBasis::Dense { dim, columns } => (0..count)
                .map(|i| exec::dot(&columns[i * dim..(i + 1) * dim], z))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub sigmas: Vec<f64>,
    pub left: SingularBasis,
    pub right: SingularBasis,
}

impl SpectralDecomposition {
    pub fn rank(&self) -> usize {
        self.sigmas.len()
    }

    /// `⟨y, u_i⟩` for every retained singular triplet.
    pub fn left_coefficients(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("left coefficients", self.left.dim(), y.len())?;
        Ok(self.left.coefficients(y, self.rank()))
    }

    /// `⟨x, v_i⟩` for every retained singular triplet.
    pub fn right_coefficients(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("right coefficients", self.right.dim(), x.len())?;
        Ok(self.right.coefficients(x, self.rank()))
    }
}
