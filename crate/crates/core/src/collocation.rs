//! Truncated collocation matrix `A(i,j) = (α² + (x_i − x_j)²)^(-k)`, its
//! Cholesky-based solves and inverse, and the Neumann-series inverse
//! `A⁻¹ = ‖A‖⁻¹ Σ Rʲ` with `R = I − A/‖A‖`.

use std::ops::Deref;
use std::sync::{Arc, OnceLock};

use thiserror::Error;

use crate::kernel::KernelParams;
use crate::linalg::{power_iteration, Cholesky, DenseMatrix, LinalgError};
use crate::nodes::{Core, NodeWindow};
use crate::scalar::Real;

pub const DEFAULT_MAX_NODES: usize = 5001;
pub const SPECTRAL_TOL: f64 = 1e-8;
pub const SPECTRAL_MAX_ITER: usize = 100_000;
/// `r_norm` at or above `1 - NEUMANN_MARGIN` is flagged non-convergent.
pub const NEUMANN_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CollocationError {
    #[error("window has {nodes} nodes, above the limit of {max}")]
    TooLarge { nodes: usize, max: usize },
    #[error("matrix not numerically positive definite (pivot index {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("right-hand side has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("Neumann series needs at least one term")]
    ZeroTerms,
    #[error("spectral estimate failed: {0}")]
    Spectral(LinalgError),
}

impl From<LinalgError> for CollocationError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NotPositiveDefinite { pivot, .. } => Self::NotPositiveDefinite { pivot },
            LinalgError::Dimension { expected, got } => Self::Dimension { expected, got },
            other => Self::Spectral(other),
        }
    }
}

/// Coefficients or data indexed like the node window.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector<T>(pub Vec<T>);

impl<T> Deref for CoefficientVector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T: Real> CoefficientVector<T> {
    pub fn zeros(n: usize) -> Self {
        Self(vec![T::zero(); n])
    }

    /// Unit vector at storage position `idx`.
    pub fn unit(n: usize, idx: usize) -> Self {
        let mut v = vec![T::zero(); n];
        v[idx] = T::one();
        Self(v)
    }

    pub fn max_abs(&self) -> T {
        self.0.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

pub struct CollocationMatrix<T> {
    entries: DenseMatrix<T>,
    params: KernelParams<T>,
    window: Arc<NodeWindow<T>>,
    factor: OnceLock<Result<Cholesky<T>, CollocationError>>,
}

impl<T: Real> std::fmt::Debug for CollocationMatrix<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CollocationMatrix")
            .field("size", &self.size())
            .field("params", &self.params)
            .finish()
    }
}

impl<T: Real> CollocationMatrix<T> {
    pub fn entries(&self) -> &DenseMatrix<T> {
        &self.entries
    }

    pub fn params(&self) -> &KernelParams<T> {
        &self.params
    }

    pub fn window(&self) -> &Arc<NodeWindow<T>> {
        &self.window
    }

    pub fn size(&self) -> usize {
        self.entries.rows()
    }

    /// Cholesky factor, computed once and cached.
    pub fn factor(&self) -> Result<&Cholesky<T>, CollocationError> {
        self.factor
            .get_or_init(|| Cholesky::factor(&self.entries).map_err(CollocationError::from))
            .as_ref()
            .map_err(Clone::clone)
    }

    /// Default interior core of the underlying window.
    pub fn default_core(&self) -> Core {
        self.window.core(self.window.default_margin())
    }
}

pub fn build_matrix<T: Real>(
    params: KernelParams<T>,
    window: Arc<NodeWindow<T>>,
) -> Result<CollocationMatrix<T>, CollocationError> {
    build_matrix_with_limit(params, window, DEFAULT_MAX_NODES)
}

pub fn build_matrix_with_limit<T: Real>(
    params: KernelParams<T>,
    window: Arc<NodeWindow<T>>,
    max_nodes: usize,
) -> Result<CollocationMatrix<T>, CollocationError> {
    let n = window.len();
    if n > max_nodes {
        return Err(CollocationError::TooLarge { nodes: n, max: max_nodes });
    }
    let xs = window.nodes();
    let mut entries = DenseMatrix::from_fn(n, n, |i, j| {
        if i <= j {
            params.eval(xs[i] - xs[j])
        } else {
            T::zero()
        }
    });
    // Mirror so symmetry is exact rather than dependent on x_i - x_j = -(x_j - x_i).
    for i in 0..n {
        for j in 0..i {
            let v = entries.get(j, i);
            entries.set(i, j, v);
        }
    }
    Ok(CollocationMatrix { entries, params, window, factor: OnceLock::new() })
}

pub fn spd_solve<T: Real>(
    matrix: &CollocationMatrix<T>,
    rhs: &CoefficientVector<T>,
) -> Result<CoefficientVector<T>, CollocationError> {
    if rhs.len() != matrix.size() {
        return Err(CollocationError::Dimension { expected: matrix.size(), got: rhs.len() });
    }
    Ok(CoefficientVector(matrix.factor()?.solve(rhs)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InverseSource {
    Direct,
    Neumann,
}

#[derive(Debug, Clone)]
pub struct InverseMatrix<T> {
    pub entries: DenseMatrix<T>,
    pub source: InverseSource,
    /// `max |(A·A⁻¹ − I)(i,j)|` over core rows and columns.
    pub residual_norm: T,
}

impl<T: Real> InverseMatrix<T> {
    pub fn size(&self) -> usize {
        self.entries.rows()
    }
}

/// Full inverse via one Cholesky solve per unit vector.
pub fn dense_invert<T: Real>(matrix: &CollocationMatrix<T>) -> Result<InverseMatrix<T>, CollocationError> {
    let entries = matrix.factor()?.inverse();
    let residual_norm = core_residual(matrix, &entries);
    Ok(InverseMatrix { entries, source: InverseSource::Direct, residual_norm })
}

fn core_residual<T: Real>(matrix: &CollocationMatrix<T>, inv: &DenseMatrix<T>) -> T {
    let core = matrix.default_core();
    let w = matrix.window();
    let idx: Vec<usize> = core.indices().filter_map(|j| w.storage(j)).collect();
    let a = matrix.entries();
    let mut worst = T::zero();
    for &i in &idx {
        let row = a.row(i);
        for &j in &idx {
            let mut acc = T::zero();
            for (u, &aiu) in row.iter().enumerate() {
                acc += aiu * inv.get(u, j);
            }
            let target = if i == j { T::one() } else { T::zero() };
            worst = worst.max((acc - target).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SpectralDiagnostics<T> {
    pub lambda_min: T,
    pub lambda_max: T,
    pub cond: T,
}

/// Extremal eigenvalues of the symmetric positive definite matrix: power
/// iteration for `λ_max`, inverse iteration through the Cholesky factor for
/// `λ_min`.
pub fn spectral_diagnostics<T: Real>(matrix: &CollocationMatrix<T>) -> Result<SpectralDiagnostics<T>, CollocationError> {
    let n = matrix.size();
    let a = matrix.entries();
    let tol = T::lit(SPECTRAL_TOL);
    let top = power_iteration(|v| a.matvec(v), vec![T::one(); n], tol, SPECTRAL_MAX_ITER)?;

    let factor = matrix.factor()?;
    // Alternating start: the lowest mode of a positive kernel matrix oscillates.
    let start = (0..n)
        .map(|i| {
            let s = if i % 2 == 0 { T::one() } else { -T::one() };
            s * (T::one() + T::lit(0.01) * T::from_usize_lossy(i % 7))
        })
        .collect();
    let bottom = power_iteration(|v| factor.solve(v).expect("dimension"), start, tol, SPECTRAL_MAX_ITER)?;
    let lambda_max = top.value;
    let lambda_min = T::one() / bottom.value;
    Ok(SpectralDiagnostics { lambda_min, lambda_max, cond: lambda_max / lambda_min })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct NeumannState<T> {
    /// Spectral norm of `R = I − A/‖A‖`.
    pub r_norm: T,
    pub terms_used: usize,
    /// `r_norm^terms · ‖A⁻¹‖`.
    pub remainder_bound: T,
    /// `‖A‖ = λ_max`.
    pub a_norm: T,
    /// `‖A⁻¹‖ = 1/λ_min`.
    pub a_inv_norm: T,
    pub convergent: bool,
}

/// Partial sum `‖A‖⁻¹ Σ_{j < n_terms} Rʲ`.
///
/// `R` is symmetric positive semidefinite with spectrum in `[0, 1 − λ_min/λ_max]`,
/// so its norm is read off the extremal eigenvalues of `A`.
pub fn neumann_inverse<T: Real>(
    matrix: &CollocationMatrix<T>,
    n_terms: usize,
) -> Result<(InverseMatrix<T>, NeumannState<T>), CollocationError> {
    if n_terms == 0 {
        return Err(CollocationError::ZeroTerms);
    }
    let diag = spectral_diagnostics(matrix)?;
    let n = matrix.size();
    let a_norm = diag.lambda_max;
    let id = DenseMatrix::identity(n);
    let r = id.sub(&matrix.entries().scale(T::one() / a_norm));

    // Horner: S₁ = I, S_{j+1} = I + R·S_j.
    let mut partial = id.clone();
    for _ in 1..n_terms {
        partial = id.add(&r.matmul(&partial));
    }
    let entries = partial.scale(T::one() / a_norm);

    let r_norm = (T::one() - diag.lambda_min / diag.lambda_max).max(T::zero());
    let a_inv_norm = T::one() / diag.lambda_min;
    let terms = i32::try_from(n_terms).unwrap_or(i32::MAX);
    let state = NeumannState {
        r_norm,
        terms_used: n_terms,
        remainder_bound: r_norm.powi(terms) * a_inv_norm,
        a_norm,
        a_inv_norm,
        convergent: r_norm < T::one() - T::lit(NEUMANN_MARGIN),
    };
    let residual_norm = core_residual(matrix, &entries);
    Ok((InverseMatrix { entries, source: InverseSource::Neumann, residual_norm }, state))
}
