//! Small dense linear algebra: row-major matrices, Cholesky factorization and
//! power iteration. Sized for a few thousand unknowns.

use rayon::prelude::*;
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix not numerically positive definite (pivot {pivot}, value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("power iteration did not converge in {iterations} iterations (last relative change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> T + Sync) -> Self {
        let mut data = vec![T::zero(); rows * cols];
        if cols > 0 {
            data.par_chunks_mut(cols).enumerate().for_each(|(i, row)| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = f(i, j);
                }
            });
        }
        Self { rows, cols, data }
    }

    /// Builds from row-major data.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::Dimension { expected: rows * cols, got: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "matvec dimension");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// Row-parallel product; each output row is accumulated in a fixed order.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension");
        let n = other.cols;
        let mut data = vec![T::zero(); self.rows * n];
        if n > 0 {
            data.par_chunks_mut(n).enumerate().for_each(|(i, out)| {
                for (k, &a) in self.row(i).iter().enumerate() {
                    if a == T::zero() {
                        continue;
                    }
                    for (o, &b) in out.iter_mut().zip(other.row(k)) {
                        *o += a * b;
                    }
                }
            });
        }
        Self { rows: self.rows, cols: n, data }
    }

    pub fn scale(&self, s: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// `max |M(i,j) - M(j,i)|`.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn norm2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Lower-triangular factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    n: usize,
    lower: Vec<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn factor(a: &DenseMatrix<T>) -> Result<Self, LinalgError> {
        if !a.is_square() {
            return Err(LinalgError::Dimension { expected: a.rows(), got: a.cols() });
        }
        let n = a.rows();
        let mut lower = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let (ri, rj) = (i * n, j * n);
                let partial = dot(&lower[ri..ri + j], &lower[rj..rj + j]);
                let v = a.get(i, j) - partial;
                if i == j {
                    if !(v > T::zero()) || !v.is_finite() {
                        return Err(LinalgError::NotPositiveDefinite { pivot: i, value: v.to_f64_lossy() });
                    }
                    lower[ri + i] = v.sqrt();
                } else {
                    lower[ri + j] = v / lower[rj + j];
                }
            }
        }
        Ok(Self { n, lower })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[T]) -> Result<Vec<T>, LinalgError> {
        if rhs.len() != self.n {
            return Err(LinalgError::Dimension { expected: self.n, got: rhs.len() });
        }
        let n = self.n;
        let mut y = rhs.to_vec();
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i];
            y[i] = (y[i] - dot(row, &y[..i])) / self.lower[i * n + i];
        }
        // Back substitution with Lᵀ, sweeping rows of L so access stays contiguous.
        for i in (0..n).rev() {
            y[i] /= self.lower[i * n + i];
            let xi = y[i];
            for (yk, &l) in y[..i].iter_mut().zip(&self.lower[i * n..i * n + i]) {
                *yk -= l * xi;
            }
        }
        Ok(y)
    }

    /// `A⁻¹` column by column; columns are solved in parallel.
    pub fn inverse(&self) -> DenseMatrix<T> {
        let n = self.n;
        let cols: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![T::zero(); n];
                e[j] = T::one();
                self.solve(&e).expect("dimension checked")
            })
            .collect();
        DenseMatrix::from_fn(n, n, |i, j| cols[j][i])
    }
}

/// Result of a power iteration.
#[derive(Debug, Clone)]
pub struct Eigenpair<T> {
    pub value: T,
    pub vector: Vec<T>,
    pub iterations: usize,
}

/// Dominant eigenvalue of a symmetric operator by power iteration with a
/// Rayleigh-quotient stopping rule `|θₖ − θₖ₋₁| <= tol·|θₖ|`.
pub fn power_iteration<T: Real>(
    mut apply: impl FnMut(&[T]) -> Vec<T>,
    start: Vec<T>,
    tol: T,
    max_iter: usize,
) -> Result<Eigenpair<T>, LinalgError> {
    let mut v = start;
    let nv = norm2(&v);
    if nv == T::zero() {
        return Ok(Eigenpair { value: T::zero(), vector: v, iterations: 0 });
    }
    v.iter_mut().for_each(|x| *x /= nv);
    let mut theta = T::nan();
    let mut change = T::infinity();
    for it in 1..=max_iter {
        let w = apply(&v);
        let next = dot(&v, &w);
        let nw = norm2(&w);
        if nw == T::zero() {
            return Ok(Eigenpair { value: T::zero(), vector: v, iterations: it });
        }
        v = w.into_iter().map(|x| x / nw).collect();
        if theta.is_finite() {
            change = (next - theta).abs() / next.abs().max(T::min_positive_value());
            if change <= tol {
                return Ok(Eigenpair { value: next, vector: v, iterations: it });
            }
        }
        theta = next;
    }
    Err(LinalgError::NoConvergence { iterations: max_iter, change: change.to_f64_lossy() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn spd(n: usize, seed: u64) -> DenseMatrix<f64> {
        // B Bᵀ + n I with a cheap deterministic B.
        let b = DenseMatrix::from_fn(n, n, |i, j| {
            let h = (i as u64 * 2654435761 + j as u64 * 40503 + seed * 97) % 1000;
            h as f64 / 500.0 - 1.0
        });
        b.matmul(&b.transpose()).add(&DenseMatrix::identity(n).scale(n as f64))
    }

    #[test]
    fn cholesky_two_by_two() {
        let a = DenseMatrix::from_rows(2, 2, vec![1.0, 0.5, 0.5, 1.0]).unwrap();
        let ch = Cholesky::factor(&a).unwrap();
        let x = ch.solve(&[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(x[0], 4.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], -2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn cholesky_reports_pivot() {
        let a = DenseMatrix::from_rows(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 2.0, 1.0]).unwrap();
        match Cholesky::factor(&a) {
            Err(LinalgError::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = spd(12, 3);
        let inv = Cholesky::factor(&a).unwrap().inverse();
        let prod = a.matmul(&inv);
        assert!(prod.max_abs_diff(&DenseMatrix::identity(12)) < 1e-12);
    }

    #[test]
    fn power_iteration_diagonal() {
        let d = [3.0, 1.0, 0.5];
        let e = power_iteration(|v: &[f64]| v.iter().zip(d).map(|(x, s)| x * s).collect(), vec![1.0; 3], 1e-12, 10_000)
            .unwrap();
        assert_abs_diff_eq!(e.value, 3.0, epsilon = 1e-10);
    }

    #[test]
    fn power_iteration_cap() {
        // Nearly degenerate top pair: the Rayleigh quotient is still drifting after 50 steps.
        let r = power_iteration(|v: &[f64]| vec![v[0], 0.999 * v[1]], vec![1.0, 1.0], 1e-14, 50);
        assert!(matches!(r, Err(LinalgError::NoConvergence { .. })));
    }

    #[test]
    fn single_precision_solve() {
        let a = DenseMatrix::from_rows(2, 2, vec![2.0_f32, 1.0, 1.0, 2.0]).unwrap();
        let x = Cholesky::factor(&a).unwrap().solve(&[3.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn solve_residual_small(n in 1usize..25, seed in 0u64..1000, rhs_scale in 0.1f64..10.0) {
            let a = spd(n, seed);
            let b: Vec<f64> = (0..n).map(|i| rhs_scale * ((i * 7 % 5) as f64 - 2.0)).collect();
            let x = Cholesky::factor(&a).unwrap().solve(&b).unwrap();
            let r = a.matvec(&x);
            let err = r.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            prop_assert!(err <= 1e-10 * rhs_scale * n as f64);
        }
    }
}
