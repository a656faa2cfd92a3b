//! Fundamental (cardinal) functions
//! `L_m(x) = Σ_j A⁻¹(j, m) (α² + (x − x_j)²)^(-k)`, which take the value 1 at
//! `x_m` and 0 at every other node.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::collocation::{dense_invert, spd_solve, CoefficientVector, CollocationError, CollocationMatrix, InverseMatrix};
use crate::decay::{fit_exponent, DecayEnvelope, DecayError, DecayFit, LagKind};
use crate::kernel::KernelParams;
use crate::nodes::{Core, NodeWindow};
use crate::scalar::Real;

pub const MIN_SAMPLES: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FundamentalError {
    #[error("center index {0} outside the window")]
    CenterOutsideWindow(i64),
    #[error("sampling window [{lo}, {hi}] leaves the node core [{core_lo}, {core_hi}]")]
    OutsideCore { lo: f64, hi: f64, core_lo: f64, core_hi: f64 },
    #[error("need at least {MIN_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("coefficient vector has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Collocation(#[from] CollocationError),
    #[error(transparent)]
    Decay(#[from] DecayError),
}

#[derive(Debug, Clone)]
pub struct FundamentalFunction<T> {
    center: i64,
    coeffs: CoefficientVector<T>,
    params: KernelParams<T>,
    window: Arc<NodeWindow<T>>,
}

/// Kernel expansion `Σ_j c_j φ(x − x_j)`.
pub(crate) fn expand<T: Real>(params: &KernelParams<T>, nodes: &[T], coeffs: &[T], x: T) -> T {
    let mut acc = T::zero();
    for (&xj, &cj) in nodes.iter().zip(coeffs) {
        acc += cj * params.eval(x - xj);
    }
    acc
}

impl<T: Real> FundamentalFunction<T> {
    pub fn center(&self) -> i64 {
        self.center
    }

    pub fn center_node(&self) -> T {
        self.window.at(self.center)
    }

    pub fn coeffs(&self) -> &CoefficientVector<T> {
        &self.coeffs
    }

    pub fn params(&self) -> &KernelParams<T> {
        &self.params
    }

    pub fn window(&self) -> &Arc<NodeWindow<T>> {
        &self.window
    }

    pub fn eval(&self, x: T) -> T {
        expand(&self.params, self.window.nodes(), &self.coeffs, x)
    }
}

/// Solves `A c = e_m` for logical index `m`.
pub fn make_fundamental<T: Real>(matrix: &CollocationMatrix<T>, m: i64) -> Result<FundamentalFunction<T>, FundamentalError> {
    let window = matrix.window().clone();
    let idx = window.storage(m).ok_or(FundamentalError::CenterOutsideWindow(m))?;
    let coeffs = spd_solve(matrix, &CoefficientVector::unit(window.len(), idx))?;
    Ok(FundamentalFunction { center: m, coeffs, params: matrix.params().clone(), window })
}

pub fn eval_fundamental<T: Real>(l: &FundamentalFunction<T>, x: T) -> T {
    l.eval(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CardinalityReport<T> {
    pub max_abs_deviation: T,
    /// Logical index of the worst node.
    pub argmax_node: i64,
    pub pass: bool,
}

/// `max_{j ∈ core} |L_m(x_j) − δ_{jm}|`.
pub fn cardinality_residual<T: Real>(l: &FundamentalFunction<T>, core: Core, tol: T) -> CardinalityReport<T> {
    let mut worst = T::zero();
    let mut arg = l.center;
    for j in core.indices() {
        let target = if j == l.center { T::one() } else { T::zero() };
        let dev = (l.eval(l.window.at(j)) - target).abs();
        if dev > worst {
            worst = dev;
            arg = j;
        }
    }
    CardinalityReport { max_abs_deviation: worst, argmax_node: arg, pass: worst <= tol }
}

/// Uniform grid of `samples` points on `[lo, hi]`.
pub fn grid<T: Real>(lo: T, hi: T, samples: usize) -> Vec<T> {
    if samples <= 1 {
        return vec![lo];
    }
    let step = (hi - lo) / T::from_usize_lossy(samples - 1);
    (0..samples)
        .map(|i| if i + 1 == samples { hi } else { lo + step * T::from_usize_lossy(i) })
        .collect()
}

/// Evaluates `f` on a grid in parallel; output order follows the grid.
pub fn sample<T: Real>(f: impl Fn(T) -> T + Sync, xs: &[T]) -> Vec<(T, T)> {
    xs.par_iter().map(|&x| (x, f(x))).collect()
}

/// Per-unit-interval maxima of `|L_m(x_m + u)|` for `u ∈ [lag_lo, lag_hi]`,
/// each paired with the lag at which it occurs.
pub fn fundamental_envelope<T: Real>(
    l: &FundamentalFunction<T>,
    lag_lo: T,
    lag_hi: T,
    samples: usize,
    core: Core,
) -> Result<DecayEnvelope<T>, FundamentalError> {
    if samples < MIN_SAMPLES {
        return Err(FundamentalError::TooFewSamples(samples));
    }
    let xm = l.center_node();
    let (hull_lo, hull_hi) = l.window.hull(core);
    let (lo, hi) = (xm + lag_lo, xm + lag_hi);
    // A one-node window is its own whole problem; there is no truncation edge.
    let outside = l.window.len() > 1 && (lo < hull_lo || hi > hull_hi);
    if outside || lag_lo < T::zero() || lag_hi <= lag_lo {
        return Err(FundamentalError::OutsideCore {
            lo: lo.to_f64_lossy(),
            hi: hi.to_f64_lossy(),
            core_lo: hull_lo.to_f64_lossy(),
            core_hi: hull_hi.to_f64_lossy(),
        });
    }
    let values = sample(|x| l.eval(x).abs(), &grid(lo, hi, samples));
    let mut bins: Vec<(i64, T, T)> = Vec::new();
    for (x, v) in values {
        let lag = x - xm;
        let bin = lag.floor().to_i64().unwrap_or(i64::MAX);
        match bins.last_mut() {
            Some(last) if last.0 == bin => {
                if v > last.2 {
                    last.1 = lag;
                    last.2 = v;
                }
            }
            _ => bins.push((bin, lag, v)),
        }
    }
    let points = bins.into_iter().filter(|b| b.1 > T::zero()).map(|(_, lag, v)| (lag, v)).collect();
    Ok(DecayEnvelope::from_points(points, LagKind::PositionDistance))
}

/// Power-law fit of the per-unit-interval envelope of `|L_m|` over lags `[lag_lo, lag_hi]`.
pub fn envelope_fit_fundamental<T: Real>(
    l: &FundamentalFunction<T>,
    lag_lo: T,
    lag_hi: T,
    samples: usize,
    core: Core,
) -> Result<DecayFit<T>, FundamentalError> {
    let env = fundamental_envelope(l, lag_lo, lag_hi, samples, core)?;
    Ok(fit_exponent(&env, lag_lo, lag_hi)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlateauReport<T> {
    /// `max |L_m(x)| (α² + (x − x_m)²)^k` over the near lag band.
    pub near_max: T,
    /// Same over the far lag band.
    pub far_max: T,
    pub ratio: T,
}

/// Compares the weighted envelope `|L_m(x)|·(α² + (x − x_m)²)^k` on a far
/// band against a near band; a bounded ratio means the decay bound holds
/// with a stable constant.
pub fn bound_plateau<T: Real>(
    l: &FundamentalFunction<T>,
    near: (T, T),
    far: (T, T),
    step: T,
) -> PlateauReport<T> {
    let xm = l.center_node();
    let band_max = |(a, b): (T, T)| {
        let n = ((b - a) / step).ceil().to_usize().unwrap_or(1).max(1) + 1;
        sample(|u| l.eval(xm + u).abs() * l.params.weight(u), &grid(a, b, n))
            .into_iter()
            .fold(T::zero(), |m, (_, v)| m.max(v))
    };
    let near_max = band_max(near);
    let far_max = band_max(far);
    PlateauReport { near_max, far_max, ratio: far_max / near_max }
}

/// Largest jump between neighbouring samples of `f` on `[lo, hi]` at spacing `h`.
pub fn max_adjacent_jump<T: Real>(f: impl Fn(T) -> T + Sync, lo: T, hi: T, h: T) -> T {
    let n = ((hi - lo) / h).round().to_usize().unwrap_or(1).max(1) + 1;
    let vals = sample(f, &grid(lo, hi, n));
    vals.windows(2).fold(T::zero(), |m, w| m.max((w[1].1 - w[0].1).abs()))
}

/// All fundamental functions of a window at once, backed by the dense inverse.
#[derive(Debug, Clone)]
pub struct FundamentalSet<T> {
    inverse: InverseMatrix<T>,
    params: KernelParams<T>,
    window: Arc<NodeWindow<T>>,
}

impl<T: Real> FundamentalSet<T> {
    pub fn from_matrix(matrix: &CollocationMatrix<T>) -> Result<Self, FundamentalError> {
        Ok(Self {
            inverse: dense_invert(matrix)?,
            params: matrix.params().clone(),
            window: matrix.window().clone(),
        })
    }

    pub fn inverse(&self) -> &InverseMatrix<T> {
        &self.inverse
    }

    pub fn window(&self) -> &Arc<NodeWindow<T>> {
        &self.window
    }

    pub fn params(&self) -> &KernelParams<T> {
        &self.params
    }

    pub fn get(&self, m: i64) -> Result<FundamentalFunction<T>, FundamentalError> {
        let idx = self.window.storage(m).ok_or(FundamentalError::CenterOutsideWindow(m))?;
        Ok(FundamentalFunction {
            center: m,
            coeffs: CoefficientVector(self.inverse.entries.column(idx)),
            params: self.params.clone(),
            window: self.window.clone(),
        })
    }

    /// `(L_m(x))` for every storage index `m`.
    pub fn values_at(&self, x: T) -> Vec<T> {
        let n = self.window.len();
        let mut out = vec![T::zero(); n];
        for (j, &xj) in self.window.nodes().iter().enumerate() {
            let phi = self.params.eval(x - xj);
            for (o, &a) in out.iter_mut().zip(self.inverse.entries.row(j)) {
                *o += a * phi;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesValue<T> {
    pub value: T,
    /// `max(|b_first L_first(x)|, |b_last L_last(x)|)`, the size of the
    /// outermost terms kept by the truncation.
    pub tail_term: T,
}

/// `Σ_m b_m L_m(x)` over the window.
pub fn weighted_series_eval<T: Real>(
    fundamentals: &FundamentalSet<T>,
    b: &CoefficientVector<T>,
    x: T,
) -> Result<SeriesValue<T>, FundamentalError> {
    let n = fundamentals.window.len();
    if b.len() != n {
        return Err(FundamentalError::Dimension { expected: n, got: b.len() });
    }
    let l = fundamentals.values_at(x);
    let value = l.iter().zip(b.iter()).map(|(&li, &bi)| li * bi).sum();
    let tail_term = (b[0] * l[0]).abs().max((b[n - 1] * l[n - 1]).abs());
    Ok(SeriesValue { value, tail_term })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collocation::build_matrix;
    use approx::assert_abs_diff_eq;

    fn matrix(w: NodeWindow<f64>, alpha: f64, k: u32) -> CollocationMatrix<f64> {
        build_matrix(KernelParams::new(alpha, k).unwrap(), Arc::new(w)).unwrap()
    }

    #[test]
    fn two_node_fundamental() {
        let m = matrix(NodeWindow::with_center(vec![0.0, 1.0], 0).unwrap(), 1.0, 1);
        let l = make_fundamental(&m, 0).unwrap();
        assert_abs_diff_eq!(l.coeffs()[0], 4.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(l.coeffs()[1], -2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(l.eval(0.0), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(l.eval(1.0), 0.0, epsilon = 1e-14);
        assert!(matches!(make_fundamental(&m, 2), Err(FundamentalError::CenterOutsideWindow(2))));
    }

    #[test]
    fn three_node_fundamental() {
        let m = matrix(NodeWindow::lattice(1), 1.0, 1);
        let l = make_fundamental(&m, 0).unwrap();
        for (g, w) in l.coeffs().iter().zip([-5.0 / 7.0, 12.0 / 7.0, -5.0 / 7.0]) {
            assert_abs_diff_eq!(*g, w, epsilon = 1e-14);
        }
        let rep = cardinality_residual(&l, NodeWindow::<f64>::lattice(1).core(0), 1e-14);
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn single_node_is_scaled_kernel() {
        let m = matrix(NodeWindow::lattice(0), 2.0, 2);
        let l = make_fundamental(&m, 0).unwrap();
        assert_abs_diff_eq!(l.coeffs()[0], 16.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.eval(0.0), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(l.eval(3.0), 16.0 / 169.0, epsilon = 1e-14);
        assert_eq!(cardinality_residual(&l, m.window().core(0), 0.0).max_abs_deviation, 0.0);
    }

    #[test]
    fn single_node_decay_fit() {
        // L_0 is the normalized kernel; its log-log slope tends to -2k.
        let m = matrix(NodeWindow::lattice(0), 1.0, 2);
        let l = make_fundamental(&m, 0).unwrap();
        let fit = envelope_fit_fundamental(&l, 100.0, 600.0, 5001, m.default_core()).unwrap();
        assert_abs_diff_eq!(fit.exponent, -4.0, epsilon = 1e-3);
    }

    #[test]
    fn lattice_cardinality_k2() {
        let m = matrix(NodeWindow::lattice(100), 2.0, 2);
        let core = m.default_core();
        for c in [-75, -20, 0, 33, 75] {
            let rep = cardinality_residual(&make_fundamental(&m, c).unwrap(), core, 1e-8);
            assert!(rep.pass, "m={c}: {rep:?}");
        }
    }

    #[test]
    fn jittered_cardinality() {
        let m = matrix(NodeWindow::jittered(60, 0.25, 9).unwrap(), 2.0, 2);
        let core = m.default_core();
        for c in [-45, 0, 17] {
            assert!(cardinality_residual(&make_fundamental(&m, c).unwrap(), core, 1e-8).pass);
        }
    }

    #[test]
    fn envelope_rejects_bad_requests() {
        let m = matrix(NodeWindow::lattice(40), 2.0, 1);
        let l = make_fundamental(&m, 0).unwrap();
        let core = m.default_core();
        assert!(matches!(fundamental_envelope(&l, 1.0, 5.0, 10, core), Err(FundamentalError::TooFewSamples(10))));
        assert!(matches!(fundamental_envelope(&l, 1.0, 35.0, 100, core), Err(FundamentalError::OutsideCore { .. })));
    }

    #[test]
    fn set_matches_individual_solves() {
        let m = matrix(NodeWindow::jittered(15, 0.2, 4).unwrap(), 1.5, 1);
        let set = FundamentalSet::from_matrix(&m).unwrap();
        let vals = set.values_at(0.37);
        for j in [-15, -3, 0, 8, 15] {
            let l = make_fundamental(&m, j).unwrap();
            let from_set = set.get(j).unwrap();
            assert_abs_diff_eq!(l.eval(0.37), from_set.eval(0.37), epsilon = 1e-10);
            assert_abs_diff_eq!(l.eval(0.37), vals[m.window().storage(j).unwrap()], epsilon = 1e-10);
        }
    }

    #[test]
    fn series_of_unit_and_constant_data() {
        let m = matrix(NodeWindow::lattice(30), 2.0, 1);
        let set = FundamentalSet::from_matrix(&m).unwrap();
        let e = CoefficientVector::unit(61, 35);
        let s = weighted_series_eval(&set, &e, 2.3).unwrap();
        assert_abs_diff_eq!(s.value, make_fundamental(&m, 5).unwrap().eval(2.3), epsilon = 1e-10);
        let ones = CoefficientVector(vec![1.0; 61]);
        for j in -10..=10 {
            let s = weighted_series_eval(&set, &ones, j as f64).unwrap();
            assert_abs_diff_eq!(s.value, 1.0, epsilon = 1e-8);
        }
        assert!(weighted_series_eval(&set, &CoefficientVector(vec![1.0; 3]), 0.0).is_err());
    }

    #[test]
    fn squares_reproduced_at_nodes() {
        let m = matrix(NodeWindow::lattice(40), 2.0, 2);
        let set = FundamentalSet::from_matrix(&m).unwrap();
        let b = CoefficientVector((-40i64..=40).map(|j| (j * j) as f64).collect());
        for j in -20i64..=20 {
            let s = weighted_series_eval(&set, &b, j as f64).unwrap();
            assert_abs_diff_eq!(s.value, (j * j) as f64, epsilon = 1e-6);
        }
    }

    #[test]
    fn continuity_jumps_halve() {
        let m = matrix(NodeWindow::lattice(30), 2.0, 2);
        let l = make_fundamental(&m, 0).unwrap();
        let j1 = max_adjacent_jump(|x| l.eval(x), -10.0, 10.0, 0.02);
        let j2 = max_adjacent_jump(|x| l.eval(x), -10.0, 10.0, 0.01);
        let r = j2 / j1;
        assert!((0.3..=0.7).contains(&r), "{r}");
    }

    #[test]
    fn grid_endpoints() {
        let g = grid(0.0, 1.0, 5);
        assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }
}
