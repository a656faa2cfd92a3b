//! The interpolation operator `I[y](x) = Σ_i (A⁻¹y)_i (α² + (x − x_i)²)^(-k)`,
//! its Lebesgue function and ℓᵖ → Lᵖ stability ratios.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::collocation::{spd_solve, CoefficientVector, CollocationError, CollocationMatrix};
use crate::fundamental::{expand, grid, sample, FundamentalSet};
use crate::kernel::KernelParams;
use crate::nodes::{Core, NodeWindow};
use crate::scalar::{pairwise_sum, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InterpError {
    #[error("data has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("data value at position {0} is not finite")]
    NonFinite(usize),
    #[error("evaluation through fundamentals requested but none attached")]
    MissingFundamentals,
    #[error("fundamentals belong to a different window")]
    ForeignFundamentals,
    #[error("core hull is a single point")]
    DegenerateHull,
    #[error("grid step {step} exceeds sep_min/10 = {limit}")]
    CoarseGrid { step: f64, limit: f64 },
    #[error(transparent)]
    Collocation(#[from] CollocationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPath {
    /// `Σ_i c_i φ(x − x_i)` with `c = A⁻¹y`.
    Direct,
    /// `Σ_i y_i L_i(x)`.
    ViaFundamentals,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PNorm {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "inf")]
    Infinity,
}

impl PNorm {
    pub const ALL: [PNorm; 3] = [PNorm::One, PNorm::Two, PNorm::Infinity];

    pub fn label(self) -> &'static str {
        match self {
            PNorm::One => "1",
            PNorm::Two => "2",
            PNorm::Infinity => "inf",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Interpolant<T> {
    coeffs: CoefficientVector<T>,
    data: CoefficientVector<T>,
    params: KernelParams<T>,
    window: Arc<NodeWindow<T>>,
    fundamentals: Option<Arc<FundamentalSet<T>>>,
}

pub fn make_interpolant<T: Real>(
    matrix: &CollocationMatrix<T>,
    y: CoefficientVector<T>,
) -> Result<Interpolant<T>, InterpError> {
    if y.len() != matrix.size() {
        return Err(InterpError::Dimension { expected: matrix.size(), got: y.len() });
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(InterpError::NonFinite(i));
    }
    let coeffs = spd_solve(matrix, &y)?;
    Ok(Interpolant {
        coeffs,
        data: y,
        params: matrix.params().clone(),
        window: matrix.window().clone(),
        fundamentals: None,
    })
}

impl<T: Real> Interpolant<T> {
    pub fn coeffs(&self) -> &CoefficientVector<T> {
        &self.coeffs
    }

    pub fn data(&self) -> &CoefficientVector<T> {
        &self.data
    }

    pub fn window(&self) -> &Arc<NodeWindow<T>> {
        &self.window
    }

    pub fn params(&self) -> &KernelParams<T> {
        &self.params
    }

    pub fn with_fundamentals(mut self, set: Arc<FundamentalSet<T>>) -> Result<Self, InterpError> {
        if set.window().nodes() != self.window.nodes() {
            return Err(InterpError::ForeignFundamentals);
        }
        self.fundamentals = Some(set);
        Ok(self)
    }

    pub fn eval(&self, x: T, path: EvalPath) -> Result<T, InterpError> {
        match path {
            EvalPath::Direct => Ok(expand(&self.params, self.window.nodes(), &self.coeffs, x)),
            EvalPath::ViaFundamentals => {
                let set = self.fundamentals.as_ref().ok_or(InterpError::MissingFundamentals)?;
                let l = set.values_at(x);
                Ok(l.iter().zip(self.data.iter()).map(|(&li, &yi)| li * yi).sum())
            }
        }
    }

    /// `max_{j ∈ core} |I[y](x_j) − y_j|` on the direct path.
    pub fn node_residual(&self, core: Core) -> T {
        core.indices()
            .map(|j| {
                let idx = self.window.storage(j).expect("core inside window");
                (self.eval(self.window.at(j), EvalPath::Direct).expect("direct path") - self.data[idx]).abs()
            })
            .fold(T::zero(), T::max)
    }
}

pub fn eval_interpolant<T: Real>(interp: &Interpolant<T>, x: T, path: EvalPath) -> Result<T, InterpError> {
    interp.eval(x, path)
}

/// `Λ(x) = Σ_j |L_j(x)|` over every fundamental function of the window.
pub fn lebesgue_function<T: Real>(fundamentals: &FundamentalSet<T>, x: T) -> T {
    fundamentals.values_at(x).into_iter().map(|v| v.abs()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport<T> {
    pub p: PNorm,
    /// `‖I[y]‖_p` over the core hull.
    pub norm_ip: T,
    /// Discrete `‖y‖_p` over core nodes.
    pub norm_yp: T,
    pub ratio: T,
    pub grid_step: T,
    /// Upper bound on the part of `‖I[y]‖_p` outside the hull, from the kernel tail.
    pub tail_bound: T,
}

/// Samples of `I[y]` on a uniform grid over the core hull, spacing at most `grid_step`.
pub fn hull_samples<T: Real>(interp: &Interpolant<T>, grid_step: T, core: Core) -> Result<(T, Vec<(T, T)>), InterpError> {
    let limit = interp.window.sep_min() / T::lit(10.0);
    if grid_step > limit || grid_step <= T::zero() {
        return Err(InterpError::CoarseGrid { step: grid_step.to_f64_lossy(), limit: limit.to_f64_lossy() });
    }
    let (lo, hi) = interp.window.hull(core);
    if hi <= lo {
        return Err(InterpError::DegenerateHull);
    }
    let cells = ((hi - lo) / grid_step).ceil().to_usize().unwrap_or(1).max(1);
    let h = (hi - lo) / T::from_usize_lossy(cells);
    let xs = grid(lo, hi, cells + 1);
    let vals = sample(|x| expand(&interp.params, interp.window.nodes(), &interp.coeffs, x), &xs);
    Ok((h, vals))
}

/// Composite trapezoid rule with pairwise summation.
fn trapezoid<T: Real>(h: T, f: &[T]) -> T {
    match f.len() {
        0 | 1 => T::zero(),
        n => {
            let interior = pairwise_sum(&f[1..n - 1]);
            h * (interior + (f[0] + f[n - 1]) / T::lit(2.0))
        }
    }
}

/// Analytic bounds on `∫|I|` and `sup|I|` outside `[lo, hi]`, using
/// `(α²+u²)^(-k) <= α^(-2(k-1)) (α²+u²)^(-1)` and `∫_d^∞ (α²+u²)^(-1) du = (π/2 − atan(d/α))/α`.
fn tail_bounds<T: Real>(interp: &Interpolant<T>, lo: T, hi: T) -> (T, T) {
    let alpha = interp.params.alpha();
    let flatten = T::one() / alpha.powi(2 * (interp.params.k() as i32 - 1));
    let half_pi = T::lit(std::f64::consts::FRAC_PI_2);
    let mut integral = T::zero();
    let mut sup = T::zero();
    for (&x, &c) in interp.window.nodes().iter().zip(interp.coeffs.iter()) {
        let c = c.abs();
        for d in [x - lo, hi - x] {
            // Nodes outside the hull sit inside the tail region; d < 0 counts the near side fully.
            let tail = if d >= T::zero() {
                (half_pi - (d / alpha).atan()) / alpha
            } else {
                (half_pi + (-d / alpha).atan()) / alpha
            };
            integral += c * flatten * tail;
        }
        let dist = if x < lo || x > hi { T::zero() } else { (x - lo).min(hi - x) };
        sup += c * interp.params.eval(dist);
    }
    (integral, sup)
}

/// `‖I[y]‖_p / ‖y‖_p` for each requested `p`, sharing one sampling pass.
pub fn lp_stability_all<T: Real>(
    interp: &Interpolant<T>,
    ps: &[PNorm],
    grid_step: T,
    core: Core,
) -> Result<Vec<StabilityReport<T>>, InterpError> {
    let (h, samples) = hull_samples(interp, grid_step, core)?;
    let (lo, hi) = interp.window.hull(core);
    let (tail_l1, tail_sup) = tail_bounds(interp, lo, hi);
    let y: Vec<T> = core
        .indices()
        .map(|j| interp.data[interp.window.storage(j).expect("core inside window")])
        .collect();
    let abs: Vec<T> = samples.iter().map(|s| s.1.abs()).collect();
    Ok(ps
        .iter()
        .map(|&p| {
            let (norm_ip, norm_yp, tail_bound) = match p {
                PNorm::One => {
                    let yn = pairwise_sum(&y.iter().map(|v| v.abs()).collect::<Vec<_>>());
                    (trapezoid(h, &abs), yn, tail_l1)
                }
                PNorm::Two => {
                    let sq: Vec<T> = abs.iter().map(|v| *v * *v).collect();
                    let yn = pairwise_sum(&y.iter().map(|v| *v * *v).collect::<Vec<_>>()).sqrt();
                    (trapezoid(h, &sq).sqrt(), yn, (tail_l1 * tail_sup).sqrt())
                }
                PNorm::Infinity => {
                    let yn = y.iter().fold(T::zero(), |m, v| m.max(v.abs()));
                    (abs.iter().fold(T::zero(), |m, v| m.max(*v)), yn, tail_sup)
                }
            };
            let ratio = if norm_yp == T::zero() { T::zero() } else { norm_ip / norm_yp };
            StabilityReport { p, norm_ip, norm_yp, ratio, grid_step: h, tail_bound }
        })
        .collect())
}

pub fn lp_stability<T: Real>(
    interp: &Interpolant<T>,
    p: PNorm,
    grid_step: T,
    core: Core,
) -> Result<StabilityReport<T>, InterpError> {
    Ok(lp_stability_all(interp, &[p], grid_step, core)?.remove(0))
}
