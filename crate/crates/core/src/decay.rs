//! Off-diagonal decay of kernel matrices, their powers and inverses.
//!
//! An envelope is the profile `lag ↦ |M(s, t)|` read from one row; a fit is a
//! least-squares line through `(ln lag, ln magnitude)`. Bound reports measure
//! `max |M(s,t)| · (α² + (x_s − x_t)²)^k` over core pairs, the empirical
//! constant in front of a `(α² + d²)^(-k)` decay bound.

use serde::Serialize;
use thiserror::Error;

use crate::collocation::InverseMatrix;
use crate::kernel::KernelParams;
use crate::linalg::DenseMatrix;
use crate::nodes::{Core, NodeWindow};
use crate::scalar::Real;

pub const MIN_FIT_POINTS: usize = 5;
/// Magnitudes at or below this are left out of log fits.
pub const TINY_MAGNITUDE: f64 = 1e-300;
pub const MAX_POWER: u32 = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecayError {
    #[error("row {row} outside the core [{lo}, {hi}]")]
    OutsideCore { row: i64, lo: i64, hi: i64 },
    #[error("fit window [{lo}, {hi}] holds {found} usable points, need {needed} ({skipped} zero magnitudes skipped)")]
    Underpopulated { lo: f64, hi: f64, found: usize, needed: usize, skipped: usize },
    #[error("empty fit window [{lo}, {hi}]")]
    EmptyWindow { lo: f64, hi: f64 },
    #[error("matrix power n = {n} outside [1, {cap}]")]
    PowerOutOfRange { n: u32, cap: u32 },
    #[error("matrix is {rows}x{cols}, window has {nodes} nodes")]
    Shape { rows: usize, cols: usize, nodes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LagKind {
    /// `|m − n|`
    IndexDistance,
    /// `|x_m − x_n|`
    PositionDistance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayEnvelope<T> {
    /// `(lag, magnitude)` with strictly increasing lags.
    pub pairs: Vec<(T, T)>,
    pub lag_kind: LagKind,
}

impl<T: Real> DecayEnvelope<T> {
    /// Sorts by lag and keeps the larger magnitude on ties.
    pub fn from_points(mut points: Vec<(T, T)>, lag_kind: LagKind) -> Self {
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite lags"));
        let mut pairs: Vec<(T, T)> = Vec::with_capacity(points.len());
        for (lag, mag) in points {
            match pairs.last_mut() {
                Some(last) if last.0 == lag => last.1 = last.1.max(mag),
                _ => pairs.push((lag, mag)),
            }
        }
        Self { pairs, lag_kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit<T> {
    /// Slope of `ln magnitude` against `ln lag`.
    pub exponent: T,
    pub log_prefactor: T,
    pub residual_rms: T,
    pub lag_lo: T,
    pub lag_hi: T,
    pub points_used: usize,
    pub zeros_skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport<T> {
    pub max_ratio: T,
    /// Logical indices `(s, t)` of the maximizing pair.
    pub argmax_pair: (i64, i64),
    pub truncation_size: usize,
}

fn check_shape<T: Real>(m: &DenseMatrix<T>, window: &NodeWindow<T>) -> Result<(), DecayError> {
    if m.rows() != window.len() || m.cols() != window.len() {
        return Err(DecayError::Shape { rows: m.rows(), cols: m.cols(), nodes: window.len() });
    }
    Ok(())
}

/// Envelope of row `center_row` (logical index) over every column of the window.
pub fn envelope_of<T: Real>(
    entries: &DenseMatrix<T>,
    window: &NodeWindow<T>,
    center_row: i64,
    core: Core,
    lag_kind: LagKind,
) -> Result<DecayEnvelope<T>, DecayError> {
    check_shape(entries, window)?;
    if !core.contains(center_row) {
        return Err(DecayError::OutsideCore { row: center_row, lo: core.lo, hi: core.hi });
    }
    let s = window.storage(center_row).ok_or(DecayError::OutsideCore { row: center_row, lo: core.lo, hi: core.hi })?;
    let xs = window.nodes();
    let points = (0..window.len())
        .filter(|&t| t != s)
        .map(|t| {
            let lag = match lag_kind {
                LagKind::IndexDistance => T::from_usize_lossy(s.abs_diff(t)),
                LagKind::PositionDistance => (xs[s] - xs[t]).abs(),
            };
            (lag, entries.get(s, t).abs())
        })
        .collect();
    Ok(DecayEnvelope::from_points(points, lag_kind))
}

/// Least-squares power law `magnitude ≈ e^b · lag^a` over `[lag_lo, lag_hi]`.
pub fn fit_exponent<T: Real>(envelope: &DecayEnvelope<T>, lag_lo: T, lag_hi: T) -> Result<DecayFit<T>, DecayError> {
    if !(lag_lo <= lag_hi) || lag_lo <= T::zero() {
        return Err(DecayError::EmptyWindow { lo: lag_lo.to_f64_lossy(), hi: lag_hi.to_f64_lossy() });
    }
    let tiny = T::lit(TINY_MAGNITUDE);
    let mut skipped = 0;
    let mut pts = Vec::new();
    for &(lag, mag) in &envelope.pairs {
        if lag < lag_lo || lag > lag_hi {
            continue;
        }
        if mag <= tiny {
            skipped += 1;
        } else {
            pts.push((lag.ln(), mag.ln()));
        }
    }
    if pts.len() < MIN_FIT_POINTS {
        return Err(DecayError::Underpopulated {
            lo: lag_lo.to_f64_lossy(),
            hi: lag_hi.to_f64_lossy(),
            found: pts.len(),
            needed: MIN_FIT_POINTS,
            skipped,
        });
    }
    let n = T::from_usize_lossy(pts.len());
    let mx = pts.iter().map(|p| p.0).sum::<T>() / n;
    let my = pts.iter().map(|p| p.1).sum::<T>() / n;
    let sxx = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<T>();
    let sxy = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<T>();
    if sxx == T::zero() {
        // All points share one lag.
        return Err(DecayError::Underpopulated {
            lo: lag_lo.to_f64_lossy(),
            hi: lag_hi.to_f64_lossy(),
            found: 1,
            needed: MIN_FIT_POINTS,
            skipped,
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<T>();
    Ok(DecayFit {
        exponent: slope,
        log_prefactor: intercept,
        residual_rms: (ss / n).sqrt(),
        lag_lo,
        lag_hi,
        points_used: pts.len(),
        zeros_skipped: skipped,
    })
}

/// `[20, min(80, N/2 − margin)]`.
pub fn default_fit_window(half_width: usize, margin: usize) -> (f64, f64) {
    let hi = (half_width as f64 / 2.0 - margin as f64).min(80.0);
    (20.0, hi)
}

/// `max |M(s,t)| · (α² + (x_s − x_t)²)^k` over `rows × core`.
pub fn bound_ratio<T: Real>(
    entries: &DenseMatrix<T>,
    params: &KernelParams<T>,
    window: &NodeWindow<T>,
    rows: impl IntoIterator<Item = i64>,
    core: Core,
) -> Result<BoundReport<T>, DecayError> {
    check_shape(entries, window)?;
    let mut best = BoundReport { max_ratio: T::zero(), argmax_pair: (0, 0), truncation_size: window.len() };
    for s in rows {
        if !core.contains(s) {
            return Err(DecayError::OutsideCore { row: s, lo: core.lo, hi: core.hi });
        }
        let si = window.storage(s).expect("core inside window");
        for t in core.indices() {
            let ti = window.storage(t).expect("core inside window");
            let ratio = entries.get(si, ti).abs() * params.weight(window.at(s) - window.at(t));
            if ratio > best.max_ratio {
                best.max_ratio = ratio;
                best.argmax_pair = (s, t);
            }
        }
    }
    Ok(best)
}

/// Forms `Rⁿ` by repeated multiplication and reports its bound ratio on the core.
pub fn power_bound_check<T: Real>(
    r: &DenseMatrix<T>,
    n: u32,
    params: &KernelParams<T>,
    window: &NodeWindow<T>,
    core: Core,
) -> Result<BoundReport<T>, DecayError> {
    if n == 0 || n > MAX_POWER {
        return Err(DecayError::PowerOutOfRange { n, cap: MAX_POWER });
    }
    check_shape(r, window)?;
    let mut power = r.clone();
    for _ in 1..n {
        power = power.matmul(r);
    }
    bound_ratio(&power, params, window, core.indices(), core)
}

/// Empirical constant `max |A⁻¹(s,t)| · (α² + (x_s − x_t)²)^k` over core pairs.
pub fn inverse_bound_ratio<T: Real>(
    inverse: &InverseMatrix<T>,
    params: &KernelParams<T>,
    window: &NodeWindow<T>,
    core: Core,
) -> Result<BoundReport<T>, DecayError> {
    bound_ratio(&inverse.entries, params, window, core.indices(), core)
}
