//! The inverse multiquadric kernel `(α² + t²)^(-k)` and the partial-fraction
//! identity used to bound products of shifted kernels.

use num_traits::pow;
use thiserror::Error;

use crate::scalar::Field;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("shape parameter alpha must be positive, got {0}")]
    NonPositiveAlpha(String),
    #[error("order k must be at least 1")]
    ZeroOrder,
    #[error("partial fraction split needs M >= 1")]
    ZeroSpan,
    #[error("index j = {j} outside [0, {m}]")]
    IndexOutOfSpan { j: u32, m: u32 },
}

/// Shape `alpha` and integer order `k` of the kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams<T> {
    alpha: T,
    k: u32,
}

impl<T: Field> KernelParams<T> {
    pub fn new(alpha: T, k: u32) -> Result<Self, KernelError> {
        if alpha <= T::zero() {
            return Err(KernelError::NonPositiveAlpha(format!("{alpha:?}")));
        }
        if k == 0 {
            return Err(KernelError::ZeroOrder);
        }
        Ok(Self { alpha, k })
    }

    pub fn alpha(&self) -> T {
        self.alpha.clone()
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn alpha_sq(&self) -> T {
        self.alpha.clone() * self.alpha.clone()
    }

    /// `(α² + t²)^k`, the reciprocal of the kernel. Used as the weight that
    /// turns a decay bound into a ratio.
    pub fn weight(&self, t: T) -> T {
        let base = self.alpha_sq() + t.clone() * t;
        pow(base, self.k as usize)
    }

    /// `(α² + t²)^(-k)`.
    ///
    /// The base is raised to the integer power by repeated squaring and
    /// inverted once, so no real-exponent `pow` is involved.
    pub fn eval(&self, t: T) -> T {
        T::one() / self.weight(t)
    }

    /// Kernel value at the origin, `α^(-2k)`.
    pub fn peak(&self) -> T {
        self.eval(T::zero())
    }
}

/// Free-function form of [`KernelParams::eval`].
pub fn imq_eval<T: Field>(params: &KernelParams<T>, t: T) -> T {
    params.eval(t)
}

/// Both sides of
///
/// ```text
/// 1 / [(α²+j²)(α²+(M−j)²)]
///     = (4α²+M²)⁻¹ [ ((2/M)j+1)/(α²+j²) + (3−(2/M)j)/(α²+(M−j)²) ]
/// ```
///
/// evaluated independently. Over an exact field the two agree exactly.
pub fn partial_fraction_split<T: Field>(alpha: T, m: u32, j: u32) -> Result<(T, T), KernelError> {
    if m == 0 {
        return Err(KernelError::ZeroSpan);
    }
    if j > m {
        return Err(KernelError::IndexOutOfSpan { j, m });
    }
    let a2 = alpha.clone() * alpha;
    let mm = from_u32::<T>(m);
    let jj = from_u32::<T>(j);
    let rest = mm.clone() - jj.clone();
    let left_den = a2.clone() + jj.clone() * jj.clone();
    let right_den = a2.clone() + rest.clone() * rest;

    let lhs = T::one() / (left_den.clone() * right_den.clone());

    let two = T::one() + T::one();
    let three = two.clone() + T::one();
    let four = two.clone() + two.clone();
    let slope = two / mm.clone() * jj;
    let left_num = slope.clone() + T::one();
    let right_num = three - slope;
    let scale = T::one() / (four * a2 + mm.clone() * mm);
    let rhs = scale * (left_num / left_den + right_num / right_den);
    Ok((lhs, rhs))
}

/// The numerator identity behind the split:
/// `((2/M)j+1)(α²+(M−j)²) + (3−(2/M)j)(α²+j²)`, which equals `4α²+M²`.
/// Returns `(combined_numerator, 4α²+M²)`.
pub fn partial_fraction_numerator<T: Field>(alpha: T, m: u32, j: u32) -> Result<(T, T), KernelError> {
    if m == 0 {
        return Err(KernelError::ZeroSpan);
    }
    if j > m {
        return Err(KernelError::IndexOutOfSpan { j, m });
    }
    let a2 = alpha.clone() * alpha;
    let mm = from_u32::<T>(m);
    let jj = from_u32::<T>(j);
    let rest = mm.clone() - jj.clone();
    let two = T::one() + T::one();
    let three = two.clone() + T::one();
    let four = two.clone() + two.clone();
    let slope = two / mm.clone() * jj.clone();
    let combined = (slope.clone() + T::one()) * (a2.clone() + rest.clone() * rest)
        + (three - slope) * (a2.clone() + jj.clone() * jj);
    Ok((combined, four * a2 + mm.clone() * mm))
}

fn from_u32<T: Field>(n: u32) -> T {
    // Binary expansion keeps this O(log n) and exact for any field.
    let mut acc = T::zero();
    let mut bit = T::one();
    let mut rem = n;
    while rem > 0 {
        if rem & 1 == 1 {
            acc = acc + bit.clone();
        }
        bit = bit.clone() + bit;
        rem >>= 1;
    }
    acc
}
