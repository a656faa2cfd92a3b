//! Cardinal interpolation with shifts of the inverse multiquadric kernel
//! `(α² + x²)^(-k)` on finite windows of scattered nodes.
//!
//! The numerical core is generic over [`scalar::Real`]; the aliases below fix
//! the scalar type for the common cases.

pub mod cli;
pub mod collocation;
pub mod decay;
pub mod export;
pub mod fundamental;
pub mod interp;
pub mod kernel;
pub mod linalg;
pub mod nodes;
pub mod scalar;

pub type Params = kernel::KernelParams<f64>;
pub type Window = nodes::NodeWindow<f64>;
pub type Matrix = linalg::DenseMatrix<f64>;
pub type Collocation = collocation::CollocationMatrix<f64>;
pub type Inverse = collocation::InverseMatrix<f64>;
pub type Coefficients = collocation::CoefficientVector<f64>;
pub type Fundamental = fundamental::FundamentalFunction<f64>;
pub type Fundamentals = fundamental::FundamentalSet<f64>;
pub type Interpolant = interp::Interpolant<f64>;
pub type Fit = decay::DecayFit<f64>;

pub type Params32 = kernel::KernelParams<f32>;
pub type Window32 = nodes::NodeWindow<f32>;
pub type Collocation32 = collocation::CollocationMatrix<f32>;
pub type Interpolant32 = interp::Interpolant<f32>;
