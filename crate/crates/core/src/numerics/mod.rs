//! Dense linear algebra and distribution kernels shared by every estimator.
//!
//! Everything here is generic over [`Scalar`], which is implemented for `f32`
//! and `f64`. The estimators themselves work in `f64` through the aliases at
//! the crate root.

mod dist;
mod eigen;
mod lstsq;
mod matrix;
mod stats;

pub use dist::{chi_square_sf, normal_sf, two_sided_p};
pub use eigen::{generalized_inverse, symmetric_eigen, SymEigen};
pub use lstsq::{invert_spd, solve_least_squares, solve_spd, LeastSquares};
pub use matrix::{Mat, SymMat};
pub use stats::{mean, percentile, sample_sd};

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating point scalar usable by the numerical kernels.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, panicking only if the value is unrepresentable.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("design matrix is rank deficient at column {0}")]
    RankDeficient(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("not enough observations: {rows} rows for {cols} columns")]
    Underdetermined { rows: usize, cols: usize },
    #[error("argument outside the function domain: {0}")]
    Domain(String),
    #[error("empty input")]
    EmptyInput,
    #[error("matrix contains non-finite entries")]
    NonFinite,
}
