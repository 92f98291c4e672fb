//! Pseudo-panel econometrics: build cohort × year panels from repeated
//! cross-section survey micro-data and estimate static (OLS, fixed effects,
//! random effects) and dynamic (difference / system GMM) linear models.

pub mod dgp;
pub mod gmm;
pub mod ingest;
pub mod model;
pub mod montecarlo;
pub mod numerics;
pub mod panel;
pub mod pipeline;
pub mod static_models;

pub use numerics::{Mat, Scalar, SymMat};

/// Double-precision dense matrix used by the estimators.
pub type Matrix = Mat<f64>;
/// Double-precision symmetric matrix used for covariances and weights.
pub type SymmetricMatrix = SymMat<f64>;
/// Single-precision variants of the numerical kernels.
pub type Matrix32 = Mat<f32>;
pub type SymmetricMatrix32 = SymMat<f32>;
