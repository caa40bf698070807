//! Scattered-data surface smoothing with a mixed finite element thin plate
//! spline (TPSFEM).
//!
//! The crate fits a smooth surface `s` to scattered `(x1, x2, y)` data by
//! minimising a data-misfit plus gradient-smoothness functional over a
//! piecewise linear finite element space. Auxiliary gradient fields keep the
//! system first-order and sparse; a Lagrange multiplier enforces the weak
//! coupling between the surface and its gradient. The finite element grid is
//! refined either uniformly or adaptively, with five per-edge error
//! indicators available to steer the adaptive marking, and the smoothing
//! parameter is chosen by generalised cross-validation with a stochastic
//! trace estimator.
//!
//! Modules:
//! - [`mesh`]: conforming triangular grids with newest-node bisection.
//! - [`data`]: ingestion, synthetic data, point location and bucketing.
//! - [`assembly`]: sparse system blocks and boundary treatment.
//! - [`solver`]: sparse direct saddle-point solve, evaluation, fit metrics.
//! - [`gcv`]: smoothing-parameter selection.
//! - [`indicators`]: the five per-edge error indicators.
//! - [`driver`]: the iterative refinement loop.
//! - [`rbf`]: thin plate spline and compact-support RBF baselines.
//! - [`cli`]: batch command front end.

pub mod assembly;
pub mod cli;
pub mod data;
pub mod driver;
pub mod gcv;
pub mod geometry;
pub mod indicators;
pub mod mesh;
pub mod rbf;
pub mod solver;
mod sparse;

pub use sparse::SparseMatrix;
