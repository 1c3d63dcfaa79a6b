//! Dual gradient methods for constrained linear ill-posed problems.
//!
//! Given a bounded linear operator `A` between finite-dimensional spaces and
//! noisy data `y_delta` with known noise level, the solvers here minimize a
//! strongly convex penalty `R` subject to `A x = y` by running gradient
//! descent on the Fenchel dual: each dual step induces a primal iterate
//! through the conjugate gradient map of `R`. Depending on the penalty this
//! yields classical Landweber iteration (quadratic), projected Landweber
//! (quadratic plus a convex constraint), or an entropic multiplicative scheme
//! (negative Boltzmann-Shannon entropy on the probability simplex).
//!
//! The crate is organized along the pipeline of a regularization experiment:
//!
//! * [`linop`]: operators with adjoints, quadrature weights, and norm
//!   estimation; Fredholm and convolution constructors.
//! * [`penalty`]: strongly convex penalties, their conjugate maps, Bregman
//!   distances, and constraint-set projections.
//! * [`solver`]: the plain, accelerated, and entropic-baseline iterations
//!   plus stopping rules (a-priori counts and the discrepancy principle).
//! * [`analysis`]: source conditions, error measures, the eta decay oracle,
//!   and log-log rate regression.
//! * [`problems`]: reproducible test problems whose ground truths satisfy
//!   source conditions by construction, with exact-norm noise injection.
//! * [`study`]: the noise-grid experiment loop shared by tests and the CLI.
//! * [`svd`]: a desk-scale Jacobi SVD used by the oracle paths.

pub mod analysis;
pub mod linop;
pub mod penalty;
pub mod problems;
pub mod solver;
pub mod study;
pub mod svd;
