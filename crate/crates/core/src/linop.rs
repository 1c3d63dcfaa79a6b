//! Linear operators over finite-dimensional real spaces.
//!
//! An operator bundles a forward map, an adjoint map, and optional positive
//! quadrature weights on the domain. The weights realize `L^1` / `L^2`
//! discretizations of function spaces: the domain inner product is
//! `<u, v> = sum_i w_i u_i v_i`, integrals are weighted sums, and adjoints of
//! dense matrices pick up a division by the weights. The range is always
//! Euclidean (the data space is a plain Hilbert space).
//!
//! Operators are immutable after construction; apply and adjoint are pure, so
//! one operator can be shared across concurrent solves.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Dense real vector. Entries are expected to be finite; constructors in this
/// crate validate their own inputs and solvers hard-error on non-finite
/// iterates rather than wrapping every vector in a checked type.
pub type Vector = Array1<f64>;

#[derive(Debug, Error)]
pub enum LinopError {
    #[error("kernel evaluation at (s={s}, t={t}) is not finite")]
    NonFiniteKernel { s: f64, t: f64 },
    #[error("point spread function has {psf} taps but the signal has only {n}")]
    PsfTooLong { psf: usize, n: usize },
    #[error("matrix contains non-finite entries")]
    NonFiniteMatrix,
}

/// Quadrature rule for Fredholm discretizations on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    Midpoint,
    Trapezoid,
}

/// Boundary handling for discrete convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvolutionMode {
    ZeroPad,
}

type Map = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;

/// A bounded linear map with its adjoint.
#[derive(Clone)]
pub struct LinearOperator {
    domain_dim: usize,
    range_dim: usize,
    forward: Map,
    adjoint: Map,
    domain_weights: Option<Vector>,
}

impl std::fmt::Debug for LinearOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearOperator")
            .field("domain_dim", &self.domain_dim)
            .field("range_dim", &self.range_dim)
            .field("weighted", &self.domain_weights.is_some())
            .finish()
    }
}

/// Result of power-iteration norm estimation. The estimate approaches the
/// true norm from below, so callers that need a guaranteed upper bound must
/// inflate it (see [`crate::solver::lipschitz_constant`]).
#[derive(Debug, Clone, Copy)]
pub struct NormEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LinearOperator {
    /// Wraps a pair of closures. The caller is responsible for the adjoint
    /// actually being adjoint to the forward map with respect to the weighted
    /// domain inner product; the test suites verify this with sampled pairs.
    pub fn from_functions<F, G>(
        domain_dim: usize,
        range_dim: usize,
        forward: F,
        adjoint: G,
        domain_weights: Option<Vector>,
    ) -> Self
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
        G: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        if let Some(w) = &domain_weights {
            assert_eq!(w.len(), domain_dim, "weight vector length");
            assert!(w.iter().all(|&wi| wi > 0.0), "weights must be positive");
        }
        Self {
            domain_dim,
            range_dim,
            forward: Arc::new(forward),
            adjoint: Arc::new(adjoint),
            domain_weights,
        }
    }

    /// Dense matrix operator. With weights the adjoint is `diag(1/w) M^T`,
    /// the Riesz representation of the dual map in the weighted inner
    /// product; without weights it is the plain transpose action.
    pub fn from_dense(m: Array2<f64>, domain_weights: Option<Vector>) -> Result<Self, LinopError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(LinopError::NonFiniteMatrix);
        }
        let (rows, cols) = m.dim();
        let m = Arc::new(m);
        let mf = Arc::clone(&m);
        let w = domain_weights.clone();
        let forward = move |x: &Vector| mf.dot(x);
        let adjoint = move |v: &Vector| {
            let mut out = m.t().dot(v);
            if let Some(w) = &w {
                out /= w;
            }
            out
        };
        Ok(Self::from_functions(
            cols,
            rows,
            forward,
            adjoint,
            domain_weights,
        ))
    }

    pub fn identity(n: usize) -> Self {
        Self::from_functions(n, n, Vector::clone, Vector::clone, None)
    }

    /// Diagonal operator with the given entries (domain and range Euclidean).
    pub fn diagonal(d: Vector) -> Self {
        let d2 = d.clone();
        let n = d.len();
        Self::from_functions(n, n, move |x| &d * x, move |v| &d2 * v, None)
    }

    pub fn domain_dim(&self) -> usize {
        self.domain_dim
    }

    pub fn range_dim(&self) -> usize {
        self.range_dim
    }

    pub fn domain_weights(&self) -> Option<&Vector> {
        self.domain_weights.as_ref()
    }

    /// Evaluates `A x`.
    pub fn apply(&self, x: &Vector) -> Vector {
        assert_eq!(x.len(), self.domain_dim, "apply: dimension mismatch");
        (self.forward)(x)
    }

    /// Evaluates the adjoint `A* v` (weighted Riesz representative when the
    /// domain carries quadrature weights).
    pub fn apply_adjoint(&self, v: &Vector) -> Vector {
        assert_eq!(v.len(), self.range_dim, "apply_adjoint: dimension mismatch");
        (self.adjoint)(v)
    }

    /// Inner product of the domain space (weighted when weights are present).
    pub fn domain_inner(&self, u: &Vector, v: &Vector) -> f64 {
        match &self.domain_weights {
            Some(w) => u.iter().zip(v).zip(w).map(|((a, b), wi)| wi * a * b).sum(),
            None => u.dot(v),
        }
    }

    pub fn domain_norm(&self, u: &Vector) -> f64 {
        self.domain_inner(u, u).sqrt()
    }

    /// Weighted `L^1` norm of a domain element.
    pub fn domain_l1_norm(&self, u: &Vector) -> f64 {
        match &self.domain_weights {
            Some(w) => u.iter().zip(w).map(|(a, wi)| wi * a.abs()).sum(),
            None => u.iter().map(|a| a.abs()).sum(),
        }
    }

    /// Materializes the operator as a dense matrix by applying it to basis
    /// vectors. Desk-scale oracle paths only.
    pub fn dense_matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.range_dim, self.domain_dim));
        let mut e = Vector::zeros(self.domain_dim);
        for j in 0..self.domain_dim {
            e[j] = 1.0;
            let col = self.apply(&e);
            for i in 0..self.range_dim {
                m[[i, j]] = col[i];
            }
            e[j] = 0.0;
        }
        m
    }

    /// Operator norm for the domain-weighted `L^2` geometry, estimated by
    /// power iteration on `A* A` from a seeded random start. Successive
    /// Rayleigh quotients within a relative `tol` count as converged. The
    /// estimate is a lower bound on the true norm (up to rounding).
    pub fn estimate_norm(&self, tol: f64, max_iter: usize, seed: u64) -> NormEstimate {
        assert!(tol > 0.0, "estimate_norm: tol must be positive");
        assert!(max_iter >= 1, "estimate_norm: max_iter must be at least 1");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vector::from_shape_fn(self.domain_dim, |_| rng.random::<f64>() - 0.5);
        let nx = self.domain_norm(&x);
        if nx == 0.0 {
            return NormEstimate {
                value: 0.0,
                iterations: 0,
                converged: true,
            };
        }
        x /= nx;

        let mut rayleigh_prev = f64::NAN;
        for k in 1..=max_iter {
            let ax = self.apply(&x);
            let rayleigh = ax.dot(&ax); // <A*Ax, x>_X = |Ax|_Y^2 for unit x
            if rayleigh == 0.0 {
                return NormEstimate {
                    value: 0.0,
                    iterations: k,
                    converged: true,
                };
            }
            if (rayleigh - rayleigh_prev).abs() <= tol * rayleigh {
                return NormEstimate {
                    value: rayleigh.sqrt(),
                    iterations: k,
                    converged: true,
                };
            }
            rayleigh_prev = rayleigh;
            let mut bx = self.apply_adjoint(&ax);
            let nb = self.domain_norm(&bx);
            if nb == 0.0 {
                return NormEstimate {
                    value: 0.0,
                    iterations: k,
                    converged: true,
                };
            }
            bx /= nb;
            x = bx;
        }
        NormEstimate {
            value: rayleigh_prev.max(0.0).sqrt(),
            iterations: max_iter,
            converged: false,
        }
    }

    /// Exact operator norm from the weighted `L^1` domain into the Euclidean
    /// range: the extreme points of the weighted `L^1` ball are `e_j / w_j`,
    /// so the norm is a sweep over scaled columns.
    pub fn norm_l1_to_range(&self) -> f64 {
        let mut best: f64 = 0.0;
        let mut e = Vector::zeros(self.domain_dim);
        for j in 0..self.domain_dim {
            let wj = self.domain_weights.as_ref().map_or(1.0, |w| w[j]);
            e[j] = 1.0 / wj;
            let col = self.apply(&e);
            best = best.max(col.dot(&col).sqrt());
            e[j] = 0.0;
        }
        best
    }
}

/// Dense discretization of the Fredholm operator
/// `(A x)(s) = integral_0^1 k(s, t) x(t) dt` on a uniform grid, with the
/// quadrature weights stored on the domain.
pub fn build_fredholm<K>(
    kernel: K,
    n: usize,
    quadrature: Quadrature,
) -> Result<LinearOperator, LinopError>
where
    K: Fn(f64, f64) -> f64,
{
    assert!(n >= 2, "build_fredholm: n must be at least 2");
    let (nodes, weights) = match quadrature {
        Quadrature::Midpoint => {
            let h = 1.0 / n as f64;
            let nodes: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * h).collect();
            (nodes, vec![h; n])
        }
        Quadrature::Trapezoid => {
            let h = 1.0 / (n - 1) as f64;
            let nodes: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
            let mut w = vec![h; n];
            w[0] = h / 2.0;
            w[n - 1] = h / 2.0;
            (nodes, w)
        }
    };
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let v = kernel(nodes[i], nodes[j]);
            if !v.is_finite() {
                return Err(LinopError::NonFiniteKernel {
                    s: nodes[i],
                    t: nodes[j],
                });
            }
            m[[i, j]] = v * weights[j];
        }
    }
    LinearOperator::from_dense(m, Some(Vector::from(weights)))
}

/// Discrete convolution with the given point spread function, zero-padded at
/// the boundary. The adjoint is correlation (convolution with the reversed
/// psf), domain and range both Euclidean of length `n`.
pub fn build_convolution(
    psf: Vector,
    n: usize,
    mode: ConvolutionMode,
) -> Result<LinearOperator, LinopError> {
    let ConvolutionMode::ZeroPad = mode;
    if psf.len() > n {
        return Err(LinopError::PsfTooLong { psf: psf.len(), n });
    }
    if psf.iter().any(|v| !v.is_finite()) {
        return Err(LinopError::NonFiniteMatrix);
    }
    let p = psf.len();
    let psf2 = psf.clone();
    let forward = move |x: &Vector| {
        let mut out = Vector::zeros(n);
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..p.min(i + 1) {
                acc += psf[j] * x[i - j];
            }
            out[i] = acc;
        }
        out
    };
    let adjoint = move |v: &Vector| {
        let mut out = Vector::zeros(n);
        for k in 0..n {
            let mut acc = 0.0;
            for j in 0..p.min(n - k) {
                acc += psf2[j] * v[k + j];
            }
            out[k] = acc;
        }
        out
    };
    Ok(LinearOperator::from_functions(n, n, forward, adjoint, None))
}
