//! Dense singular value decomposition by one-sided Jacobi rotations.
//!
//! Desk-scale only (hundreds of rows/columns). Serves as the independent
//! oracle for operator-norm estimates, fractional operator powers, and the
//! exact inner solves of the quadratic eta oracle. One-sided Jacobi is slow
//! but simple and accurate: it orthogonalizes the columns of the input by
//! plane rotations, so singular values come out as column norms.

use ndarray::{Array1, Array2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SvdError {
    #[error("input matrix contains non-finite entries")]
    NonFinite,
    #[error("Jacobi sweeps did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
}

/// Thin SVD `G = U diag(s) V^T` with `k = min(m, n)` columns.
///
/// Singular values are sorted in decreasing order. Columns of `u` that
/// correspond to numerically zero singular values are zero vectors.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub v: Array2<f64>,
}

impl Svd {
    /// Largest singular value (0 for an empty or zero matrix).
    pub fn norm(&self) -> f64 {
        self.s.first().copied().unwrap_or(0.0)
    }
}

const MAX_SWEEPS: usize = 64;

/// One-sided Jacobi SVD of a dense matrix.
pub fn jacobi_svd(g: &Array2<f64>) -> Result<Svd, SvdError> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(SvdError::NonFinite);
    }
    let (m, n) = g.dim();
    if m >= n {
        jacobi_tall(g)
    } else {
        // work on the transpose and swap the factors back
        let t = g.t().to_owned();
        let svd = jacobi_tall(&t)?;
        Ok(Svd {
            u: svd.v,
            s: svd.s,
            v: svd.u,
        })
    }
}

fn jacobi_tall(g: &Array2<f64>) -> Result<Svd, SvdError> {
    let (m, n) = g.dim();
    let mut w = g.to_owned();
    let mut v = Array2::<f64>::eye(n);
    let scale: f64 = w.iter().map(|x| x * x).sum::<f64>();
    if scale == 0.0 || n == 0 {
        return Ok(Svd {
            u: Array2::zeros((m, n)),
            s: Array1::zeros(n),
            v,
        });
    }
    let tol = 1e-15;

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..m {
                    let wp = w[[i, p]];
                    let wq = w[[i, q]];
                    app += wp * wp;
                    aqq += wq * wq;
                    apq += wp * wq;
                }
                if apq.abs() <= tol * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for i in 0..m {
                    let wp = w[[i, p]];
                    let wq = w[[i, q]];
                    w[[i, p]] = cs * wp - sn * wq;
                    w[[i, q]] = sn * wp + cs * wq;
                }
                for i in 0..n {
                    let vp = v[[i, p]];
                    let vq = v[[i, q]];
                    v[[i, p]] = cs * vp - sn * vq;
                    v[[i, q]] = sn * vp + cs * vq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SvdError::NoConvergence { sweeps: MAX_SWEEPS });
    }

    // column norms are the singular values; sort decreasing
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n)
        .map(|j| (0..m).map(|i| w[[i, j]] * w[[i, j]]).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap());

    let mut u = Array2::<f64>::zeros((m, n));
    let mut s = Array1::<f64>::zeros(n);
    let mut vs = Array2::<f64>::zeros((n, n));
    let cutoff = norms[order[0]] * 1e-300_f64.max(f64::EPSILON * (m.max(n) as f64));
    for (k, &j) in order.iter().enumerate() {
        s[k] = norms[j];
        if norms[j] > cutoff && norms[j] > 0.0 {
            for i in 0..m {
                u[[i, k]] = w[[i, j]] / norms[j];
            }
        }
        for i in 0..n {
            vs[[i, k]] = v[[i, j]];
        }
    }
    Ok(Svd { u, s, v: vs })
}
