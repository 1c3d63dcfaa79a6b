//! Source conditions, error measures, the decay oracle for the smoothing
//! functional, and convergence-rate regression.
//!
//! The central diagnostic is `eta_oracle`, the value
//! `sup_x { R(xdagger) - R(x) - coeff * gamma * (n+1) * |Ax - y|^2 }`,
//! which governs both the a-priori and the discrepancy stopping analyses.
//! For the quadratic penalty the supremum is a Tikhonov problem solved
//! exactly through an SVD; for the other penalties an inner first-order
//! solver produces a lower bound together with a dual certificate bounding it
//! from above.

use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linop::{LinearOperator, Vector};
use crate::penalty::{bregman, ConstraintSet, Penalty, PenaltyKind};
use crate::svd::{jacobi_svd, Svd, SvdError};

/// Largest dimension for which dense spectral paths (fractional powers,
/// exact oracle values) are attempted.
pub const DENSE_SPECTRAL_LIMIT: usize = 2000;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("singular value decomposition failed: {0}; reduce the problem size")]
    Svd(#[from] SvdError),
    #[error("dense spectral path supports n <= {limit} (got {n})")]
    TooLarge { n: usize, limit: usize },
}

/// How a ground truth was manufactured, so that runs can verify the
/// hypothesis their rate theory needs.
#[derive(Debug, Clone)]
pub enum SourceSpec {
    /// `A* lambda_dagger` is a subgradient of the penalty at the truth.
    DualElement { lambda_dagger: Vector },
    /// Truth is the projection of a fractional-power image,
    /// `P_C((A*A)^(nu/2) omega)`.
    ProjectedPower { nu: f64, omega: Vector },
    /// Entropy variant of the dual element condition (the subgradient holds
    /// up to the normalization constant absorbed by the simplex).
    Entropic { lambda_dagger: Vector },
}

/// `xdagger = grad R*(A* lambda_dagger)`; by conjugacy `A* lambda_dagger` is
/// then a subgradient of `R` at the result, which is exactly the source
/// condition the convergence rates require.
pub fn construct_source_solution(
    op: &LinearOperator,
    p: &Penalty,
    lambda_dagger: &Vector,
) -> Vector {
    p.conjugate_grad(&op.apply_adjoint(lambda_dagger))
}

/// Weighted symmetrization of the operator: SVD of `M diag(1/sqrt(w))`,
/// which shares singular values with the operator in the weighted geometry.
fn weighted_svd(op: &LinearOperator) -> Result<(Svd, Option<Vector>), AnalysisError> {
    let n = op.domain_dim();
    if n > DENSE_SPECTRAL_LIMIT || op.range_dim() > DENSE_SPECTRAL_LIMIT {
        return Err(AnalysisError::TooLarge {
            n: n.max(op.range_dim()),
            limit: DENSE_SPECTRAL_LIMIT,
        });
    }
    let mut m = op.dense_matrix();
    let w = op.domain_weights().cloned();
    if let Some(w) = &w {
        let scale = w.mapv(|wi| 1.0 / wi.sqrt());
        m = m * &scale;
    }
    Ok((jacobi_svd(&m)?, w))
}

/// `P_C((A*A)^(nu/2) omega)` via the dense SVD. The fractional power acts on
/// singular values; with domain weights the similarity transform
/// `diag(sqrt(w))` carries the weighted self-adjointness to a symmetric
/// matrix and back.
pub fn construct_projected_power_solution(
    op: &LinearOperator,
    nu: f64,
    omega: &Vector,
    c: &ConstraintSet,
) -> Result<Vector, AnalysisError> {
    assert!(0.0 < nu && nu <= 1.0, "power must lie in (0, 1]");
    assert_eq!(omega.len(), op.domain_dim(), "omega dimension");
    let (svd, w) = weighted_svd(op)?;
    let sw = omega * &w.as_ref().map_or(Vector::ones(omega.len()), |w| w.mapv(f64::sqrt));
    let coef = svd.v.t().dot(&sw);
    let powered = Vector::from_shape_fn(coef.len(), |i| svd.s[i].powf(nu) * coef[i]);
    let mut x = svd.v.dot(&powered);
    if let Some(w) = &w {
        x /= &w.mapv(f64::sqrt);
    }
    Ok(c.project(&x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMeasure {
    Norm,
    NormSqHalf,
    Bregman,
    L1,
    Kl,
}

impl ErrorMeasure {
    pub fn name(&self) -> &'static str {
        match self {
            ErrorMeasure::Norm => "norm",
            ErrorMeasure::NormSqHalf => "norm_sq_half",
            ErrorMeasure::Bregman => "bregman",
            ErrorMeasure::L1 => "l1",
            ErrorMeasure::Kl => "kl",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "norm" => Some(ErrorMeasure::Norm),
            "norm_sq_half" => Some(ErrorMeasure::NormSqHalf),
            "bregman" => Some(ErrorMeasure::Bregman),
            "l1" => Some(ErrorMeasure::L1),
            "kl" => Some(ErrorMeasure::Kl),
            _ => None,
        }
    }
}

fn weighted_l2_sq(d: &Vector, w: Option<&Vector>) -> f64 {
    match w {
        Some(w) => d.iter().zip(w).map(|(v, wi)| wi * v * v).sum(),
        None => d.dot(d),
    }
}

fn weighted_l1(d: &Vector, w: Option<&Vector>) -> f64 {
    match w {
        Some(w) => d.iter().zip(w).map(|(v, wi)| wi * v.abs()).sum(),
        None => d.iter().map(|v| v.abs()).sum(),
    }
}

/// Distance from `x` to the reference in the requested measure. The Bregman
/// measure needs the subgradient `xi_ref` at the reference; the KL measure is
/// `sum w_i (x_i log(x_i / xref_i) - x_i + xref_i)` and is `+inf` when the
/// reference vanishes where `x` does not.
pub fn error_measure(
    measure: ErrorMeasure,
    p: &Penalty,
    x: &Vector,
    xref: &Vector,
    xi_ref: Option<&Vector>,
) -> f64 {
    let w = p.weights();
    match measure {
        ErrorMeasure::Norm => weighted_l2_sq(&(x - xref), w).sqrt(),
        ErrorMeasure::NormSqHalf => 0.5 * weighted_l2_sq(&(x - xref), w),
        ErrorMeasure::Bregman => {
            let xi = xi_ref.expect("bregman measure needs the reference subgradient");
            bregman(p, x, xref, xi)
        }
        ErrorMeasure::L1 => weighted_l1(&(x - xref), w),
        ErrorMeasure::Kl => {
            let mut acc = 0.0;
            for i in 0..x.len() {
                let wi = w.map_or(1.0, |w| w[i]);
                let (a, b) = (x[i], xref[i]);
                if a < 0.0 || b < 0.0 {
                    return f64::INFINITY;
                }
                if a == 0.0 {
                    acc += wi * b;
                } else if b == 0.0 {
                    return f64::INFINITY;
                } else {
                    acc += wi * (a * (a / b).ln() - a + b);
                }
            }
            acc.max(0.0)
        }
    }
}

/// Value of the decay oracle with provenance: `value` is a certified lower
/// bound (exact when `exact`), `upper` the matching dual bound.
#[derive(Debug, Clone, Copy)]
pub struct EtaValue {
    pub value: f64,
    pub upper: f64,
    pub gap: f64,
    pub exact: bool,
    pub converged: bool,
}

/// `sup_x { R(xdagger) - R(x) - coeff * gamma * (n+1) |Ax - y|^2 }`.
///
/// Quadratic penalty: exact via SVD (the infimum underneath is a Tikhonov
/// problem diagonalized by the weighted singular system). Other penalties:
/// inner proximal-gradient (projected / soft-thresholded) or entropic mirror
/// descent, with the Fenchel dual of the inner problem evaluated at the
/// first-order optimality candidate as an upper certificate. The reported
/// value is clamped at zero, the value of the feasible point `x = xdagger`
/// when data is exact.
pub fn eta_oracle(
    n: usize,
    gamma: f64,
    coeff: f64,
    op: &LinearOperator,
    y: &Vector,
    p: &Penalty,
    xdagger: &Vector,
) -> Result<EtaValue, AnalysisError> {
    assert!(gamma > 0.0 && coeff > 0.0);
    let a = coeff * gamma * (n as f64 + 1.0);
    let r_dag = p.evaluate(xdagger);
    assert!(
        r_dag.is_finite(),
        "xdagger must lie in the penalty domain"
    );
    match p.kind() {
        PenaltyKind::Quadratic => {
            let (svd, _) = weighted_svd(op)?;
            let c = svd.u.t().dot(y);
            let mut correction = 0.0;
            for i in 0..svd.s.len() {
                let s2 = svd.s[i] * svd.s[i];
                if s2 > 0.0 {
                    correction += 2.0 * a * a * s2 * c[i] * c[i] / (1.0 + 2.0 * a * s2);
                }
            }
            let m_star = a * y.dot(y) - correction;
            let eta = (r_dag - m_star).max(0.0);
            Ok(EtaValue {
                value: eta,
                upper: eta,
                gap: 0.0,
                exact: true,
                converged: true,
            })
        }
        PenaltyKind::EntropySimplex => Ok(eta_inner_entropy(a, op, y, p, r_dag)),
        PenaltyKind::ProjectedQuadratic | PenaltyKind::ElasticNet => {
            Ok(eta_inner_prox(a, op, y, p, r_dag, xdagger))
        }
    }
}

/// Dual certificate for `inf_x { R(x) + a |Ax - y|^2 }`: any `lambda` gives
/// the lower bound `-R*(A* lambda) + <lambda, y> - |lambda|^2 / (4a)`.
fn inner_dual_value(a: f64, op: &LinearOperator, y: &Vector, p: &Penalty, lambda: &Vector) -> f64 {
    -p.conjugate_value(&op.apply_adjoint(lambda)) + lambda.dot(y)
        - lambda.dot(lambda) / (4.0 * a)
}

fn inner_objective(a: f64, op: &LinearOperator, y: &Vector, p: &Penalty, x: &Vector) -> f64 {
    let r = op.apply(x) - y;
    p.evaluate(x) + a * r.dot(&r)
}

/// Proximal gradient with Nesterov momentum on
/// `f(x) = (c/2)|x|^2 + a |Ax - y|^2` plus the nonsmooth remainder of the
/// penalty (indicator projection or weighted soft threshold).
fn eta_inner_prox(
    a: f64,
    op: &LinearOperator,
    y: &Vector,
    p: &Penalty,
    r_dag: f64,
    xdagger: &Vector,
) -> EtaValue {
    let norm = op.estimate_norm(1e-10, 20_000, 0x5eed).value * 1.05;
    let smooth_curv = match p.kind() {
        PenaltyKind::ElasticNet => p.elastic_params().expect("elastic params present").0,
        _ => 1.0,
    };
    let lip = smooth_curv + 2.0 * a * norm * norm;
    let step = 1.0 / lip;
    let mut x = xdagger.clone();
    let mut z = x.clone();
    let mut t = 1.0_f64;
    let mut best_obj = inner_objective(a, op, y, p, &x);
    let mut best_x = x.clone();
    let mut converged = false;
    let max_iter = 50_000;
    for _ in 0..max_iter {
        let rz = op.apply(&z) - y;
        let mut grad = op.apply_adjoint(&rz);
        grad.mapv_inplace(|v| 2.0 * a * v);
        grad.scaled_add(smooth_curv, &z);
        let v = &z - &(step * &grad);
        let x_next = prox_step(p, &v, step);
        let obj = inner_objective(a, op, y, p, &x_next);
        if obj < best_obj {
            best_obj = obj;
            best_x = x_next.clone();
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mut z_next = x_next.clone();
        z_next.scaled_add((t - 1.0) / t_next, &(&x_next - &x));
        x = x_next;
        z = z_next;
        t = t_next;
        // dual candidate at the current best primal point
        let r_best = op.apply(&best_x) - y;
        let lambda_hat = r_best.mapv(|v| -2.0 * a * v);
        let dual = inner_dual_value(a, op, y, p, &lambda_hat);
        if best_obj - dual <= 1e-9 * (1.0 + best_obj.abs()) {
            converged = true;
            break;
        }
    }
    let r_best = op.apply(&best_x) - y;
    let lambda_hat = r_best.mapv(|v| -2.0 * a * v);
    let dual = inner_dual_value(a, op, y, p, &lambda_hat);
    let value = (r_dag - best_obj).max(0.0);
    let upper = (r_dag - dual).max(value);
    EtaValue {
        value,
        upper,
        gap: upper - value,
        exact: false,
        converged,
    }
}

/// One proximal step for the nonsmooth remainder of the penalty in the
/// weighted geometry.
fn prox_step(p: &Penalty, v: &Vector, step: f64) -> Vector {
    match p.kind() {
        PenaltyKind::ProjectedQuadratic => p.conjugate_grad(v),
        PenaltyKind::ElasticNet => {
            let (_, beta) = p.elastic_params().expect("elastic params present");
            let thresh = step * beta;
            v.mapv(|t| t.signum() * (t.abs() - thresh).max(0.0))
        }
        _ => v.clone(),
    }
}

/// Entropic mirror descent on `R(x) + a |Ax - y|^2` over the weighted
/// simplex: multiplicative updates with the penalty's own softmax as the
/// mirror step, certified by the same Fenchel dual as the proximal path.
fn eta_inner_entropy(a: f64, op: &LinearOperator, y: &Vector, p: &Penalty, r_dag: f64) -> EtaValue {
    let l1_norm = op.norm_l1_to_range();
    let lf = 2.0 * a * l1_norm * l1_norm;
    let s = 1.0 / lf.max(1e-300);
    let mut x = p.conjugate_grad(&Vector::zeros(op.domain_dim()));
    let mut best_obj = inner_objective(a, op, y, p, &x);
    let mut best_x = x.clone();
    let mut converged = false;
    let max_iter = 50_000;
    for _ in 0..max_iter {
        let r = op.apply(&x) - y;
        let grad = op.apply_adjoint(&r).mapv(|v| 2.0 * a * v);
        let logx = x.mapv(|t: f64| t.max(1e-300).ln());
        let arg = (&logx - &(s * &grad)) / (s + 1.0);
        x = p.conjugate_grad(&arg);
        let obj = inner_objective(a, op, y, p, &x);
        if obj < best_obj {
            best_obj = obj;
            best_x = x.clone();
        }
        let rb = op.apply(&best_x) - y;
        let lambda_hat = rb.mapv(|v| -2.0 * a * v);
        let dual = inner_dual_value(a, op, y, p, &lambda_hat);
        if best_obj - dual <= 1e-9 * (1.0 + best_obj.abs()) {
            converged = true;
            break;
        }
    }
    let rb = op.apply(&best_x) - y;
    let lambda_hat = rb.mapv(|v| -2.0 * a * v);
    let dual = inner_dual_value(a, op, y, p, &lambda_hat);
    let value = (r_dag - best_obj).max(0.0);
    let upper = (r_dag - dual).max(value);
    EtaValue {
        value,
        upper,
        gap: upper - value,
        exact: false,
        converged,
    }
}

/// Constant of the decay bound `eta_n <= C (n+1)^(-q/(2-q))` under a dual
/// source element of size `m` with exponent `q` and step `gamma` (for the
/// oracle coefficient 1/3).
pub fn eta_upper_constant(m: f64, q: f64, gamma: f64) -> f64 {
    assert!(0.0 < q && q <= 1.0);
    (1.0 - q / 2.0) * (3.0 * q * m / (2.0 * gamma)).powf(q / (2.0 - q)) * m
}

/// Constant of the discrepancy-side lower bound `eta_n >= C (n+1) delta^2`,
/// valid while the discrepancy principle has not yet triggered; requires
/// `1 - 1/tau^2 - L*gamma > 0`.
pub fn eta_lower_constant(tau: f64, gamma: f64, l: f64) -> f64 {
    let margin = (0.5 - l * gamma / 2.0) * tau * tau - 0.5;
    assert!(
        margin > 0.0,
        "lower-bound constant needs 1 - 1/tau^2 - L*gamma > 0"
    );
    margin * gamma
}

/// Constant of the projected variational inequality
/// `|x - xdagger|^2 / 4 <= R(x) - R(xdagger) + C |omega|^(2/(1+nu)) |Ax - y|^(2nu/(1+nu))`.
pub fn power_source_constant(nu: f64) -> f64 {
    assert!(0.0 < nu && nu <= 1.0);
    let base = (1.0 - nu).powf((1.0 - nu) / (1.0 + nu));
    2.0_f64.powf(-2.0 * nu / (1.0 + nu)) * (1.0 + nu) * base
}

/// One rate-study observation.
#[derive(Debug, Clone, Copy)]
pub struct RatePoint {
    pub delta: f64,
    pub error: f64,
    pub n_stop: usize,
    pub measure: ErrorMeasure,
}

/// Least-squares fit of `log error` against `log delta`.
#[derive(Debug, Clone, Copy)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points_used: usize,
    pub points_excluded: usize,
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("rate fit needs at least 3 usable points (got {usable})")]
    TooFewPoints { usable: usize },
}

/// Fits `log error = slope * log delta + intercept` by least squares.
/// Nonpositive or non-finite errors are excluded (they occur on trivially
/// solvable instances); the count is reported so callers can warn.
pub fn fit_rate(points: &[RatePoint]) -> Result<RateFit, FitError> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.error > 0.0 && p.error.is_finite() && p.delta > 0.0)
        .map(|p| (p.delta.ln(), p.error.ln()))
        .collect();
    let excluded = points.len() - usable.len();
    if usable.len() < 3 {
        return Err(FitError::TooFewPoints {
            usable: usable.len(),
        });
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|(x, _)| x).sum::<f64>() / n;
    let my = usable.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let sxy: f64 = usable.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = usable.iter().map(|(_, y)| (y - my) * (y - my)).sum();
    let ss_res: f64 = usable
        .iter()
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        points_used: usable.len(),
        points_excluded: excluded,
    })
}

/// Fit with the pre-asymptotic guard: asymptotic rates hold only for small
/// noise, so if dropping the single largest-delta point improves R^2 by more
/// than 0.05 the refit is selected; both fits are reported.
#[derive(Debug, Clone, Copy)]
pub struct RefinedFit {
    pub full: RateFit,
    pub refit: Option<RateFit>,
    pub dropped_largest: bool,
}

impl RefinedFit {
    pub fn chosen(&self) -> &RateFit {
        if self.dropped_largest {
            self.refit.as_ref().expect("refit present when chosen")
        } else {
            &self.full
        }
    }
}

pub fn fit_rate_refined(points: &[RatePoint]) -> Result<RefinedFit, FitError> {
    let full = fit_rate(points)?;
    let mut largest = None;
    for (i, p) in points.iter().enumerate() {
        if largest.is_none_or(|(_, d)| p.delta > d) {
            largest = Some((i, p.delta));
        }
    }
    let mut refit = None;
    let mut dropped = false;
    if let Some((idx, _)) = largest {
        let rest: Vec<RatePoint> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != idx)
            .map(|(_, p)| *p)
            .collect();
        if let Ok(f) = fit_rate(&rest) {
            if f.r_squared > full.r_squared + 0.05 {
                dropped = true;
            }
            refit = Some(f);
        }
    }
    Ok(RefinedFit {
        full,
        refit,
        dropped_largest: dropped,
    })
}

/// Result of sampling the variational inequality
/// `E(x) <= R(x) - R(xdagger) + M |Ax - y|^q`.
#[derive(Debug, Clone, Copy)]
pub struct MarginReport {
    pub samples: usize,
    pub min_slack: f64,
    pub violations: usize,
}

/// Samples the inequality's slack over points of `dom R` near and far from
/// the truth. The left-hand error functional follows the penalty: Bregman
/// distance for quadratic-type dual source elements (`xi_dagger` when the
/// subgradient is not recoverable from `xdagger` itself), a quarter of the
/// squared norm for projected constraints, half the squared weighted `L^1`
/// norm for entropy.
pub fn variational_sc_margin(
    op: &LinearOperator,
    p: &Penalty,
    xdagger: &Vector,
    xi_dagger: Option<&Vector>,
    m: f64,
    q: f64,
    samples: usize,
    seed: u64,
) -> MarginReport {
    assert!(samples >= 1);
    assert!(m >= 0.0 && q > 0.0 && q <= 2.0);
    let y = op.apply(xdagger);
    let r_dag = p.evaluate(xdagger);
    assert!(r_dag.is_finite(), "truth must lie in the penalty domain");
    let w = p.weights();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_slack = f64::INFINITY;
    let mut violations = 0;
    for k in 0..samples {
        // stay inside dom R by pushing random dual points through the
        // conjugate map; spread scales to cover near- and far-field
        let scale = [0.05, 0.3, 1.0, 3.0][k % 4];
        let lam = Array1::from_shape_fn(op.range_dim(), |_| rng.random_range(-1.0..1.0));
        let mut xi = op.apply_adjoint(&lam);
        xi.mapv_inplace(|v| v * scale);
        if k % 3 == 0 {
            for v in xi.iter_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
        let x = p.conjugate_grad(&xi);
        let e = match p.kind() {
            PenaltyKind::Quadratic => 0.5 * weighted_l2_sq(&(&x - xdagger), w),
            PenaltyKind::ElasticNet => {
                let xi_d = xi_dagger.expect("elastic net margin needs the truth subgradient");
                bregman(p, &x, xdagger, xi_d)
            }
            PenaltyKind::ProjectedQuadratic => 0.25 * weighted_l2_sq(&(&x - xdagger), w),
            PenaltyKind::EntropySimplex => {
                let d = weighted_l1(&(&x - xdagger), w);
                0.5 * d * d
            }
        };
        let res = op.apply(&x) - &y;
        let slack = p.evaluate(&x) - r_dag + m * res.dot(&res).sqrt().powf(q) - e;
        if slack < -1e-8 {
            violations += 1;
        }
        min_slack = min_slack.min(slack);
    }
    MarginReport {
        samples,
        min_slack,
        violations,
    }
}
