//! Dual gradient iterations and stopping rules.
//!
//! The plain scheme iterates `x_n = grad R*(A* lambda_n)`,
//! `lambda_{n+1} = lambda_n - gamma (A x_n - ydelta)` from `lambda_0 = 0`.
//! The primal form carries `xi_n = A* lambda_n` instead and must reproduce
//! the same trajectory; the accelerated scheme adds Nesterov extrapolation in
//! the dual variable; the entropic Landweber baseline is the multiplicative
//! formulation of the entropy-penalty iteration.
//!
//! Runs terminate either after a fixed iteration count or by the discrepancy
//! principle (first residual at or below `tau * delta`), with a hard cap that
//! is surfaced as its own termination reason rather than silently truncating.

use thiserror::Error;

use crate::linop::{LinearOperator, Vector};
use crate::penalty::{make_entropy_simplex, Penalty, PenaltyKind};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("iterate became non-finite at step {n} (step size too large or data unbounded)")]
    NonFinite { n: usize },
}

/// Default iteration cap for discrepancy runs.
pub const DEFAULT_N_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StoppingKind {
    APriori { n_max: usize },
    Discrepancy { tau: f64, delta: f64, n_cap: usize },
}

/// Stopping rule plus the a-priori scaling context (`n_max = ceil(scale *
/// delta^(q-2))` for the plain schemes, `ceil(scale * delta^(-1/2))` for the
/// accelerated one). `q` and `scale` are echoed into records so a rate study
/// can be reproduced from its output alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingRule {
    pub kind: StoppingKind,
    pub q: f64,
    pub scale: f64,
}

impl StoppingRule {
    pub fn a_priori(n_max: usize) -> Self {
        Self {
            kind: StoppingKind::APriori { n_max },
            q: 1.0,
            scale: 1.0,
        }
    }

    /// A-priori count from the noise level: `ceil(scale * delta^(q-2))`.
    pub fn a_priori_for_delta(delta: f64, q: f64, scale: f64) -> Self {
        assert!(0.0 < q && q <= 1.0, "a-priori exponent q must be in (0,1]");
        Self {
            kind: StoppingKind::APriori {
                n_max: a_priori_iterations(delta, q, scale),
            },
            q,
            scale,
        }
    }

    /// Accelerated-mode a-priori count `ceil(scale * delta^(-1/2))`.
    pub fn a_priori_accelerated(delta: f64, scale: f64) -> Self {
        Self {
            kind: StoppingKind::APriori {
                n_max: a_priori_iterations_accelerated(delta, scale),
            },
            q: 1.0,
            scale,
        }
    }

    pub fn discrepancy(tau: f64, delta: f64) -> Self {
        assert!(tau > 1.0, "discrepancy principle requires tau > 1");
        assert!(delta >= 0.0, "noise level must be nonnegative");
        Self {
            kind: StoppingKind::Discrepancy {
                tau,
                delta,
                n_cap: DEFAULT_N_CAP,
            },
            q: 1.0,
            scale: 1.0,
        }
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        match &mut self.kind {
            StoppingKind::Discrepancy { n_cap, .. } => *n_cap = cap,
            StoppingKind::APriori { n_max } => *n_max = (*n_max).min(cap),
        }
        self
    }
}

/// `true` iff `residual_norm <= tau * delta`.
pub fn discrepancy_met(residual_norm: f64, tau: f64, delta: f64) -> bool {
    residual_norm <= tau * delta
}

fn ceil_snapped(raw: f64) -> usize {
    // snap values a rounding error above an integer back down so that
    // quantities like 0.01^(-1) yield exactly 100
    let r = raw.round();
    let v = if (raw - r).abs() <= 1e-9 * raw.abs().max(1.0) {
        r
    } else {
        raw.ceil()
    };
    (v as usize).max(1)
}

/// `ceil(scale * delta^(q-2))`, at least 1.
pub fn a_priori_iterations(delta: f64, q: f64, scale: f64) -> usize {
    assert!(delta > 0.0, "a_priori_iterations: delta must be positive");
    assert!(0.0 < q && q <= 1.0, "a_priori_iterations: q must be in (0,1]");
    assert!(scale > 0.0, "a_priori_iterations: scale must be positive");
    ceil_snapped(scale * delta.powf(q - 2.0))
}

/// `ceil(scale * delta^(-1/2))`, at least 1; the accelerated-scheme budget.
pub fn a_priori_iterations_accelerated(delta: f64, scale: f64) -> usize {
    assert!(delta > 0.0, "a_priori_iterations_accelerated: delta must be positive");
    assert!(scale > 0.0, "a_priori_iterations_accelerated: scale must be positive");
    ceil_snapped(scale * delta.powf(-0.5))
}

/// Value of the dual objective `R*(A* lambda) - <lambda, ydelta>`.
pub fn dual_objective(p: &Penalty, op: &LinearOperator, lambda: &Vector, ydelta: &Vector) -> f64 {
    p.conjugate_value(&op.apply_adjoint(lambda)) - lambda.dot(ydelta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    DiscrepancyMet,
    APrioriReached,
    CapHit,
}

impl Termination {
    pub fn name(&self) -> &'static str {
        match self {
            Termination::DiscrepancyMet => "discrepancy_met",
            Termination::APrioriReached => "a_priori_reached",
            Termination::CapHit => "cap_hit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Plain,
    PrimalForm,
    Accelerated { alpha: f64 },
    EntropicLandweber,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Plain => "plain",
            Method::PrimalForm => "primal_form",
            Method::Accelerated { .. } => "accelerated",
            Method::EntropicLandweber => "entropic_landweber",
        }
    }
}

/// One recorded iterate. `hat_lambda` / `hat_x` are the extrapolated points
/// of the accelerated scheme and absent elsewhere.
#[derive(Debug, Clone)]
pub struct DualIterate {
    pub n: usize,
    pub lambda: Vector,
    pub x: Vector,
    pub residual_norm: f64,
    pub dual_value: f64,
    pub hat_lambda: Option<Vector>,
    pub hat_x: Option<Vector>,
}

/// Echo of the solve configuration, carried on every record.
#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub method: Method,
    pub gamma: f64,
    pub stop: StoppingRule,
    pub record_every: usize,
    pub zero_start: bool,
}

/// Full account of one run: thinned vector iterates plus dense per-iteration
/// scalars (rate studies need residual and dual value at every step, but
/// holding every vector would be unbounded).
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub iterates: Vec<DualIterate>,
    pub stop_index: usize,
    pub termination: Termination,
    pub gamma: f64,
    pub config_echo: SolveConfig,
    pub residuals: Vec<f64>,
    pub dual_values: Vec<f64>,
}

impl RunRecord {
    pub fn final_iterate(&self) -> &DualIterate {
        self.iterates.last().expect("runs record at least one iterate")
    }

    pub fn final_x(&self) -> &Vector {
        &self.final_iterate().x
    }

    pub fn final_residual(&self) -> f64 {
        self.residuals[self.stop_index]
    }
}

struct Recorder {
    iterates: Vec<DualIterate>,
    residuals: Vec<f64>,
    dual_values: Vec<f64>,
    record_every: usize,
}

impl Recorder {
    fn new(record_every: usize) -> Self {
        assert!(record_every >= 1, "record_every must be at least 1");
        Self {
            iterates: Vec::new(),
            residuals: Vec::new(),
            dual_values: Vec::new(),
            record_every,
        }
    }

    fn scalars(&mut self, residual: f64, dual: f64) {
        self.residuals.push(residual);
        self.dual_values.push(dual);
    }

    fn wants_vectors(&self, n: usize, stopping: bool) -> bool {
        stopping || n % self.record_every == 0
    }
}

fn finish(
    rec: Recorder,
    stop_index: usize,
    termination: Termination,
    config: SolveConfig,
) -> RunRecord {
    RunRecord {
        iterates: rec.iterates,
        stop_index,
        termination,
        gamma: config.gamma,
        residuals: rec.residuals,
        dual_values: rec.dual_values,
        config_echo: config,
    }
}

/// Decide whether iterate `n` with this residual stops the run.
fn check_stop(stop: &StoppingRule, n: usize, residual: f64) -> Option<Termination> {
    match stop.kind {
        StoppingKind::APriori { n_max } => (n >= n_max).then_some(Termination::APrioriReached),
        StoppingKind::Discrepancy { tau, delta, n_cap } => {
            if discrepancy_met(residual, tau, delta) {
                Some(Termination::DiscrepancyMet)
            } else if n >= n_cap {
                Some(Termination::CapHit)
            } else {
                None
            }
        }
    }
}

/// Dual gradient method from `lambda_0 = 0`.
pub fn dual_gradient_solve(
    op: &LinearOperator,
    ydelta: &Vector,
    p: &Penalty,
    gamma: f64,
    stop: StoppingRule,
    record_every: usize,
) -> Result<RunRecord, SolveError> {
    dual_gradient_solve_from(op, ydelta, p, gamma, Vector::zeros(op.range_dim()), stop, record_every)
}

/// Dual gradient method from an arbitrary starting dual variable. Every
/// convergence guarantee in the library is stated for the zero start; other
/// starts are for exploration.
pub fn dual_gradient_solve_from(
    op: &LinearOperator,
    ydelta: &Vector,
    p: &Penalty,
    gamma: f64,
    lambda0: Vector,
    stop: StoppingRule,
    record_every: usize,
) -> Result<RunRecord, SolveError> {
    assert!(gamma > 0.0, "step size must be positive");
    assert_eq!(ydelta.len(), op.range_dim(), "data dimension");
    assert_eq!(lambda0.len(), op.range_dim(), "start dimension");
    let zero_start = lambda0.iter().all(|&v| v == 0.0);
    let config = SolveConfig {
        method: Method::Plain,
        gamma,
        stop,
        record_every,
        zero_start,
    };
    let mut rec = Recorder::new(record_every);
    let mut lambda = lambda0;
    let mut n = 0usize;
    loop {
        let xi = op.apply_adjoint(&lambda);
        let x = p.conjugate_grad(&xi);
        let residual = op.apply(&x) - ydelta;
        let rn = residual.dot(&residual).sqrt();
        let dual = p.conjugate_value(&xi) - lambda.dot(ydelta);
        if !rn.is_finite() || !dual.is_finite() {
            return Err(SolveError::NonFinite { n });
        }
        rec.scalars(rn, dual);
        let stopping = check_stop(&stop, n, rn);
        if rec.wants_vectors(n, stopping.is_some()) {
            rec.iterates.push(DualIterate {
                n,
                lambda: lambda.clone(),
                x,
                residual_norm: rn,
                dual_value: dual,
                hat_lambda: None,
                hat_x: None,
            });
        }
        if let Some(t) = stopping {
            return Ok(finish(rec, n, t, config));
        }
        lambda.scaled_add(-gamma, &residual);
        n += 1;
    }
}

/// Primal form: carries `xi_n = A* lambda_n` and updates it directly with
/// `xi_{n+1} = xi_n - gamma A*(A x_n - ydelta)`. The dual variable is still
/// accumulated so records stay comparable with the dual form.
pub fn primal_form_solve(
    op: &LinearOperator,
    ydelta: &Vector,
    p: &Penalty,
    gamma: f64,
    stop: StoppingRule,
    record_every: usize,
) -> Result<RunRecord, SolveError> {
    assert!(gamma > 0.0, "step size must be positive");
    assert_eq!(ydelta.len(), op.range_dim(), "data dimension");
    let config = SolveConfig {
        method: Method::PrimalForm,
        gamma,
        stop,
        record_every,
        zero_start: true,
    };
    let mut rec = Recorder::new(record_every);
    let mut xi = Vector::zeros(op.domain_dim());
    let mut lambda = Vector::zeros(op.range_dim());
    let mut n = 0usize;
    loop {
        let x = p.conjugate_grad(&xi);
        let residual = op.apply(&x) - ydelta;
        let rn = residual.dot(&residual).sqrt();
        let dual = p.conjugate_value(&xi) - lambda.dot(ydelta);
        if !rn.is_finite() || !dual.is_finite() {
            return Err(SolveError::NonFinite { n });
        }
        rec.scalars(rn, dual);
        let stopping = check_stop(&stop, n, rn);
        if rec.wants_vectors(n, stopping.is_some()) {
            rec.iterates.push(DualIterate {
                n,
                lambda: lambda.clone(),
                x,
                residual_norm: rn,
                dual_value: dual,
                hat_lambda: None,
                hat_x: None,
            });
        }
        if let Some(t) = stopping {
            return Ok(finish(rec, n, t, config));
        }
        xi.scaled_add(-gamma, &op.apply_adjoint(&residual));
        lambda.scaled_add(-gamma, &residual);
        n += 1;
    }
}

/// State of the Nesterov extrapolation in the dual variable.
#[derive(Debug, Clone)]
pub struct AccelState {
    pub lambda_prev: Vector,
    pub lambda: Vector,
    pub alpha: f64,
}

impl AccelState {
    pub fn new(dim: usize, alpha: f64) -> Self {
        assert!(alpha >= 2.0, "acceleration requires alpha >= 2");
        Self {
            lambda_prev: Vector::zeros(dim),
            lambda: Vector::zeros(dim),
            alpha,
        }
    }

    /// Extrapolation weight at step `n`: `(n-1)/(n+alpha)`. Zero momentum at
    /// the first two steps because `lambda_{-1} = lambda_0`.
    pub fn weight(&self, n: usize) -> f64 {
        (n as f64 - 1.0) / (n as f64 + self.alpha)
    }

    /// `hat_lambda_n = lambda_n + weight(n) (lambda_n - lambda_prev)`.
    pub fn extrapolate(&self, n: usize) -> Vector {
        let w = self.weight(n);
        &self.lambda + &(w * &(&self.lambda - &self.lambda_prev))
    }

    /// The stepsize-sequence value `t_n = (n + alpha - 1) / alpha`; the
    /// extrapolation weight satisfies `weight(n) = (t_n - 1) / t_{n+1}`.
    pub fn t_seq(n: usize, alpha: f64) -> f64 {
        (n as f64 + alpha - 1.0) / alpha
    }
}

/// Nesterov-accelerated dual gradient method. Each step extrapolates the
/// dual variable, takes the gradient step there, and evaluates the primal
/// iterate at the new dual point. Residual monotonicity is not guaranteed
/// for this scheme, and combining it with the discrepancy principle is
/// outside the proven region.
pub fn accelerated_solve(
    op: &LinearOperator,
    ydelta: &Vector,
    p: &Penalty,
    gamma: f64,
    alpha: f64,
    stop: StoppingRule,
    record_every: usize,
) -> Result<RunRecord, SolveError> {
    assert!(gamma > 0.0, "step size must be positive");
    assert!(alpha >= 2.0, "acceleration requires alpha >= 2");
    assert_eq!(ydelta.len(), op.range_dim(), "data dimension");
    let config = SolveConfig {
        method: Method::Accelerated { alpha },
        gamma,
        stop,
        record_every,
        zero_start: true,
    };
    let mut rec = Recorder::new(record_every);
    let mut state = AccelState::new(op.range_dim(), alpha);
    let mut n = 0usize;
    loop {
        let xi = op.apply_adjoint(&state.lambda);
        let x = p.conjugate_grad(&xi);
        let residual = op.apply(&x) - ydelta;
        let rn = residual.dot(&residual).sqrt();
        let dual = p.conjugate_value(&xi) - state.lambda.dot(ydelta);
        if !rn.is_finite() || !dual.is_finite() {
            return Err(SolveError::NonFinite { n });
        }
        rec.scalars(rn, dual);
        let stopping = check_stop(&stop, n, rn);
        let recorded = rec.wants_vectors(n, stopping.is_some());
        if recorded {
            rec.iterates.push(DualIterate {
                n,
                lambda: state.lambda.clone(),
                x,
                residual_norm: rn,
                dual_value: dual,
                hat_lambda: None,
                hat_x: None,
            });
        }
        if let Some(t) = stopping {
            return Ok(finish(rec, n, t, config));
        }
        let hat_lambda = state.extrapolate(n);
        let hat_x = p.conjugate_grad(&op.apply_adjoint(&hat_lambda));
        let hat_residual = op.apply(&hat_x) - ydelta;
        if hat_residual.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::NonFinite { n });
        }
        if recorded {
            let last = rec.iterates.last_mut().expect("just recorded");
            last.hat_lambda = Some(hat_lambda.clone());
            last.hat_x = Some(hat_x);
        }
        state.lambda_prev = std::mem::replace(&mut state.lambda, hat_lambda);
        state.lambda.scaled_add(-gamma, &hat_residual);
        n += 1;
    }
}

/// Entropic Landweber baseline: the multiplicative update
/// `x_{n+1} ~ x_n exp(gamma A*(ydelta - A x_n))` renormalized to unit
/// weighted mass, from the uniform density. Coincides with the dual gradient
/// method under the entropy penalty started at zero, but is coded as its own
/// multiplicative loop so the two can be compared as independent
/// implementations.
pub fn entropic_landweber_solve(
    op: &LinearOperator,
    ydelta: &Vector,
    gamma: f64,
    stop: StoppingRule,
    record_every: usize,
) -> Result<RunRecord, SolveError> {
    assert!(gamma > 0.0, "step size must be positive");
    assert_eq!(ydelta.len(), op.range_dim(), "data dimension");
    let weights = op
        .domain_weights()
        .cloned()
        .unwrap_or_else(|| Vector::ones(op.domain_dim()));
    let total_w: f64 = weights.sum();
    let pen = make_entropy_simplex(weights.clone());
    let config = SolveConfig {
        method: Method::EntropicLandweber,
        gamma,
        stop,
        record_every,
        zero_start: true,
    };
    let mut rec = Recorder::new(record_every);
    let mut x = Vector::from_elem(op.domain_dim(), 1.0 / total_w);
    let mut lambda = Vector::zeros(op.range_dim());
    let mut n = 0usize;
    loop {
        let residual = op.apply(&x) - ydelta;
        let rn = residual.dot(&residual).sqrt();
        let dual = dual_objective(&pen, op, &lambda, ydelta);
        if !rn.is_finite() || !dual.is_finite() {
            return Err(SolveError::NonFinite { n });
        }
        rec.scalars(rn, dual);
        let stopping = check_stop(&stop, n, rn);
        if rec.wants_vectors(n, stopping.is_some()) {
            rec.iterates.push(DualIterate {
                n,
                lambda: lambda.clone(),
                x: x.clone(),
                residual_norm: rn,
                dual_value: dual,
                hat_lambda: None,
                hat_x: None,
            });
        }
        if let Some(t) = stopping {
            return Ok(finish(rec, n, t, config));
        }
        let u = op.apply_adjoint(&residual).mapv(|v| -gamma * v);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::NonFinite { n });
        }
        // shift by the max exponent before exponentiating; the shift cancels
        // in the renormalization
        let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut next = Vector::from_shape_fn(x.len(), |i| x[i] * (u[i] - m).exp());
        let mass: f64 = next.iter().zip(&weights).map(|(v, w)| w * v).sum();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(SolveError::NonFinite { n });
        }
        next /= mass;
        x = next;
        lambda.scaled_add(-gamma, &residual);
        n += 1;
    }
}

/// Squared-norm-to-modulus Lipschitz constant `L = |A|^2 / (2 sigma)` of the
/// dual objective's gradient, with the operator norm taken in the geometry
/// the penalty measures: weighted `L^1` to range for the entropy penalty
/// (exact column sweep), weighted `L^2` to range otherwise (power iteration).
/// A uniform 5% inflation keeps step sizes valid when the power-iteration
/// estimate is low.
pub fn lipschitz_constant(op: &LinearOperator, p: &Penalty, seed: u64) -> f64 {
    let norm = operator_norm_for(op, p.kind(), seed);
    norm * norm / (2.0 * p.sigma())
}

pub fn operator_norm_for(op: &LinearOperator, kind: PenaltyKind, seed: u64) -> f64 {
    let raw = match kind {
        PenaltyKind::EntropySimplex => op.norm_l1_to_range(),
        _ => op.estimate_norm(1e-12, 20_000, seed).value,
    };
    raw * 1.05
}

/// Default step size: `1/L` for a-priori stopping; for the discrepancy
/// principle, half the largest step the rate theory allows, so every
/// hypothesis holds with a factor-two margin. Entropy runs use the stronger
/// threshold condition with `tau > 2`.
pub fn default_gamma(l: f64, stop: &StoppingRule, kind: PenaltyKind) -> f64 {
    assert!(l > 0.0, "Lipschitz constant must be positive");
    match stop.kind {
        StoppingKind::APriori { .. } => 1.0 / l,
        StoppingKind::Discrepancy { tau, .. } => match kind {
            PenaltyKind::EntropySimplex => {
                assert!(
                    tau > 2.0,
                    "entropy penalty under the discrepancy principle needs tau > 2"
                );
                0.5 * (1.0 - 2.0 / tau) / l
            }
            _ => 0.5 * (1.0 - 1.0 / (tau * tau)) / l,
        },
    }
}

/// Hypothesis checks for the convergence theory. Returns one message per
/// violated condition; an empty list means the configuration sits inside the
/// proven region.
pub fn proven_region_violations(
    method: Method,
    kind: PenaltyKind,
    stop: &StoppingRule,
    gamma: f64,
    l: f64,
) -> Vec<String> {
    let mut out = Vec::new();
    if gamma <= 0.0 {
        out.push("step size gamma must be positive".to_string());
        return out;
    }
    let entropy = matches!(kind, PenaltyKind::EntropySimplex);
    match (&method, &stop.kind) {
        (Method::Accelerated { alpha }, StoppingKind::APriori { .. }) => {
            if *alpha < 2.0 {
                out.push(format!("accelerated scheme needs alpha >= 2 (got {alpha})"));
            }
            if gamma * l > 1.0 + 1e-12 {
                out.push(format!(
                    "accelerated scheme needs gamma <= 1/L (gamma*L = {})",
                    gamma * l
                ));
            }
        }
        (Method::Accelerated { .. }, StoppingKind::Discrepancy { .. }) => {
            out.push(
                "accelerated scheme under the discrepancy principle has no convergence proof; \
                 run it as an experiment only"
                    .to_string(),
            );
        }
        (_, StoppingKind::APriori { .. }) => {
            if gamma * l > 1.0 + 1e-12 {
                out.push(format!(
                    "a-priori stopping needs gamma <= 1/L (gamma*L = {})",
                    gamma * l
                ));
            }
        }
        (_, StoppingKind::Discrepancy { tau, .. }) => {
            if entropy {
                if *tau <= 2.0 {
                    out.push(format!("entropy penalty rate theory needs tau > 2 (got {tau})"));
                }
                if 1.0 - 2.0 / tau - l * gamma <= 0.0 {
                    out.push(format!(
                        "entropy penalty rate theory needs 1 - 2/tau - L*gamma > 0 (got {})",
                        1.0 - 2.0 / tau - l * gamma
                    ));
                }
            } else {
                if *tau <= 1.0 {
                    out.push(format!("discrepancy principle needs tau > 1 (got {tau})"));
                }
                // 1 - 1/tau - L*gamma > 0 implies the weaker square-threshold
                // condition, so only the stricter one is enforced
                if 1.0 - 1.0 / tau - l * gamma <= 0.0 {
                    out.push(format!(
                        "discrepancy rate theory needs 1 - 1/tau - L*gamma > 0 (got {})",
                        1.0 - 1.0 / tau - l * gamma
                    ));
                }
            }
        }
    }
    out
}
