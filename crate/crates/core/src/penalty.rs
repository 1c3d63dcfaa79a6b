//! Strongly convex penalties and their conjugate calculus.
//!
//! Each penalty `R` carries its modulus of convexity `sigma`, an extended-real
//! evaluation, the conjugate value `R*`, and the conjugate gradient map
//! `xi -> argmin_x { R(x) - <xi, x> }` that drives the dual iteration. When a
//! penalty is given domain weights, every norm and pairing inside it is the
//! weighted one, matching operators whose adjoints are weighted Riesz
//! representatives.
//!
//! The entropy penalty measures distances in the weighted `L^1` norm (its
//! Bregman distance is the Kullback-Leibler divergence, which controls
//! `L^1` but not `L^2`); the other penalties use the weighted `L^2` norm.

use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linop::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyKind {
    Quadratic,
    ProjectedQuadratic,
    EntropySimplex,
    ElasticNet,
}

/// Closed convex sets with metric projections. The simplex variant projects
/// in the weighted norm so that it agrees with the conjugate-gradient map of
/// the projected quadratic penalty on weighted domains.
#[derive(Debug, Clone)]
pub enum ConstraintKind {
    WholeSpace,
    NonnegOrthant,
    Box { lo: f64, hi: f64 },
    Simplex { total_mass: f64 },
}

#[derive(Debug, Clone)]
pub struct ConstraintSet {
    kind: ConstraintKind,
    weights: Option<Vector>,
}

impl ConstraintSet {
    pub fn whole_space() -> Self {
        Self {
            kind: ConstraintKind::WholeSpace,
            weights: None,
        }
    }

    pub fn nonneg_orthant() -> Self {
        Self {
            kind: ConstraintKind::NonnegOrthant,
            weights: None,
        }
    }

    pub fn box_bounds(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "box constraint needs lo <= hi");
        Self {
            kind: ConstraintKind::Box { lo, hi },
            weights: None,
        }
    }

    /// `{ x >= 0, sum_i w_i x_i = total_mass }`; `weights = None` means unit
    /// weights (the probability simplex for `total_mass = 1`).
    pub fn simplex(total_mass: f64, weights: Option<Vector>) -> Self {
        assert!(total_mass > 0.0, "simplex mass must be positive");
        if let Some(w) = &weights {
            assert!(w.iter().all(|&wi| wi > 0.0), "simplex weights positive");
        }
        Self {
            kind: ConstraintKind::Simplex { total_mass },
            weights,
        }
    }

    pub fn kind(&self) -> &ConstraintKind {
        &self.kind
    }

    pub fn project(&self, v: &Vector) -> Vector {
        match self.kind {
            ConstraintKind::WholeSpace => v.clone(),
            ConstraintKind::NonnegOrthant => v.mapv(|t| t.max(0.0)),
            ConstraintKind::Box { lo, hi } => v.mapv(|t| t.clamp(lo, hi)),
            ConstraintKind::Simplex { total_mass } => {
                project_simplex(v, self.weights.as_ref(), total_mass)
            }
        }
    }

    /// Membership within tolerance, measured by distance to the projection
    /// relative to the vector size.
    pub fn contains(&self, v: &Vector, tol: f64) -> bool {
        let p = self.project(v);
        let w = self.weights.as_ref();
        let d2 = weighted_dist_sq(&p, v, w);
        let n2 = weighted_dot(v, v, w);
        d2.sqrt() <= tol * (1.0 + n2.sqrt())
    }
}

/// Projection onto `{ x >= 0, sum w_i x_i = m }` in the `w`-weighted norm.
/// The KKT system gives `x_i = max(v_i + theta, 0)` with `theta` fixed by the
/// mass constraint over the active support; sorting `v` descending lets the
/// support be found from prefix sums in one pass.
fn project_simplex(v: &Vector, weights: Option<&Vector>, total_mass: f64) -> Vector {
    let n = v.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).expect("finite entries"));

    let mut wv_sum = 0.0;
    let mut w_sum = 0.0;
    let mut theta = 0.0;
    let mut support = 0;
    for (k, &i) in order.iter().enumerate() {
        let wi = weights.map_or(1.0, |w| w[i]);
        wv_sum += wi * v[i];
        w_sum += wi;
        let cand = (total_mass - wv_sum) / w_sum;
        if v[i] + cand > 0.0 {
            theta = cand;
            support = k + 1;
        } else {
            break;
        }
    }
    debug_assert!(support > 0, "simplex projection support must be nonempty");
    v.mapv(|t| (t + theta).max(0.0))
}

fn weighted_dot(a: &Vector, b: &Vector, w: Option<&Vector>) -> f64 {
    match w {
        Some(w) => a.iter().zip(b).zip(w).map(|((x, y), wi)| wi * x * y).sum(),
        None => a.dot(b),
    }
}

fn weighted_dist_sq(a: &Vector, b: &Vector, w: Option<&Vector>) -> f64 {
    match w {
        Some(w) => a
            .iter()
            .zip(b)
            .zip(w)
            .map(|((x, y), wi)| wi * (x - y) * (x - y))
            .sum(),
        None => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
    }
}

fn weighted_l1(a: &Vector, w: Option<&Vector>) -> f64 {
    match w {
        Some(w) => a.iter().zip(w).map(|(x, wi)| wi * x.abs()).sum(),
        None => a.iter().map(|x| x.abs()).sum(),
    }
}

#[derive(Debug, Clone)]
enum Form {
    Quadratic,
    Projected(ConstraintSet),
    Entropy,
    ElasticNet { alpha: f64, beta: f64 },
}

/// A strongly convex penalty with modulus `sigma` and conjugate calculus.
#[derive(Debug, Clone)]
pub struct Penalty {
    sigma: f64,
    kind: PenaltyKind,
    weights: Option<Vector>,
    form: Form,
}

/// `R(x) = ||x||^2 / 2`, the Landweber penalty. `sigma = 1/2`, conjugate
/// gradient is the identity.
pub fn make_quadratic() -> Penalty {
    Penalty {
        sigma: 0.5,
        kind: PenaltyKind::Quadratic,
        weights: None,
        form: Form::Quadratic,
    }
}

/// `R(x) = ||x||^2 / 2` plus the indicator of `c`; the conjugate gradient is
/// the metric projection onto `c`.
pub fn make_projected_quadratic(c: ConstraintSet) -> Penalty {
    let weights = c.weights.clone();
    Penalty {
        sigma: 0.5,
        kind: PenaltyKind::ProjectedQuadratic,
        weights,
        form: Form::Projected(c),
    }
}

/// Negative Boltzmann-Shannon entropy `R(x) = sum w_i x_i log x_i` restricted
/// to the weighted probability simplex. `sigma = 1/2` with respect to the
/// weighted `L^1` norm; the conjugate gradient is the normalized exponential.
pub fn make_entropy_simplex(weights: Vector) -> Penalty {
    assert!(!weights.is_empty(), "entropy penalty needs weights");
    assert!(
        weights.iter().all(|&wi| wi > 0.0),
        "entropy weights must be strictly positive"
    );
    Penalty {
        sigma: 0.5,
        kind: PenaltyKind::EntropySimplex,
        weights: Some(weights),
        form: Form::Entropy,
    }
}

/// `R(x) = beta ||x||_1 + (alpha/2) ||x||^2`; the conjugate gradient is the
/// componentwise soft threshold scaled by `1/alpha`. `sigma = alpha/2`.
pub fn make_elastic_net(alpha: f64, beta: f64) -> Penalty {
    assert!(alpha > 0.0, "elastic net needs alpha > 0");
    assert!(beta >= 0.0, "elastic net needs beta >= 0");
    Penalty {
        sigma: alpha / 2.0,
        kind: PenaltyKind::ElasticNet,
        weights: None,
        form: Form::ElasticNet { alpha, beta },
    }
}

impl Penalty {
    /// Attaches quadrature weights so norms and pairings match a weighted
    /// operator domain. The entropy penalty fixes its weights at
    /// construction; reattaching different ones there is a caller bug.
    pub fn with_domain_weights(mut self, w: Vector) -> Self {
        assert!(w.iter().all(|&wi| wi > 0.0), "weights must be positive");
        if let Form::Projected(c) = &mut self.form {
            if matches!(c.kind, ConstraintKind::Simplex { .. }) {
                c.weights = Some(w.clone());
            }
        }
        if matches!(self.form, Form::Entropy) {
            let same = self
                .weights
                .as_ref()
                .is_some_and(|old| old.len() == w.len() && old.iter().zip(&w).all(|(a, b)| a == b));
            assert!(same, "entropy weights are fixed at construction");
        }
        self.weights = Some(w);
        self
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    pub fn weights(&self) -> Option<&Vector> {
        self.weights.as_ref()
    }

    /// `(alpha, beta)` when the penalty is an elastic net.
    pub fn elastic_params(&self) -> Option<(f64, f64)> {
        match &self.form {
            Form::ElasticNet { alpha, beta } => Some((*alpha, *beta)),
            _ => None,
        }
    }

    pub fn inner(&self, a: &Vector, b: &Vector) -> f64 {
        weighted_dot(a, b, self.weights.as_ref())
    }

    /// Norm of the space the penalty measures distances in: weighted `L^1`
    /// for entropy, (weighted) `L^2` otherwise.
    pub fn distance_norm(&self, a: &Vector) -> f64 {
        match self.form {
            Form::Entropy => weighted_l1(a, self.weights.as_ref()),
            _ => weighted_dot(a, a, self.weights.as_ref()).sqrt(),
        }
    }

    /// `R(x)`, returning `f64::INFINITY` outside the effective domain.
    pub fn evaluate(&self, x: &Vector) -> f64 {
        match &self.form {
            Form::Quadratic => 0.5 * weighted_dot(x, x, self.weights.as_ref()),
            Form::Projected(c) => {
                if c.contains(x, 1e-9) {
                    0.5 * weighted_dot(x, x, self.weights.as_ref())
                } else {
                    f64::INFINITY
                }
            }
            Form::Entropy => {
                if x.iter().any(|&t| t < 0.0) {
                    return f64::INFINITY;
                }
                let w = self.weights.as_ref().expect("entropy has weights");
                let mass: f64 = x.iter().zip(w).map(|(t, wi)| wi * t).sum();
                if (mass - 1.0).abs() > 1e-9 {
                    return f64::INFINITY;
                }
                x.iter()
                    .zip(w)
                    .map(|(&t, wi)| if t == 0.0 { 0.0 } else { wi * t * t.ln() })
                    .sum()
            }
            Form::ElasticNet { alpha, beta } => {
                let w = self.weights.as_ref();
                beta * weighted_l1(x, w) + 0.5 * alpha * weighted_dot(x, x, w)
            }
        }
    }

    /// `grad R*(xi) = argmin_x { R(x) - <xi, x> }`.
    pub fn conjugate_grad(&self, xi: &Vector) -> Vector {
        match &self.form {
            Form::Quadratic => xi.clone(),
            Form::Projected(c) => c.project(xi),
            Form::Entropy => {
                let w = self.weights.as_ref().expect("entropy has weights");
                // max-subtraction: entries of xi grow linearly with the
                // iteration count and would overflow exp unshifted
                let m = xi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e = xi.mapv(|t| (t - m).exp());
                let s: f64 = e.iter().zip(w).map(|(t, wi)| wi * t).sum();
                e / s
            }
            Form::ElasticNet { alpha, beta } => {
                xi.mapv(|t| t.signum() * (t.abs() - beta).max(0.0) / alpha)
            }
        }
    }

    /// `R*(xi) = sup_x { <xi, x> - R(x) }`.
    pub fn conjugate_value(&self, xi: &Vector) -> f64 {
        match &self.form {
            Form::Quadratic => 0.5 * weighted_dot(xi, xi, self.weights.as_ref()),
            Form::Projected(_) => {
                let p = self.conjugate_grad(xi);
                weighted_dot(xi, &p, self.weights.as_ref())
                    - 0.5 * weighted_dot(&p, &p, self.weights.as_ref())
            }
            Form::Entropy => {
                let w = self.weights.as_ref().expect("entropy has weights");
                let m = xi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = xi.iter().zip(w).map(|(t, wi)| wi * (t - m).exp()).sum();
                m + s.ln()
            }
            Form::ElasticNet { alpha, beta } => {
                let w = self.weights.as_ref();
                match w {
                    Some(w) => xi
                        .iter()
                        .zip(w)
                        .map(|(t, wi)| {
                            let s = (t.abs() - beta).max(0.0);
                            wi * s * s / (2.0 * alpha)
                        })
                        .sum(),
                    None => xi
                        .iter()
                        .map(|t| {
                            let s = (t.abs() - beta).max(0.0);
                            s * s / (2.0 * alpha)
                        })
                        .sum(),
                }
            }
        }
    }

    /// Fenchel-Young residual `R(x) + R*(xi) - <xi, x>`; zero exactly when
    /// `xi` is a subgradient of `R` at `x`.
    pub fn fenchel_young_residual(&self, x: &Vector, xi: &Vector) -> f64 {
        self.evaluate(x) + self.conjugate_value(xi) - self.inner(xi, x)
    }
}

/// Bregman distance `R(xbar) - R(x) - <xi, xbar - x>` for `xi` a subgradient
/// of `R` at `x`. Returns `+inf` when `xbar` lies outside `dom(R)`; tiny
/// negative rounding is clamped to zero. For the entropy penalty this is the
/// Kullback-Leibler divergence of `xbar` from `x`.
pub fn bregman(p: &Penalty, xbar: &Vector, x: &Vector, xi: &Vector) -> f64 {
    let rbar = p.evaluate(xbar);
    if rbar == f64::INFINITY {
        return f64::INFINITY;
    }
    let rx = p.evaluate(x);
    debug_assert!(
        {
            let fy = rx + p.conjugate_value(xi) - p.inner(xi, x);
            fy.abs() <= 1e-6 * (1.0 + rx.abs() + p.conjugate_value(xi).abs())
        },
        "bregman: xi is not a subgradient at x"
    );
    let diff = xbar - x;
    (rbar - rx - p.inner(xi, &diff)).max(0.0)
}

/// Outcome of sampling the strong-convexity bound
/// `bregman >= sigma * dist(x, xbar)^2`.
#[derive(Debug, Clone, Copy)]
pub struct ConvexityReport {
    pub samples: usize,
    pub min_ratio: f64,
    pub violations: usize,
}

/// Samples pairs `x = grad R*(xi)`, `xbar = grad R*(eta)` and checks the
/// Bregman distance against `sigma` times the squared penalty distance
/// (weighted `L^1` for entropy, `L^2` otherwise), with `1e-8` slack.
pub fn strong_convexity_check(p: &Penalty, samples: usize, seed: u64) -> ConvexityReport {
    assert!(samples >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_ratio = f64::INFINITY;
    let mut violations = 0;
    for _ in 0..samples {
        // unweighted penalties act on any dimension; vary it for coverage
        let dim = p
            .weights
            .as_ref()
            .map_or_else(|| rng.random_range(2usize..=12), Vector::len);
        let xi = Array1::from_shape_fn(dim, |_| rng.random_range(-4.0..4.0));
        let eta = Array1::from_shape_fn(dim, |_| rng.random_range(-4.0..4.0));
        let x = p.conjugate_grad(&xi);
        let xbar = p.conjugate_grad(&eta);
        let d = bregman(p, &xbar, &x, &xi);
        let dist = p.distance_norm(&(&xbar - &x));
        let bound = p.sigma * dist * dist;
        if d < bound - 1e-8 {
            violations += 1;
        }
        if bound > 1e-20 {
            min_ratio = min_ratio.min(d / bound);
        }
    }
    ConvexityReport {
        samples,
        min_ratio,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn sample_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
        Array1::from_shape_fn(n, |_| rng.random_range(-scale..scale))
    }

    #[test]
    fn quadratic_conjugate_is_identity() {
        let p = make_quadratic();
        let xi = array![1.0, -2.0];
        assert_eq!(p.conjugate_grad(&xi), xi);
        assert_abs_diff_eq!(p.conjugate_value(&array![3.0, 4.0]), 12.5, epsilon = 0.0);
    }

    #[test]
    fn quadratic_fenchel_young_exact() {
        let p = make_quadratic();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let xi = sample_vec(&mut rng, 6, 3.0);
            let x = p.conjugate_grad(&xi);
            assert!(p.fenchel_young_residual(&x, &xi).abs() <= 1e-12);
        }
    }

    #[test]
    fn projected_clips_to_orthant_and_box() {
        let p = make_projected_quadratic(ConstraintSet::nonneg_orthant());
        assert_eq!(p.conjugate_grad(&array![1.0, -2.0]), array![1.0, 0.0]);
        let b = make_projected_quadratic(ConstraintSet::box_bounds(0.0, 1.0));
        assert_eq!(b.conjugate_grad(&array![2.0, 0.5]), array![1.0, 0.5]);
    }

    #[test]
    fn projected_evaluate_infinite_outside() {
        let p = make_projected_quadratic(ConstraintSet::nonneg_orthant());
        assert_eq!(p.evaluate(&array![1.0, -0.5]), f64::INFINITY);
        assert_abs_diff_eq!(p.evaluate(&array![1.0, 2.0]), 2.5, epsilon = 0.0);
    }

    #[test]
    fn simplex_projection_known_points() {
        let c = ConstraintSet::simplex(1.0, None);
        assert_eq!(c.project(&array![1.0, 0.0]), array![1.0, 0.0]);
        let p = c.project(&array![1.0, 1.0]);
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-15);
    }

    /// Exhaustive support enumeration: the projection equals the feasible
    /// stationary candidate of minimal weighted distance.
    fn simplex_oracle(v: &Vector, w: Option<&Vector>, m: f64) -> Vector {
        let n = v.len();
        let mut best: Option<(f64, Vector)> = None;
        for mask in 1u32..(1 << n) {
            let mut wv = 0.0;
            let mut ws = 0.0;
            for i in 0..n {
                if mask & (1 << i) != 0 {
                    let wi = w.map_or(1.0, |w| w[i]);
                    wv += wi * v[i];
                    ws += wi;
                }
            }
            let theta = (m - wv) / ws;
            let mut x = Vector::zeros(n);
            let mut feasible = true;
            for i in 0..n {
                if mask & (1 << i) != 0 {
                    x[i] = v[i] + theta;
                    if x[i] < -1e-12 {
                        feasible = false;
                        break;
                    }
                }
            }
            if !feasible {
                continue;
            }
            let d = weighted_dist_sq(&x, v, w);
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, x));
            }
        }
        best.expect("some support is feasible").1
    }

    #[test]
    fn simplex_matches_exhaustive_oracle() {
        let grid = [-1.0, -0.3, 0.0, 0.4, 1.2];
        for &a in &grid {
            for &b in &grid {
                for &c in &grid {
                    let v = array![a, b, c];
                    let set = ConstraintSet::simplex(1.0, None);
                    let got = set.project(&v);
                    let want = simplex_oracle(&v, None, 1.0);
                    for i in 0..3 {
                        assert_abs_diff_eq!(got[i], want[i], epsilon = 1e-9);
                    }
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for dim in 2..=6 {
            for _ in 0..40 {
                let v = sample_vec(&mut rng, dim, 2.0);
                let w = Array1::from_shape_fn(dim, |_| rng.random_range(0.2..2.0));
                let mass = rng.random_range(0.5..2.0);
                let set = ConstraintSet::simplex(mass, Some(w.clone()));
                let got = set.project(&v);
                let want = simplex_oracle(&v, Some(&w), mass);
                for i in 0..dim {
                    assert_abs_diff_eq!(got[i], want[i], epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn entropy_uniform_and_weighted_examples() {
        let p = make_entropy_simplex(Vector::ones(4));
        let x = p.conjugate_grad(&Vector::zeros(4));
        for v in &x {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-15);
        }
        let p2 = make_entropy_simplex(Vector::ones(2));
        let x2 = p2.conjugate_grad(&array![2.0_f64.ln(), 0.0]);
        assert_abs_diff_eq!(x2[0], 2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(x2[1], 1.0 / 3.0, epsilon = 1e-14);
    }

    /// Independent check of the entropic conjugate map: projected gradient
    /// descent on R(x) - <xi, x> over the simplex.
    #[test]
    fn entropy_conjugate_matches_projected_gradient() {
        let p = make_entropy_simplex(Vector::ones(3));
        let xi = array![0.7, -0.3, 0.2];
        let set = ConstraintSet::simplex(1.0, None);
        let mut x = array![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        for _ in 0..20000 {
            let grad = x.mapv(|t: f64| 1.0 + t.max(1e-300).ln()) - &xi;
            x = set.project(&(&x - &(0.05 * &grad)));
        }
        let want = p.conjugate_grad(&xi);
        for i in 0..3 {
            assert_abs_diff_eq!(x[i], want[i], epsilon = 1e-6);
        }
    }

    #[test]
    fn entropy_survives_huge_spread() {
        let p = make_entropy_simplex(Vector::ones(3));
        let x = p.conjugate_grad(&array![1e4, 0.0, -1e4]);
        assert!(x.iter().all(|&v| v.is_finite() && v >= 0.0));
        assert_abs_diff_eq!(x.sum(), 1.0, epsilon = 1e-12);
        assert!(p.conjugate_value(&array![1e4, 0.0, -1e4]).is_finite());
    }

    #[test]
    fn entropy_conjugate_at_zero_is_log_mass() {
        let p = make_entropy_simplex(Vector::ones(7));
        assert_abs_diff_eq!(p.conjugate_value(&Vector::zeros(7)), 7.0_f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn entropy_mass_and_positivity_under_stress() {
        let w = array![0.1, 0.4, 0.2, 0.3];
        let p = make_entropy_simplex(w.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let xi = sample_vec(&mut rng, 4, 50.0);
            let x = p.conjugate_grad(&xi);
            assert!(x.iter().all(|&v| v >= 0.0));
            let mass: f64 = x.iter().zip(&w).map(|(v, wi)| wi * v).sum();
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn elastic_net_soft_threshold() {
        let p = make_elastic_net(1.0, 1.0);
        assert_eq!(p.conjugate_grad(&array![2.0, -0.5]), array![1.0, 0.0]);
    }

    #[test]
    fn elastic_net_scalar_brute_force() {
        // minimize beta|t| + (alpha/2)t^2 - xi t on a fine grid
        let (alpha, beta) = (0.7, 0.4);
        let p = make_elastic_net(alpha, beta);
        for &xi in &[-2.0, -0.4, 0.0, 0.3, 1.7] {
            let mut best = (f64::INFINITY, 0.0);
            let mut t = -5.0_f64;
            while t <= 5.0 {
                let obj = beta * t.abs() + 0.5 * alpha * t * t - xi * t;
                if obj < best.0 {
                    best = (obj, t);
                }
                t += 1e-4;
            }
            let got = p.conjugate_grad(&array![xi])[0];
            assert_abs_diff_eq!(got, best.1, epsilon = 1e-3);
        }
    }

    #[test]
    fn elastic_net_zero_beta_is_quadratic() {
        let p = make_elastic_net(1.0, 0.0);
        let q = make_quadratic();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let xi = sample_vec(&mut rng, 5, 3.0);
            assert_eq!(p.conjugate_grad(&xi), q.conjugate_grad(&xi));
            assert_abs_diff_eq!(p.conjugate_value(&xi), q.conjugate_value(&xi), epsilon = 1e-12);
        }
    }

    #[test]
    fn bregman_quadratic_identity() {
        let p = make_quadratic();
        let x = array![0.0, 0.0];
        let d = bregman(&p, &array![1.0, 0.0], &x, &x);
        assert_abs_diff_eq!(d, 0.5, epsilon = 1e-15);
        assert_eq!(bregman(&p, &x, &x, &x), 0.0);
    }

    #[test]
    fn bregman_entropy_is_kl() {
        let p = make_entropy_simplex(Vector::ones(2));
        let x = array![0.25, 0.75];
        let xi = x.mapv(f64::ln);
        let d = bregman(&p, &array![0.5, 0.5], &x, &xi);
        assert_abs_diff_eq!(d, 0.1438410362258904, epsilon = 1e-15);
    }

    #[test]
    fn bregman_infinite_outside_domain() {
        let p = make_projected_quadratic(ConstraintSet::nonneg_orthant());
        let xi = array![1.0, -3.0];
        let x = p.conjugate_grad(&xi);
        assert_eq!(bregman(&p, &array![1.0, -1.0], &x, &xi), f64::INFINITY);
    }

    fn all_penalties() -> Vec<Penalty> {
        vec![
            make_quadratic(),
            make_projected_quadratic(ConstraintSet::nonneg_orthant()),
            make_projected_quadratic(ConstraintSet::box_bounds(-0.5, 2.0)),
            make_projected_quadratic(ConstraintSet::simplex(1.0, None)),
            make_entropy_simplex(Vector::from(vec![0.3, 0.5, 0.9, 0.2, 1.1])),
            make_elastic_net(0.8, 0.3),
        ]
    }

    #[test]
    fn fenchel_young_equality_across_penalties() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for p in all_penalties() {
            for _ in 0..100 {
                let dim = p.weights().map_or(5, Vector::len);
                let xi = sample_vec(&mut rng, dim, 4.0);
                let x = p.conjugate_grad(&xi);
                let r = p.fenchel_young_residual(&x, &xi);
                let scale = 1.0 + p.evaluate(&x).abs() + p.conjugate_value(&xi).abs();
                assert!(
                    r.abs() <= 1e-8 * scale,
                    "kind {:?}: residual {r}",
                    p.kind()
                );
            }
        }
    }

    #[test]
    fn conjugate_grad_lipschitz_across_penalties() {
        // dual-to-primal bound: constant 1/(2 sigma), measured in each
        // penalty's own geometry (sup norm to weighted L1 for entropy)
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        for p in all_penalties() {
            for _ in 0..200 {
                let dim = p.weights().map_or(6, Vector::len);
                let xi = sample_vec(&mut rng, dim, 4.0);
                let eta = sample_vec(&mut rng, dim, 4.0);
                let dx = p.conjugate_grad(&xi) - p.conjugate_grad(&eta);
                let lhs = p.distance_norm(&dx);
                let dxi = &xi - &eta;
                let rhs = match p.kind() {
                    PenaltyKind::EntropySimplex => {
                        dxi.iter().cloned().fold(0.0, |a: f64, b| a.max(b.abs()))
                    }
                    _ => weighted_dot(&dxi, &dxi, p.weights()).sqrt(),
                };
                assert!(
                    lhs <= rhs / (2.0 * p.sigma()) + 1e-10,
                    "kind {:?}: {lhs} > {rhs}",
                    p.kind()
                );
            }
        }
    }

    #[test]
    fn strong_convexity_quadratic_ratio_is_one() {
        let r = strong_convexity_check(&make_quadratic(), 500, 3);
        assert_eq!(r.violations, 0);
        assert_abs_diff_eq!(r.min_ratio, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn strong_convexity_holds_for_all_penalties() {
        for (i, p) in all_penalties().into_iter().enumerate() {
            let r = strong_convexity_check(&p, 400, 100 + i as u64);
            assert_eq!(r.violations, 0, "kind {:?}", p.kind());
            assert!(r.min_ratio >= 1.0 - 1e-9, "kind {:?}: {}", p.kind(), r.min_ratio);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn projection_idempotent_and_optimal(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dim = rng.random_range(2usize..8);
            let w = Array1::from_shape_fn(dim, |_| rng.random_range(0.2..2.0));
            let sets = vec![
                ConstraintSet::nonneg_orthant(),
                ConstraintSet::box_bounds(-1.0, 1.5),
                ConstraintSet::simplex(1.0, Some(w.clone())),
            ];
            for set in sets {
                let v = Array1::from_shape_fn(dim, |_| rng.random_range(-3.0..3.0));
                let pv = set.project(&v);
                let ppv = set.project(&pv);
                let wref = match set.kind() {
                    ConstraintKind::Simplex { .. } => Some(&w),
                    _ => None,
                };
                prop_assert!(weighted_dist_sq(&pv, &ppv, wref).sqrt() <= 1e-10);
                // optimality: <v - Pv, z - Pv> <= 0 for z in the set
                for _ in 0..10 {
                    let raw = Array1::from_shape_fn(dim, |_| rng.random_range(-2.0..2.0));
                    let z = set.project(&raw);
                    let gap = weighted_dot(&(&v - &pv), &(&z - &pv), wref);
                    prop_assert!(gap <= 1e-9);
                }
            }
        }

        #[test]
        fn bregman_nonnegative(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for p in all_penalties() {
                let dim = p.weights().map_or(4, Vector::len);
                let xi = sample_vec(&mut rng, dim, 5.0);
                let eta = sample_vec(&mut rng, dim, 5.0);
                let x = p.conjugate_grad(&xi);
                let xbar = p.conjugate_grad(&eta);
                let d = bregman(&p, &xbar, &x, &xi);
                prop_assert!(d >= 0.0);
                let zero = bregman(&p, &x, &x, &xi);
                prop_assert!(zero.abs() <= 1e-9 * (1.0 + p.evaluate(&x).abs()));
            }
        }
    }
}
