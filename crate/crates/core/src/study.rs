//! Noise-level grid runner: generate noise, solve, measure errors at the
//! stop index, aggregate medians per level, and fit log-log slopes.
//!
//! Cells of the (delta, seed) grid are independent and self-seeded, so the
//! runner may execute them in parallel; results are merged in (delta, seed)
//! order regardless of scheduling, which keeps emitted tables byte-stable.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::analysis::{
    error_measure, fit_rate_refined, ErrorMeasure, RatePoint, RefinedFit,
};
use crate::linop::{LinearOperator, Vector};
use crate::penalty::Penalty;
use crate::problems::{add_noise, mix_seed, ProblemInstance};
use crate::solver::{
    accelerated_solve, default_gamma, dual_gradient_solve, entropic_landweber_solve,
    lipschitz_constant, primal_form_solve, proven_region_violations, Method, RunRecord,
    SolveError, StoppingRule, Termination, DEFAULT_N_CAP,
};

/// Record-every value that keeps only the mandatory final iterate.
pub const TRACE_NONE: usize = usize::MAX / 2;

/// Seed for the deterministic power-iteration norm estimate.
pub const NORM_SEED: u64 = 0x0dd5_eed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaChoice {
    Auto,
    Explicit(f64),
}

/// Stopping policy as a function of the noise level.
#[derive(Debug, Clone, Copy)]
pub enum StopSpec {
    Discrepancy { tau: f64, n_cap: usize },
    APriori { q: f64, scale: f64, n_cap: usize },
    APrioriAccelerated { scale: f64, n_cap: usize },
}

impl StopSpec {
    pub fn discrepancy(tau: f64) -> Self {
        StopSpec::Discrepancy {
            tau,
            n_cap: DEFAULT_N_CAP,
        }
    }

    pub fn a_priori(q: f64, scale: f64) -> Self {
        StopSpec::APriori {
            q,
            scale,
            n_cap: DEFAULT_N_CAP,
        }
    }

    pub fn a_priori_accelerated(scale: f64) -> Self {
        StopSpec::APrioriAccelerated {
            scale,
            n_cap: DEFAULT_N_CAP,
        }
    }

    pub fn n_cap(&self) -> usize {
        match *self {
            StopSpec::Discrepancy { n_cap, .. }
            | StopSpec::APriori { n_cap, .. }
            | StopSpec::APrioriAccelerated { n_cap, .. } => n_cap,
        }
    }

    /// Stopping rule at one level. Exact data (`delta = 0`) makes the
    /// noise-scaled a-priori counts meaningless, so there the cap itself is
    /// the budget.
    pub fn rule_for(&self, delta: f64) -> StoppingRule {
        match *self {
            StopSpec::Discrepancy { tau, n_cap } => {
                StoppingRule::discrepancy(tau, delta).with_cap(n_cap)
            }
            StopSpec::APriori { q, scale, n_cap } => {
                if delta > 0.0 {
                    StoppingRule::a_priori_for_delta(delta, q, scale).with_cap(n_cap)
                } else {
                    StoppingRule::a_priori(n_cap)
                }
            }
            StopSpec::APrioriAccelerated { scale, n_cap } => {
                if delta > 0.0 {
                    StoppingRule::a_priori_accelerated(delta, scale).with_cap(n_cap)
                } else {
                    StoppingRule::a_priori(n_cap)
                }
            }
        }
    }
}

/// Step size, the Lipschitz constant it was derived from, and any
/// hypotheses of the convergence theory the pair fails to meet.
#[derive(Debug, Clone)]
pub struct GammaInfo {
    pub gamma: f64,
    pub lipschitz: f64,
    pub violations: Vec<String>,
}

pub fn resolve_gamma(
    op: &LinearOperator,
    p: &Penalty,
    method: Method,
    stop: &StoppingRule,
    choice: GammaChoice,
) -> GammaInfo {
    let l = lipschitz_constant(op, p, NORM_SEED);
    let gamma = match choice {
        GammaChoice::Auto => default_gamma(l, stop, p.kind()),
        GammaChoice::Explicit(g) => g,
    };
    let violations = proven_region_violations(method, p.kind(), stop, gamma, l);
    GammaInfo {
        gamma,
        lipschitz: l,
        violations,
    }
}

/// Dispatches one solve to the matching scheme.
pub fn run_method(
    method: Method,
    op: &LinearOperator,
    ydelta: &Vector,
    p: &Penalty,
    gamma: f64,
    stop: StoppingRule,
    record_every: usize,
) -> Result<RunRecord, SolveError> {
    match method {
        Method::Plain => dual_gradient_solve(op, ydelta, p, gamma, stop, record_every),
        Method::PrimalForm => primal_form_solve(op, ydelta, p, gamma, stop, record_every),
        Method::Accelerated { alpha } => {
            accelerated_solve(op, ydelta, p, gamma, alpha, stop, record_every)
        }
        Method::EntropicLandweber => {
            entropic_landweber_solve(op, ydelta, gamma, stop, record_every)
        }
    }
}

/// Everything a rate study needs to run.
#[derive(Debug, Clone)]
pub struct StudyPlan {
    pub method: Method,
    pub stop: StopSpec,
    pub gamma: GammaChoice,
    pub deltas: Vec<f64>,
    pub seeds_per_delta: usize,
    pub measures: Vec<ErrorMeasure>,
}

/// One solved grid cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub delta: f64,
    pub delta_index: usize,
    pub seed_index: usize,
    pub noise_seed: u64,
    pub n_stop: usize,
    pub termination: Termination,
    pub residual: f64,
    /// Parallel to the plan's `measures`.
    pub errors: Vec<f64>,
    pub wall: Duration,
    /// Excluded from medians and fits (the run hit its iteration cap).
    pub excluded: bool,
}

/// Median over seeds at one noise level.
#[derive(Debug, Clone)]
pub struct MedianPoint {
    pub delta: f64,
    pub n_stop: f64,
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub measures: Vec<ErrorMeasure>,
    pub cells: Vec<CellResult>,
    pub medians: Vec<MedianPoint>,
    pub fits: Vec<(ErrorMeasure, Option<RefinedFit>)>,
    pub gamma: GammaInfo,
    pub warnings: Vec<String>,
}

impl StudyResult {
    pub fn fit_for(&self, measure: ErrorMeasure) -> Option<&RefinedFit> {
        self.fits
            .iter()
            .find(|(m, _)| *m == measure)
            .and_then(|(_, f)| f.as_ref())
    }
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("comparable error values"));
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Runs the full (delta, seed) grid for one problem. Panics on structurally
/// invalid plans (the front end validates with field-level messages first);
/// solver failures surface as `Err`.
pub fn run_study(prob: &ProblemInstance, plan: &StudyPlan) -> Result<StudyResult, SolveError> {
    assert!(!plan.deltas.is_empty(), "study needs at least one noise level");
    assert!(
        plan.deltas.windows(2).all(|w| w[0] > w[1]),
        "noise levels must be strictly decreasing"
    );
    assert!(plan.seeds_per_delta >= 1, "study needs at least one seed");
    assert!(!plan.measures.is_empty(), "study needs at least one measure");

    let p = prob.penalty();
    let xi_dagger = prob
        .lambda_dagger()
        .map(|lam| prob.op.apply_adjoint(lam));
    let gamma = resolve_gamma(
        &prob.op,
        &p,
        plan.method,
        &plan.stop.rule_for(plan.deltas[0]),
        plan.gamma,
    );

    let grid: Vec<(usize, usize)> = (0..plan.deltas.len())
        .flat_map(|di| (0..plan.seeds_per_delta).map(move |si| (di, si)))
        .collect();
    let cells: Vec<Result<CellResult, SolveError>> = grid
        .par_iter()
        .map(|&(di, si)| {
            let delta = plan.deltas[di];
            let noise_seed = mix_seed(0xce11, di as u64, si as u64);
            let nd = add_noise(&prob.y_exact, delta, noise_seed);
            let rule = plan.stop.rule_for(delta);
            let t0 = Instant::now();
            let rec = run_method(
                plan.method,
                &prob.op,
                &nd.ydelta,
                &p,
                gamma.gamma,
                rule,
                TRACE_NONE,
            )?;
            let wall = t0.elapsed();
            let x = rec.final_x();
            let errors: Vec<f64> = plan
                .measures
                .iter()
                .map(|&m| error_measure(m, &p, x, &prob.x_true, xi_dagger.as_ref()))
                .collect();
            Ok(CellResult {
                delta,
                delta_index: di,
                seed_index: si,
                noise_seed,
                n_stop: rec.stop_index,
                termination: rec.termination,
                residual: rec.final_residual(),
                errors,
                wall,
                excluded: rec.termination == Termination::CapHit,
            })
        })
        .collect();
    let cells: Vec<CellResult> = cells.into_iter().collect::<Result<_, _>>()?;

    let mut warnings = Vec::new();
    for c in cells.iter().filter(|c| c.excluded) {
        warnings.push(format!(
            "run at delta={:.3e} seed {} hit the iteration cap; excluded from medians and fit",
            c.delta, c.seed_index
        ));
    }

    let mut medians = Vec::new();
    for (di, &delta) in plan.deltas.iter().enumerate() {
        let included: Vec<&CellResult> = cells
            .iter()
            .filter(|c| c.delta_index == di && !c.excluded)
            .collect();
        if included.is_empty() {
            warnings.push(format!(
                "all runs at delta={delta:.3e} were excluded; level dropped"
            ));
            continue;
        }
        let n_stop = median(&mut included.iter().map(|c| c.n_stop as f64).collect());
        let errors = (0..plan.measures.len())
            .map(|mi| median(&mut included.iter().map(|c| c.errors[mi]).collect()))
            .collect();
        medians.push(MedianPoint {
            delta,
            n_stop,
            errors,
        });
    }

    let mut fits = Vec::new();
    for (mi, &measure) in plan.measures.iter().enumerate() {
        let points: Vec<RatePoint> = medians
            .iter()
            .map(|mp| RatePoint {
                delta: mp.delta,
                error: mp.errors[mi],
                n_stop: mp.n_stop.round() as usize,
                measure,
            })
            .collect();
        match fit_rate_refined(&points) {
            Ok(f) => {
                if f.full.points_excluded > 0 {
                    warnings.push(format!(
                        "{} fit excluded {} nonpositive or non-finite error value(s)",
                        measure.name(),
                        f.full.points_excluded
                    ));
                }
                fits.push((measure, Some(f)));
            }
            Err(e) => {
                warnings.push(format!("{} fit unavailable: {e}", measure.name()));
                fits.push((measure, None));
            }
        }
    }

    Ok(StudyResult {
        measures: plan.measures.clone(),
        cells,
        medians,
        fits,
        gamma,
        warnings,
    })
}

/// Per-level iteration comparison between two studies on the same grid.
#[derive(Debug, Clone, Copy)]
pub struct ComparisonRow {
    pub delta: f64,
    pub n_left: f64,
    pub n_right: f64,
    /// `n_left / n_right`.
    pub ratio: f64,
}

pub fn compare_iterations(left: &StudyResult, right: &StudyResult) -> Vec<ComparisonRow> {
    let mut rows = Vec::new();
    for lm in &left.medians {
        if let Some(rm) = right
            .medians
            .iter()
            .find(|rm| rm.delta == lm.delta)
        {
            rows.push(ComparisonRow {
                delta: lm.delta,
                n_left: lm.n_stop,
                n_right: rm.n_stop,
                ratio: lm.n_stop / rm.n_stop,
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_problem, ProblemName};

    fn quick_plan(stop: StopSpec) -> StudyPlan {
        StudyPlan {
            method: Method::Plain,
            stop,
            gamma: GammaChoice::Auto,
            deltas: vec![1e-1, 1e-2, 1e-3, 1e-4],
            seeds_per_delta: 3,
            measures: vec![ErrorMeasure::Norm, ErrorMeasure::NormSqHalf],
        }
    }

    #[test]
    fn grid_runs_in_deterministic_order_and_reproduces() {
        let prob = make_problem(ProblemName::DiagSynthetic, 16, 3);
        let plan = quick_plan(StopSpec::discrepancy(1.5));
        let a = run_study(&prob, &plan).unwrap();
        assert_eq!(a.cells.len(), 12);
        for (k, c) in a.cells.iter().enumerate() {
            assert_eq!(c.delta_index, k / 3);
            assert_eq!(c.seed_index, k % 3);
            assert_eq!(c.termination, Termination::DiscrepancyMet);
        }
        let b = run_study(&prob, &plan).unwrap();
        for (x, y) in a.cells.iter().zip(&b.cells) {
            assert_eq!(x.errors, y.errors, "study is not reproducible");
            assert_eq!(x.n_stop, y.n_stop);
        }
        assert_eq!(a.medians.len(), 4);
        let fit = a.fit_for(ErrorMeasure::Norm).expect("fit present");
        let slope = fit.chosen().slope;
        assert!(
            slope > 0.25 && slope < 0.75,
            "half-power law expected, got {slope}"
        );
        // squared-norm slope is twice the norm slope by construction
        let fit2 = a.fit_for(ErrorMeasure::NormSqHalf).expect("fit present");
        assert!((fit2.chosen().slope - 2.0 * slope).abs() < 1e-9);
    }

    #[test]
    fn a_priori_counts_match_rule() {
        let prob = make_problem(ProblemName::DiagSynthetic, 16, 3);
        let plan = quick_plan(StopSpec::a_priori(1.0, 1.0));
        let res = run_study(&prob, &plan).unwrap();
        for c in &res.cells {
            assert_eq!(c.termination, Termination::APrioriReached);
            assert_eq!(c.n_stop, (1.0 / c.delta).round() as usize);
        }
    }

    #[test]
    fn capped_cells_are_excluded_with_warning() {
        let prob = make_problem(ProblemName::DiagSynthetic, 16, 3);
        let mut plan = quick_plan(StopSpec::Discrepancy { tau: 1.5, n_cap: 2 });
        plan.deltas = vec![1e-2, 1e-3, 1e-4];
        let res = run_study(&prob, &plan).unwrap();
        assert!(res.cells.iter().all(|c| c.excluded));
        assert!(res.medians.is_empty());
        assert!(res.fits.iter().all(|(_, f)| f.is_none()));
        assert!(!res.warnings.is_empty());
    }

    #[test]
    fn identical_studies_compare_at_ratio_one() {
        let prob = make_problem(ProblemName::DiagSynthetic, 16, 3);
        let plan = quick_plan(StopSpec::discrepancy(1.5));
        let a = run_study(&prob, &plan).unwrap();
        let b = run_study(&prob, &plan).unwrap();
        for row in compare_iterations(&a, &b) {
            assert_eq!(row.ratio, 1.0);
        }
    }

    #[test]
    fn acceleration_cuts_iteration_counts() {
        let prob = make_problem(ProblemName::DiagSynthetic, 48, 3);
        let mut plain = quick_plan(StopSpec::discrepancy(1.5));
        plain.deltas = vec![1e-3];
        plain.seeds_per_delta = 2;
        let mut accel = plain.clone();
        accel.method = Method::Accelerated { alpha: 3.0 };
        let pr = run_study(&prob, &plain).unwrap();
        let ar = run_study(&prob, &accel).unwrap();
        let rows = compare_iterations(&pr, &ar);
        assert!(rows[0].ratio >= 4.0, "speedup only {}", rows[0].ratio);
        assert!(!ar.gamma.violations.is_empty(), "accel+discrepancy is outside the proven region");
    }
}
