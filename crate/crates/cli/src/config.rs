//! Experiment configuration: TOML schema, field-level validation, and the
//! canonical form whose SHA-256 stamps every output file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use dualgrad::analysis::ErrorMeasure;
use dualgrad::penalty::PenaltyKind;
use dualgrad::problems::{make_problem, ProblemInstance, ProblemName};
use dualgrad::solver::{Method, SolveError, DEFAULT_N_CAP};
use dualgrad::study::{GammaChoice, StopSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
    #[error(
        "configuration is outside the proven convergence region:\n{}\npass --allow-unproven-region to run anyway (outputs will be marked experimental)",
        .0.join("\n")
    )]
    UnprovenRegion(Vec<String>),
    #[error("{0}")]
    Usage(String),
    #[error("solver failed: {0}")]
    Solver(#[from] SolveError),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub problem: ProblemSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<PenaltySection>,
    pub method: MethodSection,
    pub stopping: StoppingSection,
    #[serde(default)]
    pub step: StepSection,
    pub study: StudySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub name: String,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySection {
    pub kind: String,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StoppingSection {
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_cap: Option<usize>,
}

/// `gamma = "auto"` or an explicit positive number.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum GammaField {
    Name(String),
    Value(f64),
}

impl Default for GammaField {
    fn default() -> Self {
        GammaField::Name("auto".to_string())
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StepSection {
    #[serde(default)]
    pub gamma: GammaField,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub deltas: Vec<f64>,
    pub seeds_per_delta: usize,
    pub measures: Vec<String>,
}

/// What the configuration is being validated for; command-specific
/// preconditions (grid size, positive noise levels) apply only where the
/// command actually needs them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Solve,
    RateStudy,
    Compare,
    ValidateOnly,
}

/// A parsed, validated configuration with its core-library counterparts and
/// the canonical-form hash.
pub struct Resolved {
    pub config: ExperimentConfig,
    pub problem: ProblemInstance,
    pub method: Method,
    pub stop: StopSpec,
    pub gamma: GammaChoice,
    pub measures: Vec<ErrorMeasure>,
    pub hash: String,
}

fn penalty_kind_name(kind: PenaltyKind) -> &'static str {
    match kind {
        PenaltyKind::Quadratic => "quadratic",
        PenaltyKind::ProjectedQuadratic => "projected_quadratic",
        PenaltyKind::EntropySimplex => "entropy_simplex",
        PenaltyKind::ElasticNet => "elastic_net",
    }
}

pub fn load_config(path: &Path, purpose: Purpose) -> Result<Resolved, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let config: ExperimentConfig = toml::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    resolve(config, purpose)
}

pub fn resolve(config: ExperimentConfig, purpose: Purpose) -> Result<Resolved, CliError> {
    let mut errs = Vec::new();

    if config.version != 1 {
        errs.push(format!(
            "version: unsupported config version {} (this tool reads version 1)",
            config.version
        ));
    }

    let name = ProblemName::parse(&config.problem.name);
    if name.is_none() {
        let known: Vec<&str> = ProblemName::ALL.iter().map(|p| p.name()).collect();
        errs.push(format!(
            "problem.name: unknown problem '{}' (expected one of: {})",
            config.problem.name,
            known.join(", ")
        ));
    }
    if config.problem.n < 8 {
        errs.push(format!(
            "problem.n: must be at least 8 (got {})",
            config.problem.n
        ));
    }

    // the stock problems fix their penalty; a [penalty] section may restate
    // it but cannot change it
    let canonical_kind = name.map(stock_penalty_kind);
    if let (Some(sec), Some(kind)) = (&config.penalty, canonical_kind) {
        let expected = penalty_kind_name(kind);
        if sec.kind != expected {
            errs.push(format!(
                "penalty.kind: problem '{}' is built for '{expected}' (got '{}')",
                config.problem.name, sec.kind
            ));
        }
    }

    let method = match config.method.name.as_str() {
        "plain" => Some(Method::Plain),
        "accelerated" => {
            let alpha = config.method.alpha.unwrap_or(3.0);
            if !alpha.is_finite() || alpha <= 0.0 {
                errs.push(format!(
                    "method.alpha: must be a positive number (got {alpha})"
                ));
            }
            Some(Method::Accelerated { alpha })
        }
        "entropic_landweber" => {
            if canonical_kind.is_some_and(|k| k != PenaltyKind::EntropySimplex) {
                errs.push(format!(
                    "method.name: entropic_landweber needs an entropy problem (got '{}')",
                    config.problem.name
                ));
            }
            Some(Method::EntropicLandweber)
        }
        other => {
            errs.push(format!(
                "method.name: unknown method '{other}' (expected plain, accelerated, or entropic_landweber)"
            ));
            None
        }
    };
    if config.method.name != "accelerated" && config.method.alpha.is_some() {
        errs.push("method.alpha: only meaningful for the accelerated method".to_string());
    }

    let n_cap = config.stopping.n_cap.unwrap_or(DEFAULT_N_CAP);
    let gamma = match &config.step.gamma {
        GammaField::Name(s) if s == "auto" => Some(GammaChoice::Auto),
        GammaField::Name(s) => {
            errs.push(format!(
                "step.gamma: expected \"auto\" or a positive number (got \"{s}\")"
            ));
            None
        }
        GammaField::Value(v) if v.is_finite() && *v > 0.0 => Some(GammaChoice::Explicit(*v)),
        GammaField::Value(v) => {
            errs.push(format!("step.gamma: must be positive (got {v})"));
            None
        }
    };

    let stop = match config.stopping.mode.as_str() {
        "discrepancy" => {
            for (field, present) in [
                ("q", config.stopping.q.is_some()),
                ("scale", config.stopping.scale.is_some()),
            ] {
                if present {
                    errs.push(format!("stopping.{field}: not used in discrepancy mode"));
                }
            }
            let tau = config.stopping.tau.unwrap_or(1.5);
            if !(tau > 1.0) {
                errs.push(format!(
                    "stopping.tau: discrepancy principle requires tau > 1 (got {tau})"
                ));
            } else if canonical_kind == Some(PenaltyKind::EntropySimplex)
                && matches!(gamma, Some(GammaChoice::Auto))
                && tau <= 2.0
            {
                errs.push(format!(
                    "stopping.tau: entropy penalty with the auto step size needs tau > 2 (got {tau})"
                ));
            }
            Some(StopSpec::Discrepancy { tau, n_cap })
        }
        "a_priori" => {
            if config.stopping.tau.is_some() {
                errs.push("stopping.tau: not used in a_priori mode".to_string());
            }
            let q = config.stopping.q.unwrap_or(1.0);
            let scale = config.stopping.scale.unwrap_or(1.0);
            if !(q > 0.0 && q <= 1.0) {
                errs.push(format!("stopping.q: must lie in (0, 1] (got {q})"));
            }
            if !(scale > 0.0 && scale.is_finite()) {
                errs.push(format!("stopping.scale: must be positive (got {scale})"));
            }
            Some(StopSpec::APriori { q, scale, n_cap })
        }
        "a_priori_accelerated" => {
            for (field, present) in [
                ("tau", config.stopping.tau.is_some()),
                ("q", config.stopping.q.is_some()),
            ] {
                if present {
                    errs.push(format!(
                        "stopping.{field}: not used in a_priori_accelerated mode"
                    ));
                }
            }
            let scale = config.stopping.scale.unwrap_or(1.0);
            if !(scale > 0.0 && scale.is_finite()) {
                errs.push(format!("stopping.scale: must be positive (got {scale})"));
            }
            Some(StopSpec::APrioriAccelerated { scale, n_cap })
        }
        other => {
            errs.push(format!(
                "stopping.mode: unknown mode '{other}' (expected discrepancy, a_priori, or a_priori_accelerated)"
            ));
            None
        }
    };

    if config.study.deltas.is_empty() {
        errs.push("study.deltas: at least one noise level is required".to_string());
    }
    for (i, d) in config.study.deltas.iter().enumerate() {
        if !d.is_finite() || *d < 0.0 {
            errs.push(format!(
                "study.deltas[{i}]: must be a finite nonnegative number (got {d})"
            ));
        }
    }
    if !config.study.deltas.windows(2).all(|w| w[0] > w[1]) {
        errs.push("study.deltas: must be strictly decreasing".to_string());
    }
    match purpose {
        Purpose::RateStudy => {
            if config.study.deltas.len() < 4 {
                errs.push(format!(
                    "study.deltas: a rate study needs at least 4 noise levels (got {})",
                    config.study.deltas.len()
                ));
            }
            if config.study.deltas.iter().any(|d| *d == 0.0) {
                errs.push("study.deltas: rate studies need strictly positive levels".to_string());
            }
        }
        Purpose::Compare => {
            if config.study.deltas.iter().any(|d| *d == 0.0) {
                errs.push("study.deltas: comparisons need strictly positive levels".to_string());
            }
        }
        Purpose::Solve | Purpose::ValidateOnly => {}
    }
    if config.study.seeds_per_delta < 1 {
        errs.push("study.seeds_per_delta: must be at least 1".to_string());
    }
    if config.study.measures.is_empty() {
        errs.push("study.measures: at least one error measure is required".to_string());
    }
    let mut measures = Vec::new();
    for (i, m) in config.study.measures.iter().enumerate() {
        match ErrorMeasure::from_name(m) {
            Some(m) => measures.push(m),
            None => errs.push(format!(
                "study.measures[{i}]: unknown measure '{m}' (expected norm, norm_sq_half, bregman, l1, or kl)"
            )),
        }
    }

    if !errs.is_empty() {
        return Err(CliError::Invalid(errs));
    }

    let problem = make_problem(name.unwrap(), config.problem.n, config.problem.seed);
    let hash = config_hash(&config);
    Ok(Resolved {
        config,
        problem,
        method: method.unwrap(),
        stop: stop.unwrap(),
        gamma: gamma.unwrap(),
        measures,
        hash,
    })
}

fn stock_penalty_kind(name: ProblemName) -> PenaltyKind {
    match name {
        ProblemName::DeconvNonneg => PenaltyKind::ProjectedQuadratic,
        ProblemName::GravityFredholm | ProblemName::DiagSynthetic => PenaltyKind::Quadratic,
        ProblemName::DensityRecovery => PenaltyKind::EntropySimplex,
    }
}

/// Canonical form used for hashing: defaults resolved, the penalty restated
/// explicitly, and output paths dropped (they change where files land, not
/// what they contain).
#[derive(Serialize)]
struct CanonicalConfig<'a> {
    version: u32,
    problem: &'a ProblemSection,
    penalty: PenaltySection,
    method: MethodSection,
    stopping: StoppingSection,
    step: &'a StepSection,
    study: &'a StudySection,
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let kind = ProblemName::parse(&config.problem.name)
        .map(stock_penalty_kind)
        .expect("hash is computed on validated configs");
    let canon = CanonicalConfig {
        version: config.version,
        problem: &config.problem,
        penalty: PenaltySection {
            kind: penalty_kind_name(kind).to_string(),
        },
        method: MethodSection {
            name: config.method.name.clone(),
            alpha: if config.method.name == "accelerated" {
                Some(config.method.alpha.unwrap_or(3.0))
            } else {
                None
            },
        },
        stopping: canonical_stopping(&config.stopping),
        step: &config.step,
        study: &config.study,
    };
    let text = toml::to_string(&canon).expect("canonical config serializes");
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        let _ = write!(hex, "{b:02x}");
    }
    hex
}

fn canonical_stopping(s: &StoppingSection) -> StoppingSection {
    let n_cap = Some(s.n_cap.unwrap_or(DEFAULT_N_CAP));
    match s.mode.as_str() {
        "discrepancy" => StoppingSection {
            mode: s.mode.clone(),
            tau: Some(s.tau.unwrap_or(1.5)),
            q: None,
            scale: None,
            n_cap,
        },
        "a_priori" => StoppingSection {
            mode: s.mode.clone(),
            tau: None,
            q: Some(s.q.unwrap_or(1.0)),
            scale: Some(s.scale.unwrap_or(1.0)),
            n_cap,
        },
        _ => StoppingSection {
            mode: s.mode.clone(),
            tau: None,
            q: None,
            scale: Some(s.scale.unwrap_or(1.0)),
            n_cap,
        },
    }
}

/// Two configurations "match up to method" when their canonical forms agree
/// after blanking the method section; used by `compare`.
pub fn same_except_method(a: &ExperimentConfig, b: &ExperimentConfig) -> bool {
    let blank = |c: &ExperimentConfig| {
        let mut c = c.clone();
        c.method = MethodSection {
            name: String::new(),
            alpha: None,
        };
        c.output_dir = None;
        config_hash(&c)
    };
    blank(a) == blank(b)
}
