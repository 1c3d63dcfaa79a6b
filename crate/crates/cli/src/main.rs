//! Command-line front end: configuration-driven single solves, noise-grid
//! rate studies, and method comparisons, with deterministic CSV output.

mod config;
mod emit;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use dualgrad::analysis::error_measure;
use dualgrad::problems::{add_noise, mix_seed, ProblemName};
use dualgrad::study::{
    compare_iterations, resolve_gamma, run_method, run_study, GammaInfo, StudyPlan,
};

use config::{load_config, same_except_method, CliError, Purpose, Resolved};

#[derive(Parser)]
#[command(
    name = "dualgrad",
    version,
    about = "Dual gradient solver harness for linear ill-posed problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solve at the first noise level and write its iteration trace
    Solve(RunArgs),
    /// Sweep the noise grid and fit log-log convergence rates
    RateStudy(RunArgs),
    /// Run two configurations differing only in method, tabulate iterations to stop
    Compare(CompareArgs),
    /// Parse and validate a configuration, printing its canonical hash
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
    /// List the built-in problems
    ListProblems,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's output_dir; default ".")
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the noise grid (default: all cores)
    #[arg(long)]
    jobs: Option<usize>,
    /// Keep every m-th iterate in the trace (solve only)
    #[arg(long, default_value_t = 1)]
    record_every: usize,
    /// Proceed when the step size or tau falls outside the proven
    /// convergence region; outputs are marked experimental
    #[arg(long)]
    allow_unproven_region: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// First configuration (TOML)
    #[arg(long)]
    config_a: PathBuf,
    /// Second configuration; must match the first except for [method]
    #[arg(long)]
    config_b: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    allow_unproven_region: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::RateStudy(args) => cmd_rate_study(args),
        Command::Compare(args) => cmd_compare(args),
        Command::ValidateConfig { config } => cmd_validate(&config),
        Command::ListProblems => {
            cmd_list_problems();
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn init_jobs(jobs: Option<usize>) -> Result<(), CliError> {
    let Some(k) = jobs else { return Ok(()) };
    if k == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".to_string()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(k)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure {k} worker threads: {e}")))
}

fn out_dir(flag: Option<PathBuf>, r: &Resolved) -> Result<PathBuf, CliError> {
    let dir = flag
        .or_else(|| r.config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Write {
        path: dir.clone(),
        source,
    })?;
    Ok(dir)
}

/// Refuses step/stop settings outside the convergence theory unless the
/// escape hatch is set; returns whether outputs must carry the experimental
/// marker.
fn gate_region(info: &GammaInfo, allow: bool) -> Result<bool, CliError> {
    if info.violations.is_empty() {
        Ok(false)
    } else if allow {
        Ok(true)
    } else {
        Err(CliError::UnprovenRegion(info.violations.clone()))
    }
}

fn write_run_log(
    dir: &std::path::Path,
    hash: &str,
    wall_seconds: f64,
    warnings: &[String],
) -> Result<(), CliError> {
    let mut log = String::new();
    let _ = writeln!(log, "config_sha256: {hash}");
    let _ = writeln!(log, "wall_seconds: {wall_seconds:.3}");
    for w in warnings {
        let _ = writeln!(log, "warning: {w}");
    }
    emit::write_file(dir, "run.log", &log)?;
    Ok(())
}

fn cmd_solve(args: RunArgs) -> Result<(), CliError> {
    init_jobs(args.jobs)?;
    if args.record_every == 0 {
        return Err(CliError::Usage(
            "--record-every must be at least 1".to_string(),
        ));
    }
    let r = load_config(&args.config, Purpose::Solve)?;
    let dir = out_dir(args.out, &r)?;

    let delta = r.config.study.deltas[0];
    let p = r.problem.penalty();
    let rule = r.stop.rule_for(delta);
    let info = resolve_gamma(&r.problem.op, &p, r.method, &rule, r.gamma);
    let experimental = gate_region(&info, args.allow_unproven_region)?;

    // same noise as grid cell (0, 0) of a study over this config
    let nd = add_noise(&r.problem.y_exact, delta, mix_seed(0xce11, 0, 0));
    let t0 = Instant::now();
    let rec = run_method(
        r.method,
        &r.problem.op,
        &nd.ydelta,
        &p,
        info.gamma,
        rule,
        args.record_every,
    )?;
    let wall = t0.elapsed();

    let xi = r
        .problem
        .lambda_dagger()
        .map(|lam| r.problem.op.apply_adjoint(lam));
    let errors: Vec<f64> = r
        .measures
        .iter()
        .map(|&m| error_measure(m, &p, rec.final_x(), &r.problem.x_true, xi.as_ref()))
        .collect();

    emit::write_file(
        &dir,
        "trace.csv",
        &emit::render_trace(&r, info.gamma, info.lipschitz, experimental, &rec),
    )?;
    emit::write_file(
        &dir,
        "summary.csv",
        &emit::render_solve_summary(
            &r,
            info.gamma,
            info.lipschitz,
            experimental,
            delta,
            &rec,
            &errors,
        ),
    )?;
    let warnings: Vec<String> = info
        .violations
        .iter()
        .map(|v| format!("outside proven region: {v}"))
        .collect();
    write_run_log(&dir, &r.hash, wall.as_secs_f64(), &warnings)?;

    println!(
        "{} at delta {:.3e}: stopped at n = {} ({})",
        r.problem.label,
        delta,
        rec.stop_index,
        rec.termination.name()
    );
    println!(
        "  gamma {:.6e}, final residual {:.6e}",
        info.gamma,
        rec.final_residual()
    );
    for (m, e) in r.measures.iter().zip(&errors) {
        println!("  {}: {:.6e}", m.name(), e);
    }
    println!("wrote trace.csv, summary.csv, run.log to {}", dir.display());
    Ok(())
}

fn study_plan(r: &Resolved) -> StudyPlan {
    StudyPlan {
        method: r.method,
        stop: r.stop,
        gamma: r.gamma,
        deltas: r.config.study.deltas.clone(),
        seeds_per_delta: r.config.study.seeds_per_delta,
        measures: r.measures.clone(),
    }
}

fn cmd_rate_study(args: RunArgs) -> Result<(), CliError> {
    init_jobs(args.jobs)?;
    let r = load_config(&args.config, Purpose::RateStudy)?;
    let dir = out_dir(args.out, &r)?;
    let plan = study_plan(&r);

    // gate before launching the grid; run_study recomputes the same gamma
    let p = r.problem.penalty();
    let info = resolve_gamma(
        &r.problem.op,
        &p,
        r.method,
        &plan.stop.rule_for(plan.deltas[0]),
        r.gamma,
    );
    let experimental = gate_region(&info, args.allow_unproven_region)?;

    let t0 = Instant::now();
    let study = run_study(&r.problem, &plan)?;
    let wall = t0.elapsed();

    emit::write_file(&dir, "points.csv", &emit::render_points(&r, experimental, &study))?;
    emit::write_file(
        &dir,
        "medians.csv",
        &emit::render_medians(&r, experimental, &study),
    )?;
    emit::write_file(&dir, "fit.csv", &emit::render_fits(&r, experimental, &study))?;
    emit::write_file(&dir, "plot.dat", &emit::render_plot_data(&study))?;
    emit::write_file(&dir, "plot.gp", &emit::render_plot_script(&study))?;
    write_run_log(&dir, &r.hash, wall.as_secs_f64(), &study.warnings)?;

    println!(
        "rate study on {}: {} cells, gamma {:.6e}",
        r.problem.label,
        study.cells.len(),
        study.gamma.gamma
    );
    for (m, _) in &study.fits {
        println!("{}", emit::fit_console_line(m.name(), study.fit_for(*m)));
    }
    for w in &study.warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote points.csv, medians.csv, fit.csv, plot.dat, plot.gp to {}", dir.display());
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    init_jobs(args.jobs)?;
    let ra = load_config(&args.config_a, Purpose::Compare)?;
    let rb = load_config(&args.config_b, Purpose::Compare)?;
    if !same_except_method(&ra.config, &rb.config) {
        return Err(CliError::Usage(
            "compare needs two configurations identical except for [method]".to_string(),
        ));
    }
    let dir = out_dir(args.out, &ra)?;

    let mut experimental = false;
    for r in [&ra, &rb] {
        let p = r.problem.penalty();
        let info = resolve_gamma(
            &r.problem.op,
            &p,
            r.method,
            &r.stop.rule_for(r.config.study.deltas[0]),
            r.gamma,
        );
        experimental |= gate_region(&info, args.allow_unproven_region)?;
    }

    let t0 = Instant::now();
    let sa = run_study(&ra.problem, &study_plan(&ra))?;
    let sb = run_study(&rb.problem, &study_plan(&rb))?;
    let wall = t0.elapsed();
    let rows = compare_iterations(&sa, &sb);

    emit::write_file(
        &dir,
        "comparison.csv",
        &emit::render_comparison(&ra, &rb, experimental, &rows, &sa, &sb),
    )?;
    let warnings: Vec<String> = sa
        .warnings
        .iter()
        .map(|w| format!("[a] {w}"))
        .chain(sb.warnings.iter().map(|w| format!("[b] {w}")))
        .collect();
    write_run_log(&dir, &format!("{} / {}", ra.hash, rb.hash), wall.as_secs_f64(), &warnings)?;

    println!(
        "{} vs {} on {}:",
        ra.method.name(),
        rb.method.name(),
        ra.problem.label
    );
    println!("  delta        n_a        n_b      ratio");
    for row in &rows {
        println!(
            "  {:<9.3e} {:>9.1} {:>9.1} {:>9.3}",
            row.delta, row.n_left, row.n_right, row.ratio
        );
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote comparison.csv, run.log to {}", dir.display());
    Ok(())
}

fn cmd_validate(path: &PathBuf) -> Result<(), CliError> {
    let r = load_config(path, Purpose::ValidateOnly)?;
    println!("ok: {}", path.display());
    println!("problem: {}", r.problem.label);
    println!("method: {}", r.method.name());
    println!("config_sha256: {}", r.hash);
    Ok(())
}

fn cmd_list_problems() {
    for p in ProblemName::ALL {
        println!("{:<18} {}", p.name(), p.describe());
    }
}
