//! Output writers. Every CSV and plot file is deterministic for a given
//! configuration: numbers print at full precision (17 significant digits)
//! and row order follows the study grid. `run.log` carries wall-clock times
//! and is the one file excluded from the byte-reproducibility guarantee.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dualgrad::analysis::RefinedFit;
use dualgrad::solver::RunRecord;
use dualgrad::study::{ComparisonRow, StudyResult};

use crate::config::{CliError, Resolved};

/// Shortest representation that round-trips f64, in scientific form.
pub fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

/// RFC-4180-style quoting for fields that may contain commas or quotes.
pub fn csv_quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::Write {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Header lines common to every output file.
pub fn preamble(r: &Resolved, gamma: f64, lipschitz: f64, experimental: bool) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# config_sha256: {}", r.hash);
    let _ = writeln!(s, "# problem: {}", csv_quote(&r.problem.label));
    let _ = writeln!(s, "# method: {}", r.method.name());
    let _ = writeln!(s, "# gamma: {}", fmt_f(gamma));
    let _ = writeln!(s, "# lipschitz: {}", fmt_f(lipschitz));
    if experimental {
        let _ = writeln!(s, "# experimental: true");
    }
    s
}

pub fn render_trace(r: &Resolved, gamma: f64, lipschitz: f64, experimental: bool, record: &RunRecord) -> String {
    let mut s = preamble(r, gamma, lipschitz, experimental);
    s.push_str("n,residual_norm,dual_value\n");
    for it in &record.iterates {
        let _ = writeln!(
            s,
            "{},{},{}",
            it.n,
            fmt_f(it.residual_norm),
            fmt_f(it.dual_value)
        );
    }
    s
}

pub fn render_solve_summary(
    r: &Resolved,
    gamma: f64,
    lipschitz: f64,
    experimental: bool,
    delta: f64,
    record: &RunRecord,
    errors: &[f64],
) -> String {
    let mut s = preamble(r, gamma, lipschitz, experimental);
    s.push_str("field,value\n");
    let last = record
        .iterates
        .last()
        .expect("solver records at least the stopping iterate");
    let rows: Vec<(String, String)> = std::iter::empty()
        .chain([
            ("delta".to_string(), fmt_f(delta)),
            ("n_stop".to_string(), record.stop_index.to_string()),
            (
                "termination".to_string(),
                record.termination.name().to_string(),
            ),
            ("final_residual".to_string(), fmt_f(last.residual_norm)),
            ("final_dual_value".to_string(), fmt_f(last.dual_value)),
        ])
        .chain(
            r.measures
                .iter()
                .zip(errors)
                .map(|(m, e)| (format!("error_{}", m.name()), fmt_f(*e))),
        )
        .collect();
    for (k, v) in rows {
        let _ = writeln!(s, "{},{}", csv_quote(&k), v);
    }
    s
}

pub fn render_points(
    r: &Resolved,
    experimental: bool,
    study: &StudyResult,
) -> String {
    let mut s = preamble(r, study.gamma.gamma, study.gamma.lipschitz, experimental);
    s.push_str("delta,seed_index,noise_seed,n_stop,termination,residual");
    for m in &study.measures {
        let _ = write!(s, ",error_{}", m.name());
    }
    s.push('\n');
    for c in &study.cells {
        let _ = write!(
            s,
            "{},{},{},{},{},{}",
            fmt_f(c.delta),
            c.seed_index,
            c.noise_seed,
            c.n_stop,
            c.termination.name(),
            fmt_f(c.residual)
        );
        for e in &c.errors {
            let _ = write!(s, ",{}", fmt_f(*e));
        }
        s.push('\n');
    }
    s
}

pub fn render_medians(r: &Resolved, experimental: bool, study: &StudyResult) -> String {
    let mut s = preamble(r, study.gamma.gamma, study.gamma.lipschitz, experimental);
    s.push_str("delta,median_n_stop");
    for m in &study.measures {
        let _ = write!(s, ",median_error_{}", m.name());
    }
    s.push('\n');
    for p in &study.medians {
        let _ = write!(s, "{},{}", fmt_f(p.delta), fmt_f(p.n_stop));
        for e in &p.errors {
            let _ = write!(s, ",{}", fmt_f(*e));
        }
        s.push('\n');
    }
    s
}

pub fn render_fits(r: &Resolved, experimental: bool, study: &StudyResult) -> String {
    let mut s = preamble(r, study.gamma.gamma, study.gamma.lipschitz, experimental);
    s.push_str(
        "measure,slope,intercept,r_squared,points_used,points_excluded,dropped_largest,full_slope,full_r_squared\n",
    );
    for (m, fit) in &study.fits {
        match fit {
            Some(f) => {
                let c = f.chosen();
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{}",
                    m.name(),
                    fmt_f(c.slope),
                    fmt_f(c.intercept),
                    fmt_f(c.r_squared),
                    c.points_used,
                    c.points_excluded,
                    f.dropped_largest,
                    fmt_f(f.full.slope),
                    fmt_f(f.full.r_squared)
                );
            }
            None => {
                let _ = writeln!(s, "{},,,,,,,,", m.name());
            }
        }
    }
    s
}

/// Data file for plotting: one block per measure, log-log axes expected.
pub fn render_plot_data(study: &StudyResult) -> String {
    let mut s = String::from("# delta");
    for m in &study.measures {
        let _ = write!(s, " {}", m.name());
    }
    s.push('\n');
    for p in &study.medians {
        let _ = write!(s, "{}", fmt_f(p.delta));
        for e in &p.errors {
            let _ = write!(s, " {}", fmt_f(*e));
        }
        s.push('\n');
    }
    s
}

/// Gnuplot script over `plot.dat`; fitted power laws drawn from the stored
/// coefficients, no recomputation at plot time.
pub fn render_plot_script(study: &StudyResult) -> String {
    let mut s = String::new();
    s.push_str("set logscale xy\n");
    s.push_str("set xlabel 'delta'\n");
    s.push_str("set ylabel 'reconstruction error'\n");
    s.push_str("set key left top\n");
    s.push_str("plot \\\n");
    let mut parts = Vec::new();
    for (i, m) in study.measures.iter().enumerate() {
        parts.push(format!(
            "  'plot.dat' using 1:{} with points title '{}'",
            i + 2,
            m.name()
        ));
        if let Some(fit) = study.fit_for(*m) {
            let c = fit.chosen();
            parts.push(format!(
                "  exp({}) * x**({}) with lines title '{} fit (slope {:.3})'",
                fmt_f(c.intercept),
                fmt_f(c.slope),
                m.name(),
                c.slope
            ));
        }
    }
    s.push_str(&parts.join(", \\\n"));
    s.push('\n');
    s
}

pub fn render_comparison(
    left: &Resolved,
    right: &Resolved,
    experimental: bool,
    rows: &[ComparisonRow],
    left_study: &StudyResult,
    right_study: &StudyResult,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# config_sha256_a: {}", left.hash);
    let _ = writeln!(s, "# config_sha256_b: {}", right.hash);
    let _ = writeln!(s, "# problem: {}", csv_quote(&left.problem.label));
    let _ = writeln!(s, "# method_a: {}", left.method.name());
    let _ = writeln!(s, "# method_b: {}", right.method.name());
    if experimental {
        let _ = writeln!(s, "# experimental: true");
    }
    s.push_str("delta,n_stop_a,n_stop_b,ratio");
    for m in &left_study.measures {
        let _ = write!(s, ",error_{}_a,error_{}_b", m.name(), m.name());
    }
    s.push('\n');
    // rows only cover levels both studies kept, so look medians up by delta
    let median_at = |study: &StudyResult, delta: f64| {
        study
            .medians
            .iter()
            .find(|p| p.delta == delta)
            .expect("comparison rows come from shared levels")
            .errors
            .clone()
    };
    for row in rows {
        let _ = write!(
            s,
            "{},{},{},{}",
            fmt_f(row.delta),
            fmt_f(row.n_left),
            fmt_f(row.n_right),
            fmt_f(row.ratio)
        );
        let (ea, eb) = (
            median_at(left_study, row.delta),
            median_at(right_study, row.delta),
        );
        for k in 0..left_study.measures.len() {
            let _ = write!(s, ",{},{}", fmt_f(ea[k]), fmt_f(eb[k]));
        }
        s.push('\n');
    }
    s
}

pub fn fit_console_line(measure_name: &str, fit: Option<&RefinedFit>) -> String {
    match fit {
        Some(f) => {
            let c = f.chosen();
            format!(
                "  {measure_name}: slope {:.4}, r^2 {:.4} ({} points{})",
                c.slope,
                c.r_squared,
                c.points_used,
                if f.dropped_largest {
                    ", coarsest level dropped"
                } else {
                    ""
                }
            )
        }
        None => format!("  {measure_name}: fit unavailable (too few usable points)"),
    }
}
