//! End-to-end tests of the `dualgrad` binary: exit codes, validation
//! messages, file formats, and the byte-reproducibility guarantee.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualgrad"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("read {name}: {e}"))
}

/// Rows below the comment preamble and the column-name header.
fn data_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

/// Column-name header of a CSV (first non-comment line).
fn header(csv: &str) -> String {
    csv.lines()
        .find(|l| !l.starts_with('#'))
        .expect("header present")
        .to_string()
}

fn summary_field(csv: &str, key: &str) -> String {
    data_rows(csv)
        .into_iter()
        .find(|r| r[0] == key)
        .unwrap_or_else(|| panic!("summary field {key}"))[1]
        .clone()
}

fn base_config() -> String {
    r#"
version = 1

[problem]
name = "diag_synthetic"
n = 16
seed = 3

[method]
name = "plain"

[stopping]
mode = "discrepancy"
tau = 1.5

[study]
deltas = [1e-1, 1e-2, 1e-3, 1e-4]
seeds_per_delta = 2
measures = ["norm", "bregman"]
"#
    .to_string()
}

#[test]
fn list_problems_names_every_builtin() {
    let out = run(&["list-problems"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for name in [
        "deconv_nonneg",
        "gravity_fredholm",
        "density_recovery",
        "diag_synthetic",
    ] {
        assert!(text.contains(name), "missing {name} in:\n{text}");
    }
}

#[test]
fn validate_accepts_good_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "good.toml", &base_config());
    let out = run(&["validate-config", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("config_sha256: "));
    let hash = text
        .lines()
        .find_map(|l| l.strip_prefix("config_sha256: "))
        .unwrap();
    assert_eq!(hash.len(), 64);
    assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
}

#[test]
fn validate_reports_every_error_with_its_field_path() {
    let tmp = tempfile::tempdir().unwrap();
    let body = base_config()
        .replace("tau = 1.5", "tau = 0.9")
        .replace("seeds_per_delta = 2", "seeds_per_delta = 0");
    let cfg = write_cfg(tmp.path(), "bad.toml", &body);
    let out = run(&["validate-config", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("stopping.tau"), "{err}");
    assert!(err.contains("study.seeds_per_delta"), "{err}");
}

#[test]
fn validate_rejects_penalty_not_matching_the_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let body = base_config().replace(
        "[method]",
        "[penalty]\nkind = \"entropy_simplex\"\n\n[method]",
    );
    let cfg = write_cfg(tmp.path(), "bad.toml", &body);
    let out = run(&["validate-config", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("penalty.kind"), "{}", stderr(&out));
}

#[test]
fn validate_rejects_unknown_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let body = base_config().replace("tau = 1.5", "tau = 1.5\nturbo = true");
    let cfg = write_cfg(tmp.path(), "bad.toml", &body);
    let out = run(&["validate-config", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("turbo"), "{}", stderr(&out));
}

#[test]
fn solve_writes_monotone_trace_and_meets_discrepancy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "solve.toml",
        &base_config().replace("deltas = [1e-1, 1e-2, 1e-3, 1e-4]", "deltas = [1e-3]"),
    );
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let trace = read(&out_dir, "trace.csv");
    assert!(trace.contains("# config_sha256: "));
    assert_eq!(header(&trace), "n,residual_norm,dual_value");
    let residuals: Vec<f64> = data_rows(&trace)
        .iter()
        .map(|r| r[1].parse().unwrap())
        .collect();
    assert!(residuals.len() > 2);
    for w in residuals.windows(2) {
        assert!(
            w[1] <= w[0] + 1e-12 * w[0].max(1.0),
            "residual rose: {} -> {}",
            w[0],
            w[1]
        );
    }

    let summary = read(&out_dir, "summary.csv");
    assert_eq!(summary_field(&summary, "termination"), "discrepancy_met");
    let final_res: f64 = summary_field(&summary, "final_residual").parse().unwrap();
    assert!(final_res <= 1.5 * 1e-3);
    assert!(summary.contains("error_norm"));
    assert!(summary.contains("error_bregman"));
}

#[test]
fn solve_thins_the_trace_to_the_requested_stride() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "solve.toml",
        &base_config().replace("deltas = [1e-1, 1e-2, 1e-3, 1e-4]", "deltas = [1e-3]"),
    );
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--record-every",
        "10",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let trace = read(&out_dir, "trace.csv");
    let rows = data_rows(&trace);
    let ns: Vec<usize> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    let n_stop: usize = summary_field(&read(&out_dir, "summary.csv"), "n_stop")
        .parse()
        .unwrap();
    for &n in &ns {
        assert!(n % 10 == 0 || n == n_stop, "unexpected trace row n={n}");
    }
    assert_eq!(*ns.last().unwrap(), n_stop);
}

#[test]
fn solve_with_exact_data_and_zero_budget_returns_the_initial_iterate() {
    let tmp = tempfile::tempdir().unwrap();
    let body = base_config()
        .replace("deltas = [1e-1, 1e-2, 1e-3, 1e-4]", "deltas = [0.0]")
        .replace(
            "mode = \"discrepancy\"\ntau = 1.5",
            "mode = \"a_priori\"\nn_cap = 0",
        );
    let cfg = write_cfg(tmp.path(), "solve.toml", &body);
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = read(&out_dir, "summary.csv");
    assert_eq!(summary_field(&summary, "n_stop"), "0");
    let rows = data_rows(&read(&out_dir, "trace.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "0");
}

#[test]
fn rate_study_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "study.toml", &base_config());
    let dir1 = tmp.path().join("run1");
    let dir2 = tmp.path().join("run2");
    let out1 = run(&[
        "rate-study",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir1.to_str().unwrap(),
    ]);
    assert!(out1.status.success(), "{}", stderr(&out1));
    let out2 = run(&[
        "rate-study",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir2.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert!(out2.status.success(), "{}", stderr(&out2));
    for name in ["points.csv", "medians.csv", "fit.csv", "plot.dat", "plot.gp"] {
        assert_eq!(read(&dir1, name), read(&dir2, name), "{name} differs");
    }
}

#[test]
fn rate_study_grid_bookkeeping_and_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "study.toml", &base_config());
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "rate-study",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let points = read(&out_dir, "points.csv");
    assert_eq!(data_rows(&points).len(), 4 * 2, "one row per (delta, seed)");
    assert!(header(&points).contains("termination"));

    let medians = read(&out_dir, "medians.csv");
    assert_eq!(data_rows(&medians).len(), 4);

    let fit = read(&out_dir, "fit.csv");
    let rows = data_rows(&fit);
    assert_eq!(rows.len(), 2);
    let norm_row = rows.iter().find(|r| r[0] == "norm").unwrap();
    let slope: f64 = norm_row[1].parse().unwrap();
    assert!(slope > 0.2 && slope < 0.9, "norm slope {slope}");

    // plot files carry the same medians, gnuplot script references them
    let dat = read(&out_dir, "plot.dat");
    assert_eq!(dat.lines().filter(|l| !l.starts_with('#')).count(), 4);
    let gp = read(&out_dir, "plot.gp");
    assert!(gp.contains("set logscale xy"));
    assert!(gp.contains("plot.dat"));

    // every csv names the same config hash
    let hash_line = |text: &str| {
        text.lines()
            .find(|l| l.starts_with("# config_sha256: "))
            .map(str::to_string)
            .unwrap()
    };
    let h = hash_line(&points);
    assert_eq!(hash_line(&medians), h);
    assert_eq!(hash_line(&fit), h);
}

#[test]
fn rate_study_rejects_short_delta_grids() {
    let tmp = tempfile::tempdir().unwrap();
    let body = base_config().replace(
        "deltas = [1e-1, 1e-2, 1e-3, 1e-4]",
        "deltas = [1e-1, 1e-2, 1e-3]",
    );
    let cfg = write_cfg(tmp.path(), "study.toml", &body);
    let out = run(&["rate-study", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(
        stderr(&out).contains("at least 4 noise levels"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn compare_of_identical_methods_has_unit_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "same.toml", &base_config());
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "compare",
        "--config-a",
        cfg.to_str().unwrap(),
        "--config-b",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = read(&out_dir, "comparison.csv");
    let rows = data_rows(&table);
    assert_eq!(rows.len(), 4);
    for r in rows {
        let ratio: f64 = r[3].parse().unwrap();
        assert_eq!(ratio, 1.0, "shared seeds force an exact unit ratio");
    }
}

#[test]
fn compare_rejects_configs_that_differ_beyond_method() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write_cfg(tmp.path(), "a.toml", &base_config());
    let b = write_cfg(
        tmp.path(),
        "b.toml",
        &base_config().replace("seed = 3", "seed = 4"),
    );
    let out = run(&[
        "compare",
        "--config-a",
        a.to_str().unwrap(),
        "--config-b",
        b.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(
        stderr(&out).contains("identical except"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn entropic_comparison_tabulates_kl_for_both_methods() {
    let tmp = tempfile::tempdir().unwrap();
    let base = r#"
version = 1

[problem]
name = "density_recovery"
n = 16
seed = 5

[method]
name = "plain"

[stopping]
mode = "discrepancy"
tau = 2.5

[study]
deltas = [1e-1, 1e-2]
seeds_per_delta = 1
measures = ["l1", "kl"]
"#;
    let a = write_cfg(tmp.path(), "a.toml", base);
    let b = write_cfg(
        tmp.path(),
        "b.toml",
        &base.replace("name = \"plain\"", "name = \"entropic_landweber\""),
    );
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "compare",
        "--config-a",
        a.to_str().unwrap(),
        "--config-b",
        b.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = read(&out_dir, "comparison.csv");
    let head = header(&table);
    assert!(head.contains("error_kl_a") && head.contains("error_kl_b"), "{head}");
    for r in data_rows(&table) {
        for v in &r[4..] {
            let v: f64 = v.parse().unwrap();
            assert!(v.is_finite() && v >= 0.0);
        }
    }
}

#[test]
fn unproven_step_sizes_need_the_escape_hatch() {
    let tmp = tempfile::tempdir().unwrap();
    let body = base_config()
        .replace("deltas = [1e-1, 1e-2, 1e-3, 1e-4]", "deltas = [1e-2]")
        .replace("tau = 1.5", "tau = 1.5\nn_cap = 50")
        + "\n[step]\ngamma = 5.0\n";
    let cfg = write_cfg(tmp.path(), "hot.toml", &body);
    let out_dir = tmp.path().join("out");

    let refused = run(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(!refused.status.success());
    assert!(
        stderr(&refused).contains("--allow-unproven-region"),
        "{}",
        stderr(&refused)
    );
    assert!(!out_dir.join("trace.csv").exists(), "refusal writes nothing");

    let allowed = run(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--allow-unproven-region",
    ]);
    assert!(allowed.status.success(), "{}", stderr(&allowed));
    let trace = read(&out_dir, "trace.csv");
    assert!(trace.contains("# experimental: true"));
}
