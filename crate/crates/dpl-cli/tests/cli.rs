//! End-to-end tests of the `dpl` binary: subcommands, report files and
//! exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn dpl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpl"))
        .args(args)
        .output()
        .expect("running dpl")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const POWER_MERTON: &str = "\
market.n_assets = 1
market.horizon = 1.0
market.x0 = 1.0
market.r = 0.05
market.b = 0.10
market.sigma = 0.2
constraint.kind = full_space
utility.kind = power
utility.beta = 0.5
run.n_paths = 2000
run.seed = 11
run.steps = 32
";

const LOG_MERTON: &str = "\
market.n_assets = 1
market.horizon = 1.0
market.x0 = 1.0
market.r = 0.05
market.b = 0.10
market.sigma = 0.2
constraint.kind = full_space
utility.kind = log
run.n_paths = 2000
run.seed = 11
run.steps = 32
";

const POWER_BINDING: &str = "\
market.n_assets = 1
market.horizon = 1.0
market.x0 = 1.0
market.r = 0.05
market.b = 0.03
market.sigma = 0.2
constraint.kind = orthant
utility.kind = power
utility.beta = 0.5
run.n_paths = 500
run.seed = 3
run.steps = 16
";

fn grep_value(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("missing key {key} in report:\n{report}"))
        .parse()
        .unwrap()
}

#[test]
fn solve_reports_power_y_hat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "power.conf", POWER_MERTON);
    let out = dpl(&[
        "solve",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = std::fs::read_to_string(dir.path().join("solution.txt")).unwrap();
    let y_hat = grep_value(&report, "y_hat");
    assert!(
        (y_hat - (0.05625_f64).exp()).abs() <= 1e-12,
        "y_hat = {y_hat}"
    );
}

#[test]
fn solve_reports_log_y_hat_of_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "log.conf", LOG_MERTON);
    let out = dpl(&[
        "solve",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report = std::fs::read_to_string(dir.path().join("solution.txt")).unwrap();
    assert_eq!(grep_value(&report, "y_hat"), 1.0);
    assert_eq!(grep_value(&report, "pi_hat.cell0"), 1.25);
}

#[test]
fn power_with_box_constraint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let body = POWER_MERTON.replace(
        "constraint.kind = full_space",
        "constraint.kind = box\nconstraint.lower = -1\nconstraint.upper = 1",
    );
    let cfg = write_config(dir.path(), "bad.conf", &body);
    let out = dpl(&[
        "solve",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("power solver requires a cone"),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.conf",
        &format!("{LOG_MERTON}run.turbo = yes\n"),
    );
    let out = dpl(&[
        "verify",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn singular_volatility_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let body = "\
market.n_assets = 2
market.horizon = 1.0
market.x0 = 1.0
market.r = 0.05
market.b = 0.10 0.08
market.sigma = 0.2 0.1, 0.0 0.0
constraint.kind = full_space
utility.kind = log
run.n_paths = 100
run.seed = 1
run.steps = 8
";
    let cfg = write_config(dir.path(), "singular.conf", body);
    let out = dpl(&[
        "solve",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("singular volatility"));
}

#[test]
fn verify_passes_on_log_merton() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "log.conf", LOG_MERTON);
    let out = dpl(&[
        "verify",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let csv = std::fs::read_to_string(dir.path().join("verification.csv")).unwrap();
    assert!(csv.starts_with("name,max_residual,tolerance,pass\n"));
    assert!(!csv.contains(",false"));
}

#[test]
fn tampered_portfolio_fails_verify_with_counting_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{POWER_BINDING}run.perturb_pi = 0.5\n");
    let cfg = write_config(dir.path(), "tampered.conf", &body);
    let out = dpl(&[
        "verify",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let code = out.status.code().unwrap();
    assert!(code >= 10, "expected counting exit code, got {code}");
    let csv = std::fs::read_to_string(dir.path().join("verification.csv")).unwrap();
    let failing: Vec<&str> = csv.lines().filter(|l| l.ends_with(",false")).collect();
    assert!(
        failing.iter().any(|l| l.starts_with("normal_cone,")),
        "csv:\n{csv}"
    );
    assert_eq!(code, 10 + failing.len() as i32);
}

#[test]
fn verify_is_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "log.conf", LOG_MERTON);
    let out1 = dir.path().join("t1");
    let out8 = dir.path().join("t8");
    let a = dpl(&[
        "verify",
        "--config",
        &cfg,
        "--out",
        out1.to_str().unwrap(),
        "--threads",
        "1",
    ]);
    let b = dpl(&[
        "verify",
        "--config",
        &cfg,
        "--out",
        out8.to_str().unwrap(),
        "--threads",
        "8",
    ]);
    assert!(a.status.success() && b.status.success());
    let csv1 = std::fs::read(out1.join("verification.csv")).unwrap();
    let csv8 = std::fs::read(out8.join("verification.csv")).unwrap();
    assert_eq!(csv1, csv8);

    // DPL_THREADS fallback takes the same code path
    let out_env = dir.path().join("env");
    let c = Command::new(env!("CARGO_BIN_EXE_dpl"))
        .args([
            "verify",
            "--config",
            &cfg,
            "--out",
            out_env.to_str().unwrap(),
        ])
        .env("DPL_THREADS", "3")
        .output()
        .unwrap();
    assert!(c.status.success());
    assert_eq!(
        std::fs::read(out_env.join("verification.csv")).unwrap(),
        csv1
    );
}

#[test]
fn duality_gap_orders_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{LOG_MERTON}run.candidates = zero merton solver\n");
    let cfg = write_config(dir.path(), "gap.conf", &body);
    let out = dpl(&[
        "duality-gap",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("duality_gap.csv")).unwrap();
    let mut gaps = std::collections::HashMap::new();
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        gaps.insert(fields[0].to_string(), fields[5].parse::<f64>().unwrap());
    }
    assert!(gaps["zero"] > gaps["merton"]);
    assert!(gaps["merton"].abs() < 1e-10); // merton == solver for unconstrained log
    assert!(gaps["solver"].abs() < 1e-10);
}

#[test]
fn duality_gap_with_no_candidates_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gap.conf", LOG_MERTON);
    let out = dpl(&[
        "duality-gap",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("duality_gap.csv")).unwrap();
    assert_eq!(csv, "label,primal,primal_se,dual,dual_se,gap\n");
}

#[test]
fn simulate_dumps_dpl1_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sim.conf", LOG_MERTON);
    let out = dpl(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let bytes = std::fs::read(dir.path().join("paths.bin")).unwrap();
    assert_eq!(&bytes[..4], b"DPL1");
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let steps = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n_paths = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    assert_eq!((n, steps, n_paths), (1, 32, 2000));
    assert_eq!(bytes.len(), 16 + 8 * n * steps * n_paths);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sim.conf", LOG_MERTON);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    dpl(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        out_a.to_str().unwrap(),
        "--seed",
        "99",
    ]);
    dpl(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        out_b.to_str().unwrap(),
    ]);
    let a = std::fs::read(out_a.join("paths.bin")).unwrap();
    let b = std::fs::read(out_b.join("paths.bin")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn shipped_configs_verify_clean() {
    let config_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&config_dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("conf") {
            continue;
        }
        seen += 1;
        let dir = tempfile::tempdir().unwrap();
        // trimmed path budget keeps the sweep fast; the full-size runs are
        // what the configs describe
        let text = std::fs::read_to_string(&path).unwrap();
        let text = regex_lite_replace(&text, "run.n_paths", "run.n_paths = 2000");
        let trimmed = dir.path().join("trimmed.conf");
        std::fs::write(&trimmed, text).unwrap();
        let out = dpl(&[
            "verify",
            "--config",
            trimmed.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{} failed:\n{}{}",
            path.display(),
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
    }
    assert!(
        seen >= 5,
        "expected the shipped experiment configs, found {seen}"
    );
}

fn regex_lite_replace(text: &str, key: &str, replacement: &str) -> String {
    text.lines()
        .map(|l| {
            if l.trim_start().starts_with(key) {
                replacement
            } else {
                l
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}
