use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use impact_game::report::csv_body;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_impact-game"))
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.conf");
    fs::write(&p, text).unwrap();
    p
}

const BASE: &str = "lambda = 0.5\ngamma = 1\nkappa = 1\nrho = 1\nvarrho = 10\nphi = 0.1\nhorizon = 10\n";

#[test]
fn check_reports_failed_small_horizon_condition() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let r = run(&["check", "--config", repo_config("illustration.conf").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));
    let report = fs::read_to_string(out.join("check.txt")).unwrap();
    assert!(report.contains("small_horizon_constant = 6400"));
    assert!(report.contains("small_horizon_holds = false"));
    assert!(report.contains("# config_sha256 = "));
    assert_eq!(report.matches("infimum ").count(), 7);
}

#[test]
fn check_passes_on_convergence_config() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(&[
        "check",
        "--config",
        repo_config("convergence.conf").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert_eq!(r.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("small_horizon_holds = true"));
}

#[test]
fn unknown_key_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lamda=0.5\n");
    let r = run(&["check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("unknown key `lamda`") && err.contains("line 1, column 1"), "{err}");
}

#[test]
fn usage_errors_exit_one() {
    let r = run(&["frobnicate", "--config", "x"]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("valid subcommands: check, simulate-mfg"));
    assert_eq!(run(&["check"]).status.code(), Some(1));
    assert_eq!(run(&["check", "--config", "/nonexistent/file"]).status.code(), Some(1));
}

#[test]
fn zero_signal_simulation_is_identical_across_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BASE}iota = 0\nbeta = 0.1\nsigma = 0\nx0 = 10\nagents = 10, -5\nsteps = 500\n"));
    let mut bodies = Vec::new();
    for seed in ["1", "2"] {
        let out = dir.path().join(seed);
        let r = run(&["simulate-mfg", "--config", cfg.to_str().unwrap(), "--seed", seed, "--out", out.to_str().unwrap()]);
        assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
        let csv = fs::read_to_string(out.join("mfg_path0.csv")).unwrap();
        assert!(csv.contains(&format!("# seed = {seed}")));
        assert!(csv.contains("# config = x0 = 10"));
        assert!(out.join("mfg_path0.svg").exists());
        bodies.push(csv_body(&csv));
    }
    assert_eq!(bodies[0], bodies[1]);
    assert!(bodies[0].starts_with("t,I,A,X_tilde,Y,nu,X_agent1,v_agent1,X_agent2,v_agent2\n"));
}

#[test]
fn empty_agent_list_gives_aggregate_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BASE}iota = 1\nbeta = 0.1\nsigma = 0.5\nn_agents = 3\nsteps = 100\npaths = 2\n"));
    let out = dir.path().join("o");
    let r = run(&["simulate-finite", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    for p in 0..2 {
        let csv = fs::read_to_string(out.join(format!("finite_path{p}.csv"))).unwrap();
        assert!(csv_body(&csv).starts_with("t,I,A,X_bar,Y,u_bar,Z_bar\n"));
        assert_eq!(csv_body(&csv).lines().count(), 102);
    }
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let body = csv_body(csv);
    let mut lines = body.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn large_population_matches_mean_field_output() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{BASE}iota = 1\nbeta = 0.1\nsigma = 0.5\nn_agents = 10000\nx0 = 10\nsteps = 1000\n");
    let cfg = write_config(dir.path(), &text);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&["simulate-finite", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(run(&["simulate-mfg", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]).status.code(), Some(0));
    let xf = column(&fs::read_to_string(a.join("finite_path0.csv")).unwrap(), "X_bar");
    let xm = column(&fs::read_to_string(b.join("mfg_path0.csv")).unwrap(), "X_tilde");
    let gap = xf.iter().zip(&xm).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    // Below a pixel of a 10-unit axis on a few-hundred-pixel chart.
    assert!(gap < 1e-2, "{gap}");
}

#[test]
fn figures_bundle_for_one_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BASE}scenarios = negative:-15\nsteps = 400\n"));
    let out = dir.path().join("o");
    let r = run(&["figures", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(matches!(r.status.code(), Some(0) | Some(3)), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = fs::read_to_string(out.join("negative_x0_-15.csv")).unwrap();
    assert!(csv.contains("# signal_mode = negative"));
    assert!(csv.contains("# agent_inventories = 10,5,0,-5,-15"));
    for name in ["negative_x0_-15_inventories.svg", "negative_x0_-15_signals.svg"] {
        let svg = fs::read_to_string(out.join(name)).unwrap();
        assert!(svg.contains("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}

fn study_text() -> String {
    fs::read_to_string(repo_config("convergence.conf"))
        .unwrap()
        .replace("paths = 1000", "paths = 64")
        .replace("steps = 200", "steps = 40")
        .replace("n_values = 4, 8, 16, 32, 64", "n_values = 4, 8, 16")
}

#[test]
fn studies_are_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &study_text());
    for cmd in ["converge", "epsnash"] {
        let mut outputs = Vec::new();
        for threads in ["1", "4"] {
            let out = dir.path().join(format!("{cmd}{threads}"));
            let r = bin()
                .args([cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
                .env("RAYON_NUM_THREADS", threads)
                .output()
                .unwrap();
            assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stdout));
            outputs.push(fs::read(out.join(format!("{cmd}.csv"))).unwrap());
        }
        assert_eq!(outputs[0], outputs[1], "{cmd}");
    }
}

#[test]
fn window_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{}strategy_slope_min = 0\nstrategy_slope_max = 1\n", study_text()));
    let out = dir.path().join("o");
    let r = run(&["converge", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(3));
    let csv = fs::read_to_string(out.join("converge.csv")).unwrap();
    assert!(csv.contains("# strategy_verdict = fail"));
}

#[test]
fn studies_refuse_long_horizons() {
    let r = run(&["converge", "--config", repo_config("illustration.conf").to_str().unwrap(), "--paths", "4"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("C = 6400"));
}
