//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use impact_game::experiments::{
    check_small_horizon, convergence_study, epsnash_dictionary, epsnash_study, reproduce_figure,
    uniform_bound_check, value_convergence_study, RateFit, SmallHorizonCheck, StudyConfig,
};
use impact_game::finite::FiniteSolver;
use impact_game::mfg::MfgSolver;
use impact_game::model::{build_time_grid, ModelParams};
use impact_game::report::{line_chart_svg, Series, Table};
use impact_game::signal::simulate_ou_path;
use impact_game::spectral::{check_assumptions, AssumptionReport, DEFAULT_FLOOR};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(#[from] ConfigError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("assumption failure: {0}")]
    Assumption(String),

    #[error("{0}")]
    Solver(#[from] impact_game::Error),

    #[error("acceptance window failed: {0}")]
    Window(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use impact_game::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Assumption(_) => 2,
            CliError::Solver(e) => match e {
                E::InvalidParams(_)
                | E::CubicRegime
                | E::ComplexEigenvalues
                | E::DegenerateSpectrum(_)
                | E::Assumption { .. }
                | E::Precondition(_) => 2,
                _ => 1,
            },
            CliError::Window(_) => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    pub force: bool,
}

struct Output {
    dir: PathBuf,
    metadata: Vec<(String, String)>,
}

impl Output {
    fn new(cfg: &RunConfig, command: &str, dir: PathBuf, seed: u64, steps: usize, y0: f64) -> CliResult<Self> {
        fs::create_dir_all(&dir)?;
        let hash: String = Sha256::digest(cfg.text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        let metadata = vec![
            ("command".to_string(), command.to_string()),
            ("version".to_string(), format!("impact-game {}", env!("CARGO_PKG_VERSION"))),
            ("config_sha256".to_string(), hash),
            ("seed".to_string(), seed.to_string()),
            ("n_steps".to_string(), steps.to_string()),
            ("y0".to_string(), y0.to_string()),
            ("config".to_string(), cfg.text().to_string()),
        ];
        Ok(Self { dir, metadata })
    }

    fn header(&self, extra: &[(String, String)]) -> Vec<(String, String)> {
        let mut m = self.metadata.clone();
        m.extend_from_slice(extra);
        m
    }

    fn csv(&self, name: &str, table: &Table, extra: &[(String, String)]) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, table.to_csv(&self.header(extra)))?;
        Ok(path)
    }

    fn text(&self, name: &str, lines: &[String]) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        let mut out = String::new();
        for (k, v) in &self.metadata {
            for l in v.lines() {
                out.push_str(&format!("# {k} = {l}\n"));
            }
        }
        for l in lines {
            out.push_str(l);
            out.push('\n');
        }
        fs::write(&path, out)?;
        Ok(path)
    }

    fn svg(&self, name: &str, svg: &str) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        let mut out = String::new();
        for (k, v) in &self.metadata {
            for l in v.lines() {
                out.push_str(&format!("<!-- {k} = {} -->\n", l.replace("--", "- -")));
            }
        }
        out.push_str(svg);
        fs::write(&path, out)?;
        Ok(path)
    }
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

struct Common {
    seed: u64,
    steps: usize,
    out: PathBuf,
}

fn common(cfg: &RunConfig, ov: &Overrides) -> CliResult<Common> {
    Ok(Common {
        seed: match ov.seed {
            Some(s) => s,
            None => cfg.or("seed", 1u64)?,
        },
        steps: match ov.steps {
            Some(s) => s,
            None => cfg.or("steps", 1000usize)?,
        },
        out: match &ov.out {
            Some(p) => p.clone(),
            None => PathBuf::from(cfg.or("out", "out".to_string())?),
        },
    })
}

fn paths(cfg: &RunConfig, ov: &Overrides, default: usize) -> CliResult<usize> {
    Ok(match ov.paths {
        Some(p) => p,
        None => cfg.or("paths", default)?,
    })
}

fn assumption_lines(r: &AssumptionReport) -> Vec<String> {
    let mut lines = vec![format!("n_agents = {}", r.n_agents), format!("floor = {:e}", r.floor)];
    for v in &r.param_violations {
        lines.push(format!("parameter_violation = {v}"));
    }
    lines.push(format!("fbar_real_distinct = {}", r.fbar_real_distinct));
    lines.push(format!("f_real_distinct = {}", r.f_real_distinct));
    lines.push(format!("btilde_real_distinct = {}", r.btilde_real_distinct));
    for e in &r.entries {
        lines.push(format!(
            "infimum {} = {:e} at tau = {} ({})",
            e.name,
            e.infimum,
            e.argmin_tau,
            if e.passed { "pass" } else { "FAIL" }
        ));
    }
    lines.push(format!("assumptions_passed = {}", r.all_passed()));
    lines
}

fn small_horizon_lines(c: &SmallHorizonCheck) -> Vec<String> {
    vec![
        format!("small_horizon_constant = {}", c.constant_exact),
        format!("small_horizon_lhs = {} (~{:e})", c.lhs_exact, c.lhs),
        format!("small_horizon_holds = {}", c.holds),
    ]
}

pub fn check(cfg: &RunConfig, ov: &Overrides) -> CliResult<Vec<PathBuf>> {
    let params = cfg.model("check")?;
    let n: usize = cfg.require("n_agents", "check")?;
    let c = common(cfg, ov)?;
    let floor = cfg.or("floor", DEFAULT_FLOOR)?;
    let grid = build_time_grid(params.horizon, c.steps)?;
    let report = check_assumptions(&params, n, &grid, floor);
    let mut lines = assumption_lines(&report);
    let small = check_small_horizon(&params).ok();
    match &small {
        Some(s) => lines.extend(small_horizon_lines(s)),
        None => lines.push("small_horizon_holds = false (invalid parameters)".into()),
    }
    for l in &lines {
        println!("{l}");
    }
    let out = Output::new(cfg, "check", c.out, c.seed, c.steps, params.y0)?;
    let file = out.text("check.txt", &lines)?;
    let small_ok = small.is_some_and(|s| s.holds);
    if !report.all_passed() || !small_ok {
        return Err(CliError::Assumption(format!(
            "assumptions passed: {}, small-horizon condition holds: {small_ok}",
            report.all_passed()
        )));
    }
    Ok(vec![file])
}

fn gate(params: &ModelParams, n: usize, steps: usize, cfg: &RunConfig, force: bool) -> CliResult<()> {
    let grid = build_time_grid(params.horizon, steps)?;
    let report = check_assumptions(params, n, &grid, cfg.or("floor", DEFAULT_FLOOR)?);
    if !report.all_passed() && !force {
        let failed: Vec<String> = assumption_lines(&report)
            .into_iter()
            .filter(|l| l.contains("FAIL") || l.ends_with("false") || l.starts_with("parameter"))
            .collect();
        return Err(CliError::Assumption(format!("{} (use --force to run anyway)", failed.join("; "))));
    }
    Ok(())
}

pub fn simulate_mfg(cfg: &RunConfig, ov: &Overrides) -> CliResult<Vec<PathBuf>> {
    const CMD: &str = "simulate-mfg";
    let params = cfg.model(CMD)?;
    let ou = cfg.signal(CMD)?;
    let c = common(cfg, ov)?;
    let n_paths = paths(cfg, ov, 1)?;
    let x0 = cfg.or("x0", 1.0)?;
    let agents: Vec<f64> = cfg.list("agents")?.unwrap_or_default();
    gate(&params, cfg.or("n_agents", 1usize)?, c.steps, cfg, ov.force)?;
    let grid = build_time_grid(params.horizon, c.steps)?;
    let solver = MfgSolver::new(&params, &ou, &grid)?;
    let out = Output::new(cfg, CMD, c.out, c.seed, c.steps, params.y0)?;
    let mut files = Vec::new();
    for p in 0..n_paths {
        let sig = Arc::new(simulate_ou_path(&ou, &grid, c.seed, p as u64));
        let agg = solver.aggregate(x0, sig.clone())?;
        let mut t = Table::new();
        t.push("t", grid.times.clone())?;
        t.push("I", sig.intensity.clone())?;
        t.push("A", sig.integrated.clone())?;
        t.push("X_tilde", agg.x.clone())?;
        t.push("Y", agg.y.clone())?;
        t.push("nu", agg.nu.clone())?;
        let mut inv = vec![Series {
            label: "mean field".into(),
            values: agg.x.clone(),
        }];
        for (j, a0) in agents.iter().enumerate() {
            let a = solver.agent_path(&agg, *a0)?;
            inv.push(Series {
                label: format!("x0 = {a0}"),
                values: a.x.clone(),
            });
            t.push(format!("X_agent{}", j + 1), a.x)?;
            t.push(format!("v_agent{}", j + 1), a.v)?;
        }
        let extra = [kv("path", p), kv("terminal_residual", agg.terminal_residual)];
        files.push(out.csv(&format!("mfg_path{p}.csv"), &t, &extra)?);
        if p == 0 {
            let svg = line_chart_svg("Mean-field equilibrium inventories (path 0)", &grid.times, &inv);
            files.push(out.svg("mfg_path0.svg", &svg)?);
        }
    }
    Ok(files)
}

pub fn simulate_finite(cfg: &RunConfig, ov: &Overrides) -> CliResult<Vec<PathBuf>> {
    const CMD: &str = "simulate-finite";
    let params = cfg.model(CMD)?;
    let ou = cfg.signal(CMD)?;
    let n: usize = cfg.require("n_agents", CMD)?;
    let c = common(cfg, ov)?;
    let n_paths = paths(cfg, ov, 1)?;
    let x0 = cfg.or("x0", 1.0)?;
    let agents: Vec<f64> = cfg.list("agents")?.unwrap_or_default();
    gate(&params, n, c.steps, cfg, ov.force)?;
    let grid = build_time_grid(params.horizon, c.steps)?;
    let solver = FiniteSolver::new(&params, n, &ou, &grid)?;
    let out = Output::new(cfg, CMD, c.out, c.seed, c.steps, params.y0)?;
    let mut files = Vec::new();
    for p in 0..n_paths {
        let sig = Arc::new(simulate_ou_path(&ou, &grid, c.seed, p as u64));
        let agg = solver.aggregate(x0, sig.clone())?;
        let mut t = Table::new();
        t.push("t", grid.times.clone())?;
        t.push("I", sig.intensity.clone())?;
        t.push("A", sig.integrated.clone())?;
        t.push("X_bar", agg.x.clone())?;
        t.push("Y", agg.y.clone())?;
        t.push("u_bar", agg.u.clone())?;
        t.push("Z_bar", agg.z.clone())?;
        let mut inv = vec![Series {
            label: "average".into(),
            values: agg.x.clone(),
        }];
        for (j, a0) in agents.iter().enumerate() {
            let a = solver.agent_path(&agg, *a0)?;
            inv.push(Series {
                label: format!("x0 = {a0}"),
                values: a.x.clone(),
            });
            t.push(format!("X_agent{}", j + 1), a.x)?;
            t.push(format!("u_agent{}", j + 1), a.u)?;
        }
        let extra = [
            kv("path", p),
            kv("n_agents", n),
            kv("terminal_residual_u", agg.terminal_residual_u),
            kv("terminal_residual_z", agg.terminal_residual_z),
        ];
        files.push(out.csv(&format!("finite_path{p}.csv"), &t, &extra)?);
        if p == 0 {
            let svg = line_chart_svg(&format!("{n}-player equilibrium inventories (path 0)"), &grid.times, &inv);
            files.push(out.svg("finite_path0.svg", &svg)?);
        }
    }
    Ok(files)
}

fn study_config(cfg: &RunConfig, ov: &Overrides, command: &'static str) -> CliResult<(StudyConfig, Common)> {
    let c = common(cfg, ov)?;
    let x_tilde0 = cfg.or("x0", 1.0)?;
    let agent_x0 = cfg.list::<f64>("agents")?.and_then(|a| a.first().copied()).unwrap_or(x_tilde0);
    let study = StudyConfig {
        params: cfg.model(command)?,
        ou: cfg.signal(command)?,
        n_values: cfg.list("n_values")?.unwrap_or_else(|| vec![4, 8, 16, 32, 64]),
        n_paths: paths(cfg, ov, 1000)?,
        n_steps: c.steps,
        seed: c.seed,
        x_tilde0,
        agent_x0,
    };
    Ok((study, c))
}

struct Window {
    lo: f64,
    hi: f64,
    r2_min: f64,
}

impl Window {
    fn read(cfg: &RunConfig, prefix: &str, lo: f64, hi: f64) -> CliResult<Self> {
        Ok(Self {
            lo: cfg.or(&format!("{prefix}_slope_min"), lo)?,
            hi: cfg.or(&format!("{prefix}_slope_max"), hi)?,
            r2_min: cfg.or("r2_min", 0.95)?,
        })
    }

    /// Metadata lines and verdict for one fit.
    fn judge(&self, label: &str, fit: &impact_game::Result<RateFit>) -> (Vec<(String, String)>, Option<String>) {
        let mut meta = vec![kv(&format!("{label}_window"), format!("[{}, {}]", self.lo, self.hi))];
        let failure = match fit {
            Ok(f) => {
                meta.push(kv(&format!("{label}_slope"), f.slope));
                meta.push(kv(&format!("{label}_intercept"), f.intercept));
                meta.push(kv(&format!("{label}_r_squared"), f.r_squared));
                if !f.within(self.lo, self.hi) {
                    Some(format!("{label} slope {:.4} outside [{}, {}]", f.slope, self.lo, self.hi))
                } else if f.r_squared < self.r2_min {
                    Some(format!("{label} r^2 {:.4} below {}", f.r_squared, self.r2_min))
                } else {
                    None
                }
            }
            Err(e) => {
                meta.push(kv(&format!("{label}_fit"), e));
                Some(format!("{label} fit: {e}"))
            }
        };
        meta.push(kv(&format!("{label}_verdict"), if failure.is_none() { "pass" } else { "fail" }));
        println!("{label}: {}", meta.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" "));
        (meta, failure)
    }
}

fn finish(files: Vec<PathBuf>, failures: Vec<String>) -> CliResult<Vec<PathBuf>> {
    if failures.is_empty() {
        Ok(files)
    } else {
        Err(CliError::Window(failures.join("; ")))
    }
}

fn log_chart(title: &str, ns: &[usize], series: Vec<(&str, &[f64])>) -> String {
    let x: Vec<f64> = ns.iter().map(|n| (*n as f64).log10()).collect();
    let s: Vec<Series> = series
        .into_iter()
        .map(|(l, v)| Series {
            label: format!("log10 {l}"),
            values: v.iter().map(|m| m.log10()).collect(),
        })
        .collect();
    line_chart_svg(&format!("{title} (x: log10 N)"), &x, &s)
}

fn as_f64(ns: &[usize]) -> Vec<f64> {
    ns.iter().map(|n| *n as f64).collect()
}

pub fn converge(cfg: &RunConfig, ov: &Overrides) -> CliResult<Vec<PathBuf>> {
    const CMD: &str = "converge";
    let (study, c) = study_config(cfg, ov, CMD)?;
    let window = Window::read(cfg, "strategy", -2.5, -1.5)?;
    let r = convergence_study(&study)?;
    let (mut meta, f1) = window.judge("strategy", &r.strategy);
    let (m2, f2) = window.judge("aggregate", &r.aggregate);
    meta.extend(m2);
    meta.push(kv("small_horizon_constant", &r.small_horizon.constant_exact));
    meta.push(kv("n_paths", study.n_paths));
    let mut t = Table::new();
    t.push("N", as_f64(&r.n_values))?;
    t.push("strategy_metric", r.strategy_metrics.clone())?;
    t.push("aggregate_metric", r.aggregate_metrics.clone())?;
    let out = Output::new(cfg, CMD, c.out, c.seed, c.steps, study.params.y0)?;
    let files = vec![
        out.csv("converge.csv", &t, &meta)?,
        out.svg(
            "converge.svg",
            &log_chart(
                "Strategy and aggregate convergence",
                &r.n_values,
                vec![("strategy", &r.strategy_metrics), ("aggregate", &r.aggregate_metrics)],
            ),
        )?,
    ];
    finish(files, f1.into_iter().chain(f2).collect())
}

pub fn value_converge(cfg: &RunConfig, ov: &Overrides) -> CliResult<Vec<PathBuf>> {
    const CMD: &str = "value-converge";
    let (study, c) = study_config(cfg, ov, CMD)?;
    let window = Window::read(cfg, "value", -2.5, -1.5)?;
    let max_paths = cfg.or("max_paths", 16 * study.n_paths)?;
    let r = value_convergence_study(&study, max_paths)?;
    let (mut meta, f) = window.judge("value", &r.fit);
    meta.push(kv("n_paths_used", r.n_paths_used));
    meta.push(kv("noise_dominated", r.noise_dominated));
    let mut t = Table::new();
    let means: Vec<f64> = r.gaps.iter().map(|g| g.mean).collect();
    let abs: Vec<f64> = means.iter().map(|m| m.abs()).collect();
    t.push("N", as_f64(&r.n_values))?;
    t.push("gap_mean", means)?;
    t.push("gap_std_error", r.gaps.iter().map(|g| g.std_error).collect())?;
    let out = Output::new(cfg, CMD, c.out, c.seed, c.steps, study.params.y0)?;
    let files = vec![
        out.csv("value_converge.csv", &t, &meta)?,
        out.svg(
            "value_converge.svg",
            &log_chart("Value convergence", &r.n_values, vec![("|gap|", &abs)]),
        )?,
    ];
    let mut failures: Vec<String> = f.into_iter().collect();
    if r.noise_dominated {
        failures.push("value gaps are noise-dominated".into());
    }
    finish(files, failures)
}

pub fn epsnash(cfg: &RunConfig, ov: &Overrides) -> CliResult<Vec<PathBuf>> {
    const CMD: &str = "epsnash";
    let (study, c) = study_config(cfg, ov, CMD)?;
    let window = Window::read(cfg, "epsnash", -1.4, -0.6)?;
    let eps = cfg.or("eps", 1e-6)?;
    let r = epsnash_study(&study, &epsnash_dictionary(), eps)?;
    let (mut meta, f) = window.judge("epsnash", &r.fit);
    meta.push(kv("eps", eps));
    meta.push(kv("dictionary", r.dictionary.join(",")));
    for e in &r.entries {
        meta.push(kv(&format!("best_direction_N{}", e.n_agents), &e.best_direction));
    }
    let mut t = Table::new();
    t.push("N", as_f64(&study.n_values))?;
    t.push("best_gain_mean", r.entries.iter().map(|e| e.best_gain.mean).collect())?;
    t.push("best_gain_std_error", r.entries.iter().map(|e| e.best_gain.std_error).collect())?;
    t.push("metric", r.entries.iter().map(|e| e.metric).collect())?;
    let out = Output::new(cfg, CMD, c.out, c.seed, c.steps, study.params.y0)?;
    let files = vec![out.csv("epsnash.csv", &t, &meta)?];
    finish(files, f.into_iter().collect())
}

pub fn bounds(cfg: &RunConfig, ov: &Overrides) -> CliResult<Vec<PathBuf>> {
    const CMD: &str = "bounds";
    let (study, c) = study_config(cfg, ov, CMD)?;
    let r = uniform_bound_check(&study)?;
    println!("bounds: sup moments {:?} flat={}", r.sup_moments, r.flat);
    let mut t = Table::new();
    t.push("N", as_f64(&r.n_values))?;
    t.push("sup_second_moment", r.sup_moments.clone())?;
    let out = Output::new(cfg, CMD, c.out, c.seed, c.steps, study.params.y0)?;
    let files = vec![out.csv("bounds.csv", &t, &[kv("flat", r.flat)])?];
    let failures = if r.flat {
        vec![]
    } else {
        vec!["second moments grow with N".to_string()]
    };
    finish(files, failures)
}

pub fn figures(cfg: &RunConfig, ov: &Overrides) -> CliResult<Vec<PathBuf>> {
    const CMD: &str = "figures";
    let params = cfg.model(CMD)?;
    let c = common(cfg, ov)?;
    let scenarios = cfg.scenarios(c.seed)?;
    let out = Output::new(cfg, CMD, c.out.clone(), c.seed, c.steps, params.y0)?;
    let mut files = Vec::new();
    let mut failures = Vec::new();
    for s in &scenarios {
        let b = reproduce_figure(s, &params, c.steps)?;
        let ratios: Vec<String> = b.checks.terminal_ratios.iter().map(|r| format!("{r:.4}")).collect();
        let meta = [
            kv("signal_mode", s.mode.name()),
            kv("x_tilde0", s.x_tilde0),
            kv(
                "agent_inventories",
                s.agent_inventories.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
            ),
            kv("terminal_ratios", ratios.join(",")),
            kv("terminal_ok", b.checks.terminal_ok),
            kv("round_trip", b.checks.round_trip()),
        ];
        println!("{}: terminal ratios [{}] round_trip={}", b.stem(), ratios.join(", "), b.checks.round_trip());
        if !b.checks.terminal_ok {
            failures.push(format!("{}: terminal inventory above 5%", b.stem()));
        }
        files.push(out.csv(&format!("{}.csv", b.stem()), &b.table, &meta)?);
        for (name, svg) in b.svgs() {
            files.push(out.svg(&name, &svg)?);
        }
    }
    finish(files, failures)
}

/// Reads and parses the config file.
pub fn load(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(RunConfig::parse(&text)?)
}
