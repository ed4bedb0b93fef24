//! Experiment drivers: convergence rates in the population size, value
//! convergence, epsilon-Nash gaps of the mean-field strategies, uniform
//! moment bounds, the small-horizon admissibility condition and the
//! illustration scenarios.
//!
//! Path `p` of every study uses OU stream `p` of the master seed, and all
//! sums over paths are reduced in fixed chunks in path order, so the output
//! depends only on the configuration.

use std::sync::Arc;

use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evaluate::{distortion_path, path_objective, McEstimate};
use crate::finite::FiniteSolver;
use crate::mfg::MfgSolver;
use crate::model::{build_time_grid, ModelParams, TimeGrid};
use crate::report::{line_chart_svg, Series, Table};
use crate::signal::{path_rng, simulate_ou_path, OuParams, SignalPath};

/// Least-squares fit of `log(metric)` on `log(N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub n_values: Vec<usize>,
    pub metric_values: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl RateFit {
    pub fn within(&self, lo: f64, hi: f64) -> bool {
        (lo..=hi).contains(&self.slope)
    }
}

/// Fits `metric ~ exp(intercept) N^slope`. Refuses non-positive metrics.
pub fn fit_rate(n_values: &[usize], metrics: &[f64]) -> Result<RateFit> {
    if n_values.len() != metrics.len() {
        return Err(Error::Mismatch("one metric per population size is needed".into()));
    }
    if n_values.len() < 2 {
        return Err(Error::DegenerateFit("at least two points are needed".into()));
    }
    if let Some(bad) = metrics.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
        return Err(Error::DegenerateFit(format!("metric {bad} is not positive")));
    }
    let xs: Vec<f64> = n_values.iter().map(|n| (*n as f64).ln()).collect();
    let ys: Vec<f64> = metrics.iter().map(|m| m.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("population sizes must differ".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    Ok(RateFit {
        n_values: n_values.to_vec(),
        metric_values: metrics.to_vec(),
        slope,
        intercept,
        r_squared,
    })
}

/// Outcome of the small-horizon condition of the convergence theorems.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallHorizonCheck {
    /// `16 (max{varrho, kappa, rho kappa, kappa gamma, phi, rho} / lambda)^2`, exact.
    pub constant_exact: BigRational,
    pub constant: f64,
    /// `20 C max(T^2, 1) T^2`, exact.
    pub lhs_exact: BigRational,
    pub lhs: f64,
    pub holds: bool,
}

fn exact(v: f64, name: &str) -> Result<BigRational> {
    BigRational::from_float(v).ok_or_else(|| Error::InvalidParams(format!("{name} is not finite")))
}

/// Evaluates the small-horizon condition in exact rational arithmetic on the
/// binary values of the parameters.
pub fn check_small_horizon(params: &ModelParams) -> Result<SmallHorizonCheck> {
    params.ensure_valid()?;
    let varrho = exact(params.varrho, "varrho")?;
    let kappa = exact(params.kappa, "kappa")?;
    let rho = exact(params.rho, "rho")?;
    let gamma = exact(params.gamma, "gamma")?;
    let phi = exact(params.phi, "phi")?;
    let lambda = exact(params.lambda, "lambda")?;
    let t = exact(params.horizon, "horizon")?;
    let candidates = [varrho, kappa.clone(), &rho * &kappa, &kappa * &gamma, phi, rho];
    let max = candidates.into_iter().max().expect("non-empty");
    let ratio = max / lambda;
    let c = BigRational::from_integer(16.into()) * &ratio * &ratio;
    let t2 = &t * &t;
    let long = if t2 > BigRational::one() { t2.clone() } else { BigRational::one() };
    let lhs = BigRational::from_integer(20.into()) * &c * long * t2;
    let holds = lhs < BigRational::one();
    Ok(SmallHorizonCheck {
        constant: c.to_f64().unwrap_or(f64::INFINITY),
        constant_exact: c,
        lhs: lhs.to_f64().unwrap_or(f64::INFINITY),
        lhs_exact: lhs,
        holds,
    })
}

/// Shared configuration of the population-size sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub params: ModelParams,
    pub ou: OuParams,
    pub n_values: Vec<usize>,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Mean-field initial inventory; also the initial mean of the finite game.
    pub x_tilde0: f64,
    /// Initial inventory of the tagged agent.
    pub agent_x0: f64,
}

/// Horizon at which the short-horizon parameter set satisfies the
/// small-horizon condition (`20 * 64 * T^2 = 0.8`).
pub const ADMISSIBLE_HORIZON: f64 = 0.025;

impl StudyConfig {
    /// Short-horizon parameter set, shortened to a horizon on which the
    /// convergence theorems apply.
    pub fn convergence_default() -> Self {
        Self {
            params: ModelParams::small_horizon().with_horizon(ADMISSIBLE_HORIZON),
            ou: OuParams::illustration(),
            n_values: vec![4, 8, 16, 32, 64],
            n_paths: 1000,
            n_steps: 200,
            seed: 1,
            x_tilde0: 1.0,
            agent_x0: 1.0,
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        build_time_grid(self.params.horizon, self.n_steps)
    }

    fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return Err(Error::InvalidParams("population sizes must be >= 1".into()));
        }
        if self.n_paths < 2 {
            return Err(Error::InvalidParams("at least two paths are needed".into()));
        }
        Ok(())
    }
}

const CHUNK: usize = 32;

/// Sum over paths of per-path accumulations, reduced in fixed chunks and in
/// path order.
fn ordered_sum<F>(paths: std::ops::Range<usize>, width: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync,
{
    let start = paths.start;
    let n_chunks = paths.len().div_ceil(CHUNK);
    let partial: Vec<Result<Vec<f64>>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; width];
            let lo = start + c * CHUNK;
            for p in lo..(lo + CHUNK).min(paths.end) {
                f(p, &mut acc)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![0.0; width];
    for chunk in partial {
        for (t, v) in total.iter_mut().zip(chunk?) {
            *t += v;
        }
    }
    Ok(total)
}

/// Per-path samples, collected in path order.
fn ordered_samples<F>(paths: std::ops::Range<usize>, f: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync + Send,
{
    paths.into_par_iter().map(f).collect()
}

struct Solvers {
    grid: TimeGrid,
    mfg: MfgSolver,
    finite: Vec<FiniteSolver>,
}

impl Solvers {
    fn new(cfg: &StudyConfig) -> Result<Self> {
        let grid = cfg.grid()?;
        let mfg = MfgSolver::new(&cfg.params, &cfg.ou, &grid)?;
        let finite = cfg
            .n_values
            .iter()
            .map(|n| FiniteSolver::new(&cfg.params, *n, &cfg.ou, &grid))
            .collect::<Result<_>>()?;
        Ok(Self { grid, mfg, finite })
    }

    fn signal(&self, cfg: &StudyConfig, p: usize) -> Arc<SignalPath> {
        Arc::new(simulate_ou_path(&cfg.ou, &self.grid, cfg.seed, p as u64))
    }
}

fn require_small_horizon(params: &ModelParams) -> Result<SmallHorizonCheck> {
    let check = check_small_horizon(params)?;
    if !check.holds {
        return Err(Error::Precondition(format!(
            "small-horizon condition fails: C = {}, 20 C (T^2 v 1) T^2 = {}",
            check.constant, check.lhs
        )));
    }
    Ok(check)
}

/// Strategy and aggregate convergence in the population size.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub small_horizon: SmallHorizonCheck,
    pub n_values: Vec<usize>,
    /// `sup_t E[(u^{i,N} - v^i)^2]`
    pub strategy_metrics: Vec<f64>,
    /// `sup_t E[(u_bar^N - nu)^2]`
    pub aggregate_metrics: Vec<f64>,
    pub strategy: Result<RateFit>,
    pub aggregate: Result<RateFit>,
}

pub fn convergence_study(cfg: &StudyConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let small_horizon = require_small_horizon(&cfg.params)?;
    let s = Solvers::new(cfg)?;
    let len = s.grid.len();
    let nn = cfg.n_values.len();
    let sums = ordered_sum(0..cfg.n_paths, 2 * nn * len, |p, acc| {
        let sig = s.signal(cfg, p);
        let agg = s.mfg.aggregate(cfg.x_tilde0, sig.clone())?;
        let v = s.mfg.agent_path(&agg, cfg.agent_x0)?;
        for (j, fs) in s.finite.iter().enumerate() {
            let fagg = fs.aggregate(cfg.x_tilde0, sig.clone())?;
            let u = fs.agent_path(&fagg, cfg.agent_x0)?;
            let (a_strat, rest) = acc[2 * j * len..].split_at_mut(len);
            let a_agg = &mut rest[..len];
            for k in 0..len {
                a_strat[k] += (u.u[k] - v.v[k]).powi(2);
                a_agg[k] += (fagg.u[k] - agg.nu[k]).powi(2);
            }
        }
        Ok(())
    })?;
    let sup = |offset: usize| -> f64 {
        sums[offset..offset + len]
            .iter()
            .map(|v| v / cfg.n_paths as f64)
            .fold(0.0, f64::max)
    };
    let strategy_metrics: Vec<f64> = (0..nn).map(|j| sup(2 * j * len)).collect();
    let aggregate_metrics: Vec<f64> = (0..nn).map(|j| sup((2 * j + 1) * len)).collect();
    Ok(ConvergenceReport {
        small_horizon,
        n_values: cfg.n_values.clone(),
        strategy: fit_rate(&cfg.n_values, &strategy_metrics),
        aggregate: fit_rate(&cfg.n_values, &aggregate_metrics),
        strategy_metrics,
        aggregate_metrics,
    })
}

/// Noise-floor heuristic: a gap is noise-dominated when its standard error
/// exceeds this fraction of its magnitude.
pub const NOISE_FRACTION: f64 = 0.3;

/// Value convergence `|J^{i,N}(u) - J^{i,inf}(v)|` in the population size.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueReport {
    pub small_horizon: SmallHorizonCheck,
    pub n_values: Vec<usize>,
    /// Path-wise differences `J^{i,N} - J^{i,inf}` on common paths.
    pub gaps: Vec<McEstimate>,
    pub n_paths_used: usize,
    pub noise_dominated: bool,
    pub fit: Result<RateFit>,
}

/// Runs the value sweep, doubling the path count (up to `max_paths`) while
/// any gap is noise-dominated.
pub fn value_convergence_study(cfg: &StudyConfig, max_paths: usize) -> Result<ValueReport> {
    cfg.validate()?;
    let small_horizon = require_small_horizon(&cfg.params)?;
    let s = Solvers::new(cfg)?;
    let dt = s.grid.dt;
    let p = &cfg.params;
    let per_path = |path: usize| -> Result<Vec<f64>> {
        let sig = s.signal(cfg, path);
        let agg = s.mfg.aggregate(cfg.x_tilde0, sig.clone())?;
        let v = s.mfg.agent_path(&agg, cfg.agent_x0)?;
        let y_inf = distortion_path(p, &agg.nu, dt);
        let j_inf = path_objective(p, cfg.agent_x0, &v.v, &y_inf, &sig.integrated, dt);
        s.finite
            .iter()
            .map(|fs| {
                let fagg = fs.aggregate(cfg.x_tilde0, sig.clone())?;
                let u = fs.agent_path(&fagg, cfg.agent_x0)?;
                let y = distortion_path(p, &fagg.u, dt);
                Ok(path_objective(p, cfg.agent_x0, &u.u, &y, &sig.integrated, dt) - j_inf)
            })
            .collect()
    };
    let mut samples = ordered_samples(0..cfg.n_paths, per_path)?;
    loop {
        let gaps = estimates_by_column(&samples, cfg.n_values.len())?;
        let noisy = gaps.iter().any(|g| g.std_error > NOISE_FRACTION * g.mean.abs());
        if !noisy || samples.len() * 2 > max_paths {
            let metrics: Vec<f64> = gaps.iter().map(|g| g.mean.abs()).collect();
            return Ok(ValueReport {
                small_horizon,
                n_values: cfg.n_values.clone(),
                fit: fit_rate(&cfg.n_values, &metrics),
                n_paths_used: samples.len(),
                noise_dominated: noisy,
                gaps,
            });
        }
        let n = samples.len();
        samples.extend(ordered_samples(n..2 * n, per_path)?);
    }
}

fn estimates_by_column(samples: &[Vec<f64>], width: usize) -> Result<Vec<McEstimate>> {
    (0..width)
        .map(|j| McEstimate::from_samples(&samples.iter().map(|s| s[j]).collect::<Vec<_>>()))
        .collect()
}

/// Deviation directions, evaluated path by path so that large studies never
/// hold whole channels in memory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Direction {
    Constant(f64),
    Early(f64),
    Late(f64),
    Signal(f64),
    Ramp(f64),
    Noise(u64),
}

impl Direction {
    pub fn name(&self) -> String {
        let sign = |s: f64| if s >= 0.0 { '+' } else { '-' };
        match self {
            Direction::Constant(s) => format!("const{}", sign(*s)),
            Direction::Early(s) => format!("early{}", sign(*s)),
            Direction::Late(s) => format!("late{}", sign(*s)),
            Direction::Signal(s) => format!("signal{}", sign(*s)),
            Direction::Ramp(s) => format!("ramp{}", sign(*s)),
            Direction::Noise(seed) => format!("noise{seed}"),
        }
    }

    /// Unnormalized values on one path.
    pub fn path_values(&self, grid: &TimeGrid, signal: &SignalPath, path: usize) -> Vec<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let half = grid.horizon() / 2.0;
        match *self {
            Direction::Constant(s) => vec![s; grid.len()],
            Direction::Early(s) => grid.times.iter().map(|t| if *t < half { s } else { 0.0 }).collect(),
            Direction::Late(s) => grid.times.iter().map(|t| if *t >= half { s } else { 0.0 }).collect(),
            Direction::Ramp(s) => grid.times.iter().map(|t| s * t / grid.horizon()).collect(),
            Direction::Signal(s) => signal.intensity.iter().map(|i| s * i).collect(),
            Direction::Noise(seed) => {
                let mut rng = path_rng(seed, path as u64);
                (0..grid.len()).map(|_| StandardNormal.sample(&mut rng)).collect()
            }
        }
    }

    /// `(int_0^T E[h_t^2] dt)^(1/2)` by the trapezoid rule, with the exact
    /// OU second moment for signal-proportional directions.
    pub fn analytic_norm(&self, grid: &TimeGrid, ou: &OuParams) -> f64 {
        let half = grid.horizon() / 2.0;
        let sq: Vec<f64> = match *self {
            Direction::Constant(s) => vec![s * s; grid.len()],
            Direction::Early(s) => grid.times.iter().map(|t| if *t < half { s * s } else { 0.0 }).collect(),
            Direction::Late(s) => grid.times.iter().map(|t| if *t >= half { s * s } else { 0.0 }).collect(),
            Direction::Ramp(s) => grid.times.iter().map(|t| (s * t / grid.horizon()).powi(2)).collect(),
            Direction::Signal(s) => grid.times.iter().map(|t| s * s * ou.second_moment(*t)).collect(),
            Direction::Noise(_) => vec![1.0; grid.len()],
        };
        grid.trapezoid(&sq).sqrt()
    }
}

/// Twelve directions: signed constant, early, late, signal and ramp bumps
/// plus two white-noise directions.
pub fn epsnash_dictionary() -> Vec<Direction> {
    let mut out = Vec::new();
    for s in [1.0, -1.0] {
        out.extend([
            Direction::Constant(s),
            Direction::Early(s),
            Direction::Late(s),
            Direction::Signal(s),
            Direction::Ramp(s),
        ]);
    }
    out.extend([Direction::Noise(0xD1C7), Direction::Noise(0xD1C8)]);
    out
}

/// Best deviation found for one population size.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsNashEntry {
    pub n_agents: usize,
    pub best_direction: String,
    pub best_gain: McEstimate,
    /// `max(best gain, 0)`
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsNashReport {
    pub eps: f64,
    pub dictionary: Vec<String>,
    pub entries: Vec<EpsNashEntry>,
    pub fit: Result<RateFit>,
}

/// Gain of a tagged agent deviating from the mean-field strategy to
/// `v + eps h` while the other `N - 1` agents keep their mean-field
/// strategies, each direction normalized to unit norm.
pub fn epsnash_study(cfg: &StudyConfig, dictionary: &[Direction], eps: f64) -> Result<EpsNashReport> {
    cfg.validate()?;
    if dictionary.is_empty() {
        return Err(Error::InvalidParams("empty deviation dictionary".into()));
    }
    let grid = cfg.grid()?;
    let mfg = MfgSolver::new(&cfg.params, &cfg.ou, &grid)?;
    let norms: Vec<f64> = dictionary.iter().map(|d| d.analytic_norm(&grid, &cfg.ou)).collect();
    if norms.iter().any(|n| !(*n > 0.0)) {
        return Err(Error::InvalidParams("dictionary contains a zero direction".into()));
    }
    let p = &cfg.params;
    let dt = grid.dt;
    let nd = dictionary.len();
    let samples = ordered_samples(0..cfg.n_paths, |path| {
        let sig = Arc::new(simulate_ou_path(&cfg.ou, &grid, cfg.seed, path as u64));
        let agg = mfg.aggregate(cfg.x_tilde0, sig.clone())?;
        let v = mfg.agent_path(&agg, cfg.agent_x0)?.v;
        let hs: Vec<Vec<f64>> = dictionary
            .iter()
            .zip(&norms)
            .map(|(d, n)| d.path_values(&grid, &sig, path).iter().map(|x| x / n).collect())
            .collect();
        let mut out = Vec::with_capacity(cfg.n_values.len() * nd);
        for &n in &cfg.n_values {
            let w = 1.0 / n as f64;
            let base_mean: Vec<f64> = agg.nu.iter().zip(&v).map(|(a, b)| a + w * (b - a)).collect();
            let y0 = distortion_path(p, &base_mean, dt);
            let j0 = path_objective(p, cfg.agent_x0, &v, &y0, &sig.integrated, dt);
            for h in &hs {
                let dev: Vec<f64> = v.iter().zip(h).map(|(a, b)| a + eps * b).collect();
                let mean: Vec<f64> = base_mean.iter().zip(h).map(|(a, b)| a + w * eps * b).collect();
                let y = distortion_path(p, &mean, dt);
                out.push(path_objective(p, cfg.agent_x0, &dev, &y, &sig.integrated, dt) - j0);
            }
        }
        Ok(out)
    })?;
    let est = estimates_by_column(&samples, cfg.n_values.len() * nd)?;
    let entries: Vec<EpsNashEntry> = cfg
        .n_values
        .iter()
        .enumerate()
        .map(|(j, n)| {
            let (best, e) = est[j * nd..(j + 1) * nd]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.mean.total_cmp(&b.1.mean))
                .expect("non-empty dictionary");
            EpsNashEntry {
                n_agents: *n,
                best_direction: dictionary[best].name(),
                best_gain: *e,
                metric: e.mean.max(0.0),
            }
        })
        .collect();
    let metrics: Vec<f64> = entries.iter().map(|e| e.metric).collect();
    Ok(EpsNashReport {
        eps,
        dictionary: dictionary.iter().map(|d| d.name()).collect(),
        fit: fit_rate(&cfg.n_values, &metrics),
        entries,
    })
}

/// Second moments of the equilibrium strategies across population sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub n_values: Vec<usize>,
    /// `sup_t E[(u^{i,N}_t)^2]` of the tagged agent (all agents are
    /// exchangeable up to their initial inventory).
    pub sup_moments: Vec<f64>,
    /// Last value at most 1.1 times the median.
    pub flat: bool,
}

pub fn uniform_bound_check(cfg: &StudyConfig) -> Result<BoundReport> {
    cfg.validate()?;
    require_small_horizon(&cfg.params)?;
    let s = Solvers::new(cfg)?;
    let len = s.grid.len();
    let nn = cfg.n_values.len();
    let sums = ordered_sum(0..cfg.n_paths, nn * len, |p, acc| {
        let sig = s.signal(cfg, p);
        for (j, fs) in s.finite.iter().enumerate() {
            let fagg = fs.aggregate(cfg.x_tilde0, sig.clone())?;
            let u = fs.agent_path(&fagg, cfg.agent_x0)?;
            for (a, v) in acc[j * len..(j + 1) * len].iter_mut().zip(&u.u) {
                *a += v * v;
            }
        }
        Ok(())
    })?;
    let sup_moments: Vec<f64> = (0..nn)
        .map(|j| {
            sums[j * len..(j + 1) * len]
                .iter()
                .map(|v| v / cfg.n_paths as f64)
                .fold(0.0, f64::max)
        })
        .collect();
    let mut sorted = sup_moments.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let flat = *sup_moments.last().expect("non-empty") <= 1.1 * median;
    Ok(BoundReport {
        n_values: cfg.n_values.clone(),
        sup_moments,
        flat,
    })
}

/// Signal configuration of an illustration scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignalMode {
    /// No exogenous signal.
    Zero,
    /// Signal started at a positive level.
    Positive,
    /// Signal started at a negative level.
    Negative,
}

impl SignalMode {
    pub const ALL: [SignalMode; 3] = [SignalMode::Zero, SignalMode::Positive, SignalMode::Negative];

    pub fn ou(self) -> OuParams {
        let base = OuParams::illustration();
        match self {
            SignalMode::Zero => OuParams {
                iota: 0.0,
                sigma: 0.0,
                ..base
            },
            SignalMode::Positive => base,
            SignalMode::Negative => OuParams {
                iota: -base.iota,
                ..base
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SignalMode::Zero => "zero",
            SignalMode::Positive => "positive",
            SignalMode::Negative => "negative",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub mode: SignalMode,
    pub x_tilde0: f64,
    pub agent_inventories: Vec<f64>,
    pub seed: u64,
}

/// Default initial inventories of the five plotted agents.
pub const FIGURE_AGENTS: [f64; 5] = [10.0, 5.0, 0.0, -5.0, -15.0];

/// Mean-field initial inventories of the scenarios.
pub const FIGURE_X_TILDE0: [f64; 3] = [0.0, 10.0, -15.0];

/// All nine (mode, initial aggregate inventory) scenarios.
pub fn figure_scenarios(seed: u64) -> Vec<ScenarioSpec> {
    SignalMode::ALL
        .iter()
        .flat_map(|mode| {
            FIGURE_X_TILDE0.iter().map(move |x| ScenarioSpec {
                mode: *mode,
                x_tilde0: *x,
                agent_inventories: FIGURE_AGENTS.to_vec(),
                seed,
            })
        })
        .collect()
}

/// Qualitative properties of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureChecks {
    /// `|X_M| / max(1, |x_0|)` per agent.
    pub terminal_ratios: Vec<f64>,
    /// Every ratio at most 0.05.
    pub terminal_ok: bool,
    /// `max_t |X_tilde_t|`
    pub aggregate_peak: f64,
    /// `|X_tilde_M|`
    pub aggregate_terminal: f64,
}

impl FigureChecks {
    /// Aggregate leaves zero and returns to within 5% of its peak.
    pub fn round_trip(&self) -> bool {
        self.aggregate_peak > 0.0 && self.aggregate_terminal <= 0.05 * self.aggregate_peak
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureBundle {
    pub scenario: ScenarioSpec,
    /// Columns: t, I, A, X_tilde, nu_tilde, distortion (`-kappa Y`),
    /// amplified (`A - kappa Y`), then X_agent{j} and v_agent{j}.
    pub table: Table,
    pub checks: FigureChecks,
}

impl FigureBundle {
    /// Stable file stem, e.g. `positive_x0_-15`.
    pub fn stem(&self) -> String {
        format!("{}_x0_{}", self.scenario.mode.name(), self.scenario.x_tilde0)
    }

    /// Inventory and signal panels.
    pub fn svgs(&self) -> Vec<(String, String)> {
        let t = self.table.column("t").expect("time column");
        let col = |n: &str| self.table.column(n).expect("known column").to_vec();
        let mut inv = vec![Series {
            label: "mean field".into(),
            values: col("X_tilde"),
        }];
        for (j, x0) in self.scenario.agent_inventories.iter().enumerate() {
            inv.push(Series {
                label: format!("x0 = {x0}"),
                values: col(&format!("X_agent{}", j + 1)),
            });
        }
        let sig = vec![
            Series {
                label: "A".into(),
                values: col("A"),
            },
            Series {
                label: "-kappa Y".into(),
                values: col("distortion"),
            },
            Series {
                label: "A - kappa Y".into(),
                values: col("amplified"),
            },
        ];
        let title = format!(
            "{} signal, mean-field X0 = {}",
            self.scenario.mode.name(),
            self.scenario.x_tilde0
        );
        vec![
            (
                format!("{}_inventories.svg", self.stem()),
                line_chart_svg(&format!("Inventories: {title}"), t, &inv),
            ),
            (
                format!("{}_signals.svg", self.stem()),
                line_chart_svg(&format!("Signals: {title}"), t, &sig),
            ),
        ]
    }
}

/// Mean-field equilibrium of one illustration scenario on a single signal path.
pub fn reproduce_figure(scenario: &ScenarioSpec, params: &ModelParams, n_steps: usize) -> Result<FigureBundle> {
    let grid = build_time_grid(params.horizon, n_steps)?;
    let ou = scenario.mode.ou();
    let solver = MfgSolver::new(params, &ou, &grid)?;
    let sig = Arc::new(simulate_ou_path(&ou, &grid, scenario.seed, 0));
    let agg = solver.aggregate(scenario.x_tilde0, sig.clone())?;
    let mut table = Table::new();
    table.push("t", grid.times.clone())?;
    table.push("I", sig.intensity.clone())?;
    table.push("A", sig.integrated.clone())?;
    table.push("X_tilde", agg.x.clone())?;
    table.push("nu_tilde", agg.nu.clone())?;
    let distortion: Vec<f64> = agg.y.iter().map(|y| -params.kappa * y).collect();
    table.push("amplified", sig.integrated.iter().zip(&distortion).map(|(a, d)| a + d).collect())?;
    table.push("distortion", distortion)?;
    let mut terminal_ratios = Vec::new();
    for (j, x0) in scenario.agent_inventories.iter().enumerate() {
        let a = solver.agent_path(&agg, *x0)?;
        terminal_ratios.push(a.x[n_steps].abs() / x0.abs().max(1.0));
        table.push(format!("X_agent{}", j + 1), a.x)?;
        table.push(format!("v_agent{}", j + 1), a.v)?;
    }
    let checks = FigureChecks {
        terminal_ok: terminal_ratios.iter().all(|r| *r <= 0.05),
        terminal_ratios,
        aggregate_peak: agg.x.iter().fold(0.0, |m, v| m.max(v.abs())),
        aggregate_terminal: agg.x[n_steps].abs(),
    };
    Ok(FigureBundle {
        scenario: scenario.clone(),
        table,
        checks,
    })
}
