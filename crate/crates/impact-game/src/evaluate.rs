//! Monte-Carlo evaluation of performance functionals, strategy distances and
//! deviation tests.
//!
//! Every reduction maps paths in parallel into an ordered vector and sums it
//! sequentially, so results do not depend on the thread count.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ModelParams, PathEnsemble, TimeGrid};
use crate::signal::{path_rng, simulate_ou_path, OuParams};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::Precondition("at least two paths are needed".into()));
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            n_paths: n,
        })
    }
}

/// Per-path, per-grid-point trading speeds.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyChannel {
    pub grid: TimeGrid,
    pub n_paths: usize,
    values: Vec<f64>,
}

impl StrategyChannel {
    /// Row-major (path, grid point) values.
    pub fn new(grid: TimeGrid, n_paths: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_paths * grid.len() {
            return Err(Error::Mismatch(format!(
                "strategy has {} values, expected {}",
                values.len(),
                n_paths * grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Mismatch("strategy has non-finite values".into()));
        }
        Ok(Self { grid, n_paths, values })
    }

    pub fn from_paths(grid: TimeGrid, paths: Vec<Vec<f64>>) -> Result<Self> {
        let n = paths.len();
        Self::new(grid, n, paths.concat())
    }

    /// The same deterministic schedule on every path.
    pub fn deterministic(grid: TimeGrid, n_paths: usize, schedule: &[f64]) -> Result<Self> {
        let values = schedule.iter().copied().cycle().take(n_paths * schedule.len()).collect();
        Self::new(grid, n_paths, values)
    }

    pub fn path(&self, p: usize) -> &[f64] {
        let m = self.grid.len();
        &self.values[p * m..(p + 1) * m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn check_compatible(&self, other: &StrategyChannel) -> Result<()> {
        if self.grid != other.grid || self.n_paths != other.n_paths {
            return Err(Error::Mismatch("strategy channels differ in grid or path count".into()));
        }
        Ok(())
    }

    /// `self + eps * other`
    pub fn axpy(&self, eps: f64, other: &StrategyChannel) -> Result<StrategyChannel> {
        self.check_compatible(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + eps * b).collect();
        StrategyChannel::new(self.grid.clone(), self.n_paths, values)
    }

    /// `(1 - w) self + w other`
    pub fn blend(&self, w: f64, other: &StrategyChannel) -> Result<StrategyChannel> {
        self.check_compatible(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + w * (b - a))
            .collect();
        StrategyChannel::new(self.grid.clone(), self.n_paths, values)
    }

    /// Pointwise sample second moment at every grid point.
    pub fn second_moments(&self) -> Vec<f64> {
        let m = self.grid.len();
        let mut acc = vec![0.0; m];
        for p in 0..self.n_paths {
            for (a, v) in acc.iter_mut().zip(self.path(p)) {
                *a += v * v;
            }
        }
        acc.iter().map(|a| a / self.n_paths as f64).collect()
    }

    /// `(int_0^T E[u_t^2] dt)^(1/2)` with the sample mean and the trapezoid rule.
    pub fn norm(&self) -> f64 {
        self.grid.trapezoid(&self.second_moments()).sqrt()
    }

    /// Rescaled to unit norm.
    pub fn normalized(&self) -> Result<StrategyChannel> {
        let n = self.norm();
        if !(n > 0.0) {
            return Err(Error::Precondition("cannot normalize a zero strategy".into()));
        }
        StrategyChannel::new(
            self.grid.clone(),
            self.n_paths,
            self.values.iter().map(|v| v / n).collect(),
        )
    }

    /// Pointwise average of several channels.
    pub fn average(channels: &[StrategyChannel]) -> Result<StrategyChannel> {
        let first = channels
            .first()
            .ok_or_else(|| Error::Precondition("no channels to average".into()))?;
        let mut acc = vec![0.0; first.values.len()];
        for c in channels {
            first.check_compatible(c)?;
            for (a, v) in acc.iter_mut().zip(&c.values) {
                *a += v;
            }
        }
        let n = channels.len() as f64;
        StrategyChannel::new(first.grid.clone(), first.n_paths, acc.iter().map(|a| a / n).collect())
    }
}

/// Signal ensemble with channels `I` and `A` for paths `0..n_paths` of `seed`.
pub fn signal_ensemble(ou: &OuParams, grid: &TimeGrid, seed: u64, n_paths: usize) -> Result<PathEnsemble> {
    let paths: Vec<_> = (0..n_paths)
        .into_par_iter()
        .map(|p| simulate_ou_path(ou, grid, seed, p as u64))
        .collect();
    let mut e = PathEnsemble::new(grid.clone(), n_paths);
    e.add_channel("I", paths.iter().flat_map(|p| p.intensity.iter().copied()).collect())?;
    e.add_channel("A", paths.iter().flat_map(|p| p.integrated.iter().copied()).collect())?;
    Ok(e)
}

/// Distortion driven by `speed`: `Y_{k+1} = Y_k e^{-rho dt} + gamma dt (e^{-rho dt} s_k + s_{k+1})/2`.
pub fn distortion_path(params: &ModelParams, speed: &[f64], dt: f64) -> Vec<f64> {
    let e = (-params.rho * dt).exp();
    let mut y = Vec::with_capacity(speed.len());
    y.push(params.y0);
    for w in speed.windows(2) {
        let last = *y.last().expect("non-empty");
        y.push(last * e + params.gamma * dt * (e * w[0] + w[1]) / 2.0);
    }
    y
}

/// Realized objective of one path: running revenue minus slippage and
/// inventory penalty, plus the terminal inventory valued at the unaffected
/// price drift and penalized by `varrho`.
pub fn path_objective(params: &ModelParams, x0: f64, u: &[f64], y: &[f64], a: &[f64], dt: f64) -> f64 {
    let m = u.len() - 1;
    let mut x = x0;
    let mut j = 0.0;
    for k in 0..m {
        let s = a[k] - params.kappa * y[k];
        j += (s * u[k] - params.lambda * u[k] * u[k] - params.phi * x * x) * dt;
        x -= dt * u[k];
    }
    j + x * (a[m] - params.varrho * x)
}

fn check_signals(signals: &PathEnsemble, u: &StrategyChannel) -> Result<()> {
    if signals.grid != u.grid || signals.n_paths != u.n_paths {
        return Err(Error::Mismatch("signals and strategies differ in grid or path count".into()));
    }
    if signals.channel("A").is_none() {
        return Err(Error::Mismatch("signal ensemble lacks channel A".into()));
    }
    Ok(())
}

/// Per-path objectives of `u` when the distortion is driven by `speed`.
pub fn objective_samples(
    x0: f64,
    u: &StrategyChannel,
    speed: &StrategyChannel,
    signals: &PathEnsemble,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    u.check_compatible(speed)?;
    check_signals(signals, u)?;
    let dt = u.grid.dt;
    Ok((0..u.n_paths)
        .into_par_iter()
        .map(|p| {
            let y = distortion_path(params, speed.path(p), dt);
            path_objective(params, x0, u.path(p), &y, signals.path("A", p).expect("checked"), dt)
        })
        .collect())
}

/// Objective of agent `i` in the N-player game, the distortion being driven
/// by the average of all N strategies.
pub fn objective_finite(
    i: usize,
    x0: f64,
    strategies: &[StrategyChannel],
    signals: &PathEnsemble,
    params: &ModelParams,
) -> Result<McEstimate> {
    let own = strategies
        .get(i)
        .ok_or_else(|| Error::Precondition(format!("agent {i} not among {} strategies", strategies.len())))?;
    let mean = StrategyChannel::average(strategies)?;
    McEstimate::from_samples(&objective_samples(x0, own, &mean, signals, params)?)
}

/// Objective of an agent in the mean-field game, the distortion being driven
/// by the population speed `nu` alone.
pub fn objective_mfg(
    x0: f64,
    v: &StrategyChannel,
    nu: &StrategyChannel,
    signals: &PathEnsemble,
    params: &ModelParams,
) -> Result<McEstimate> {
    McEstimate::from_samples(&objective_samples(x0, v, nu, signals, params)?)
}

/// `(sup_t E[(u - v)^2], ||u - v||_{2,T})`
pub fn l2_metrics(u: &StrategyChannel, v: &StrategyChannel) -> Result<(f64, f64)> {
    let d = u.axpy(-1.0, v)?;
    let moments = d.second_moments();
    let sup = moments.iter().copied().fold(0.0, f64::max);
    Ok((sup, u.grid.trapezoid(&moments).sqrt()))
}

/// Tolerance on the unit norm of a deviation direction.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// `J(u_i + eps h; rest) - J(u_i; rest)` for agent `i`, on common paths.
pub fn deviation_test(
    i: usize,
    x0: f64,
    equilibrium: &[StrategyChannel],
    h: &StrategyChannel,
    eps: f64,
    signals: &PathEnsemble,
    params: &ModelParams,
) -> Result<McEstimate> {
    if (h.norm() - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::Precondition(format!("deviation has norm {}, expected 1", h.norm())));
    }
    let own = equilibrium
        .get(i)
        .ok_or_else(|| Error::Precondition(format!("agent {i} not among {} strategies", equilibrium.len())))?;
    let deviated = own.axpy(eps, h)?;
    let mut profile = equilibrium.to_vec();
    profile[i] = deviated.clone();
    let base_mean = StrategyChannel::average(equilibrium)?;
    let dev_mean = StrategyChannel::average(&profile)?;
    let base = objective_samples(x0, own, &base_mean, signals, params)?;
    let dev = objective_samples(x0, &deviated, &dev_mean, signals, params)?;
    let diff: Vec<f64> = dev.iter().zip(&base).map(|(d, b)| d - b).collect();
    McEstimate::from_samples(&diff)
}

/// Deviation gain when all N agents play `base` except one who plays
/// `base + eps h`; the others' average is unchanged so only one channel of
/// speeds is needed.
pub fn symmetric_deviation_gain(
    n_agents: usize,
    x0: f64,
    base: &StrategyChannel,
    h: &StrategyChannel,
    eps: f64,
    signals: &PathEnsemble,
    params: &ModelParams,
) -> Result<McEstimate> {
    base.check_compatible(h)?;
    check_signals(signals, base)?;
    let dt = base.grid.dt;
    let w = eps / n_agents as f64;
    let diff: Vec<f64> = (0..base.n_paths)
        .into_par_iter()
        .map(|p| {
            let b = base.path(p);
            let hp = h.path(p);
            let a = signals.path("A", p).expect("checked");
            let dev: Vec<f64> = b.iter().zip(hp).map(|(x, y)| x + eps * y).collect();
            let mean: Vec<f64> = b.iter().zip(hp).map(|(x, y)| x + w * y).collect();
            let y_base = distortion_path(params, b, dt);
            let y_dev = distortion_path(params, &mean, dt);
            path_objective(params, x0, &dev, &y_dev, a, dt) - path_objective(params, x0, b, &y_base, a, dt)
        })
        .collect();
    McEstimate::from_samples(&diff)
}

/// Elements of the deviation dictionary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    /// Constant speed.
    Constant(f64),
    /// Indicator of the first half of the horizon.
    Early(f64),
    /// Indicator of the second half of the horizon.
    Late(f64),
    /// Proportional to the signal intensity.
    Signal(f64),
    /// Linear ramp `t / T`.
    Ramp(f64),
    /// Independent standard normal per path and grid point, from a stream
    /// seeded by the given value.
    Noise(u64),
}

impl Perturbation {
    pub fn name(&self) -> String {
        let sign = |s: f64| if s >= 0.0 { '+' } else { '-' };
        match self {
            Perturbation::Constant(s) => format!("const{}", sign(*s)),
            Perturbation::Early(s) => format!("early{}", sign(*s)),
            Perturbation::Late(s) => format!("late{}", sign(*s)),
            Perturbation::Signal(s) => format!("signal{}", sign(*s)),
            Perturbation::Ramp(s) => format!("ramp{}", sign(*s)),
            Perturbation::Noise(seed) => format!("noise{seed}"),
        }
    }

    /// Unit-norm channel of this direction on the given signal paths.
    pub fn channel(&self, signals: &PathEnsemble) -> Result<StrategyChannel> {
        let grid = &signals.grid;
        let half = grid.horizon() / 2.0;
        let n = signals.n_paths;
        let raw = match *self {
            Perturbation::Constant(s) => StrategyChannel::deterministic(grid.clone(), n, &vec![s; grid.len()])?,
            Perturbation::Early(s) => {
                let v: Vec<f64> = grid.times.iter().map(|t| if *t < half { s } else { 0.0 }).collect();
                StrategyChannel::deterministic(grid.clone(), n, &v)?
            }
            Perturbation::Late(s) => {
                let v: Vec<f64> = grid.times.iter().map(|t| if *t >= half { s } else { 0.0 }).collect();
                StrategyChannel::deterministic(grid.clone(), n, &v)?
            }
            Perturbation::Ramp(s) => {
                let v: Vec<f64> = grid.times.iter().map(|t| s * t / grid.horizon()).collect();
                StrategyChannel::deterministic(grid.clone(), n, &v)?
            }
            Perturbation::Signal(s) => {
                let i = signals
                    .channel("I")
                    .ok_or_else(|| Error::Mismatch("signal ensemble lacks channel I".into()))?;
                StrategyChannel::new(grid.clone(), n, i.iter().map(|v| s * v).collect())?
            }
            Perturbation::Noise(seed) => {
                let m = grid.len();
                let paths: Vec<Vec<f64>> = (0..n)
                    .into_par_iter()
                    .map(|p| {
                        let mut rng = path_rng(seed, p as u64);
                        (0..m).map(|_| StandardNormal.sample(&mut rng)).collect()
                    })
                    .collect();
                StrategyChannel::from_paths(grid.clone(), paths)?
            }
        };
        raw.normalized()
    }
}

/// Twelve-element deviation dictionary: signed constant, early, late, signal
/// and ramp directions plus two white-noise directions.
pub fn default_dictionary() -> Vec<Perturbation> {
    let mut out = Vec::new();
    for s in [1.0, -1.0] {
        out.extend([
            Perturbation::Constant(s),
            Perturbation::Early(s),
            Perturbation::Late(s),
            Perturbation::Signal(s),
            Perturbation::Ramp(s),
        ]);
    }
    out.extend([Perturbation::Noise(0xD1C7), Perturbation::Noise(0xD1C8)]);
    out
}

/// Random unit-norm direction: a random combination of low cosine modes,
/// the signal and white noise.
pub fn random_perturbation(signals: &PathEnsemble, seed: u64) -> Result<StrategyChannel> {
    let grid = &signals.grid;
    let mut rng = path_rng(seed, u64::MAX);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let modes: Vec<f64> = (0..4).map(|_| draw()).collect();
    let sig_w = draw();
    let noise_w = 0.3 * draw();
    let schedule: Vec<f64> = grid
        .times
        .iter()
        .map(|t| {
            modes
                .iter()
                .enumerate()
                .map(|(j, c)| c * (j as f64 * std::f64::consts::PI * t / grid.horizon()).cos())
                .sum()
        })
        .collect();
    let det = StrategyChannel::deterministic(grid.clone(), signals.n_paths, &schedule)?;
    let sig = Perturbation::Signal(1.0).channel(signals)?;
    let noise = Perturbation::Noise(seed).channel(signals)?;
    det.axpy(sig_w, &sig)?.axpy(noise_w, &noise)?.normalized()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_time_grid;

    #[test]
    fn degenerate_objective() {
        let p = ModelParams::illustration().with_y0(0.0);
        let g = build_time_grid(p.horizon, 100).unwrap();
        let sig = signal_ensemble(&OuParams::zero(), &g, 0, 2).unwrap();
        let zero = StrategyChannel::deterministic(g.clone(), 2, &vec![0.0; g.len()]).unwrap();
        let j = objective_mfg(1.0, &zero, &zero, &sig, &p).unwrap();
        assert!((j.mean + 11.0).abs() < 1e-12, "{}", j.mean);
        assert_eq!(j.std_error, 0.0);
        let j = objective_finite(0, 0.0, &[zero.clone(), zero], &sig, &p).unwrap();
        assert_eq!(j.mean, 0.0);
    }

    #[test]
    fn l2_examples() {
        let g = build_time_grid(2.0, 10).unwrap();
        let u = StrategyChannel::deterministic(g.clone(), 3, &g.times).unwrap();
        let v = StrategyChannel::deterministic(g.clone(), 3, &g.times.iter().map(|t| t + 0.5).collect::<Vec<_>>()).unwrap();
        assert_eq!(l2_metrics(&u, &u).unwrap(), (0.0, 0.0));
        let (sup, norm) = l2_metrics(&u, &v).unwrap();
        assert!((sup - 0.25).abs() < 1e-15);
        assert!((norm - 0.5 * 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn mc_estimate_needs_two_samples() {
        assert!(McEstimate::from_samples(&[1.0]).is_err());
        let e = McEstimate::from_samples(&[1.0, 3.0]).unwrap();
        assert_eq!(e.mean, 2.0);
        assert!((e.std_error - 1.0).abs() < 1e-15);
    }

    #[test]
    fn channel_rejects_nan() {
        let g = build_time_grid(1.0, 2).unwrap();
        assert!(StrategyChannel::new(g, 1, vec![0.0, f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn dictionary_is_unit_norm() {
        let g = build_time_grid(1.0, 40).unwrap();
        let sig = signal_ensemble(&OuParams::illustration(), &g, 3, 50).unwrap();
        let dict = default_dictionary();
        assert_eq!(dict.len(), 12);
        for d in dict {
            let c = d.channel(&sig).unwrap();
            assert!((c.norm() - 1.0).abs() < 1e-12, "{}", d.name());
        }
        assert!((random_perturbation(&sig, 4).unwrap().norm() - 1.0).abs() < 1e-12);
    }
}
