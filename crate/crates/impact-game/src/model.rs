//! Game constants, time grids and path containers shared by every solver.

use crate::error::{Error, Result};

/// The seven game constants plus the initial price distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Slippage (temporary impact) cost.
    pub lambda: f64,
    /// Push of the aggregate trading speed into the distortion.
    pub gamma: f64,
    /// Scale of the distortion in the visible price.
    pub kappa: f64,
    /// Resilience of the distortion.
    pub rho: f64,
    /// Terminal inventory penalty.
    pub varrho: f64,
    /// Running inventory penalty.
    pub phi: f64,
    /// Trading horizon.
    pub horizon: f64,
    /// Initial price distortion.
    pub y0: f64,
}

impl ModelParams {
    /// Parameters used for the illustrations (T = 10, strong terminal penalty).
    pub fn illustration() -> Self {
        Self {
            lambda: 0.5,
            gamma: 1.0,
            kappa: 1.0,
            rho: 1.0,
            varrho: 10.0,
            phi: 0.1,
            horizon: 10.0,
            y0: 1.0,
        }
    }

    /// Short-horizon set on which the small-horizon condition of the
    /// convergence theorems holds.
    pub fn small_horizon() -> Self {
        Self {
            lambda: 0.5,
            gamma: 1.0,
            kappa: 1.0,
            rho: 1.0,
            varrho: 1.0,
            phi: 0.1,
            horizon: 0.1,
            y0: 1.0,
        }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_y0(mut self, y0: f64) -> Self {
        self.y0 = y0;
        self
    }

    /// Constraint violations of the parameters alone.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let positive = [
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("kappa", self.kappa),
            ("rho", self.rho),
            ("varrho", self.varrho),
            ("phi", self.phi),
            ("horizon", self.horizon),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("{name} must be > 0"));
            }
        }
        if !(self.y0.is_finite() && self.y0 >= 0.0) {
            out.push("y0 must be >= 0".to_string());
        }
        out
    }

    /// Returns an error listing every violation, or `Ok(())`.
    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(v.join("; ")))
        }
    }
}

/// Initial inventories of a finite population and the mean-field initial mean.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationConfig {
    pub n_agents: usize,
    pub initial_inventories: Vec<f64>,
    pub mean_initial: f64,
}

/// Largest admissible initial inventory magnitude.
pub const DEFAULT_INVENTORY_CAP: f64 = 1e9;

impl PopulationConfig {
    /// `n` agents all starting at `x0`.
    pub fn identical(n: usize, x0: f64) -> Self {
        Self {
            n_agents: n,
            initial_inventories: vec![x0; n],
            mean_initial: x0,
        }
    }

    /// `n` agents alternating `x0 + delta`, `x0 - delta`.
    pub fn alternating(n: usize, x0: f64, delta: f64) -> Self {
        let inv = (0..n)
            .map(|i| if i % 2 == 0 { x0 + delta } else { x0 - delta })
            .collect();
        Self {
            n_agents: n,
            initial_inventories: inv,
            mean_initial: x0,
        }
    }

    pub fn average(&self) -> f64 {
        if self.initial_inventories.is_empty() {
            return 0.0;
        }
        self.initial_inventories.iter().sum::<f64>() / self.initial_inventories.len() as f64
    }
}

/// Report-style validation: the returned list is empty iff everything is valid.
pub fn validate_params(params: &ModelParams, pop: &PopulationConfig) -> Vec<String> {
    let mut out = params.violations();
    if pop.n_agents < 1 {
        out.push("n_agents must be >= 1".to_string());
    }
    if pop.initial_inventories.len() != pop.n_agents {
        out.push("inventory count mismatch".to_string());
    }
    if pop
        .initial_inventories
        .iter()
        .any(|x| !x.is_finite() || x.abs() > DEFAULT_INVENTORY_CAP)
    {
        out.push("initial inventory not finite or above cap".to_string());
    }
    if !pop.mean_initial.is_finite() {
        out.push("mean_initial must be finite".to_string());
    }
    out
}

/// Uniform time grid on `[0, T]` with `M` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub n_steps: usize,
    pub dt: f64,
    pub times: Vec<f64>,
}

/// Builds a uniform grid whose last point equals `horizon` exactly.
pub fn build_time_grid(horizon: f64, n_steps: usize) -> Result<TimeGrid> {
    if n_steps == 0 {
        return Err(Error::InvalidGrid("number of steps must be >= 1".into()));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidGrid("horizon must be > 0".into()));
    }
    let dt = horizon / n_steps as f64;
    let mut times: Vec<f64> = (0..=n_steps).map(|k| k as f64 * dt).collect();
    times[n_steps] = horizon;
    Ok(TimeGrid {
        n_steps,
        dt,
        times,
    })
}

impl TimeGrid {
    pub fn horizon(&self) -> f64 {
        self.times[self.n_steps]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Time to maturity at node `k`.
    pub fn tau(&self, k: usize) -> f64 {
        self.horizon() - self.times[k]
    }

    /// Grid with every step split into `factor` substeps.
    pub fn refined(&self, factor: usize) -> Result<TimeGrid> {
        build_time_grid(self.horizon(), self.n_steps * factor)
    }

    /// Trapezoid integral of grid values.
    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let inner: f64 = values[1..self.n_steps].iter().sum();
        self.dt * (inner + 0.5 * (values[0] + values[self.n_steps]))
    }
}

/// Named per-path, per-grid-point channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub n_paths: usize,
    channels: Vec<(String, Vec<f64>)>,
}

impl PathEnsemble {
    pub fn new(grid: TimeGrid, n_paths: usize) -> Self {
        Self {
            grid,
            n_paths,
            channels: Vec::new(),
        }
    }

    /// Adds a row-major (path, grid point) channel.
    pub fn add_channel(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        let want = self.n_paths * self.grid.len();
        if values.len() != want {
            return Err(Error::Mismatch(format!(
                "channel {name} has {} entries, expected {want}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Mismatch(format!("channel {name} has non-finite values")));
        }
        if self.channels.iter().any(|(n, _)| n == name) {
            return Err(Error::Mismatch(format!("duplicate channel {name}")));
        }
        self.channels.push((name.to_string(), values));
        Ok(())
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn path(&self, name: &str, p: usize) -> Option<&[f64]> {
        let m = self.grid.len();
        self.channel(name).map(|v| &v[p * m..(p + 1) * m])
    }

    pub fn channel_names(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|(n, _)| n.as_str())
    }
}
