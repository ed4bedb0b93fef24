//! Ornstein-Uhlenbeck predictive signal: exact simulation, conditional means
//! and the closed-form offset integrals used by every feedback map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::TimeGrid;
use crate::spectral::{dd1, ExpSum};

/// `dI = -beta I dt + sigma dW`, `I_0 = iota`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuParams {
    pub iota: f64,
    pub beta: f64,
    pub sigma: f64,
}

impl OuParams {
    /// Signal used in the illustrations.
    pub fn illustration() -> Self {
        Self {
            iota: 1.0,
            beta: 0.1,
            sigma: 0.5,
        }
    }

    /// No signal at all: `A` vanishes identically.
    pub fn zero() -> Self {
        Self {
            iota: 0.0,
            beta: 0.0,
            sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iota.is_finite() && self.beta.is_finite() && self.sigma.is_finite()) {
            return Err(Error::InvalidParams("signal parameters must be finite".into()));
        }
        if self.beta < 0.0 {
            return Err(Error::InvalidParams("beta must be >= 0".into()));
        }
        if self.sigma < 0.0 {
            return Err(Error::InvalidParams("sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// True when the signal is deterministic.
    pub fn is_deterministic(&self) -> bool {
        self.sigma == 0.0
    }

    pub fn mean(&self, t: f64) -> f64 {
        self.iota * (-self.beta * t).exp()
    }

    pub fn variance(&self, t: f64) -> f64 {
        if self.beta == 0.0 {
            self.sigma * self.sigma * t
        } else {
            self.sigma * self.sigma * (-(-2.0 * self.beta * t).exp_m1()) / (2.0 * self.beta)
        }
    }

    /// `E[I_t^2]`
    pub fn second_moment(&self, t: f64) -> f64 {
        self.mean(t).powi(2) + self.variance(t)
    }

    /// Standard deviation of one exact transition over `dt`.
    pub fn transition_sd(&self, dt: f64) -> f64 {
        self.variance(dt).sqrt()
    }
}

/// One sampled signal trajectory on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPath {
    pub grid: TimeGrid,
    pub ou: OuParams,
    /// Signal intensity `I` at the grid points.
    pub intensity: Vec<f64>,
    /// Integrated signal `A`, trapezoidal, `A_0 = 0`.
    pub integrated: Vec<f64>,
}

/// Random stream of path `path` under `master_seed`.
///
/// Each path owns a ChaCha stream, so any subset of paths can be regenerated
/// independently and in any order.
pub fn path_rng(master_seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path);
    rng
}

/// Exact-transition OU sample driven by stream 0 of `seed`.
pub fn simulate_ou(params: &OuParams, grid: &TimeGrid, seed: u64) -> SignalPath {
    simulate_ou_path(params, grid, seed, 0)
}

/// Exact-transition OU sample for path `path` of an ensemble.
pub fn simulate_ou_path(params: &OuParams, grid: &TimeGrid, master_seed: u64, path: u64) -> SignalPath {
    let m = grid.n_steps;
    let mut intensity = Vec::with_capacity(m + 1);
    // The deterministic decay is evaluated directly and the noise carried
    // separately, so a noise-free signal matches the analytic curve exactly.
    let decay = (-params.beta * grid.dt).exp();
    let sd = params.transition_sd(grid.dt);
    let mut noise = 0.0;
    intensity.push(params.iota);
    if params.sigma > 0.0 {
        let mut rng = path_rng(master_seed, path);
        for k in 1..=m {
            let xi: f64 = StandardNormal.sample(&mut rng);
            noise = noise * decay + sd * xi;
            intensity.push(params.mean(grid.times[k]) + noise);
        }
    } else {
        intensity.extend((1..=m).map(|k| params.mean(grid.times[k])));
    }
    let integrated = trapezoid_accumulate(&intensity, grid.dt);
    SignalPath {
        grid: grid.clone(),
        ou: *params,
        intensity,
        integrated,
    }
}

/// A signal path that is identically zero.
pub fn zero_signal(grid: &TimeGrid) -> SignalPath {
    SignalPath {
        grid: grid.clone(),
        ou: OuParams::zero(),
        intensity: vec![0.0; grid.len()],
        integrated: vec![0.0; grid.len()],
    }
}

fn trapezoid_accumulate(values: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * dt * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

impl SignalPath {
    /// Every `factor`-th point of this path, which is itself an exact OU
    /// sample on the coarser grid; `A` is re-accumulated on that grid.
    pub fn coarsen(&self, factor: usize) -> Result<SignalPath> {
        if factor == 0 || self.grid.n_steps % factor != 0 {
            return Err(Error::InvalidGrid(format!(
                "cannot coarsen {} steps by {factor}",
                self.grid.n_steps
            )));
        }
        let grid = crate::model::build_time_grid(self.grid.horizon(), self.grid.n_steps / factor)?;
        let intensity: Vec<f64> = self.intensity.iter().step_by(factor).copied().collect();
        let integrated = trapezoid_accumulate(&intensity, grid.dt);
        Ok(SignalPath {
            grid,
            ou: self.ou,
            intensity,
            integrated,
        })
    }
}

/// `E_t[I_{t+tau}] = I_t exp(-beta tau)`
pub fn ou_cond_mean(i_t: f64, beta: f64, tau: f64) -> f64 {
    i_t * (-beta * tau).exp()
}

/// `int_0^tau exp(nu (tau - s)) exp(-beta s) ds`
pub fn phi_kernel(nu: f64, beta: f64, tau: f64) -> f64 {
    let d = nu + beta;
    if d.abs() < 1e-12 {
        // Degenerate branch: tau exp(nu tau) with its first-order correction.
        let x = d * tau;
        return tau * (-beta * tau).exp() * (1.0 + x / 2.0 + x * x / 6.0);
    }
    dd1(nu, -beta, tau)
}

/// `E_t[int_t^T sum_j c_j exp(nu_j (T - s)) dA_s]` given `I_t`.
pub fn expkernel_offset(i_t: f64, kernel: &ExpSum, t: f64, horizon: f64, beta: f64) -> f64 {
    let tau = horizon - t;
    i_t * kernel.terms().map(|(c, nu)| c * phi_kernel(nu, beta, tau)).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_time_grid;
    use approx::assert_relative_eq;

    #[test]
    fn deterministic_decay() {
        let g = build_time_grid(10.0, 1000).unwrap();
        let ou = OuParams {
            iota: 1.0,
            beta: 0.1,
            sigma: 0.0,
        };
        let p = simulate_ou(&ou, &g, 3);
        assert_relative_eq!(p.intensity[1000], (-1.0f64).exp(), max_relative = 1e-15);
        for (k, t) in g.times.iter().enumerate() {
            assert!((p.intensity[k] - (-0.1 * t).exp()).abs() <= 1e-14);
        }
    }

    #[test]
    fn constant_signal() {
        let g = build_time_grid(2.0, 8).unwrap();
        let ou = OuParams {
            iota: 1.5,
            beta: 0.0,
            sigma: 0.0,
        };
        let p = simulate_ou(&ou, &g, 0);
        assert!(p.intensity.iter().all(|v| *v == 1.5));
        for (a, t) in p.integrated.iter().zip(&g.times) {
            assert_relative_eq!(*a, 1.5 * t, epsilon = 1e-14);
        }
    }

    #[test]
    fn same_seed_same_path() {
        let g = build_time_grid(1.0, 50).unwrap();
        let a = simulate_ou_path(&OuParams::illustration(), &g, 9, 4);
        let b = simulate_ou_path(&OuParams::illustration(), &g, 9, 4);
        let c = simulate_ou_path(&OuParams::illustration(), &g, 9, 5);
        assert_eq!(a, b);
        assert_ne!(a.intensity, c.intensity);
    }

    #[test]
    fn cond_mean_examples() {
        assert_relative_eq!(ou_cond_mean(1.0, 0.1, 10.0), (-1.0f64).exp());
        assert_eq!(ou_cond_mean(2.5, 0.3, 0.0), 2.5);
        assert_eq!(ou_cond_mean(2.5, 0.0, 7.0), 2.5);
    }

    #[test]
    fn offset_examples() {
        let k = ExpSum {
            rates: vec![0.0],
            weights: vec![1.0],
        };
        assert_relative_eq!(expkernel_offset(2.0, &k, 1.0, 4.0, 0.0), 6.0, max_relative = 1e-15);
        let beta = 0.3;
        let k = ExpSum {
            rates: vec![-beta],
            weights: vec![1.0],
        };
        let tau: f64 = 2.0;
        assert_relative_eq!(
            expkernel_offset(1.0, &k, 0.0, tau, beta),
            tau * (-beta * tau).exp(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn phi_branches_are_continuous() {
        let beta = 0.1;
        let tau = 3.0;
        let a = phi_kernel(-beta + 5e-13, beta, tau);
        let b = phi_kernel(-beta + 5e-12, beta, tau);
        assert_relative_eq!(a, b, max_relative = 1e-10);
    }

    #[test]
    fn coarsen_keeps_every_other_point() {
        let g = build_time_grid(1.0, 8).unwrap();
        let p = simulate_ou(&OuParams::illustration(), &g, 1);
        let c = p.coarsen(2).unwrap();
        assert_eq!(c.intensity, vec![p.intensity[0], p.intensity[2], p.intensity[4], p.intensity[6], p.intensity[8]]);
        assert!(p.coarsen(3).is_err());
    }
}
