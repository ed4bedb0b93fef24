//! Mean-field equilibrium: the aggregate trajectory and the individual
//! strategies in tracking form and in direct conditional-expectation form.
//!
//! Every feedback coefficient depends on the time to maturity only, so a
//! [`MfgSolver`] evaluates them once per grid and each path is then a cheap
//! forward sweep.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{ModelParams, TimeGrid};
use crate::signal::{expkernel_offset, OuParams, SignalPath};
use crate::spectral::{
    build_matrix, coefficients_from, decompose, feedback_scalars, liquidation_function, AffineForm,
    CoefficientKind, CoefficientSet, ExpSum, FeedbackScalars, MatrixKind, SpectralDecomposition, DEFAULT_FLOOR,
};

/// Index of the distortion and of the speed in the aggregate state `(X, Y, nu)`.
const Y_IDX: usize = 1;
const NU_IDX: usize = 2;

/// How the distortion part of the direct-form offset is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    /// Eigencomponent-wise closed form.
    ClosedForm,
    /// Composite trapezoid on the grid nodes, O(M^2) per grid.
    GridTrapezoid,
}

/// Mean-field aggregate on one signal path.
#[derive(Debug, Clone, PartialEq)]
pub struct MfgAggregate {
    pub grid: TimeGrid,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub nu: Vec<f64>,
    pub signal: Arc<SignalPath>,
    /// `|nu_{M-1} - (varrho/lambda) X_M + (kappa/2 lambda) Y_M|`, the gap
    /// between the last feedback speed and the terminal condition. The
    /// speed at `T` itself is set from the terminal condition.
    pub terminal_residual: f64,
}

impl MfgAggregate {
    /// Terminal residual divided by the step size.
    pub fn terminal_constant(&self) -> f64 {
        self.terminal_residual / self.grid.dt
    }

    pub fn state(&self, k: usize) -> [f64; 3] {
        [self.x[k], self.y[k], self.nu[k]]
    }
}

/// One agent's inventory and trading speed against a mean-field aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct MfgAgentPath {
    pub grid: TimeGrid,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub agent_x0: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct AggregateStep {
    w1: f64,
    w2: f64,
    /// Coefficient of `I_t` in the speed.
    signal: f64,
}

/// Precomputed mean-field feedback maps for one grid and signal law.
#[derive(Debug, Clone)]
pub struct MfgSolver {
    params: ModelParams,
    ou: OuParams,
    grid: TimeGrid,
    dec: SpectralDecomposition,
    coeffs: CoefficientSet,
    steps: Vec<AggregateStep>,
    /// `R'/R` at every grid node.
    ratio: Vec<f64>,
    /// Direct-form offsets, closed-form quadrature, one per node before `T`.
    direct: Vec<AffineForm>,
}

impl MfgSolver {
    pub fn new(params: &ModelParams, ou: &OuParams, grid: &TimeGrid) -> Result<Self> {
        params.ensure_valid()?;
        ou.validate()?;
        if (grid.horizon() - params.horizon).abs() > 1e-12 * params.horizon {
            return Err(Error::InvalidGrid(format!(
                "grid horizon {} differs from model horizon {}",
                grid.horizon(),
                params.horizon
            )));
        }
        let dec = decompose(&build_matrix(MatrixKind::Btilde3, params, 1)?)?;
        let coeffs = coefficients_from(CoefficientKind::Ktilde, &dec);
        let l = params.lambda;
        let m = grid.n_steps;
        let mut steps = Vec::with_capacity(m);
        for k in 0..m {
            let tau = grid.tau(k);
            let (w1, w2) = match feedback_scalars(&coeffs, tau, DEFAULT_FLOOR)? {
                FeedbackScalars::MeanField { w1, w2 } => (w1, w2),
                _ => unreachable!("mean-field coefficients"),
            };
            let k3 = coeffs.primary[2].eval(tau);
            let offset = expkernel_offset(1.0, &coeffs.primary[2], grid.times[k], grid.horizon(), ou.beta);
            steps.push(AggregateStep {
                w1,
                w2,
                signal: -offset / (2.0 * l * k3),
            });
        }
        let liq = liquidation_function(params);
        let liq_rate = liq.derivative();
        let ratio = (0..=m)
            .map(|k| liq_rate.eval(grid.tau(k)) / liq.eval(grid.tau(k)))
            .collect();
        let mut solver = Self {
            params: *params,
            ou: *ou,
            grid: grid.clone(),
            dec,
            coeffs,
            steps,
            ratio,
            direct: Vec::new(),
        };
        solver.direct = solver.direct_offsets(Quadrature::ClosedForm);
        Ok(solver)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn ou(&self) -> &OuParams {
        &self.ou
    }

    pub fn decomposition(&self) -> &SpectralDecomposition {
        &self.dec
    }

    pub fn coefficients(&self) -> &CoefficientSet {
        &self.coeffs
    }

    /// `R'/R` at grid node `k`.
    pub fn tracking_ratio(&self, k: usize) -> f64 {
        self.ratio[k]
    }

    fn terminal_speed(&self, x: f64, y: f64) -> f64 {
        self.params.varrho / self.params.lambda * x - self.params.kappa / (2.0 * self.params.lambda) * y
    }

    fn check_signal(&self, signal: &SignalPath) -> Result<()> {
        if signal.grid != self.grid {
            return Err(Error::Mismatch("signal grid differs from solver grid".into()));
        }
        if signal.ou != self.ou {
            return Err(Error::Mismatch("signal law differs from solver signal law".into()));
        }
        Ok(())
    }

    /// Forward Euler sweep of the aggregate under the feedback law.
    pub fn aggregate(&self, x_tilde0: f64, signal: Arc<SignalPath>) -> Result<MfgAggregate> {
        self.check_signal(&signal)?;
        let m = self.grid.n_steps;
        let dt = self.grid.dt;
        let (g, r) = (self.params.gamma, self.params.rho);
        let mut x = vec![0.0; m + 1];
        let mut y = vec![0.0; m + 1];
        let mut nu = vec![0.0; m + 1];
        x[0] = x_tilde0;
        y[0] = self.params.y0;
        for (k, s) in self.steps.iter().enumerate() {
            nu[k] = s.w1 * x[k] + s.w2 * y[k] + s.signal * signal.intensity[k];
            x[k + 1] = x[k] - dt * nu[k];
            y[k + 1] = y[k] + dt * (-r * y[k] + g * nu[k]);
        }
        nu[m] = self.terminal_speed(x[m], y[m]);
        let terminal_residual = if m > 0 { (nu[m - 1] - nu[m]).abs() } else { 0.0 };
        Ok(MfgAggregate {
            grid: self.grid.clone(),
            x,
            y,
            nu,
            signal,
            terminal_residual,
        })
    }

    fn check_aggregate(&self, agg: &MfgAggregate) -> Result<()> {
        if agg.grid != self.grid {
            return Err(Error::Mismatch("aggregate grid differs from solver grid".into()));
        }
        Ok(())
    }

    /// Tracking form: `v = nu - (R'/R)(X_tilde - X)`.
    ///
    /// The recursion runs on the gap `X_tilde - X`, so an agent starting at the
    /// aggregate's inventory reproduces the aggregate exactly.
    pub fn agent_path(&self, agg: &MfgAggregate, x0: f64) -> Result<MfgAgentPath> {
        self.check_aggregate(agg)?;
        let m = self.grid.n_steps;
        let dt = self.grid.dt;
        let mut x = vec![0.0; m + 1];
        let mut v = vec![0.0; m + 1];
        let mut gap = agg.x[0] - x0;
        for k in 0..=m {
            x[k] = if k == 0 { x0 } else { agg.x[k] - gap };
            v[k] = agg.nu[k] - self.ratio[k] * gap;
            gap -= dt * self.ratio[k] * gap;
        }
        Ok(MfgAgentPath {
            grid: self.grid.clone(),
            x,
            v,
            agent_x0: x0,
        })
    }

    /// Direct conditional-expectation form of the individual best response.
    pub fn agent_direct(&self, agg: &MfgAggregate, x0: f64, quadrature: Quadrature) -> Result<MfgAgentPath> {
        self.check_aggregate(agg)?;
        let owned;
        let offsets = match quadrature {
            Quadrature::ClosedForm => &self.direct,
            Quadrature::GridTrapezoid => {
                owned = self.direct_offsets(Quadrature::GridTrapezoid);
                &owned
            }
        };
        Ok(self.agent_direct_with(agg, x0, offsets))
    }

    fn agent_direct_with(&self, agg: &MfgAggregate, x0: f64, offsets: &[AffineForm]) -> MfgAgentPath {
        let m = self.grid.n_steps;
        let dt = self.grid.dt;
        let mut x = vec![0.0; m + 1];
        let mut v = vec![0.0; m + 1];
        x[0] = x0;
        for k in 0..m {
            v[k] = self.ratio[k] * x[k] + offsets[k].apply(&agg.state(k), agg.signal.intensity[k]);
            x[k + 1] = x[k] - dt * v[k];
        }
        v[m] = self.terminal_speed(x[m], agg.y[m]);
        MfgAgentPath {
            grid: self.grid.clone(),
            x,
            v,
            agent_x0: x0,
        }
    }

    /// Affine maps `(X_tilde, Y_tilde, nu, I) -> v - (R'/R) X` at every node
    /// before `T`.
    fn direct_offsets(&self, quadrature: Quadrature) -> Vec<AffineForm> {
        let p = &self.params;
        let (l, kap) = (p.lambda, p.kappa);
        let a = (p.phi / l).sqrt();
        let beta = self.ou.beta;
        let liq = liquidation_function(p);
        let m = self.grid.n_steps;
        let drift = match quadrature {
            Quadrature::ClosedForm => Vec::new(),
            Quadrature::GridTrapezoid => distortion_drift(&self.dec, p, beta, &self.grid),
        };
        (0..m)
            .map(|k| {
                let tau = self.grid.tau(k);
                let r = liq.eval(tau);
                let off_a = expkernel_offset(1.0, &liq, self.grid.times[k], self.grid.horizon(), beta);
                let off_y = match quadrature {
                    Quadrature::ClosedForm => self.dec.kernel_increment_integral(&liq, Y_IDX, tau, l, beta),
                    Quadrature::GridTrapezoid => trapezoid_against(&liq, &self.grid, k, &drift),
                };
                let ey_t = self.dec.conditional_component(Y_IDX, tau, l, beta);
                let scale = -1.0 / (2.0 * l * r);
                AffineForm {
                    state: (0..3)
                        .map(|j| scale * (-kap * off_y.state[j] + a * kap * ey_t.state[j]))
                        .collect(),
                    intensity: scale * (off_a - kap * off_y.intensity + a * kap * ey_t.intensity),
                }
            })
            .collect()
    }

    /// `E_t[(X_tilde, Y_tilde, nu)_{t+sigma}]` given the state and `I_t` at `t`.
    pub fn conditional_state(&self, state: [f64; 3], sigma: f64, i_t: f64) -> [f64; 3] {
        let v = self.dec.conditional_state(&state, sigma, i_t, self.params.lambda, self.ou.beta);
        [v[0], v[1], v[2]]
    }
}

/// Conditional drift `-rho E[Y] + gamma E[speed]` of the distortion as an
/// affine form of the current state and intensity, at every lag of the grid.
/// The distortion and the speed sit at indices 1 and 2 of both aggregate
/// systems.
pub(crate) fn distortion_drift(
    dec: &SpectralDecomposition,
    p: &ModelParams,
    beta: f64,
    grid: &TimeGrid,
) -> Vec<AffineForm> {
    (0..=grid.n_steps)
        .map(|lag| {
            let s = lag as f64 * grid.dt;
            let ey = dec.conditional_component(Y_IDX, s, p.lambda, beta);
            let eu = dec.conditional_component(NU_IDX, s, p.lambda, beta);
            AffineForm {
                state: ey.state.iter().zip(&eu.state).map(|(y, u)| -p.rho * y + p.gamma * u).collect(),
                intensity: -p.rho * ey.intensity + p.gamma * eu.intensity,
            }
        })
        .collect()
}

/// Composite trapezoid of `kernel(T - s) * drift(s - t_k)` over `[t_k, T]`.
pub(crate) fn trapezoid_against(kernel: &ExpSum, grid: &TimeGrid, k: usize, drift: &[AffineForm]) -> AffineForm {
    let m = grid.n_steps;
    let mut acc = AffineForm {
        state: vec![0.0; drift[0].state.len()],
        intensity: 0.0,
    };
    for lag in 0..=(m - k) {
        let w = if lag == 0 || lag == m - k { 0.5 * grid.dt } else { grid.dt };
        let c = w * kernel.eval(grid.tau(k + lag));
        for (a, d) in acc.state.iter_mut().zip(&drift[lag].state) {
            *a += c * d;
        }
        acc.intensity += c * drift[lag].intensity;
    }
    acc
}

/// Aggregate on one signal path with a solver built for that path's grid.
pub fn simulate_mfg_aggregate(params: &ModelParams, x_tilde0: f64, signal: Arc<SignalPath>) -> Result<MfgAggregate> {
    let solver = MfgSolver::new(params, &signal.ou, &signal.grid)?;
    solver.aggregate(x_tilde0, signal)
}

/// Conditional mean of the aggregate state at `s` given the state at `t`.
pub fn mfg_conditional_state(
    state: [f64; 3],
    t: f64,
    s: f64,
    i_t: f64,
    dec: &SpectralDecomposition,
    beta: f64,
) -> Result<[f64; 3]> {
    if dec.kind != MatrixKind::Btilde3 {
        return Err(Error::Mismatch("mean-field propagation needs the mean-field matrix".into()));
    }
    if !(s >= t) {
        return Err(Error::Precondition(format!("conditional time {s} precedes {t}")));
    }
    let v = dec.conditional_state(&state, s - t, i_t, dec.params.lambda, beta);
    Ok([v[0], v[1], v[2]])
}

/// Average trading speed of a set of agent paths at every grid point.
pub fn average_speed(paths: &[MfgAgentPath]) -> Vec<f64> {
    // Incremental mean: exact whenever all speeds coincide.
    let len = paths.first().map_or(0, |p| p.v.len());
    (0..len)
        .map(|k| {
            paths
                .iter()
                .enumerate()
                .fold(0.0, |m, (j, p)| m + (p.v[k] - m) / (j + 1) as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_time_grid;
    use crate::signal::{simulate_ou, zero_signal};

    fn setup(m: usize) -> (ModelParams, TimeGrid, MfgSolver) {
        let p = ModelParams::illustration();
        let g = build_time_grid(p.horizon, m).unwrap();
        let s = MfgSolver::new(&p, &OuParams::illustration(), &g).unwrap();
        (p, g, s)
    }

    #[test]
    fn zero_fixed_point() {
        let p = ModelParams::illustration().with_y0(0.0);
        let g = build_time_grid(p.horizon, 200).unwrap();
        let s = MfgSolver::new(&p, &OuParams::zero(), &g).unwrap();
        let agg = s.aggregate(0.0, Arc::new(zero_signal(&g))).unwrap();
        assert!(agg.x.iter().chain(&agg.y).chain(&agg.nu).all(|v| *v == 0.0));
        let d = s.agent_direct(&agg, 0.0, Quadrature::ClosedForm).unwrap();
        assert!(d.v.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tracking_fixed_point_is_exact() {
        let (_, g, s) = setup(500);
        let sig = Arc::new(simulate_ou(&OuParams::illustration(), &g, 4));
        let agg = s.aggregate(10.0, sig).unwrap();
        let a = s.agent_path(&agg, 10.0).unwrap();
        assert_eq!(a.x, agg.x);
        assert_eq!(a.v, agg.nu);
    }

    #[test]
    fn pure_liquidation_mode() {
        let p = ModelParams::illustration().with_y0(0.0);
        let g = build_time_grid(p.horizon, 300).unwrap();
        let s = MfgSolver::new(&p, &OuParams::zero(), &g).unwrap();
        let agg = s.aggregate(0.0, Arc::new(zero_signal(&g))).unwrap();
        let d = s.agent_direct(&agg, 3.0, Quadrature::ClosedForm).unwrap();
        for k in 0..g.n_steps {
            assert_eq!(d.v[k], s.tracking_ratio(k) * d.x[k]);
        }
    }

    #[test]
    fn conditional_state_at_zero_lag() {
        let (_, _, s) = setup(10);
        let st = [1.5, -0.3, 2.0];
        let out = s.conditional_state(st, 0.0, 0.7);
        for (a, b) in out.iter().zip(&st) {
            assert!((a - b).abs() <= 1e-13 * b.abs().max(1.0));
        }
        let dec = s.decomposition();
        assert!(mfg_conditional_state(st, 1.0, 0.5, 0.0, dec, 0.1).is_err());
    }

    #[test]
    fn rejects_foreign_signal() {
        let (_, _, s) = setup(10);
        let other = build_time_grid(10.0, 20).unwrap();
        let sig = Arc::new(simulate_ou(&OuParams::illustration(), &other, 1));
        assert!(matches!(s.aggregate(0.0, sig), Err(Error::Mismatch(_))));
    }
}
