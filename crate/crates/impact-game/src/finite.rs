//! N-player Nash equilibrium: the aggregated trajectory `(X, Y, u, Z)` and
//! the individual strategies in conditional-expectation feedback form.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mfg::{distortion_drift, trapezoid_against, Quadrature};
use crate::model::{ModelParams, TimeGrid};
use crate::signal::{expkernel_offset, OuParams, SignalPath};
use crate::spectral::{
    build_matrix, coefficients_from, decompose, feedback_scalars, AffineForm, CoefficientKind, CoefficientSet,
    FeedbackScalars, MatrixKind, SpectralDecomposition, DEFAULT_FLOOR,
};

const Y_IDX: usize = 1;

/// Aggregated N-player equilibrium on one signal path.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteAggregate {
    pub grid: TimeGrid,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub z: Vec<f64>,
    pub n_agents: usize,
    pub signal: Arc<SignalPath>,
    /// `|u_{M-1} - (varrho/lambda) X_M + (kappa/2 lambda) Y_M|`.
    pub terminal_residual_u: f64,
    /// `|Z_{M-1}|`; the terminal value of `Z` is zero.
    pub terminal_residual_z: f64,
}

impl FiniteAggregate {
    pub fn state(&self, k: usize) -> [f64; 4] {
        [self.x[k], self.y[k], self.u[k], self.z[k]]
    }
}

/// One agent's inventory and trading speed in the N-player equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteAgentPath {
    pub grid: TimeGrid,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub agent_x0: f64,
    /// `|u_{M-1} - (varrho/lambda) X_M + (kappa/2 lambda) Y_M|`.
    pub terminal_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct AggregateStep {
    /// `u = ux X + uy Y + ui I`
    ux: f64,
    uy: f64,
    ui: f64,
    /// `Z = zx X + zy Y + zu u + zi I`
    zx: f64,
    zy: f64,
    zu: f64,
    zi: f64,
}

/// Precomputed N-player feedback maps for one grid, population size and
/// signal law.
#[derive(Debug, Clone)]
pub struct FiniteSolver {
    params: ModelParams,
    n_agents: usize,
    ou: OuParams,
    grid: TimeGrid,
    agg_dec: SpectralDecomposition,
    agg_coeffs: CoefficientSet,
    ind_coeffs: CoefficientSet,
    steps: Vec<AggregateStep>,
    /// Coefficient of the agent's own inventory.
    own: Vec<f64>,
    /// Remaining affine part of the agent's speed, closed-form quadrature.
    agent: Vec<AffineForm>,
}

impl FiniteSolver {
    pub fn new(params: &ModelParams, n_agents: usize, ou: &OuParams, grid: &TimeGrid) -> Result<Self> {
        params.ensure_valid()?;
        ou.validate()?;
        if n_agents == 0 {
            return Err(Error::InvalidParams("n_agents must be >= 1".into()));
        }
        if (grid.horizon() - params.horizon).abs() > 1e-12 * params.horizon {
            return Err(Error::InvalidGrid(format!(
                "grid horizon {} differs from model horizon {}",
                grid.horizon(),
                params.horizon
            )));
        }
        let agg_dec = decompose(&build_matrix(MatrixKind::Fbar4, params, n_agents)?)?;
        let agg_coeffs = coefficients_from(CoefficientKind::GbarHbar, &agg_dec);
        let ind_dec = decompose(&build_matrix(MatrixKind::F3, params, n_agents)?)?;
        let ind_coeffs = coefficients_from(CoefficientKind::GH, &ind_dec);
        let l = params.lambda;
        let (horizon, beta) = (grid.horizon(), ou.beta);
        let mut steps = Vec::with_capacity(grid.n_steps);
        for k in 0..grid.n_steps {
            let tau = grid.tau(k);
            let (v0, v1, v2, v3) = match feedback_scalars(&agg_coeffs, tau, DEFAULT_FLOOR)? {
                FeedbackScalars::Aggregate { v0, v1, v2, v3 } => (v0, v1, v2, v3),
                _ => unreachable!("aggregated coefficients"),
            };
            let g = agg_coeffs.eval_primary(tau);
            let h = agg_coeffs.eval_secondary(tau);
            let t = grid.times[k];
            let o_h = expkernel_offset(1.0, &agg_coeffs.secondary[2], t, horizon, beta);
            let o_g = expkernel_offset(1.0, &agg_coeffs.primary[2], t, horizon, beta);
            steps.push(AggregateStep {
                ux: v0 * v1,
                uy: v0 * v2,
                ui: v0 / (2.0 * l) * (v3 * o_h / h[3] - o_g / g[2]),
                zx: -h[0] / h[3],
                zy: -h[1] / h[3],
                zu: -h[2] / h[3],
                zi: -o_h / (2.0 * l * h[3]),
            });
        }
        let mut solver = Self {
            params: *params,
            n_agents,
            ou: *ou,
            grid: grid.clone(),
            agg_dec,
            agg_coeffs,
            ind_coeffs,
            steps,
            own: Vec::new(),
            agent: Vec::new(),
        };
        let (own, agent) = solver.agent_maps(Quadrature::ClosedForm)?;
        solver.own = own;
        solver.agent = agent;
        Ok(solver)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn ou(&self) -> &OuParams {
        &self.ou
    }

    pub fn aggregate_decomposition(&self) -> &SpectralDecomposition {
        &self.agg_dec
    }

    pub fn aggregate_coefficients(&self) -> &CoefficientSet {
        &self.agg_coeffs
    }

    pub fn individual_coefficients(&self) -> &CoefficientSet {
        &self.ind_coeffs
    }

    fn terminal_speed(&self, x: f64, y: f64) -> f64 {
        self.params.varrho / self.params.lambda * x - self.params.kappa / (2.0 * self.params.lambda) * y
    }

    /// Forward Euler sweep of the aggregated system under its feedback law,
    /// with `Z` reconstructed from the state at each step.
    pub fn aggregate(&self, x_bar0: f64, signal: Arc<SignalPath>) -> Result<FiniteAggregate> {
        if signal.grid != self.grid {
            return Err(Error::Mismatch("signal grid differs from solver grid".into()));
        }
        if signal.ou != self.ou {
            return Err(Error::Mismatch("signal law differs from solver signal law".into()));
        }
        let m = self.grid.n_steps;
        let dt = self.grid.dt;
        let (g, r) = (self.params.gamma, self.params.rho);
        let mut x = vec![0.0; m + 1];
        let mut y = vec![0.0; m + 1];
        let mut u = vec![0.0; m + 1];
        let mut z = vec![0.0; m + 1];
        x[0] = x_bar0;
        y[0] = self.params.y0;
        for (k, s) in self.steps.iter().enumerate() {
            let i = signal.intensity[k];
            u[k] = s.ux * x[k] + s.uy * y[k] + s.ui * i;
            z[k] = s.zx * x[k] + s.zy * y[k] + s.zu * u[k] + s.zi * i;
            x[k + 1] = x[k] - dt * u[k];
            y[k + 1] = y[k] + dt * (-r * y[k] + g * u[k]);
        }
        u[m] = self.terminal_speed(x[m], y[m]);
        let (terminal_residual_u, terminal_residual_z) = if m > 0 {
            ((u[m - 1] - u[m]).abs(), z[m - 1].abs())
        } else {
            (0.0, 0.0)
        };
        Ok(FiniteAggregate {
            grid: self.grid.clone(),
            x,
            y,
            u,
            z,
            n_agents: self.n_agents,
            signal,
            terminal_residual_u,
            terminal_residual_z,
        })
    }

    /// Individual equilibrium strategy of an agent starting at `x0`.
    pub fn agent_path(&self, agg: &FiniteAggregate, x0: f64) -> Result<FiniteAgentPath> {
        self.agent_path_with(agg, x0, Quadrature::ClosedForm)
    }

    /// As [`FiniteSolver::agent_path`], with the distortion integrals
    /// evaluated by the chosen quadrature.
    pub fn agent_path_with(&self, agg: &FiniteAggregate, x0: f64, quadrature: Quadrature) -> Result<FiniteAgentPath> {
        if agg.grid != self.grid || agg.n_agents != self.n_agents {
            return Err(Error::Mismatch("aggregate does not belong to this solver".into()));
        }
        let owned;
        let (own, forms) = match quadrature {
            Quadrature::ClosedForm => (&self.own, &self.agent),
            Quadrature::GridTrapezoid => {
                owned = self.agent_maps(Quadrature::GridTrapezoid)?;
                (&owned.0, &owned.1)
            }
        };
        let m = self.grid.n_steps;
        let dt = self.grid.dt;
        let mut x = vec![0.0; m + 1];
        let mut u = vec![0.0; m + 1];
        x[0] = x0;
        for k in 0..m {
            u[k] = own[k] * x[k] + forms[k].apply(&agg.state(k), agg.signal.intensity[k]);
            x[k + 1] = x[k] - dt * u[k];
        }
        u[m] = self.terminal_speed(x[m], agg.y[m]);
        let terminal_residual = if m > 0 { (u[m - 1] - u[m]).abs() } else { 0.0 };
        Ok(FiniteAgentPath {
            grid: self.grid.clone(),
            x,
            u,
            agent_x0: x0,
            terminal_residual,
        })
    }

    /// Per-node own-inventory coefficient and affine map of
    /// `(X, Y, u, Z, I)` for the individual strategy.
    fn agent_maps(&self, quadrature: Quadrature) -> Result<(Vec<f64>, Vec<AffineForm>)> {
        let p = &self.params;
        let (l, kap) = (p.lambda, p.kappa);
        let beta = self.ou.beta;
        let m = self.grid.n_steps;
        let g2 = &self.ind_coeffs.primary[1];
        let h2 = &self.ind_coeffs.secondary[1];
        let drift = match quadrature {
            Quadrature::ClosedForm => Vec::new(),
            Quadrature::GridTrapezoid => distortion_drift(&self.agg_dec, p, beta, &self.grid),
        };
        let mut own = Vec::with_capacity(m);
        let mut forms = Vec::with_capacity(m);
        for k in 0..m {
            let tau = self.grid.tau(k);
            let t = self.grid.times[k];
            let (v0, v1, v2) = match feedback_scalars(&self.ind_coeffs, tau, DEFAULT_FLOOR)? {
                FeedbackScalars::Agent { v0, v1, v2 } => (v0, v1, v2),
                _ => unreachable!("individual coefficients"),
            };
            let g = self.ind_coeffs.eval_primary(tau);
            let h = self.ind_coeffs.eval_secondary(tau);
            // Offset of a kernel: E_t int kernel(T - s) (dA_s - kappa dY_s).
            let offset = |kernel| {
                let a_part = expkernel_offset(1.0, kernel, t, self.grid.horizon(), beta);
                let y_part = match quadrature {
                    Quadrature::ClosedForm => self.agg_dec.kernel_increment_integral(kernel, Y_IDX, tau, l, beta),
                    Quadrature::GridTrapezoid => trapezoid_against(kernel, &self.grid, k, &drift),
                };
                AffineForm {
                    state: y_part.state.iter().map(|c| -kap * c).collect(),
                    intensity: a_part - kap * y_part.intensity,
                }
            };
            let off_h = offset(h2);
            let off_g = offset(g2);
            let ey_t = self.agg_dec.conditional_component(Y_IDX, tau, l, beta);
            let ch = v0 * v2 / (2.0 * l * h[2]);
            let cg = -v0 / (2.0 * l * g[1]);
            let cy = v0 * kap / (2.0 * l * g[1]);
            own.push(v0 * v1);
            forms.push(AffineForm {
                state: (0..4)
                    .map(|j| ch * off_h.state[j] + cg * off_g.state[j] + cy * ey_t.state[j])
                    .collect(),
                intensity: ch * off_h.intensity + cg * off_g.intensity + cy * ey_t.intensity,
            });
        }
        Ok((own, forms))
    }

    /// `E_t[(X, Y, u, Z)_{t+sigma}]` given the aggregated state and `I_t`.
    pub fn conditional_state(&self, state: [f64; 4], sigma: f64, i_t: f64) -> [f64; 4] {
        let v = self.agg_dec.conditional_state(&state, sigma, i_t, self.params.lambda, self.ou.beta);
        [v[0], v[1], v[2], v[3]]
    }
}

/// Aggregate on one signal path with a solver built for that path's grid.
pub fn simulate_finite_aggregate(
    params: &ModelParams,
    n_agents: usize,
    x_bar0: f64,
    signal: Arc<SignalPath>,
) -> Result<FiniteAggregate> {
    let solver = FiniteSolver::new(params, n_agents, &signal.ou, &signal.grid)?;
    solver.aggregate(x_bar0, signal)
}

/// Conditional mean of the aggregated state at `s` given the state at `t`.
pub fn finite_conditional_state(
    state: [f64; 4],
    t: f64,
    s: f64,
    i_t: f64,
    dec: &SpectralDecomposition,
    beta: f64,
) -> Result<[f64; 4]> {
    if dec.kind != MatrixKind::Fbar4 {
        return Err(Error::Mismatch("aggregated propagation needs the aggregated matrix".into()));
    }
    if !(s >= t) {
        return Err(Error::Precondition(format!("conditional time {s} precedes {t}")));
    }
    let v = dec.conditional_state(&state, s - t, i_t, dec.params.lambda, beta);
    Ok([v[0], v[1], v[2], v[3]])
}
