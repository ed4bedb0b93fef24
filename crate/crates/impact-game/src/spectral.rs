//! System matrices of the aggregated, individual and mean-field FBSDE
//! systems, their closed-form diagonalizations and the exponential-sum
//! coefficient functions built on them.
//!
//! Every coefficient function is a finite sum `sum_j w_j exp(nu_j t)`; this is
//! what lets the signal offsets and conditional expectations downstream be
//! integrated in closed form.

use nalgebra::{Complex, DMatrix, Matrix4, Schur};

use crate::error::{Error, Result};
use crate::model::{ModelParams, TimeGrid};

/// Which of the three system matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatrixKind {
    /// 4x4 aggregated N-player system in (X, Y, u, Z).
    Fbar4,
    /// 3x3 individual N-player system in (X, u, Z).
    F3,
    /// 3x3 mean-field aggregate system in (X, Y, nu).
    Btilde3,
}

impl MatrixKind {
    pub fn dim(self) -> usize {
        match self {
            MatrixKind::Fbar4 => 4,
            MatrixKind::F3 | MatrixKind::Btilde3 => 3,
        }
    }

    /// State component driven by the signal intensity.
    pub fn forcing_index(self) -> usize {
        match self {
            MatrixKind::Fbar4 | MatrixKind::Btilde3 => 2,
            MatrixKind::F3 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrix {
    pub kind: MatrixKind,
    pub entries: DMatrix<f64>,
    pub params: ModelParams,
    pub n_agents: usize,
}

pub fn build_matrix(kind: MatrixKind, params: &ModelParams, n_agents: usize) -> Result<SystemMatrix> {
    params.ensure_valid()?;
    build_matrix_unchecked(kind, params, n_agents)
}

/// Same as [`build_matrix`] but without the positivity checks, so that
/// spectra outside the admissible parameter range can be inspected.
pub fn build_matrix_unchecked(kind: MatrixKind, params: &ModelParams, n_agents: usize) -> Result<SystemMatrix> {
    let ModelParams {
        lambda: l,
        gamma: g,
        kappa: k,
        rho: r,
        phi: f,
        ..
    } = *params;
    let n_eff = match kind {
        MatrixKind::Btilde3 => 1,
        _ => {
            if n_agents == 0 {
                return Err(Error::InvalidParams("n_agents must be >= 1".into()));
            }
            n_agents
        }
    };
    let n = n_eff as f64;
    let entries = match kind {
        MatrixKind::Fbar4 => DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0,
                0.0,
                -1.0,
                0.0,
                0.0,
                -r,
                g,
                0.0,
                -f / l,
                k * r / (2.0 * l),
                -k * g * (n - 1.0) / (2.0 * l * n),
                r / (2.0 * l),
                0.0,
                0.0,
                k * g / n,
                r,
            ],
        ),
        MatrixKind::F3 => DMatrix::from_row_slice(
            3,
            3,
            &[
                0.0,
                -1.0,
                0.0,
                -f / l,
                k * g / (2.0 * l * n),
                r / (2.0 * l),
                0.0,
                k * g / n,
                r,
            ],
        ),
        MatrixKind::Btilde3 => DMatrix::from_row_slice(
            3,
            3,
            &[
                0.0,
                0.0,
                -1.0,
                0.0,
                -r,
                g,
                -f / l,
                k * r / (2.0 * l),
                -k * g / (2.0 * l),
            ],
        ),
    };
    Ok(SystemMatrix {
        kind,
        entries,
        params: *params,
        n_agents: n_eff,
    })
}

/// Monic characteristic polynomial, highest degree first.
pub fn characteristic_coefficients(m: &SystemMatrix) -> Vec<f64> {
    let ModelParams {
        lambda: l,
        gamma: g,
        kappa: k,
        rho: r,
        phi: f,
        ..
    } = m.params;
    let n = m.n_agents as f64;
    match m.kind {
        MatrixKind::Fbar4 => vec![
            1.0,
            (n - 1.0) * k * g / (2.0 * n * l),
            -(k * g * r * (n + 1.0) / (2.0 * n * l) + r * r + f / l),
            0.0,
            r * r * f / l,
        ],
        MatrixKind::F3 => vec![1.0, -(2.0 * n * l * r + g * k) / (2.0 * n * l), -f / l, f * r / l],
        MatrixKind::Btilde3 => vec![1.0, (2.0 * l * r + g * k) / (2.0 * l), -f / l, -r * f / l],
    }
}

fn horner(coeffs: &[f64], x: f64) -> (f64, f64) {
    let mut p = 0.0;
    let mut dp = 0.0;
    for &c in coeffs {
        dp = dp * x + p;
        p = p * x + c;
    }
    (p, dp)
}

/// Real roots of `x^3 + a2 x^2 + a1 x + a0` via the trigonometric form of the
/// depressed cubic, sorted ascending.
pub fn solve_cubic_trig(a2: f64, a1: f64, a0: f64) -> Result<[f64; 3]> {
    let p = a1 - a2 * a2 / 3.0;
    let q = 2.0 * a2.powi(3) / 27.0 - a2 * a1 / 3.0 + a0;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if !(disc < 0.0) || !(p < 0.0) {
        return Err(Error::CubicRegime);
    }
    let r = (-4.0 * p / 3.0).sqrt();
    let arg = (-q / 2.0 * (-27.0 / p.powi(3)).sqrt()).clamp(-1.0, 1.0);
    let theta = arg.acos() / 3.0;
    let third = std::f64::consts::FRAC_PI_3;
    let shift = a2 / 3.0;
    let mut roots = [
        -r * (theta + third).cos() - shift,
        r * theta.cos() - shift,
        -r * (theta - third).cos() - shift,
    ];
    roots.sort_by(|a, b| a.total_cmp(b));
    Ok(roots)
}

/// Tolerance on imaginary parts when deciding that a root is real.
pub const REAL_ROOT_TOL: f64 = 1e-8;

/// Real roots of a monic quartic (coefficients highest degree first) from
/// the companion-matrix eigenvalues, polished by Newton steps.
pub fn solve_quartic_numeric(coeffs: [f64; 5]) -> Result<[f64; 4]> {
    let lead = coeffs[0];
    if lead == 0.0 || !coeffs.iter().all(|c| c.is_finite()) {
        return Err(Error::InvalidParams("quartic must be monic with finite coefficients".into()));
    }
    let c: Vec<f64> = coeffs.iter().map(|v| v / lead).collect();
    let companion = Matrix4::new(
        -c[1], -c[2], -c[3], -c[4], //
        1.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0,
    );
    // The shifted QR iteration can stall on symmetric root configurations;
    // Durand-Kerner is the fallback there.
    let eig: Vec<Complex<f64>> = match Schur::try_new(companion, f64::EPSILON, 10_000) {
        Some(schur) => schur.complex_eigenvalues().iter().copied().collect(),
        None => durand_kerner(&c),
    };
    let mut roots = [0.0; 4];
    for (i, z) in eig.iter().enumerate() {
        if z.im.abs() > REAL_ROOT_TOL * z.re.abs().max(1.0) {
            return Err(Error::ComplexEigenvalues);
        }
        let mut x = z.re;
        for _ in 0..8 {
            let (p, dp) = horner(&c, x);
            if dp == 0.0 || p == 0.0 {
                break;
            }
            let step = p / dp;
            x -= step;
            if step.abs() <= f64::EPSILON * x.abs().max(1.0) {
                break;
            }
        }
        roots[i] = x;
    }
    roots.sort_by(|a, b| a.total_cmp(b));
    for &x in &roots {
        let (p, _) = horner(&c, x);
        if p.abs() > 1e-10 * x.abs().powi(4).max(1.0) {
            return Err(Error::ComplexEigenvalues);
        }
    }
    Ok(roots)
}

/// Simultaneous Weierstrass iteration for all roots of a monic polynomial.
fn durand_kerner(c: &[f64]) -> Vec<Complex<f64>> {
    let deg = c.len() - 1;
    let seed = Complex::new(0.4, 0.9);
    let mut z: Vec<Complex<f64>> = (0..deg).map(|i| seed.powu(i as u32 + 1)).collect();
    let eval = |x: Complex<f64>| c.iter().fold(Complex::new(0.0, 0.0), |acc, &ci| acc * x + ci);
    for _ in 0..500 {
        let mut moved = 0.0_f64;
        for i in 0..deg {
            let mut denom = Complex::new(1.0, 0.0);
            for j in 0..deg {
                if j != i {
                    denom *= z[i] - z[j];
                }
            }
            let step = eval(z[i]) / denom;
            z[i] -= step;
            moved = moved.max(step.norm());
        }
        if moved < 1e-15 {
            break;
        }
    }
    z
}

/// Eigen-decomposition `M = U diag(nu) U^-1` with ascending eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub kind: MatrixKind,
    pub eigenvalues: Vec<f64>,
    pub u: DMatrix<f64>,
    pub u_inv: DMatrix<f64>,
    pub params: ModelParams,
    pub n_agents: usize,
}

/// Relative distinctness floor on the eigenvalues.
pub const EIGEN_GAP_REL: f64 = 1e-7;

/// Eigenvalues from the closed-form characteristic polynomials.
pub fn eigenvalues(m: &SystemMatrix) -> Result<Vec<f64>> {
    let c = characteristic_coefficients(m);
    match m.kind {
        MatrixKind::Fbar4 => Ok(solve_quartic_numeric([c[0], c[1], c[2], c[3], c[4]])?.to_vec()),
        _ => Ok(solve_cubic_trig(c[1], c[2], c[3])?.to_vec()),
    }
}

/// `prod_{j != i} (nu_i - nu_j)`
fn lagrange_denominators(nu: &[f64]) -> Vec<f64> {
    (0..nu.len())
        .map(|i| {
            (0..nu.len())
                .filter(|&j| j != i)
                .map(|j| nu[i] - nu[j])
                .product()
        })
        .collect()
}

/// `prod_{j != i} (nu_j + shift)`
fn shifted_products_except(nu: &[f64], shift: f64) -> Vec<f64> {
    (0..nu.len())
        .map(|i| {
            (0..nu.len())
                .filter(|&j| j != i)
                .map(|j| nu[j] + shift)
                .product()
        })
        .collect()
}

pub fn decompose(m: &SystemMatrix) -> Result<SpectralDecomposition> {
    let nu = eigenvalues(m)?;
    let scale = nu.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let gap = nu.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if !(gap > EIGEN_GAP_REL * scale) {
        return Err(Error::DegenerateSpectrum(format!("eigenvalue gap {gap:e} too small")));
    }
    let tiny = 1e-12 * scale.max(1.0);
    let rho = m.params.rho;
    if nu.iter().any(|v| v.abs() <= tiny) {
        return Err(Error::DegenerateSpectrum("zero eigenvalue".into()));
    }
    if m.kind != MatrixKind::F3 && nu.iter().any(|v| (v + rho).abs() <= tiny) {
        return Err(Error::DegenerateSpectrum("eigenvalue equal to -rho".into()));
    }

    let ModelParams {
        lambda: l,
        gamma: g,
        kappa: k,
        phi: f,
        ..
    } = m.params;
    let r = rho;
    let n = m.n_agents as f64;
    let d = nu.len();
    let lag = lagrange_denominators(&nu);
    let minus_rho = shifted_products_except(&nu, -r);
    let plus_rho_all: f64 = nu.iter().map(|v| v + r).product();
    let mut u = DMatrix::zeros(d, d);
    let mut u_inv = DMatrix::zeros(d, d);
    for i in 0..d {
        let v = nu[i];
        match m.kind {
            MatrixKind::Fbar4 => {
                let a = n * (v - r);
                u[(0, i)] = -a / (k * g * v);
                u[(1, i)] = a / (k * (v + r));
                u[(2, i)] = a / (k * g);
                u[(3, i)] = 1.0;
                let s = 1.0 / (2.0 * n * r * r * lag[i]);
                u_inv[(i, 0)] = -s * 2.0 * r * r * f * g * k * (v + r) / l;
                u_inv[(i, 1)] = -s * k * v * plus_rho_all;
                u_inv[(i, 2)] = s * 2.0 * r * r * g * k * v * (v + r);
                u_inv[(i, 3)] = -s * n * v * (v + r) * minus_rho[i];
            }
            MatrixKind::F3 => {
                let a = n * (v - r);
                u[(0, i)] = -a / (k * g * v);
                u[(1, i)] = a / (k * g);
                u[(2, i)] = 1.0;
                let s = 1.0 / (n * r * lag[i]);
                u_inv[(i, 0)] = -s * g * k * f * r / l;
                u_inv[(i, 1)] = s * g * k * r * v;
                u_inv[(i, 2)] = s * n * v * minus_rho[i];
            }
            MatrixKind::Btilde3 => {
                u[(0, i)] = -1.0 / v;
                u[(1, i)] = g / (v + r);
                u[(2, i)] = 1.0;
                let s = 1.0 / (g * r * lag[i]);
                u_inv[(i, 0)] = -s * g * r * f * (v + r) / l;
                u_inv[(i, 1)] = -s * v * plus_rho_all;
                u_inv[(i, 2)] = s * g * r * v * (v + r);
            }
        }
    }
    let dec = SpectralDecomposition {
        kind: m.kind,
        eigenvalues: nu,
        u,
        u_inv,
        params: m.params,
        n_agents: m.n_agents,
    };
    let inv_err = dec.inverse_residual();
    if !(inv_err <= 1e-8) {
        return Err(Error::DegenerateSpectrum(format!(
            "explicit inverse inconsistent (residual {inv_err:e})"
        )));
    }
    Ok(dec)
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `max |U U^-1 - I|`
    pub fn inverse_residual(&self) -> f64 {
        let p = &self.u * &self.u_inv - DMatrix::identity(self.dim(), self.dim());
        p.amax()
    }

    /// `max |M - U diag(nu) U^-1| / max |M|`
    pub fn reconstruction_residual(&self, m: &SystemMatrix) -> f64 {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.eigenvalues));
        let rec = &self.u * d * &self.u_inv;
        (rec - &m.entries).amax() / m.entries.amax()
    }

    /// Exponential-sum components of `row * exp(M t)`.
    pub fn row_functions(&self, row: &[f64]) -> Vec<ExpSum> {
        let d = self.dim();
        assert_eq!(row.len(), d, "row length must match matrix dimension");
        let ru: Vec<f64> = (0..d)
            .map(|j| (0..d).map(|m| row[m] * self.u[(m, j)]).sum())
            .collect();
        (0..d)
            .map(|col| ExpSum {
                rates: self.eigenvalues.clone(),
                weights: (0..d).map(|j| ru[j] * self.u_inv[(j, col)]).collect(),
            })
            .collect()
    }
}

/// Affine functional `state . coefs + intensity * I_t` of the current state
/// and signal intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineForm {
    pub state: Vec<f64>,
    pub intensity: f64,
}

impl AffineForm {
    pub fn apply(&self, state: &[f64], i_t: f64) -> f64 {
        self.state.iter().zip(state).map(|(c, x)| c * x).sum::<f64>() + self.intensity * i_t
    }
}

/// Conditional propagation of the linear system `dx = M x ds + e_f I_s/(2 lambda) ds`
/// where `f` is the forcing component and `E_t[I_s] = I_t exp(-beta (s - t))`.
impl SpectralDecomposition {
    /// `E_t[x^comp_{t+sigma}]` as an affine form of `(x_t, I_t)`.
    pub fn conditional_component(&self, comp: usize, sigma: f64, lambda: f64, beta: f64) -> AffineForm {
        let d = self.dim();
        let f = self.kind.forcing_index();
        let mut state = vec![0.0; d];
        let mut intensity = 0.0;
        for j in 0..d {
            let nu = self.eigenvalues[j];
            let e = self.u[(comp, j)] * (nu * sigma).exp();
            for (m, s) in state.iter_mut().enumerate() {
                *s += e * self.u_inv[(j, m)];
            }
            intensity += self.u[(comp, j)] * self.u_inv[(j, f)] * dd1(nu, -beta, sigma);
        }
        AffineForm {
            state,
            intensity: intensity / (2.0 * lambda),
        }
    }

    /// `E_t[x_{t+sigma}]` for a concrete state and intensity.
    pub fn conditional_state(&self, state: &[f64], sigma: f64, i_t: f64, lambda: f64, beta: f64) -> Vec<f64> {
        (0..self.dim())
            .map(|c| self.conditional_component(c, sigma, lambda, beta).apply(state, i_t))
            .collect()
    }

    /// `d/dsigma E_t[x^comp_{t+sigma}]` as an affine form.
    pub fn conditional_rate(&self, comp: usize, sigma: f64, lambda: f64, beta: f64) -> AffineForm {
        let d = self.dim();
        let f = self.kind.forcing_index();
        let mut state = vec![0.0; d];
        let mut intensity = 0.0;
        for j in 0..d {
            let nu = self.eigenvalues[j];
            let e = self.u[(comp, j)] * nu * (nu * sigma).exp();
            for (m, s) in state.iter_mut().enumerate() {
                *s += e * self.u_inv[(j, m)];
            }
            intensity += self.u[(comp, j)] * self.u_inv[(j, f)] * nu * dd1(nu, -beta, sigma);
        }
        if comp == f {
            intensity += (-beta * sigma).exp();
        }
        AffineForm {
            state,
            intensity: intensity / (2.0 * lambda),
        }
    }

    /// `E_t[int_0^tau kernel(tau - s) dx^comp_{t+s}]` in closed form.
    pub fn kernel_increment_integral(
        &self,
        kernel: &ExpSum,
        comp: usize,
        tau: f64,
        lambda: f64,
        beta: f64,
    ) -> AffineForm {
        let d = self.dim();
        let f = self.kind.forcing_index();
        let mut state = vec![0.0; d];
        let mut intensity = 0.0;
        for (w, rate) in kernel.terms() {
            for j in 0..d {
                let nu = self.eigenvalues[j];
                let b = w * nu * self.u[(comp, j)];
                let e = b * dd1(rate, nu, tau);
                for (m, s) in state.iter_mut().enumerate() {
                    *s += e * self.u_inv[(j, m)];
                }
                intensity += b * self.u_inv[(j, f)] * dd2(rate, nu, -beta, tau);
            }
            if comp == f {
                intensity += w * dd1(rate, -beta, tau);
            }
        }
        AffineForm {
            state,
            intensity: intensity / (2.0 * lambda),
        }
    }
}

/// Closed-form matrix exponential `U diag(exp(nu t)) U^-1`.
pub fn matexp(dec: &SpectralDecomposition, t: f64) -> DMatrix<f64> {
    let d = dec.dim();
    let mut scaled = dec.u.clone();
    for j in 0..d {
        let e = (dec.eigenvalues[j] * t).exp();
        for i in 0..d {
            scaled[(i, j)] *= e;
        }
    }
    scaled * &dec.u_inv
}

/// Independent reference: scaling and squaring around a truncated Taylor series.
///
/// The scaled matrix has 1-norm at most 1/4, where 24 Taylor terms leave a
/// remainder far below double rounding; the squaring phase then loses at most
/// a few ulps per squaring relative to the result's magnitude.
pub fn matexp_oracle(m: &SystemMatrix, t: f64) -> DMatrix<f64> {
    expm_taylor(&m.entries, t)
}

pub fn expm_taylor(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let d = a.nrows();
    let at = a * t;
    let norm = (0..d)
        .map(|j| (0..d).map(|i| at[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.25 {
        (norm / 0.25).log2().ceil() as i32
    } else {
        0
    };
    let b = at / 2f64.powi(squarings);
    let mut sum = DMatrix::identity(d, d);
    let mut term = DMatrix::identity(d, d);
    for n in 1..=24 {
        term = &term * &b / n as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// A finite sum `sum_j w_j exp(r_j t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpSum {
    pub rates: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ExpSum {
    pub fn eval(&self, t: f64) -> f64 {
        self.rates
            .iter()
            .zip(&self.weights)
            .map(|(r, w)| w * (r * t).exp())
            .sum()
    }

    pub fn derivative(&self) -> ExpSum {
        ExpSum {
            rates: self.rates.clone(),
            weights: self.rates.iter().zip(&self.weights).map(|(r, w)| r * w).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> ExpSum {
        ExpSum {
            rates: self.rates.clone(),
            weights: self.weights.iter().map(|w| c * w).collect(),
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.weights.iter().copied().zip(self.rates.iter().copied())
    }
}

/// `int_0^tau exp(a (tau - s)) exp(b s) ds`, the first divided difference of
/// `x -> exp(x tau)`.
pub fn dd1(a: f64, b: f64, tau: f64) -> f64 {
    let x = (a - b) * tau;
    if x == 0.0 {
        return tau * (b * tau).exp();
    }
    (b * tau).exp() * tau * (x.exp_m1() / x)
}

/// `int_0^tau exp(a (tau - s)) dd1(b, c, s) ds`, the second divided difference.
pub fn dd2(a: f64, b: f64, c: f64, tau: f64) -> f64 {
    let mut pts = [a, b, c];
    pts.sort_by(|x, y| x.total_cmp(y));
    let [lo, mid, hi] = pts;
    if (hi - lo) * tau < 1e-3 {
        // Series around the mean: exp(m tau) sum_k tau^(k+2)/(k+2)! h_k(dev),
        // with h_k the complete homogeneous symmetric polynomials.
        let m = (lo + mid + hi) / 3.0;
        const K: usize = 12;
        let mut h = [0.0; K];
        h[0] = 1.0;
        for dev in [lo - m, mid - m, hi - m] {
            for k in 1..K {
                h[k] += dev * h[k - 1];
            }
        }
        let mut fact = 2.0;
        let mut pow = tau * tau;
        let mut s = 0.0;
        for (k, hk) in h.iter().enumerate() {
            s += pow / fact * hk;
            pow *= tau;
            fact *= (k + 3) as f64;
        }
        return (m * tau).exp() * s;
    }
    (dd1(hi, mid, tau) - dd1(mid, lo, tau)) / (hi - lo)
}

/// Which family of coefficient functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientKind {
    /// Aggregated N-player pair (Gbar, Hbar), four components each.
    GbarHbar,
    /// Individual N-player pair (G, H), three components each.
    GH,
    /// Mean-field aggregate K, three components.
    Ktilde,
    /// The scalar liquidation function R of the tracking representation.
    Liquidation,
}

/// Coefficient functions as explicit exponential sums.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub kind: CoefficientKind,
    /// Gbar, G, K or [R].
    pub primary: Vec<ExpSum>,
    /// Hbar or H; empty for the other kinds.
    pub secondary: Vec<ExpSum>,
    pub params: ModelParams,
    pub n_agents: usize,
}

impl CoefficientSet {
    pub fn eval_primary(&self, t: f64) -> Vec<f64> {
        self.primary.iter().map(|c| c.eval(t)).collect()
    }

    pub fn eval_secondary(&self, t: f64) -> Vec<f64> {
        self.secondary.iter().map(|c| c.eval(t)).collect()
    }

    /// Defining row vectors of the primary and secondary functions.
    pub fn defining_rows(&self) -> (Vec<f64>, Vec<f64>) {
        defining_rows(self.kind, &self.params)
    }
}

/// Row vectors that multiply the matrix exponential in the definitions.
pub fn defining_rows(kind: CoefficientKind, p: &ModelParams) -> (Vec<f64>, Vec<f64>) {
    let a = p.varrho / p.lambda;
    let b = -p.kappa / (2.0 * p.lambda);
    match kind {
        CoefficientKind::GbarHbar => (vec![a, b, -1.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]),
        CoefficientKind::GH => (vec![a, -1.0, 0.0], vec![0.0, 0.0, 1.0]),
        CoefficientKind::Ktilde => (vec![a, b, -1.0], vec![]),
        CoefficientKind::Liquidation => (vec![], vec![]),
    }
}

impl CoefficientKind {
    pub fn matrix_kind(self) -> Option<MatrixKind> {
        match self {
            CoefficientKind::GbarHbar => Some(MatrixKind::Fbar4),
            CoefficientKind::GH => Some(MatrixKind::F3),
            CoefficientKind::Ktilde => Some(MatrixKind::Btilde3),
            CoefficientKind::Liquidation => None,
        }
    }
}

/// `R(t) = a cosh(a t) + (varrho/lambda) sinh(a t)` with `a = sqrt(phi/lambda)`.
pub fn liquidation_function(p: &ModelParams) -> ExpSum {
    let a = (p.phi / p.lambda).sqrt();
    let c = p.varrho / p.lambda;
    ExpSum {
        rates: vec![a, -a],
        weights: vec![(a + c) / 2.0, (a - c) / 2.0],
    }
}

/// Coefficient functions from the appendix closed forms.
///
/// Two printed formulas are corrected here: the third term of the third
/// aggregated G-component carries `+gamma*kappa*nu`, and the third individual
/// G-component has the prefactor `N prod(nu_i - rho) / (gamma kappa lambda rho)`.
/// Both corrections are what the definitional products `row * exp(M t)` give.
pub fn coefficients(kind: CoefficientKind, params: &ModelParams, n_agents: usize) -> Result<CoefficientSet> {
    params.ensure_valid()?;
    if kind == CoefficientKind::Liquidation {
        return Ok(CoefficientSet {
            kind,
            primary: vec![liquidation_function(params)],
            secondary: vec![],
            params: *params,
            n_agents,
        });
    }
    let mk = kind.matrix_kind().expect("matrix-backed kind");
    let dec = decompose(&build_matrix(mk, params, n_agents)?)?;
    Ok(coefficients_from(kind, &dec))
}

/// Appendix closed forms evaluated on a given decomposition.
pub fn coefficients_from(kind: CoefficientKind, dec: &SpectralDecomposition) -> CoefficientSet {
    let ModelParams {
        lambda: l,
        gamma: g,
        kappa: k,
        rho: r,
        varrho: vr,
        phi: f,
        ..
    } = dec.params;
    let n = dec.n_agents as f64;
    let nu = &dec.eigenvalues;
    let lag = lagrange_denominators(nu);
    let pm_i = shifted_products_except(nu, -r);
    let pp_i = shifted_products_except(nu, r);
    let pm: f64 = nu.iter().map(|v| v - r).product();
    let pp: f64 = nu.iter().map(|v| v + r).product();

    let sum = |w: &dyn Fn(usize) -> f64| ExpSum {
        rates: nu.clone(),
        weights: (0..nu.len()).map(|i| w(i) / lag[i]).collect(),
    };
    let (primary, secondary) = match kind {
        CoefficientKind::GbarHbar => {
            let c = |i: usize| {
                let v = nu[i];
                2.0 * vr * (v + r) + g * k * v + 2.0 * l * v * (v + r)
            };
            let primary = vec![
                sum(&|i| f / (2.0 * l * l) * (nu[i] - r) * c(i) / nu[i]),
                sum(&|i| 1.0 / (4.0 * g * l * r * r) * c(i) * (nu[i] - r) * pp_i[i]),
                sum(&|i| -1.0 / (2.0 * l) * (nu[i] - r) * c(i)),
                sum(&|i| n * pm / (4.0 * g * k * l * r * r) * c(i)),
            ];
            let secondary = vec![
                sum(&|i| -g * k * f / (n * l) * (nu[i] + r)),
                sum(&|i| -k * pp / (2.0 * n * r * r) * nu[i]),
                sum(&|i| g * k / n * nu[i] * (nu[i] + r)),
                sum(&|i| -1.0 / (2.0 * r * r) * nu[i] * (nu[i] + r) * pm_i[i]),
            ];
            (primary, secondary)
        }
        CoefficientKind::GH => {
            let c = |i: usize| vr + l * nu[i];
            let primary = vec![
                sum(&|i| f / (l * l) * (nu[i] - r) * c(i) / nu[i]),
                sum(&|i| -1.0 / l * (nu[i] - r) * c(i)),
                sum(&|i| -n * pm / (g * k * l * r) * c(i)),
            ];
            let secondary = vec![
                sum(&|_| -g * k * f / (n * l)),
                sum(&|i| g * k / n * nu[i]),
                sum(&|i| nu[i] * pm_i[i]),
            ];
            (primary, secondary)
        }
        CoefficientKind::Ktilde => {
            let c = |i: usize| {
                let v = nu[i];
                2.0 * vr * (v + r) + k * g * v + 2.0 * l * v * (v + r)
            };
            let primary = vec![
                sum(&|i| f / (2.0 * l * l) * c(i) / nu[i]),
                sum(&|i| 1.0 / (2.0 * g * l * r) * c(i) * pp_i[i]),
                sum(&|i| -1.0 / (2.0 * l) * c(i)),
            ];
            (primary, vec![])
        }
        CoefficientKind::Liquidation => (vec![liquidation_function(&dec.params)], vec![]),
    };
    CoefficientSet {
        kind,
        primary,
        secondary,
        params: dec.params,
        n_agents: dec.n_agents,
    }
}

/// Default floor for denominators of the feedback maps.
pub const DEFAULT_FLOOR: f64 = 1e-8;

/// Feedback coefficients at one time to maturity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeedbackScalars {
    Aggregate { v0: f64, v1: f64, v2: f64, v3: f64 },
    Agent { v0: f64, v1: f64, v2: f64 },
    MeanField { w1: f64, w2: f64 },
    Liquidation { r: f64, r_prime: f64, ratio: f64 },
}

fn floor_check(assumption: &'static str, quantity: &'static str, value: f64, floor: f64, tau: f64) -> Result<()> {
    if value.abs() < floor || !value.is_finite() {
        Err(Error::Assumption {
            assumption,
            quantity,
            value: value.abs(),
            floor,
            tau,
        })
    } else {
        Ok(())
    }
}

/// Feedback scalars at time to maturity `tau`.
pub fn feedback_scalars(coeffs: &CoefficientSet, tau: f64, floor: f64) -> Result<FeedbackScalars> {
    match coeffs.kind {
        CoefficientKind::GbarHbar => {
            let g = coeffs.eval_primary(tau);
            let h = coeffs.eval_secondary(tau);
            floor_check("aggregate solvability", "Gbar3", g[2], floor, tau)?;
            floor_check("aggregate solvability", "Hbar4", h[3], floor, tau)?;
            floor_check("aggregate solvability", "Gbar3*Hbar4 - Gbar4*Hbar3", g[2] * h[3] - g[3] * h[2], floor, tau)?;
            let v3 = g[3] / g[2];
            Ok(FeedbackScalars::Aggregate {
                v0: 1.0 / (1.0 - v3 * h[2] / h[3]),
                v1: v3 * h[0] / h[3] - g[0] / g[2],
                v2: v3 * h[1] / h[3] - g[1] / g[2],
                v3,
            })
        }
        CoefficientKind::GH => {
            let g = coeffs.eval_primary(tau);
            let h = coeffs.eval_secondary(tau);
            floor_check("individual solvability", "G2", g[1], floor, tau)?;
            floor_check("individual solvability", "H3", h[2], floor, tau)?;
            floor_check("individual solvability", "G2*H3 - G3*H2", g[1] * h[2] - g[2] * h[1], floor, tau)?;
            let v2 = g[2] / g[1];
            Ok(FeedbackScalars::Agent {
                v0: 1.0 / (1.0 - v2 * h[1] / h[2]),
                v1: v2 * h[0] / h[2] - g[0] / g[1],
                v2,
            })
        }
        CoefficientKind::Ktilde => {
            let kv = coeffs.eval_primary(tau);
            floor_check("mean-field condition", "K3", kv[2], floor, tau)?;
            Ok(FeedbackScalars::MeanField {
                w1: -kv[0] / kv[2],
                w2: -kv[1] / kv[2],
            })
        }
        CoefficientKind::Liquidation => {
            let rf = &coeffs.primary[0];
            let r = rf.eval(tau);
            floor_check("liquidation function", "R", r, floor, tau)?;
            let r_prime = rf.derivative().eval(tau);
            Ok(FeedbackScalars::Liquidation {
                r,
                r_prime,
                ratio: r_prime / r,
            })
        }
    }
}

/// One infimum entry of the assumption report.
#[derive(Debug, Clone, PartialEq)]
pub struct InfimumEntry {
    pub name: &'static str,
    pub infimum: f64,
    pub argmin_tau: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub n_agents: usize,
    pub param_violations: Vec<String>,
    pub floor: f64,
    pub fbar_real_distinct: bool,
    pub f_real_distinct: bool,
    pub btilde_real_distinct: bool,
    pub entries: Vec<InfimumEntry>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.param_violations.is_empty()
            && self.fbar_real_distinct
            && self.f_real_distinct
            && self.btilde_real_distinct
            && self.entries.iter().all(|e| e.passed)
    }

    pub fn entry(&self, name: &str) -> Option<&InfimumEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Evaluation points: the grid's times to maturity plus a tenfold refinement
/// of the first and last tenth of the grid.
pub fn assumption_points(grid: &TimeGrid) -> Vec<f64> {
    let m = grid.n_steps;
    let edge = (m / 10).max(1);
    let mut pts: Vec<f64> = (0..=m).map(|k| grid.tau(k)).collect();
    for k in (0..edge).chain(m.saturating_sub(edge)..m) {
        for s in 1..10 {
            pts.push(grid.tau(k) - grid.dt * s as f64 / 10.0);
        }
    }
    pts.retain(|t| *t >= 0.0);
    pts.sort_by(|a, b| a.total_cmp(b));
    pts.dedup();
    pts
}

fn infimum(name: &'static str, pts: &[f64], floor: f64, f: impl Fn(f64) -> f64) -> InfimumEntry {
    let mut inf = f64::INFINITY;
    let mut arg = f64::NAN;
    for &t in pts {
        let v = f(t).abs();
        let v = if v.is_finite() { v } else { 0.0 };
        if v < inf {
            inf = v;
            arg = t;
        }
    }
    InfimumEntry {
        name,
        infimum: inf,
        argmin_tau: arg,
        passed: inf >= floor,
    }
}

fn failed_entry(name: &'static str) -> InfimumEntry {
    InfimumEntry {
        name,
        infimum: f64::NAN,
        argmin_tau: f64::NAN,
        passed: false,
    }
}

/// Grid evaluation of the infima required by the two finite-game assumptions
/// and the mean-field precondition.
pub fn check_assumptions(params: &ModelParams, n_agents: usize, grid: &TimeGrid, floor: f64) -> AssumptionReport {
    let pts = assumption_points(grid);
    let mut entries = Vec::new();
    let spectrum_ok = |kind| {
        build_matrix_unchecked(kind, params, n_agents)
            .and_then(|m| decompose(&m))
            .is_ok()
    };
    let agg = coefficients(CoefficientKind::GbarHbar, params, n_agents);
    let fbar_ok = spectrum_ok(MatrixKind::Fbar4);
    match &agg {
        Ok(c) => {
            let ev = |t: f64| (c.eval_primary(t), c.eval_secondary(t));
            entries.push(infimum("Gbar3*Hbar4 - Gbar4*Hbar3", &pts, floor, |t| {
                let (g, h) = ev(t);
                g[2] * h[3] - g[3] * h[2]
            }));
            entries.push(infimum("Gbar3", &pts, floor, |t| c.primary[2].eval(t)));
            entries.push(infimum("Hbar4", &pts, floor, |t| c.secondary[3].eval(t)));
        }
        Err(_) => {
            entries.push(failed_entry("Gbar3*Hbar4 - Gbar4*Hbar3"));
            entries.push(failed_entry("Gbar3"));
            entries.push(failed_entry("Hbar4"));
        }
    }
    let ind = coefficients(CoefficientKind::GH, params, n_agents);
    let f_ok = spectrum_ok(MatrixKind::F3);
    match &ind {
        Ok(c) => {
            entries.push(infimum("G2*H3 - G3*H2", &pts, floor, |t| {
                let g = c.eval_primary(t);
                let h = c.eval_secondary(t);
                g[1] * h[2] - g[2] * h[1]
            }));
            entries.push(infimum("G2", &pts, floor, |t| c.primary[1].eval(t)));
            entries.push(infimum("H3", &pts, floor, |t| c.secondary[2].eval(t)));
        }
        Err(_) => {
            entries.push(failed_entry("G2*H3 - G3*H2"));
            entries.push(failed_entry("G2"));
            entries.push(failed_entry("H3"));
        }
    }
    let mf = coefficients(CoefficientKind::Ktilde, params, 1);
    let b_ok = spectrum_ok(MatrixKind::Btilde3);
    match &mf {
        Ok(c) => entries.push(infimum("K3", &pts, floor, |t| c.primary[2].eval(t))),
        Err(_) => entries.push(failed_entry("K3")),
    }
    AssumptionReport {
        n_agents,
        param_violations: params.violations(),
        floor,
        fbar_real_distinct: fbar_ok,
        f_real_distinct: f_ok,
        btilde_real_distinct: b_ok,
        entries,
    }
}
