use std::sync::Arc;

use impact_game::finite::*;
use impact_game::mfg::{MfgSolver, Quadrature};
use impact_game::model::{build_time_grid, ModelParams};
use impact_game::signal::{simulate_ou, OuParams};
use proptest::prelude::*;

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn agent_average_matches_aggregate() {
    let p = ModelParams::small_horizon();
    let ou = OuParams::illustration();
    let fine = build_time_grid(p.horizon, 800).unwrap();
    let base = simulate_ou(&ou, &fine, 9);
    let mut gaps = Vec::new();
    for factor in [4, 2, 1] {
        let sig = Arc::new(base.coarsen(factor).unwrap());
        let s = FiniteSolver::new(&p, 4, &ou, &sig.grid).unwrap();
        let agg = s.aggregate(1.0, sig).unwrap();
        let paths: Vec<_> = [2.0, 0.0, 1.5, 0.5].iter().map(|x0| s.agent_path(&agg, *x0).unwrap()).collect();
        let avg: Vec<f64> = (0..agg.u.len())
            .map(|k| paths.iter().map(|p| p.u[k]).sum::<f64>() / 4.0)
            .collect();
        gaps.push(max_gap(&avg, &agg.u));
    }
    // The discrete feedback maps are consistent, so the identity holds at
    // round-off on every grid rather than only in the limit.
    assert!(gaps.iter().all(|g| *g <= 1e-12), "{gaps:?}");
}

#[test]
fn single_agent_coincides_with_aggregate() {
    let p = ModelParams::illustration();
    let ou = OuParams::illustration();
    let g = build_time_grid(p.horizon, 2000).unwrap();
    let s = FiniteSolver::new(&p, 1, &ou, &g).unwrap();
    let agg = s.aggregate(3.0, Arc::new(simulate_ou(&ou, &g, 4))).unwrap();
    let a = s.agent_path(&agg, 3.0).unwrap();
    let gap = max_gap(&a.u, &agg.u);
    assert!(gap < 1e-2, "{gap:e}");
}

#[test]
fn terminal_residuals_are_first_order() {
    let p = ModelParams::small_horizon();
    let ou = OuParams::illustration();
    let fine = build_time_grid(p.horizon, 1600).unwrap();
    let base = simulate_ou(&ou, &fine, 2);
    let mut ru = Vec::new();
    let mut rz = Vec::new();
    let mut ra = Vec::new();
    for factor in [4, 2, 1] {
        let sig = Arc::new(base.coarsen(factor).unwrap());
        let s = FiniteSolver::new(&p, 5, &ou, &sig.grid).unwrap();
        let agg = s.aggregate(1.0, sig).unwrap();
        ru.push(agg.terminal_residual_u);
        rz.push(agg.terminal_residual_z);
        ra.push(s.agent_path(&agg, 2.0).unwrap().terminal_residual);
    }
    for r in [&ru, &rz, &ra] {
        for w in r.windows(2) {
            assert!((1.7..=2.3).contains(&(w[0] / w[1])), "{r:?}");
        }
    }
}

#[test]
fn trapezoid_oracle_agrees_with_closed_form() {
    let p = ModelParams::illustration();
    let ou = OuParams::illustration();
    let mut gaps = Vec::new();
    for m in [200, 400] {
        let g = build_time_grid(p.horizon, m).unwrap();
        let s = FiniteSolver::new(&p, 3, &ou, &g).unwrap();
        let agg = s.aggregate(2.0, Arc::new(simulate_ou(&ou, &g, 1))).unwrap();
        let c = s.agent_path_with(&agg, -1.0, Quadrature::ClosedForm).unwrap();
        let t = s.agent_path_with(&agg, -1.0, Quadrature::GridTrapezoid).unwrap();
        gaps.push(max_gap(&c.u, &t.u));
    }
    assert!(gaps[1] < 1e-2 && gaps[0] / gaps[1] > 3.0, "{gaps:?}");
}

#[test]
fn large_population_approaches_mean_field() {
    let p = ModelParams::small_horizon();
    let ou = OuParams::illustration();
    let g = build_time_grid(p.horizon, 200).unwrap();
    let sig = Arc::new(simulate_ou(&ou, &g, 3));
    let mfg = MfgSolver::new(&p, &ou, &g).unwrap();
    let m_agg = mfg.aggregate(1.0, sig.clone()).unwrap();
    let mut last = f64::INFINITY;
    for n in [10, 100, 10_000] {
        let s = FiniteSolver::new(&p, n, &ou, &g).unwrap();
        let agg = s.aggregate(1.0, sig.clone()).unwrap();
        let gap = max_gap(&agg.u, &m_agg.nu);
        assert!(gap < last, "N={n}: {gap} !< {last}");
        last = gap;
    }
    assert!(last < 1e-4);
}

#[test]
fn conditional_distortion_matches_deterministic_run() {
    let p = ModelParams::small_horizon();
    let ou = OuParams {
        iota: 1.0,
        beta: 0.1,
        sigma: 0.0,
    };
    let mut errs = Vec::new();
    for m in [400, 800] {
        let g = build_time_grid(p.horizon, m).unwrap();
        let s = FiniteSolver::new(&p, 6, &ou, &g).unwrap();
        let agg = s.aggregate(1.0, Arc::new(simulate_ou(&ou, &g, 0))).unwrap();
        let pred = s.conditional_state(agg.state(0), g.times[m / 2], agg.signal.intensity[0]);
        errs.push((pred[1] - agg.y[m / 2]).abs());
    }
    assert!(errs[1] < 0.7 * errs[0], "{errs:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn prop_euler_recursions(n in 1usize..40, x0 in -10.0f64..10.0, seed in 0u64..100) {
        let p = ModelParams::small_horizon();
        let ou = OuParams::illustration();
        let g = build_time_grid(p.horizon, 50).unwrap();
        let s = FiniteSolver::new(&p, n, &ou, &g).unwrap();
        let agg = s.aggregate(x0, Arc::new(simulate_ou(&ou, &g, seed))).unwrap();
        for k in 0..g.n_steps {
            prop_assert_eq!(agg.x[k + 1], agg.x[k] - g.dt * agg.u[k]);
            prop_assert_eq!(agg.y[k + 1], agg.y[k] + g.dt * (-p.rho * agg.y[k] + p.gamma * agg.u[k]));
        }
        let a = s.agent_path(&agg, -x0).unwrap();
        for k in 0..g.n_steps {
            prop_assert_eq!(a.x[k + 1], a.x[k] - g.dt * a.u[k]);
        }
    }

    #[test]
    fn prop_strategy_linear_in_inventory(x0 in -10.0f64..10.0) {
        let p = ModelParams::small_horizon().with_y0(0.0);
        let ou = OuParams::zero();
        let g = build_time_grid(p.horizon, 50).unwrap();
        let s = FiniteSolver::new(&p, 3, &ou, &g).unwrap();
        let sig = Arc::new(impact_game::signal::zero_signal(&g));
        let a1 = s.aggregate(1.0, sig.clone()).unwrap();
        let ax = s.aggregate(x0, sig).unwrap();
        for k in 0..=g.n_steps {
            prop_assert!((ax.u[k] - x0 * a1.u[k]).abs() <= 1e-10 * a1.u[k].abs().max(1.0) * x0.abs().max(1.0));
        }
    }
}
