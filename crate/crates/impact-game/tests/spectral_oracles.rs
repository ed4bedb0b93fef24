//! Spectral layer checked against independent oracles: a Faddeev-LeVerrier
//! characteristic polynomial, nalgebra's numeric inverse and the Taylor
//! scaling-and-squaring exponential.

use approx::assert_relative_eq;
use impact_game::model::{build_time_grid, ModelParams};
use impact_game::spectral::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Coefficients of `det(x I - A)`, highest degree first.
fn faddeev_leverrier(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut coeffs = vec![0.0; n + 1];
    coeffs[0] = 1.0;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        m = a * &m + DMatrix::identity(n, n) * coeffs[k - 1];
        coeffs[k] = -(a * &m).trace() / k as f64;
    }
    coeffs
}

fn rel_max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

const KINDS: [MatrixKind; 3] = [MatrixKind::Fbar4, MatrixKind::F3, MatrixKind::Btilde3];

fn arb_params() -> impl Strategy<Value = ModelParams> {
    (0.1f64..3.0, 0.1f64..3.0, 0.1f64..3.0, 0.1f64..3.0, 0.5f64..20.0, 0.01f64..1.0, 0.1f64..5.0).prop_map(
        |(lambda, gamma, kappa, rho, varrho, phi, horizon)| ModelParams {
            lambda,
            gamma,
            kappa,
            rho,
            varrho,
            phi,
            horizon,
            y0: 1.0,
        },
    )
}

#[test]
fn characteristic_polynomials_match_oracle_at_illustration() {
    for n in [1, 2, 5, 10, 100] {
        for kind in KINDS {
            let m = build_matrix(kind, &ModelParams::illustration(), n).unwrap();
            let closed = characteristic_coefficients(&m);
            let oracle = faddeev_leverrier(&m.entries);
            for (c, o) in closed.iter().zip(&oracle) {
                assert!((c - o).abs() <= 1e-12 * o.abs().max(1.0), "{kind:?} N={n}: {closed:?} vs {oracle:?}");
            }
        }
    }
}

#[test]
fn btilde_cubic_at_illustration() {
    let m = build_matrix(MatrixKind::Btilde3, &ModelParams::illustration(), 1).unwrap();
    assert_eq!(characteristic_coefficients(&m), vec![1.0, 2.0, -0.2, -0.2]);
}

#[test]
fn decompositions_satisfy_contracts() {
    let p = ModelParams::illustration();
    for n in [1, 2, 5, 10, 100] {
        for kind in KINDS {
            let m = build_matrix(kind, &p, n).unwrap();
            let d = decompose(&m).unwrap();
            assert!(d.inverse_residual() <= 1e-10, "{kind:?} N={n}: {}", d.inverse_residual());
            assert!(d.reconstruction_residual(&m) <= 1e-9, "{kind:?} N={n}");
            let numeric = d.u.clone().try_inverse().unwrap();
            assert!(
                rel_max_diff(&d.u_inv, &numeric) <= 1e-10,
                "explicit inverse differs from numeric inverse for {kind:?} N={n}"
            );
            assert!(d.eigenvalues.windows(2).all(|w| w[0] < w[1]));
        }
    }
}

#[test]
fn vieta_relations() {
    let p = ModelParams::illustration();
    let (l, g, k, r, f) = (p.lambda, p.gamma, p.kappa, p.rho, p.phi);
    for n in [1usize, 2, 5, 10, 100] {
        let nn = n as f64;
        let d = decompose(&build_matrix(MatrixKind::Fbar4, &p, n).unwrap()).unwrap();
        let sum: f64 = d.eigenvalues.iter().sum();
        let prod: f64 = d.eigenvalues.iter().product();
        assert_relative_eq!(sum, -(nn - 1.0) * k * g / (2.0 * nn * l), epsilon = 1e-9);
        assert_relative_eq!(prod, r * r * f / l, max_relative = 1e-9);
    }
    let d = decompose(&build_matrix(MatrixKind::Btilde3, &p, 1).unwrap()).unwrap();
    assert_relative_eq!(d.eigenvalues.iter().sum::<f64>(), -(2.0 * l * r + g * k) / (2.0 * l), epsilon = 1e-10);
    assert_relative_eq!(d.eigenvalues.iter().product::<f64>(), r * f / l, epsilon = 1e-10);
    let d = decompose(&build_matrix(MatrixKind::F3, &p, 1).unwrap()).unwrap();
    assert_relative_eq!(d.eigenvalues.iter().sum::<f64>(), 2.0, epsilon = 1e-12);
    for nu in &d.eigenvalues {
        let c = characteristic_coefficients(&build_matrix(MatrixKind::F3, &p, 1).unwrap());
        let res = nu.powi(3) + c[1] * nu * nu + c[2] * nu + c[3];
        assert!(res.abs() <= 1e-10 * nu.abs().powi(3).max(1.0));
    }
}

#[test]
fn matexp_matches_oracle_and_semigroup() {
    let p = ModelParams::illustration();
    for n in [1, 2, 10, 100] {
        for kind in KINDS {
            let m = build_matrix(kind, &p, n).unwrap();
            let d = decompose(&m).unwrap();
            let eye = DMatrix::identity(kind.dim(), kind.dim());
            assert!((matexp(&d, 0.0) - &eye).amax() <= 1e-12);
            for t in [0.01, 0.1, 1.0, p.horizon] {
                let diff = rel_max_diff(&matexp(&d, t), &matexp_oracle(&m, t));
                assert!(diff <= 1e-9, "{kind:?} N={n} t={t}: {diff:e}");
            }
        }
    }
    let d = decompose(&build_matrix(MatrixKind::Fbar4, &p, 5).unwrap()).unwrap();
    let lhs = matexp(&d, 1.0);
    let rhs = matexp(&d, 0.3) * matexp(&d, 0.7);
    assert!(rel_max_diff(&lhs, &rhs) <= 1e-9);
}

#[test]
fn oracle_trivial_cases() {
    let zero = DMatrix::<f64>::zeros(3, 3);
    assert_eq!(expm_taylor(&zero, 4.0), DMatrix::identity(3, 3));
    let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, -1.0, 2.0]));
    let e = expm_taylor(&diag, 1.0);
    for (i, v) in [0.5f64, -1.0, 2.0].iter().enumerate() {
        assert_relative_eq!(e[(i, i)], v.exp(), max_relative = 1e-14);
    }
    let mut nil = DMatrix::<f64>::zeros(3, 3);
    nil[(0, 1)] = 1.0;
    nil[(1, 2)] = 1.0;
    let e = expm_taylor(&nil, 1.0);
    let want = DMatrix::identity(3, 3) + &nil + &nil * &nil / 2.0;
    assert!((e - want).amax() < 1e-15);
}

fn check_coefficients_against_oracle(kind: CoefficientKind, p: &ModelParams, n: usize, times: &[f64]) {
    let set = coefficients(kind, p, n).unwrap();
    let m = build_matrix(kind.matrix_kind().unwrap(), p, n).unwrap();
    let (r1, r2) = set.defining_rows();
    for &t in times {
        let q = matexp_oracle(&m, t);
        for (row, funcs) in [(&r1, &set.primary), (&r2, &set.secondary)] {
            if row.is_empty() {
                continue;
            }
            let rv = nalgebra::RowDVector::from_row_slice(row) * &q;
            let scale = rv.amax().max(1e-300);
            for (j, f) in funcs.iter().enumerate() {
                let got = f.eval(t);
                assert!(
                    (got - rv[j]).abs() <= 1e-8 * scale,
                    "{kind:?} N={n} t={t} component {j}: {got} vs {}",
                    rv[j]
                );
            }
        }
    }
}

#[test]
fn appendix_formulas_equal_definitions() {
    let p = ModelParams::illustration();
    let times: Vec<f64> = (0..10).map(|i| 0.37 + 0.96 * i as f64).collect();
    for n in [1, 2, 5, 10, 100] {
        check_coefficients_against_oracle(CoefficientKind::GbarHbar, &p, n, &times);
        check_coefficients_against_oracle(CoefficientKind::GH, &p, n, &times);
    }
    check_coefficients_against_oracle(CoefficientKind::Ktilde, &p, 1, &times);
    check_coefficients_against_oracle(CoefficientKind::GH, &p, 5, &[0.1, 1.0, 5.0]);
}

#[test]
fn generic_row_functions_equal_appendix_forms() {
    let p = ModelParams::small_horizon();
    for kind in [CoefficientKind::GbarHbar, CoefficientKind::GH, CoefficientKind::Ktilde] {
        let d = decompose(&build_matrix(kind.matrix_kind().unwrap(), &p, 8).unwrap()).unwrap();
        let set = coefficients_from(kind, &d);
        let (r1, _) = set.defining_rows();
        let generic = d.row_functions(&r1);
        for t in [0.0, 0.03, 0.1] {
            for (a, b) in generic.iter().zip(&set.primary) {
                assert!((a.eval(t) - b.eval(t)).abs() <= 1e-10 * b.eval(t).abs().max(1.0));
            }
        }
    }
}

#[test]
fn coefficient_sets_start_at_defining_rows() {
    let p = ModelParams::illustration();
    let k = coefficients(CoefficientKind::Ktilde, &p, 1).unwrap();
    let k0 = k.eval_primary(0.0);
    for (a, b) in k0.iter().zip([20.0, -1.0, -1.0]) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
    for n in [1, 7] {
        let c = coefficients(CoefficientKind::GbarHbar, &p, n).unwrap();
        let (g, h) = c.defining_rows();
        for (a, b) in c.eval_primary(0.0).iter().zip(&g) {
            assert!((a - b).abs() <= 1e-11 * b.abs().max(1.0));
        }
        for (a, b) in c.eval_secondary(0.0).iter().zip(&h) {
            assert!((a - b).abs() <= 1e-11);
        }
        let c = coefficients(CoefficientKind::GH, &p, n).unwrap();
        let (g, h) = c.defining_rows();
        for (a, b) in c.eval_primary(0.0).iter().zip(&g) {
            assert!((a - b).abs() <= 1e-11 * b.abs().max(1.0));
        }
        for (a, b) in c.eval_secondary(0.0).iter().zip(&h) {
            assert!((a - b).abs() <= 1e-11);
        }
    }
}

#[test]
fn liquidation_ratio_positive_on_grid() {
    let p = ModelParams::illustration();
    let c = coefficients(CoefficientKind::Liquidation, &p, 1).unwrap();
    let g = build_time_grid(p.horizon, 500).unwrap();
    for k in 0..g.n_steps {
        match feedback_scalars(&c, g.tau(k), DEFAULT_FLOOR).unwrap() {
            FeedbackScalars::Liquidation { ratio, .. } => assert!(ratio > 0.0),
            _ => unreachable!(),
        }
    }
}

#[test]
fn assumptions_at_illustration_and_short_horizon() {
    let p = ModelParams::illustration();
    let g = build_time_grid(p.horizon, 200).unwrap();
    let rep = check_assumptions(&p, 5, &g, DEFAULT_FLOOR);
    assert_eq!(rep.entries.len(), 7);
    assert!(rep.all_passed(), "{rep:?}");

    let short = p.with_horizon(1e-6);
    let g = build_time_grid(short.horizon, 10).unwrap();
    let rep = check_assumptions(&short, 5, &g, DEFAULT_FLOOR);
    for name in ["Gbar3", "Hbar4", "G2", "H3", "K3"] {
        assert_relative_eq!(rep.entry(name).unwrap().infimum, 1.0, max_relative = 1e-4);
    }
}

#[test]
fn sign_flipped_distortion_gives_complex_spectrum() {
    let p = ModelParams {
        kappa: -1.0,
        ..ModelParams::illustration()
    };
    let g = build_time_grid(p.horizon, 20).unwrap();
    let rep = check_assumptions(&p, 5, &g, DEFAULT_FLOOR);
    assert!(!rep.fbar_real_distinct);
    assert!(!rep.all_passed());
    let m = build_matrix_unchecked(MatrixKind::Fbar4, &p, 5).unwrap();
    assert_eq!(decompose(&m).unwrap_err(), impact_game::Error::ComplexEigenvalues);
}

#[test]
fn feedback_scalars_floor_names_assumption() {
    let p = ModelParams::illustration();
    let c = coefficients(CoefficientKind::GH, &p, 3).unwrap();
    let err = feedback_scalars(&c, 1.0, 1e300).unwrap_err();
    assert!(err.to_string().contains("individual solvability"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_characteristic_polynomial(p in arb_params(), n in 1usize..200) {
        for kind in KINDS {
            let m = build_matrix(kind, &p, n).unwrap();
            let closed = characteristic_coefficients(&m);
            let oracle = faddeev_leverrier(&m.entries);
            for (c, o) in closed.iter().zip(&oracle) {
                prop_assert!((c - o).abs() <= 1e-10 * o.abs().max(1.0));
            }
        }
    }

    #[test]
    fn prop_semigroup_and_identity(p in arb_params(), n in 1usize..50, s in 0.0f64..1.0, t in 0.0f64..1.0) {
        for kind in KINDS {
            let m = build_matrix(kind, &p, n).unwrap();
            if let Ok(d) = decompose(&m) {
                let eye = DMatrix::identity(kind.dim(), kind.dim());
                prop_assert!((matexp(&d, 0.0) - eye).amax() <= 1e-12);
                let st = rel_max_diff(&(matexp(&d, s) * matexp(&d, t)), &matexp(&d, s + t));
                prop_assert!(st <= 1e-9, "{:?}: {:e}", kind, st);
            }
        }
    }

    #[test]
    fn prop_cubic_roots_have_small_residual(p in arb_params(), n in 1usize..100) {
        for kind in [MatrixKind::F3, MatrixKind::Btilde3] {
            let m = build_matrix(kind, &p, n).unwrap();
            let c = characteristic_coefficients(&m);
            let roots = solve_cubic_trig(c[1], c[2], c[3]).unwrap();
            for x in roots {
                let res = x.powi(3) + c[1] * x * x + c[2] * x + c[3];
                prop_assert!(res.abs() <= 1e-10 * x.abs().powi(3).max(1.0));
            }
        }
    }

    #[test]
    fn prop_offset_linear_in_kernel(c1 in -3.0f64..3.0, c2 in -3.0f64..3.0, nu1 in -2.0f64..2.0, nu2 in -2.0f64..2.0, beta in 0.0f64..1.0) {
        use impact_game::signal::expkernel_offset;
        let k1 = ExpSum { rates: vec![nu1], weights: vec![1.0] };
        let k2 = ExpSum { rates: vec![nu2], weights: vec![1.0] };
        let both = ExpSum { rates: vec![nu1, nu2], weights: vec![c1, c2] };
        let lhs = expkernel_offset(0.7, &both, 0.2, 1.5, beta);
        let rhs = c1 * expkernel_offset(0.7, &k1, 0.2, 1.5, beta) + c2 * expkernel_offset(0.7, &k2, 0.2, 1.5, beta);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }
}
