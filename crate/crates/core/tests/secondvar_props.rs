use hoferlab::linflow::{closure_times, HessianPath};
use hoferlab::secondvar::*;
use nalgebra::{DMatrix, Matrix2};
use proptest::prelude::*;
use std::f64::consts::PI;

fn rotation(t: f64) -> Matrix2<f64> {
    // e^{−2πJt} with J = [[0,−1],[1,0]]
    let a = -2.0 * PI * t;
    Matrix2::new(a.cos(), -a.sin(), a.sin(), a.cos())
}

#[test]
fn trichotomy_for_scalar_metric() {
    for n in [64, 128] {
        let under = q_form_matrix(&HessianPath::scalar(2, 2.0 * PI * 0.9).unwrap(), 1.0, n, ExtremumSign::Minimum).unwrap();
        assert_eq!((under.index, under.nullity), (0, 0));
        let expected = (1.0 / 0.9 - 1.0) / (2.0 * PI);
        assert!((under.smallest[0] - expected).abs() <= 1e-6 * expected.abs(), "{} vs {expected}", under.smallest[0]);

        let at = q_form_matrix(&HessianPath::scalar(2, 2.0 * PI).unwrap(), 1.0, n, ExtremumSign::Minimum).unwrap();
        assert_eq!((at.index, at.nullity), (0, 2));

        let over = q_form_matrix(&HessianPath::scalar(2, 2.0 * PI * 1.1).unwrap(), 1.0, n, ExtremumSign::Minimum).unwrap();
        assert!(over.index >= 1);
        assert_eq!(over.nullity, 0);
    }
}

#[test]
fn null_vectors_solve_the_linear_equation() {
    let b = HessianPath::scalar(2, 2.0 * PI).unwrap();
    let r = q_form_matrix(&b, 1.0, 64, ExtremumSign::Minimum).unwrap();
    for g in &r.null_vectors {
        let chk = nullspace_trajectory_check(&b, 1.0, g).unwrap();
        assert!(chk.residual <= 1e-6, "{}", chk.residual);
        // matches (I − e^{−2πJt}) v for the v read off at t = 1/2, where g = 2v
        let half = g.value(0.5);
        let v = [half[0] / 2.0, half[1] / 2.0];
        for k in 0..=20 {
            let t = k as f64 / 20.0;
            let m = Matrix2::identity() - rotation(t);
            let want = m * nalgebra::Vector2::new(v[0], v[1]);
            let got = g.value(t);
            assert!((want[0] - got[0]).abs() < 1e-8 && (want[1] - got[1]).abs() < 1e-8);
        }
    }
}

#[test]
fn closed_form_family_is_null() {
    let b = HessianPath::scalar(2, 2.0 * PI).unwrap();
    let v = [0.3, -0.7];
    let g = TangentLoop::from_fn(
        1.0,
        2,
        move |t| {
            let m = Matrix2::identity() - rotation(t);
            let w = m * nalgebra::Vector2::new(v[0], v[1]);
            vec![w[0], w[1]]
        },
        move |t| {
            let a = 2.0 * PI * t;
            // d/dt of −e^{−2πJt} v
            let w = 2.0 * PI * nalgebra::Vector2::new(-a.sin() * v[0] + a.cos() * v[1], -a.cos() * v[0] - a.sin() * v[1]);
            vec![-w[0], -w[1]]
        },
    );
    let chk = nullspace_trajectory_check(&b, 1.0, &g).unwrap();
    assert!(chk.residual < 1e-10);
    assert!(q_functional(&b, &g, ExtremumSign::Minimum).unwrap().abs() < 1e-10);
}

#[test]
fn conjugate_values_of_constant_metric() {
    let b = HessianPath::scalar(2, 4.0 * PI).unwrap();
    let rep = conjugate_values(&b, &ConjugateScan { points: 40, modes: 24, ..Default::default() }).unwrap();
    assert!(rep.index_monotone && rep.jumps_match_nullity);
    let ts: Vec<f64> = rep.values.iter().map(|v| v.t).collect();
    assert_eq!(ts.len(), 2, "{ts:?}");
    assert!((ts[0] - 0.5).abs() < 1e-8 && (ts[1] - 1.0).abs() < 1e-8);
    assert!(rep.values.iter().all(|v| v.nullity == 2));

    // off-grid crossing: 3π has one at t' = 2/3
    let b = HessianPath::scalar(2, 3.0 * PI).unwrap();
    let rep = conjugate_values(&b, &ConjugateScan { points: 16, modes: 24, ..Default::default() }).unwrap();
    assert_eq!(rep.values.len(), 1);
    assert!((rep.values[0].t - 2.0 / 3.0).abs() < 1e-8);
    assert_eq!(rep.values[0].nullity, 2);
    assert!(rep.jumps_match_nullity);
}

#[test]
fn sine_basis_agrees_on_index() {
    for c in [0.8, 1.3, 2.2] {
        let b = HessianPath::scalar(2, 2.0 * PI * c).unwrap();
        let a = q_form_matrix_with(&b, 1.0, 48, ExtremumSign::Minimum, Basis::IntegratedLegendre, DEFAULT_TOL_NULL).unwrap();
        let s = q_form_matrix_with(&b, 1.0, 48, ExtremumSign::Minimum, Basis::Sine, DEFAULT_TOL_NULL).unwrap();
        assert_eq!(a.index, s.index);
    }
}

#[test]
fn maximum_sign_mirrors_minimum() {
    // at a maximum B is negative; Q_max(B) = −Q_min(−B)
    let b = HessianPath::scalar(2, -2.0 * PI * 1.2).unwrap();
    let r = q_form_matrix(&b, 1.0, 40, ExtremumSign::Maximum).unwrap();
    let m = q_form_matrix(&HessianPath::scalar(2, 2.0 * PI * 1.2).unwrap(), 1.0, 40, ExtremumSign::Minimum).unwrap();
    assert_eq!(r.positive, m.index);
}

fn random_metric(a: [f64; 4], c: [f64; 4]) -> HessianPath {
    HessianPath::new(2, move |t| {
        let m = DMatrix::from_row_slice(2, 2, &[a[0] + c[0] * t, a[1] + c[1] * (3.0 * t).sin(), a[2] * t, a[3] + c[2] * t * t]);
        let mut s = &m.transpose() * &m * (2.0 * PI);
        s[(0, 0)] += 0.3 + c[3];
        s[(1, 1)] += 0.3;
        s
    })
    .unwrap()
}

#[test]
fn conjugate_values_match_closures_on_samples() {
    let b = random_metric([1.4, 0.3, -0.5, 1.1], [0.8, 0.4, 0.6, 0.5]);
    let rep = conjugate_values(&b, &ConjugateScan { points: 128, modes: 24, t_max: 1.0, ..Default::default() }).unwrap();
    let lf = closure_times(&b, 1.0, 1e-8).unwrap();
    let mut lt: Vec<f64> = lf.interior.iter().map(|c| c.t).collect();
    lt.extend(lf.boundary.iter().map(|c| c.t));
    let st: Vec<f64> = rep.values.iter().map(|v| v.t).collect();
    assert!(!st.is_empty());
    assert_eq!(st.len(), lt.len(), "{st:?} vs {lt:?}");
    for (a, b) in st.iter().zip(&lt) {
        assert!((a - b).abs() < 1.0 / 512.0, "{a} vs {b}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn quadratic_form_matches_functional(coef in proptest::collection::vec(-1.0f64..1.0, 16), a in proptest::array::uniform4(-1.0f64..1.0), c in proptest::array::uniform4(0.0f64..1.0)) {
        let b = random_metric(a, c);
        let n = 8;
        let (q, _) = assemble_q(&b, 0.8, n, ExtremumSign::Minimum, Basis::IntegratedLegendre).unwrap();
        let x = nalgebra::DVector::from_vec(coef.clone());
        let via_matrix = x.dot(&(&q * &x));
        let g = TangentLoop::Modes { basis: Basis::IntegratedLegendre, t_end: 0.8, dim: 2, modes: n, coeffs: coef };
        let direct = q_functional(&b, &g, ExtremumSign::Minimum).unwrap();
        prop_assert!((via_matrix - direct).abs() <= 1e-9 * (1.0 + direct.abs()));
        let split = second_variation_contribution(&b, &g, ExtremumSign::Minimum).unwrap();
        prop_assert!((split - direct).abs() <= 1e-9 * (1.0 + direct.abs()));
    }

    #[test]
    fn reversal_flips_area_and_scaling_is_quadratic(r in 0.1f64..3.0, s in -3.0f64..3.0) {
        let g = TangentLoop::circle(1.0, 2, r);
        let a = loop_area(&g);
        prop_assert!((loop_area(&g.reversed()) + a).abs() < 1e-9 * (1.0 + a.abs()));
        let scaled = TangentLoop::circle(1.0, 2, r * s);
        prop_assert!((loop_area(&scaled) - s * s * a).abs() < 1e-9 * (1.0 + a.abs()));
        let b = HessianPath::scalar(2, 5.0).unwrap();
        let q1 = q_functional(&b, &g, ExtremumSign::Minimum).unwrap();
        let q2 = q_functional(&b, &scaled, ExtremumSign::Minimum).unwrap();
        prop_assert!((q2 - s * s * q1).abs() < 1e-9 * (1.0 + q1.abs()));
    }

    #[test]
    fn sampled_loops_approximate_area(r in 0.2f64..2.0) {
        let m = 400;
        let vals: Vec<Vec<f64>> = (0..=m).map(|k| {
            let t = k as f64 / m as f64;
            let w = 2.0 * PI * t;
            let mut v = vec![r * (w.cos() - 1.0), r * w.sin()];
            if k == 0 || k == m { v = vec![0.0, 0.0]; }
            v
        }).collect();
        let g = TangentLoop::from_samples(1.0, vals).unwrap();
        prop_assert!((loop_area(&g) - PI * r * r).abs() < 1e-3 * PI * r * r);
    }

    #[test]
    fn index_is_monotone_in_t(a in proptest::array::uniform4(-1.0f64..1.0), c in proptest::array::uniform4(0.0f64..1.0)) {
        let b = random_metric(a, c);
        let rep = conjugate_values(&b, &ConjugateScan { points: 24, modes: 16, ..Default::default() }).unwrap();
        prop_assert!(rep.index_monotone);
        prop_assert!(rep.jumps_match_nullity);
    }
}

