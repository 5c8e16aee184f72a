use hoferlab::grid::Sampling;
use hoferlab::hofer::{hofer_length, IsotopyPath};
use hoferlab::sphere::*;
use hoferlab::symplectic::{flow_endpoint, wrap_angle, FnHamiltonian, Hamiltonian, PhaseDomain};
use proptest::prelude::*;
use std::f64::consts::{PI, TAU};

fn meridian(u: f64) -> Vec<f64> {
    vec![0.0, -1.0 + 2.0 * u]
}

fn angle_gap(a: f64, b: f64) -> f64 {
    (wrap_angle(a - b + PI) - PI).abs()
}

#[test]
fn rotation_of_the_height_function() {
    let h = ProfileFunction::affine(1.0, 0.0);
    let y = rotation_map(&h, 1.0, &[0.5, 0.3]);
    assert!((y[0] - 1.5).abs() < 1e-15 && y[1] == 0.3);
    let c = ProfileFunction::affine(0.0, 2.0);
    assert_eq!(rotation_map(&c, 0.7, &[0.5, -0.4]), vec![0.5, -0.4]);
}

#[test]
fn rotation_agrees_with_integrated_flow() {
    let h = ProfileFunction::quadratic(3.0);
    // no zonal hint: forces the generic integrator
    let generic = FnHamiltonian::new(2, |_, x| 1.5 * x[1] * x[1]);
    for x in [[0.1, 0.2], [2.0, -0.7], [5.0, 0.95]] {
        let a = rotation_map(&h, 0.8, &x);
        let b = flow_endpoint(PhaseDomain::Sphere, &generic, &x, 0.0, 0.8, 1e-11).unwrap();
        assert!(angle_gap(a[0], b[0]) < 1e-6 && (a[1] - b[1]).abs() < 1e-6, "{a:?} {b:?}");
    }
}

#[test]
fn fixed_parallels() {
    let z = fix_set(&ProfileFunction::affine(1.0, 0.0)).unwrap();
    assert_eq!(z, FixSet::Parallels { interior: vec![] });
    assert_eq!(z.levels().unwrap(), vec![-1.0, 1.0]);
    assert_eq!(fix_set(&ProfileFunction::affine(TAU, 0.0)).unwrap(), FixSet::All);
    let k = 20.0;
    let FixSet::Parallels { interior } = fix_set(&ProfileFunction::quadratic(k)).unwrap() else { panic!() };
    let expect: Vec<f64> = (-3..=3).map(|j| TAU * j as f64 / k).collect();
    assert_eq!(interior.len(), expect.len());
    for (a, b) in interior.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12, "{interior:?}");
    }
}

#[test]
fn sharp_counts() {
    let q = ProfileFunction::quadratic(4.0 * PI);
    // z = k/2 strictly inside: −1/2, 0, 1/2
    assert_eq!(sharp_count(&q, -1.0, 1.0).unwrap(), 3);
    assert_eq!(sharp_count(&q, 0.3, 0.3).unwrap(), 0);
    assert_eq!(sharp_count(&ProfileFunction::affine(1.0, 0.0), -1.0, 1.0).unwrap(), 0);
    assert!(sharp_count(&ProfileFunction::affine(TAU, 0.0), -1.0, 1.0).is_err());
}

#[test]
fn swept_area_of_the_height_function() {
    let h = ProfileFunction::affine(1.0, 0.0).hamiltonian();
    let a = swept_area(h.as_ref(), &meridian, 0.0, 1.0, 4, 1e-10).unwrap();
    assert!((a.absolute - 2.0).abs() < 1e-9, "{a:?}");
    assert_eq!(swept_area(h.as_ref(), &meridian, 0.3, 0.3, 4, 1e-10).unwrap().absolute, 0.0);
    let full = swept_area(h.as_ref(), &meridian, 0.0, TAU, 8, 1e-10).unwrap();
    assert!((full.absolute - 4.0 * PI).abs() < 1e-9, "{full:?}");
}

fn sphere_length(h: &ProfileFunction) -> f64 {
    let s = Sampling::Sphere { n_theta: 8, n_z: 65 };
    hofer_length(&IsotopyPath::new(PhaseDomain::Sphere, h.hamiltonian(), &s, 4).unwrap()).unwrap()
}

#[test]
fn swept_area_matches_length_for_monotone_profiles() {
    let profiles = [
        ProfileFunction::affine(2.5, 0.1),
        ProfileFunction::new("z+z^3", |z| z + z.powi(3), |z| 1.0 + 3.0 * z * z, |z| 6.0 * z),
        ProfileFunction::new("exp", f64::exp, f64::exp, f64::exp),
    ];
    for h in profiles {
        let a = swept_area(h.hamiltonian().as_ref(), &meridian, 0.0, 1.0, 8, 1e-10).unwrap();
        let l = sphere_length(&h);
        assert!((a.absolute - l).abs() <= 1e-6, "{}: {a:?} vs {l}", h.label);
    }
}

#[test]
fn corrections_and_gaps() {
    let aff = ProfileFunction::affine(0.7, -0.2);
    for zb in [-0.3, 0.5] {
        assert!(profile_correction(&aff, zb).unwrap().gap.abs() < 1e-13);
    }
    // at a pole the slope snaps to 2πℤ, so only slopes already there give no gap
    assert!(profile_correction(&aff, -1.0).unwrap().gap.abs() > 0.1);
    let lattice = ProfileFunction::affine(TAU, 0.4);
    assert!(profile_correction(&lattice, 1.0).unwrap().gap.abs() < 1e-13);
    let k = 7.0;
    let q = ProfileFunction::quadratic(k);
    let c = profile_correction(&q, 0.0).unwrap();
    assert!((c.gap - k / 3.0).abs() < 1e-12 && c.rho == 0.0);
    // K/3 + K z̄² away from the vertex
    assert!((profile_correction(&q, 0.4).unwrap().gap - k * (1.0 / 3.0 + 0.16)).abs() < 1e-12);
    // the pole slope is rounded to 2πℤ
    let n = profile_correction(&q, 1.0).unwrap();
    assert_eq!(n.rho, TAU);
    assert!((n.gap - (2.0 * TAU - 2.0 * k / 3.0)).abs() < 1e-12);
    assert!(profile_correction(&q, 1.2).is_err());
}

/// Brute force over `Z ∪ {±1}` from the closed-form gaps of `Kz²/2`.
fn quadratic_c(k: f64) -> f64 {
    let mut best = f64::INFINITY;
    let m = (k / TAU).floor() as i64;
    for j in -m..=m {
        let z = TAU * j as f64 / k;
        if z.abs() < 1.0 {
            best = best.min(k / 3.0 + k * z * z);
        }
    }
    let rho = TAU * (k / TAU).round();
    best = best.min((2.0 * rho - 2.0 * k / 3.0).abs());
    (best - 4.0 * PI).max(0.0)
}

#[test]
fn c_for_quadratic_profiles() {
    for k in [1.0, 10.0, 40.0, 80.0, 120.0, 200.0] {
        let r = c_of_h(&ProfileFunction::quadratic(k)).unwrap();
        assert!((r.c - quadratic_c(k)).abs() < 1e-10, "K = {k}: {r:?}");
    }
    let big = c_of_h(&ProfileFunction::quadratic(200.0)).unwrap();
    assert!((big.c - (200.0 / 3.0 - 4.0 * PI)).abs() < 1e-10);
    assert_eq!(big.best.zbar, 0.0);
    assert_eq!(c_of_h(&ProfileFunction::affine(TAU, 1.0)).unwrap().c, 0.0);
    assert!(c_of_h(&ProfileFunction::affine(PI, 0.0)).is_err());
}

#[test]
fn threshold_and_certificates() {
    let k_star = quadratic_threshold(1.0, 400.0).unwrap();
    assert!((k_star - 36.0 * PI).abs() < 1e-6, "{k_star}");
    let cert = no_stable_geodesic_certificate(&ProfileFunction::quadratic(120.0)).unwrap();
    assert_eq!(cert.verdict, Verdict::Certified);
    assert!(cert.lower > cert.upper);
    assert_eq!(cert.convexity, Convexity::StrictlyConvex);
    let json = serde_json::to_value(&cert).unwrap();
    assert_eq!(json["verdict"], "CERTIFIED");
    let below = no_stable_geodesic_certificate(&ProfileFunction::quadratic(100.0)).unwrap();
    assert_eq!(below.verdict, Verdict::Inconclusive);
    let lin = no_stable_geodesic_certificate(&ProfileFunction::affine(1.0, 0.0)).unwrap();
    assert_eq!(lin.verdict, Verdict::Inconclusive);
    assert_eq!(lin.c, 0.0);
    assert!(no_stable_geodesic_certificate(&ProfileFunction::quadratic(TAU * 18.0)).is_err());
    assert!(no_stable_geodesic_certificate(&ProfileFunction::affine(PI, 0.0)).is_err());
}

/// Polar-cap-free bump `a·s(z)` supported in `|z − z0| < w`.
fn band(a: f64, z0: f64, w: f64) -> FnHamiltonian {
    FnHamiltonian::new(2, move |_, x| {
        let u = (x[1] - z0) / w;
        if u.abs() < 1.0 {
            a * (1.0 - u * u).powi(3)
        } else {
            0.0
        }
    })
}

#[test]
fn calabi_values() {
    let south = vec![0.0, -1.0];
    let zero = CalabiInput::new(FnHamiltonian::new(2, |_, _| 0.0).shared(), south.clone());
    assert_eq!(calabi(&zero, 8).unwrap().value, 0.0);
    // ∫(1−u²)³ du over [−1, 1] is 32/35; the band edges sit on panel breaks
    let b = CalabiInput::new(band(2.0, 0.25, 0.25).shared(), south.clone());
    let v = calabi(&b, 16).unwrap().value;
    assert!((v - TAU * 2.0 * 0.25 * 32.0 / 35.0).abs() < 1e-10, "{v}");
    let touching = CalabiInput::new(band(1.0, -0.9, 0.3).shared(), south);
    assert!(calabi(&touching, 8).is_err());
}

#[test]
fn calabi_is_additive_over_disjoint_supports() {
    let n = vec![0.0, 1.0];
    let (f, g) = (band(1.5, -0.4, 0.3), band(-0.7, 0.4, 0.2));
    let (f2, g2) = (f.clone(), g.clone());
    let sum = FnHamiltonian::new(2, move |t, x| f2.value(t, x) + g2.value(t, x));
    let cf = calabi(&CalabiInput::new(f.shared(), n.clone()), 16).unwrap().value;
    let cg = calabi(&CalabiInput::new(g.shared(), n.clone()), 16).unwrap().value;
    let cs = calabi(&CalabiInput::new(sum.shared(), n), 16).unwrap().value;
    assert!((cs - cf - cg).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rotation_is_area_preserving(k in -30.0..30.0f64, t in -2.0..2.0f64, th in 0.0..TAU, z in -0.99..0.99f64) {
        let h = ProfileFunction::quadratic(k);
        let e = 1e-6;
        let col = |dx: [f64; 2]| {
            let a = rotation_map(&h, t, &[th + dx[0], z + dx[1]]);
            let b = rotation_map(&h, t, &[th - dx[0], z - dx[1]]);
            [(wrap_angle(a[0] - b[0] + PI) - PI) / (2.0 * e), (a[1] - b[1]) / (2.0 * e)]
        };
        let (c1, c2) = (col([e, 0.0]), col([0.0, e]));
        prop_assert!((c1[0] * c2[1] - c1[1] * c2[0] - 1.0).abs() < 1e-7);
        // shear form: the symbolic Jacobian is [[1, t h''], [0, 1]]
        prop_assert!((c2[0] - t * h.curvature(z)).abs() < 1e-6);
    }

    #[test]
    fn c_is_monotone_in_k(k in 1.0..300.0f64, dk in 0.0..20.0f64) {
        let a = c_of_h(&ProfileFunction::quadratic(k));
        let b = c_of_h(&ProfileFunction::quadratic(k + dk));
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert!(b.c >= a.c - 1e-9);
        }
    }

    #[test]
    fn certified_means_lower_exceeds_upper(k in 1.0..300.0f64) {
        if let Ok(c) = no_stable_geodesic_certificate(&ProfileFunction::quadratic(k)) {
            prop_assert_eq!(c.verdict == Verdict::Certified, c.lower > c.upper);
        }
    }
}
