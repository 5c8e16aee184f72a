use hoferlab::grid::{Grid, Sampling};
use hoferlab::hofer::*;
use hoferlab::numerics::smoothstep;
use hoferlab::symplectic::*;
use proptest::prelude::*;
use std::sync::Arc;

fn sphere_sampling() -> Sampling {
    Sampling::Sphere { n_theta: 32, n_z: 17 }
}

fn plane_box() -> Sampling {
    Sampling::Box { lo: vec![-2.0, -2.0], hi: vec![2.0, 2.0], n: 41 }
}

fn bump(x: &[f64], c: [f64; 2], r: f64) -> f64 {
    let d2 = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)) / (r * r);
    if d2 >= 1.0 {
        0.0
    } else {
        (1.0 - d2).powi(3)
    }
}

/// Bump at c1 is full height on [0, ½], bump at c2 on [½, 1]; each ramps while the other is full.
fn alternating() -> SharedHamiltonian {
    Arc::new(FnHamiltonian::new(2, |t, x| {
        let w1 = 1.0 - smoothstep(2.0 * t - 1.0);
        let w2 = smoothstep(2.0 * t);
        w1 * bump(x, [-1.0, 0.0], 0.6) + w2 * bump(x, [1.0, 0.0], 0.6)
    }))
}

fn z_path(panels: usize) -> IsotopyPath {
    let h = FnHamiltonian::zonal(|_, z| z, |_, _| 1.0).shared();
    IsotopyPath::new(PhaseDomain::Sphere, h, &sphere_sampling(), panels).unwrap()
}

#[test]
fn length_of_height_rotation_is_two() {
    let p = z_path(8);
    assert!((hofer_length(&p).unwrap() - 2.0).abs() < 1e-12);
    let zero = p.with_hamiltonian(Arc::new(ZeroHamiltonian(2)));
    assert_eq!(hofer_length(&zero).unwrap(), 0.0);
}

#[test]
fn extremum_sets_of_two_equal_bumps_and_constants() {
    let g = Grid::build(PhaseDomain::Euclidean(2), &plane_box()).unwrap();
    // centres off the grid nodes, equal heights
    let h = FnHamiltonian::new(2, |_, x| bump(x, [-1.013, 0.021], 0.6) + bump(x, [0.987, -0.033], 0.6));
    let (_, hi) = extremum_sets(&h, 0.0, &g, DEFAULT_TOL_EXT).unwrap();
    assert_eq!(hi.cluster_count(&g), 2);
    assert!(hi.points.iter().any(|p| (p[0] + 1.013).abs() < 0.1));
    assert!(hi.points.iter().any(|p| (p[0] - 0.987).abs() < 0.1));
    for p in &hi.points {
        assert!((h.value(0.0, p) - hi.level).abs() <= DEFAULT_TOL_EXT);
    }
    let c = FnHamiltonian::new(2, |_, _| 3.0);
    let (lo, hi) = extremum_sets(&c, 0.0, &g, DEFAULT_TOL_EXT).unwrap();
    assert_eq!(lo.cells.len(), g.len());
    assert_eq!(hi.cells.len(), g.len());
}

#[test]
fn fixed_extrema_examples() {
    // autonomous: fixed extrema are the extrema
    let h: SharedHamiltonian = Arc::new(FnHamiltonian::new(2, |_, x| bump(x, [0.0, 0.0], 1.0) - bump(x, [1.0, 1.0], 0.5)));
    let p = IsotopyPath::new(PhaseDomain::Euclidean(2), h, &plane_box(), 8).unwrap();
    let r = fixed_extrema(&p, DEFAULT_TOL_EXT).unwrap();
    assert!(r.fixed_maxima.iter().all(|q| q[0].abs() < 0.11 && q[1].abs() < 0.11));
    assert!(!r.fixed_maxima.is_empty());
    assert!(r.fixed_minima.iter().all(|q| (q[0] - 1.0).abs() < 0.11 && (q[1] - 1.0).abs() < 0.11));

    let p = IsotopyPath::new(PhaseDomain::Euclidean(2), alternating(), &plane_box(), 32).unwrap();
    let r = fixed_extrema(&p, DEFAULT_TOL_EXT).unwrap();
    assert!(r.fixed_maxima.is_empty());
    assert!(!r.fixed_minima.is_empty());

    let h = FnHamiltonian::zonal(|t, z| (1.0 + t) * z, |t, _| 1.0 + t).shared();
    let p = IsotopyPath::new(PhaseDomain::Sphere, h, &sphere_sampling(), 8).unwrap();
    let r = fixed_extrema(&p, DEFAULT_TOL_EXT).unwrap();
    assert_eq!(r.fixed_minima, vec![vec![0.0, -1.0]]);
    assert_eq!(r.fixed_maxima, vec![vec![0.0, 1.0]]);
}

#[test]
fn window_checks_separate_geodesic_from_lcritical() {
    let p = IsotopyPath::new(PhaseDomain::Euclidean(2), alternating(), &plane_box(), 64).unwrap();
    let global = lcritical_check(&p, DEFAULT_TOL_EXT).unwrap();
    assert!(!global.pass);
    let fine = geodesic_check(&p, DEFAULT_WINDOWS, DEFAULT_TOL_EXT).unwrap();
    assert!(fine.pass, "{fine:?}");
    assert_eq!(fine.windows.len(), 16);
    let auto = z_path(32);
    assert!(geodesic_check(&auto, DEFAULT_WINDOWS, DEFAULT_TOL_EXT).unwrap().pass);
    assert!(lcritical_check(&auto, DEFAULT_TOL_EXT).unwrap().pass);
}

#[test]
fn smooth_point_check_examples() {
    let r = smooth_point_necessary_check(&z_path(20), DEFAULT_TOL_EXT, DEFAULT_EXCEPTIONAL_THRESHOLD).unwrap();
    assert!(r.pass && r.exceptional_fraction == 0.0);

    // maxset is the cap z >= 0.6 exactly when t ∈ [0.4, 0.6]
    let flat = |z: f64| {
        // antiderivative of 1 - smoothstep((z - 0.3)/0.3), flat above 0.6
        let s = ((z - 0.3) / 0.3).clamp(0.0, 1.0);
        z.min(0.3) + 0.3 * (s - hoferlab::numerics::smoothstep_integral(s))
    };
    let h = FnHamiltonian::new(2, move |t, x| if (0.4..=0.6).contains(&t) { flat(x[1]) } else { x[1] }).shared();
    let p = IsotopyPath::new(PhaseDomain::Sphere, h, &sphere_sampling(), 100).unwrap();
    let r = smooth_point_necessary_check(&p, DEFAULT_TOL_EXT, DEFAULT_EXCEPTIONAL_THRESHOLD).unwrap();
    assert!(!r.pass);
    assert!((r.exceptional_fraction - 0.2).abs() < 0.02, "{}", r.exceptional_fraction);

    let c = FnHamiltonian::new(2, |t, _| t).shared();
    let p = IsotopyPath::new(PhaseDomain::Sphere, c, &sphere_sampling(), 10).unwrap();
    assert!(!smooth_point_necessary_check(&p, DEFAULT_TOL_EXT, DEFAULT_EXCEPTIONAL_THRESHOLD).unwrap().pass);
}

#[test]
fn first_variation_examples() {
    let p = z_path(16);
    let zero = ZeroHamiltonian(2);
    assert_eq!(first_variation(&p, &zero, false, DEFAULT_TOL_EXT).unwrap().value, 0.0);
    // fixed extrema and G_0 = G_1 = 0: the integral telescopes to 0
    let g = FnHamiltonian::new(2, |t, x| (std::f64::consts::PI * t).sin() * (x[1] * x[1] + x[1]));
    let r = first_variation(&p, &g, false, DEFAULT_TOL_EXT).unwrap();
    assert!(r.value.abs() < 1e-9);
    // free end: G' = z² + z is 2 at the north pole and 0 at the south pole
    let g = FnHamiltonian::new(2, |t, x| t * (x[1] * x[1] + x[1]));
    let r = first_variation(&p, &g, false, DEFAULT_TOL_EXT).unwrap();
    assert!((r.value - 2.0).abs() < 1e-9);
    assert!(r.uncertified_times.is_empty());
}

#[test]
fn first_variation_refuses_without_certificate() {
    let c = FnHamiltonian::new(2, |_, x| x[1] * x[1]).shared();
    let p = IsotopyPath::new(PhaseDomain::Sphere, c, &sphere_sampling(), 4).unwrap();
    let g = FnHamiltonian::new(2, |t, x| t * (1.0 - t) * x[1]);
    assert!(matches!(
        first_variation(&p, &g, false, DEFAULT_TOL_EXT),
        Err(hoferlab::LabError::Refused(_))
    ));
    let forced = first_variation(&p, &g, true, DEFAULT_TOL_EXT).unwrap();
    assert!(forced.forced && !forced.uncertified_times.is_empty());
}

#[test]
fn conjugation_leaves_length_unchanged() {
    // ψ(x, y) = (x + 0.4 y, y) is the time-1 map of y²·0.2; generator of ψ∘φ_t∘ψ⁻¹ is H∘ψ⁻¹.
    let h = |t: f64, x: &[f64]| (1.0 + t) * bump(x, [0.2, -0.1], 0.8) - 0.5 * bump(x, [-0.6, 0.5], 0.4);
    let a: SharedHamiltonian = Arc::new(FnHamiltonian::new(2, h));
    let b: SharedHamiltonian = Arc::new(FnHamiltonian::new(2, move |t, x| h(t, &[x[0] - 0.4 * x[1], x[1]])));
    let pa = IsotopyPath::new(PhaseDomain::Euclidean(2), a, &plane_box(), 16).unwrap();
    let pb = pa.with_hamiltonian(b);
    let (la, lb) = (hofer_length(&pa).unwrap(), hofer_length(&pb).unwrap());
    assert!((la - lb).abs() < 1e-8 * la, "{la} {lb}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn length_is_reparametrisation_invariant(k in 0.2f64..3.0, amp in 0.5f64..2.0) {
        // β(t) = (e^{kt} − 1)/(e^k − 1); generator β'(t) H(β(t), x)
        let beta = move |t: f64| ((k * t).exp() - 1.0) / (k.exp() - 1.0);
        let dbeta = move |t: f64| k * (k * t).exp() / (k.exp() - 1.0);
        let h = move |t: f64, x: &[f64]| amp * (1.0 + t * t) * bump(x, [0.1, 0.0], 1.0);
        let base: SharedHamiltonian = Arc::new(FnHamiltonian::new(2, h));
        let rep: SharedHamiltonian = Arc::new(FnHamiltonian::new(2, move |t, x| dbeta(t) * h(beta(t), x)));
        let s = Sampling::Ball { center: vec![0.0, 0.0], radius: 1.5, n: 21 };
        let p = IsotopyPath::new(PhaseDomain::Euclidean(2), base, &s, 64).unwrap();
        let l0 = hofer_length(&p).unwrap();
        let l1 = hofer_length(&p.with_hamiltonian(rep)).unwrap();
        prop_assert!(l0 >= 0.0);
        prop_assert!((l0 - l1).abs() < 1e-5 * l0, "{} {}", l0, l1);
    }

    #[test]
    fn global_pass_implies_window_pass(c1 in -1.5f64..1.5, c2 in -1.5f64..1.5, speed in 0.0f64..1.0) {
        let h: SharedHamiltonian = Arc::new(FnHamiltonian::new(2, move |t, x| {
            bump(x, [c1 + speed * t, 0.3], 0.5) - bump(x, [c2, -0.7], 0.4)
        }));
        let p = IsotopyPath::new(PhaseDomain::Euclidean(2), h, &plane_box(), 32).unwrap();
        let g = lcritical_check(&p, DEFAULT_TOL_EXT).unwrap();
        let w = geodesic_check(&p, 8, DEFAULT_TOL_EXT).unwrap();
        prop_assert!(!g.pass || w.pass);
    }
}
