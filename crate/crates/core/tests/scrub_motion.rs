use hoferlab::grid::Sampling;
use hoferlab::hofer::{hofer_length, IsotopyPath};
use hoferlab::shortening::*;
use hoferlab::symplectic::{FnHamiltonian, PhaseDomain, RadialHamiltonian};
use std::f64::consts::PI;
use std::sync::Arc;

/// `s(1 − e^{−πc r²})`: Hessian `2πc·s I` at the origin.
fn gaussian_path(c: f64, sign: f64, n: usize) -> IsotopyPath {
    let h = RadialHamiltonian::new([0.0, 0.0], move |_, r| {
        let e = (-PI * c * r * r).exp();
        (sign * (1.0 - e), sign * 2.0 * PI * c * r * e)
    });
    let s = Sampling::Box { lo: vec![-1.0, -1.0], hi: vec![1.0, 1.0], n };
    IsotopyPath::new(PhaseDomain::Euclidean(2), Arc::new(h), &s, 16).unwrap()
}

#[test]
fn round_minimum_is_scrubbed() {
    let path = gaussian_path(2.0, 1.0, 41);
    let rep = scrubbing_motion(&path, &[0.0, 0.0], Side::Min, None, &ScrubPlan::new(0.1)).unwrap();
    let r = &rep.result;
    assert!((rep.lambda - 0.5).abs() < 1e-6);
    assert!(!rep.step1_applied && !rep.step5_applied);
    assert!(r.new_length < r.original_length);
    assert!(r.endpoint_discrepancy <= r.endpoint_tolerance);
    assert!(rep.max_mismatch <= 1e-9, "{rep:?}");
    assert!((r.margin - rep.predicted_gain).abs() <= 1e-3 * rep.predicted_gain, "{rep:?}");
    assert!((r.margin - rep.min_integral).abs() <= 1e-3 * rep.min_integral);
    // the guard bounds are linear in δ
    assert!((rep.rho - 0.9 * rep.rho_max).abs() < 1e-15);
    let fine = scrubbing_motion(&gaussian_path(2.0, 1.0, 81), &[0.0, 0.0], Side::Min, None, &ScrubPlan::new(0.1)).unwrap();
    assert!((fine.result.margin - r.margin).abs() <= 5e-4 * r.margin);
}

#[test]
fn mirrored_maximum_is_scrubbed() {
    let path = gaussian_path(2.0, -1.0, 41);
    let rep = scrubbing_motion(&path, &[0.0, 0.0], Side::Max, None, &ScrubPlan::new(0.1)).unwrap();
    let r = &rep.result;
    assert!(r.new_length < r.original_length);
    assert!(r.endpoint_discrepancy <= r.endpoint_tolerance);
    assert!(rep.max_mismatch <= 1e-9);
    assert!((r.margin - rep.predicted_gain).abs() <= 1e-3 * rep.predicted_gain);
}

#[test]
fn slow_minimum_has_no_witness() {
    let path = gaussian_path(0.8, 1.0, 21);
    let err = scrubbing_motion(&path, &[0.0, 0.0], Side::Min, None, &ScrubPlan::new(0.1)).unwrap_err();
    assert!(err.to_string().contains("λ"), "{err}");
}

#[test]
fn oversized_amplitude_is_refused() {
    let path = gaussian_path(2.0, 1.0, 21);
    let mut plan = ScrubPlan::new(0.1);
    plan.rho = Some(0.01);
    let err = scrubbing_motion(&path, &[0.0, 0.0], Side::Min, None, &plan).unwrap_err();
    assert!(err.to_string().contains("m/3"), "{err}");
}

#[test]
fn annulus_twist_keeps_length() {
    let path = gaussian_path(2.0, 1.0, 41);
    let rep = step1_annulus_positivity(&path, &[0.0, 0.0], &AnnulusPlan::new(0.1, 0.05, 1e-3)).unwrap();
    assert!(rep.min_after > 0.0 && !rep.fallback);
    assert!((rep.new_length - rep.original_length).abs() <= 1e-8, "{rep:?}");
    assert!(rep.beta_min < 0.0 && rep.beta_max > 0.0);
}

/// `2π(x₁² + s(t) x₂²)` cut off, with `s` vanishing on `[0.75, 0.85]`.
fn flattening_path() -> IsotopyPath {
    let h = FnHamiltonian::new(2, |t, x| {
        let s = (((t - 0.8).abs() - 0.05).max(0.0) / 0.3).powi(2).min(1.0);
        let q = 2.0 * PI * (x[0] * x[0] + s * x[1] * x[1]);
        1.0 - (-q).exp()
    });
    let s = Sampling::Box { lo: vec![-1.0, -1.0], hi: vec![1.0, 1.0], n: 41 };
    IsotopyPath::new(PhaseDomain::Euclidean(2), h.shared(), &s, 16).unwrap()
}

#[test]
fn annulus_twist_restores_positivity() {
    let path = flattening_path();
    let rep = step1_annulus_positivity(&path, &[0.0, 0.0], &AnnulusPlan::new(0.1, 0.05, 1e-3)).unwrap();
    assert!(rep.min_before <= 1e-12, "{rep:?}");
    assert!(rep.min_after > 0.0);
    assert!((rep.new_length - rep.original_length).abs() <= 1e-8, "{rep:?}");
    let moved = rep.path.hamiltonian.value(0.9, &[0.0, 0.3]) - path.hamiltonian.value(0.9, &[0.0, 0.3]);
    assert!(moved > 0.0);
    let cloud: Vec<Vec<f64>> = (0..8).map(|k| {
        let a = k as f64 * PI / 4.0;
        vec![0.3 * a.cos(), 0.3 * a.sin()]
    }).collect();
    let gap = endpoint_discrepancy(path.domain, path.hamiltonian.as_ref(), rep.path.hamiltonian.as_ref(), &cloud, 1e-10).unwrap();
    assert!(gap <= 1e-4, "{gap}");
}

#[test]
fn annulus_guards() {
    let path = gaussian_path(2.0, 1.0, 21);
    let err = step1_annulus_positivity(&path, &[0.0, 0.0], &AnnulusPlan::new(0.1, 0.05, 0.6)).unwrap_err();
    assert!(err.to_string().contains("M/2"), "{err}");
    let h = FnHamiltonian::new(2, |t, x| (t - 0.5).powi(2) * (x[0] * x[0] + x[1] * x[1]));
    let s = Sampling::Box { lo: vec![-1.0, -1.0], hi: vec![1.0, 1.0], n: 21 };
    let z = IsotopyPath::new(PhaseDomain::Euclidean(2), h.shared(), &s, 16).unwrap();
    let err = step1_annulus_positivity(&z, &[0.0, 0.0], &AnnulusPlan::new(0.1, 0.05, 1e-4)).unwrap_err();
    assert!(err.to_string().contains("identically"), "{err}");
    assert!(hofer_length(&z).unwrap() > 0.0);
}
