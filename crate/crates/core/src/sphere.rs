//! Zonal Hamiltonians `h∘z` on the sphere: their rotation maps and fixed parallels,
//! swept areas, Calabi invariants, and the `c(h)` lower bound compared with the
//! `4π` upper bound for stable geodesics.

use crate::error::{LabError, Result};
use crate::numerics::{brent_root, composite_gauss};
use crate::symplectic::{
    ambient_to_sphere, flow_endpoint, sphere_to_ambient, wrap_angle, FnHamiltonian, Hamiltonian, PhaseDomain,
    SharedHamiltonian, SPHERE_AREA,
};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::{PI, TAU};
use std::sync::Arc;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Profile `h : [−1, 1] → ℝ` with its first two derivatives.
#[derive(Clone)]
pub struct ProfileFunction {
    pub label: String,
    h: ScalarFn,
    dh: ScalarFn,
    ddh: ScalarFn,
}

impl std::fmt::Debug for ProfileFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ProfileFunction({})", self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Convexity {
    StrictlyConvex,
    StrictlyConcave,
    Neither,
}

/// Samples used for convexity and root bracketing.
pub const PROFILE_SAMPLES: usize = 2048;

impl ProfileFunction {
    pub fn new(
        label: impl Into<String>,
        h: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dh: impl Fn(f64) -> f64 + Send + Sync + 'static,
        ddh: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            h: Arc::new(h),
            dh: Arc::new(dh),
            ddh: Arc::new(ddh),
        }
    }

    /// `K z² / 2`.
    pub fn quadratic(k: f64) -> Self {
        Self::new(format!("{k}*z^2/2"), move |z| 0.5 * k * z * z, move |z| k * z, move |_| k)
    }

    /// `a z + b`.
    pub fn affine(a: f64, b: f64) -> Self {
        Self::new(format!("{a}*z+{b}"), move |z| a * z + b, move |_| a, |_| 0.0)
    }

    pub fn value(&self, z: f64) -> f64 {
        (self.h)(z)
    }

    pub fn slope(&self, z: f64) -> f64 {
        (self.dh)(z)
    }

    pub fn curvature(&self, z: f64) -> f64 {
        (self.ddh)(z)
    }

    fn samples(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=PROFILE_SAMPLES).map(|i| -1.0 + 2.0 * i as f64 / PROFILE_SAMPLES as f64)
    }

    /// Sign of the sampled `h''`.
    pub fn convexity(&self) -> Convexity {
        let v: Vec<f64> = self.samples().map(|z| self.curvature(z)).collect();
        if v.iter().all(|&c| c > 0.0) {
            Convexity::StrictlyConvex
        } else if v.iter().all(|&c| c < 0.0) {
            Convexity::StrictlyConcave
        } else {
            Convexity::Neither
        }
    }

    /// `h'(±1) ∉ 2πℤ`.
    pub fn slopes_avoid_integers(&self) -> bool {
        [-1.0, 1.0].iter().all(|&z| lattice_distance(self.slope(z), 0.0) > 1e-9)
    }

    /// `h'(±1) ∉ 2π(ℤ + ½)`.
    pub fn slopes_avoid_half_integers(&self) -> bool {
        [-1.0, 1.0].iter().all(|&z| lattice_distance(self.slope(z), 0.5) > 1e-9)
    }

    /// `H = h∘z` as a sphere Hamiltonian.
    pub fn hamiltonian(&self) -> SharedHamiltonian {
        let (h, dh) = (self.h.clone(), self.dh.clone());
        FnHamiltonian::zonal(move |_, z| h(z), move |_, z| dh(z)).shared()
    }
}

/// Distance from `s / 2π` to `ℤ + offset`, in units of `2π`.
fn lattice_distance(s: f64, offset: f64) -> f64 {
    let u = s / TAU - offset;
    (u - u.round()).abs()
}

/// Time-`t` map of `h∘z`: `(θ + t h'(z), z)`.
pub fn rotation_map(h: &ProfileFunction, t: f64, x: &[f64]) -> Vec<f64> {
    vec![wrap_angle(x[0] + t * h.slope(x[1])), x[1]]
}

/// `Fix(φ)` of the time-one map of `h∘z`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FixSet {
    /// `h'` is constant in `2πℤ`: every point is fixed.
    All,
    /// Interior parallels `h'(z) ∈ 2πℤ` in increasing order, and the poles `−1, 1`.
    Parallels { interior: Vec<f64> },
}

impl FixSet {
    /// Levels including both poles.
    pub fn levels(&self) -> Option<Vec<f64>> {
        match self {
            FixSet::All => None,
            FixSet::Parallels { interior } => {
                let mut v = vec![-1.0];
                v.extend(interior);
                v.push(1.0);
                Some(v)
            }
        }
    }
}

pub fn fix_set(h: &ProfileFunction) -> Result<FixSet> {
    let zs: Vec<f64> = h.samples().collect();
    let d: Vec<f64> = zs.iter().map(|&z| h.slope(z)).collect();
    let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(LabError::Config(format!("h' of {} is not finite on [-1, 1]", h.label)));
    }
    if hi - lo <= 1e-12 * hi.abs().max(1.0) && lattice_distance(lo, 0.0) <= 1e-12 {
        return Ok(FixSet::All);
    }
    let mut roots = vec![];
    let kmin = (lo / TAU).ceil() as i64;
    let kmax = (hi / TAU).floor() as i64;
    for k in kmin..=kmax {
        let target = TAU * k as f64;
        let g = |z: f64| h.slope(z) - target;
        for i in 0..PROFILE_SAMPLES {
            let (a, b) = (d[i] - target, d[i + 1] - target);
            if a == 0.0 {
                roots.push(zs[i]);
            } else if a * b < 0.0 {
                roots.push(brent_root(g, zs[i], zs[i + 1], 1e-14)?);
            }
        }
        if d[PROFILE_SAMPLES] - target == 0.0 {
            roots.push(1.0);
        }
    }
    roots.retain(|&z| z > -1.0 && z < 1.0);
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    Ok(FixSet::Parallels { interior: roots })
}

/// Number of fixed parallels strictly between the levels `z_p` and `z_big_p`.
pub fn sharp_count(h: &ProfileFunction, z_p: f64, z_big_p: f64) -> Result<usize> {
    let (a, b) = if z_p <= z_big_p { (z_p, z_big_p) } else { (z_big_p, z_p) };
    match fix_set(h)? {
        FixSet::All => Err(LabError::Precondition("every parallel is fixed; the count is undefined".into())),
        FixSet::Parallels { interior } => Ok(interior.iter().filter(|&&z| z > a && z < b).count()),
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweptArea {
    pub signed: f64,
    pub absolute: f64,
}

/// `∫∫ ω(∂_u Φ, ∂_t Φ) du dt` for `Φ(u, t) = φ_t(α(u))` on `[0, 1] × [t0, t1]`,
/// with `ω = dθ ∧ dz` and `∂_t Φ = X_H`. `∂_u Φ` is a central difference with
/// the `θ` increment unwrapped. Composite Gauss with `panels` panels per axis.
pub fn swept_area(
    h: &dyn Hamiltonian,
    alpha: &(dyn Fn(f64) -> Vec<f64> + Sync),
    t0: f64,
    t1: f64,
    panels: usize,
    tol: f64,
) -> Result<SweptArea> {
    if t1 == t0 {
        return Ok(SweptArea { signed: 0.0, absolute: 0.0 });
    }
    let us = composite_gauss(0.0, 1.0, panels.max(1), 8);
    let ts = composite_gauss(t0, t1, panels.max(1), 8);
    let image = |u: f64, t: f64| -> Result<Vec<f64>> {
        let x = alpha(u);
        match h.exact_flow(0.0, t, &x) {
            Some(y) => Ok(y),
            None => flow_endpoint(PhaseDomain::Sphere, h, &x, 0.0, t, tol),
        }
    };
    let signed: f64 = us
        .par_iter()
        .map(|&(u, wu)| {
            let du = 1e-6;
            let mut acc = 0.0;
            for &(t, wt) in &ts {
                let y = image(u, t)?;
                let a = image(u + du, t)?;
                let b = image(u - du, t)?;
                let dth = (wrap_angle(a[0] - b[0] + PI) - PI) / (2.0 * du);
                let dz = (a[1] - b[1]) / (2.0 * du);
                // X_H on the chart: θ' = H_z, z' = −H_θ
                let g = h.gradient(t, &y);
                let (xt, xz) = (g[1], -g[0]);
                acc += wt * (dth * xz - dz * xt);
            }
            Ok(wu * acc)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum();
    Ok(SweptArea {
        signed,
        absolute: signed.abs(),
    })
}

/// Hamiltonian on the sphere with the puncture it must vanish around.
#[derive(Clone)]
pub struct CalabiInput {
    pub hamiltonian: SharedHamiltonian,
    /// `(θ, z)` of the puncture.
    pub puncture: Vec<f64>,
    /// The excluded cap is `{q : q·q_puncture > 1 − cap}` in ambient coordinates.
    pub cap: f64,
}

impl CalabiInput {
    pub fn new(hamiltonian: SharedHamiltonian, puncture: Vec<f64>) -> Self {
        Self {
            hamiltonian,
            puncture,
            cap: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CalabiReport {
    pub value: f64,
    /// `sup |H|` sampled on the excluded cap.
    pub cap_sup: f64,
}

/// `∫_0^1 ∫_S H_t dθ dz dt`, after certifying `|H| ≤ 10⁻¹⁰·scale` on the cap.
pub fn calabi(input: &CalabiInput, panels: usize) -> Result<CalabiReport> {
    let h = input.hamiltonian.as_ref();
    PhaseDomain::Sphere.check_point(&input.puncture)?;
    let n_theta = 16 * panels.max(1);
    let zs = composite_gauss(-1.0, 1.0, panels.max(1), 8);
    let ts = composite_gauss(0.0, 1.0, panels.max(1).min(8), 8);
    let rows: Vec<(f64, f64)> = ts
        .par_iter()
        .map(|&(t, wt)| {
            let mut acc = 0.0;
            let mut top: f64 = 0.0;
            for &(z, wz) in &zs {
                for j in 0..n_theta {
                    let v = h.value(t, &[TAU * j as f64 / n_theta as f64, z]);
                    acc += wz * v;
                    top = top.max(v.abs());
                }
            }
            (wt * acc * TAU / n_theta as f64, top)
        })
        .collect();
    let value: f64 = rows.iter().map(|r| r.0).sum();
    let scale = rows.iter().map(|r| r.1).fold(0.0, f64::max).max(1e-300);
    // sample the cap in geodesic polar coordinates about the puncture
    let q = sphere_to_ambient(&input.puncture);
    let (e1, e2) = crate::grid::tangent_frame(&q);
    let max_angle = (1.0 - input.cap).clamp(-1.0, 1.0).acos();
    let mut cap_sup: f64 = 0.0;
    for &(t, _) in &ts {
        for i in 0..=8 {
            let a = max_angle * i as f64 / 8.0;
            for j in 0..32 {
                let b = TAU * j as f64 / 32.0;
                let v: Vec<f64> =
                    (0..3).map(|k| a.cos() * q[k] + a.sin() * (b.cos() * e1[k] + b.sin() * e2[k])).collect();
                let x = ambient_to_sphere(&[v[0], v[1], v[2]]);
                cap_sup = cap_sup.max(h.value(t, &x).abs());
            }
        }
    }
    if cap_sup > 1e-10 * scale {
        return Err(LabError::Precondition(format!(
            "H does not vanish on the cap around the puncture: sup |H| = {cap_sup:e}"
        )));
    }
    Ok(CalabiReport { value, cap_sup })
}

/// Affine correction `h_z̄(z) = h(z̄) + ρ(z − z̄)` and `∫_{−1}^{1} (h − h_z̄) dz`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Correction {
    pub zbar: f64,
    pub rho: f64,
    pub level: f64,
    pub gap: f64,
}

/// `ρ = h'(z̄)` inside, and the nearest point of `2πℤ` to `h'(z̄)` at the poles.
pub fn profile_correction(h: &ProfileFunction, zbar: f64) -> Result<Correction> {
    if !(-1.0..=1.0).contains(&zbar) {
        return Err(LabError::Domain(format!("z̄ = {zbar} outside [-1, 1]")));
    }
    let s = h.slope(zbar);
    let rho = if zbar.abs() == 1.0 { TAU * (s / TAU).round() } else { s };
    let level = h.value(zbar);
    let gap: f64 = composite_gauss(-1.0, 1.0, 64, 8)
        .into_iter()
        .map(|(z, w)| w * (h.value(z) - level - rho * (z - zbar)))
        .sum();
    Ok(Correction { zbar, rho, level, gap })
}

#[derive(Debug, Clone, Serialize)]
pub struct CReport {
    pub c: f64,
    /// The correction attaining the infimum.
    pub best: Correction,
    pub candidates: usize,
}

fn c_unchecked(h: &ProfileFunction) -> Result<CReport> {
    let zbars = match fix_set(h)? {
        // every interior level is a candidate; the affine correction is exact
        FixSet::All => h.samples().collect(),
        FixSet::Parallels { interior } => {
            let mut v = interior;
            v.push(-1.0);
            v.push(1.0);
            v
        }
    };
    let corrections: Vec<Correction> = zbars.iter().map(|&z| profile_correction(h, z)).collect::<Result<_>>()?;
    let best = *corrections.iter().min_by(|a, b| a.gap.abs().total_cmp(&b.gap.abs())).unwrap();
    Ok(CReport {
        c: (best.gap.abs() - 2.0 * TAU).max(0.0),
        best,
        candidates: corrections.len(),
    })
}

/// `c(h) = max(0, −4π + inf_{z̄ ∈ Z ∪ {±1}} |∫(h − h_z̄)|)`.
pub fn c_of_h(h: &ProfileFunction) -> Result<CReport> {
    if !h.slopes_avoid_half_integers() {
        return Err(LabError::Precondition(format!(
            "h'(±1) = ({}, {}) meets 2π(ℤ + ½)",
            h.slope(-1.0),
            h.slope(1.0)
        )));
    }
    c_unchecked(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Certified,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub profile: String,
    pub verdict: Verdict,
    /// Upper bound `A = 4π` on stable geodesic lengths.
    pub upper: f64,
    /// Lower bound `c(h)/2`.
    pub lower: f64,
    pub c: f64,
    pub convexity: Convexity,
    pub slopes_avoid_integers: bool,
    pub slopes_avoid_half_integers: bool,
    /// `K*` for the quadratic family, when a sweep was run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

/// Compares `c(h)/2` with `A = 4π`; certified when no stable geodesic can reach `φ`.
pub fn no_stable_geodesic_certificate(h: &ProfileFunction) -> Result<Certificate> {
    if !h.slopes_avoid_integers() || !h.slopes_avoid_half_integers() {
        return Err(LabError::Precondition(format!(
            "boundary slopes h'(±1) = ({}, {}) must avoid πℤ",
            h.slope(-1.0),
            h.slope(1.0)
        )));
    }
    let c = c_of_h(h)?.c;
    let convexity = h.convexity();
    let upper = SPHERE_AREA;
    let lower = c / 2.0;
    let verdict = if lower > upper && convexity != Convexity::Neither {
        Verdict::Certified
    } else {
        Verdict::Inconclusive
    };
    Ok(Certificate {
        profile: h.label.clone(),
        verdict,
        upper,
        lower,
        c,
        convexity,
        slopes_avoid_integers: true,
        slopes_avoid_half_integers: true,
        threshold: None,
    })
}

/// Smallest `K` in `[lo, hi]` with `c(Kz²/2)/2 > 4π`, by bisection (admissibility
/// of the boundary slopes is ignored along the way).
pub fn quadratic_threshold(lo: f64, hi: f64) -> Result<f64> {
    let excess = |k: f64| c_unchecked(&ProfileFunction::quadratic(k)).map(|r| r.c / 2.0 - SPHERE_AREA);
    if excess(hi)? <= 0.0 || excess(lo)? > 0.0 {
        return Err(LabError::Precondition(format!("threshold not bracketed by [{lo}, {hi}]")));
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > 1e-10 * b.abs().max(1.0) {
        let m = 0.5 * (a + b);
        if excess(m)? > 0.0 {
            b = m;
        } else {
            a = m;
        }
    }
    Ok(b)
}
