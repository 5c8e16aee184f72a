use super::{dense_cloud, finish, rotate_about, shorten_no_fixed_min, NoFixedPlan, PlanKind, ShorteningResult, Side};
use super::{scrubbing::norm, ClosedLoop, ScrubLoop};
use crate::error::{LabError, Result};
use crate::hofer::{extremes, hofer_length, IsotopyPath};
use crate::linflow::{fd_hessian, lambda_conjugate, HessianPath, LambdaWitness};
use crate::numerics::{
    composite_gauss, compass_minimize, plateau, plateau_deriv, plateau_deriv2, smoothstep, smoothstep_deriv,
    smoothstep_deriv2, smoothstep_integral,
};
use crate::symplectic::{apply_j, Hamiltonian, PhaseDomain, SharedHamiltonian};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::sync::Arc;

type Profile = Arc<dyn Fn(f64) -> (f64, f64, f64) + Send + Sync>;

/// Radial function `f(|x − center|)` with its first two derivatives, supported in `D(reach)`.
#[derive(Clone)]
struct Bump {
    center: Vec<f64>,
    reach: f64,
    profile: Profile,
}

/// `β(t)` with vanishing integral and its primitive `b(t) = ∫_0^t β`.
#[derive(Clone, Debug)]
enum Schedule {
    /// `hi − (hi − lo) w(t)`, `w` a smoothstep window equal to 1 on `|t − t0| ≤ ξ`.
    Window { t0: f64, xi: f64, lo: f64, hi: f64 },
    /// `mean − μ̂(t)`, `μ̂` the cubic Hermite interpolant of samples on a uniform grid.
    Flatten { values: Vec<f64>, slopes: Vec<f64>, mean: f64 },
}

fn window(t: f64, t0: f64, xi: f64) -> f64 {
    let a = t0 - 2.0 * xi;
    if t <= t0 - xi {
        smoothstep((t - a) / xi)
    } else if t <= t0 + xi {
        1.0
    } else {
        1.0 - smoothstep((t - t0 - xi) / xi)
    }
}

/// Antiderivative of [`window`] vanishing at `−∞`.
fn window_primitive(t: f64, t0: f64, xi: f64) -> f64 {
    let a = t0 - 2.0 * xi;
    if t <= a {
        0.0
    } else if t <= t0 - xi {
        xi * smoothstep_integral((t - a) / xi)
    } else if t <= t0 + xi {
        0.5 * xi + (t - (t0 - xi))
    } else {
        let u = ((t - t0 - xi) / xi).min(1.0);
        2.5 * xi + xi * (u - smoothstep_integral(u))
    }
}

fn hermite_piece(p: &[f64], t: f64) -> (usize, f64, f64) {
    let n = p.len() - 1;
    let h = 1.0 / n as f64;
    let k = ((t.clamp(0.0, 1.0) / h) as usize).min(n - 1);
    (k, t.clamp(0.0, 1.0) / h - k as f64, h)
}

fn hermite_value(p: &[f64], m: &[f64], t: f64) -> f64 {
    let (k, s, h) = hermite_piece(p, t);
    let (s2, s3) = (s * s, s * s * s);
    (2.0 * s3 - 3.0 * s2 + 1.0) * p[k] + (s3 - 2.0 * s2 + s) * h * m[k] + (-2.0 * s3 + 3.0 * s2) * p[k + 1]
        + (s3 - s2) * h * m[k + 1]
}

/// `∫_0^t` of the Hermite interpolant.
fn hermite_primitive(p: &[f64], m: &[f64], t: f64) -> f64 {
    let (k, s, h) = hermite_piece(p, t);
    let full: f64 = (0..k).map(|j| h * (p[j] + p[j + 1]) / 2.0 + h * h * (m[j] - m[j + 1]) / 12.0).sum();
    let (s2, s3, s4) = (s * s, s * s * s, s * s * s * s);
    let part = h
        * ((s4 / 2.0 - s3 + s) * p[k]
            + (s4 / 4.0 - 2.0 * s3 / 3.0 + s2 / 2.0) * h * m[k]
            + (-s4 / 2.0 + s3) * p[k + 1]
            + (s4 / 4.0 - s3 / 3.0) * h * m[k + 1]);
    full + part
}

impl Schedule {
    fn window(t0: f64, xi: f64, depth: f64) -> Self {
        let w = window_primitive(1.0, t0, xi) - window_primitive(0.0, t0, xi);
        let lo = -depth;
        let hi = depth * w / (1.0 - w);
        Schedule::Window { t0, xi, lo, hi }
    }

    fn flatten(values: Vec<f64>) -> Self {
        let n = values.len() - 1;
        let h = 1.0 / n as f64;
        let slopes: Vec<f64> = (0..=n)
            .map(|k| {
                if k == 0 {
                    (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h)
                } else if k == n {
                    (3.0 * values[n] - 4.0 * values[n - 1] + values[n - 2]) / (2.0 * h)
                } else {
                    (values[k + 1] - values[k - 1]) / (2.0 * h)
                }
            })
            .collect();
        let mean = hermite_primitive(&values, &slopes, 1.0);
        Schedule::Flatten { values, slopes, mean }
    }

    fn beta(&self, t: f64) -> f64 {
        match self {
            Schedule::Window { t0, xi, lo, hi } => hi - (hi - lo) * window(t, *t0, *xi),
            Schedule::Flatten { values, slopes, mean } => mean - hermite_value(values, slopes, t),
        }
    }

    fn primitive(&self, t: f64) -> f64 {
        match self {
            Schedule::Window { t0, xi, lo, hi } => {
                hi * t - (hi - lo) * (window_primitive(t, *t0, *xi) - window_primitive(0.0, *t0, *xi))
            }
            Schedule::Flatten { values, slopes, mean } => mean * t - hermite_primitive(values, slopes, t),
        }
    }

    fn range(&self) -> (f64, f64) {
        (0..=512).map(|k| self.beta(k as f64 / 512.0)).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        })
    }
}

/// `K_t = β(t) Σ f_i + H_t ∘ R_t⁻¹`, where `R_t`, the flow of `β(t) Σ f_i`, rotates
/// each disc about its centre by `−b(t) f_i'(r)/r`.
struct Twisted {
    bumps: Vec<Bump>,
    schedule: Schedule,
    inner: SharedHamiltonian,
}

impl Twisted {
    fn bump_at(&self, x: &[f64]) -> Option<(&Bump, f64)> {
        self.bumps.iter().find_map(|b| {
            let r = super::dist(x, &b.center);
            (r < b.reach).then_some((b, r))
        })
    }

    /// `R_t⁻¹ x` and its Jacobian.
    fn unwind(&self, t: f64, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let d = x.len();
        let Some((b, r)) = self.bump_at(x) else {
            return (x.to_vec(), DMatrix::identity(d, d));
        };
        let (_, f1, f2) = (b.profile)(r);
        if r < 1e-300 || (f1 == 0.0 && f2 == 0.0) {
            return (x.to_vec(), DMatrix::identity(d, d));
        }
        let bt = self.schedule.primitive(t);
        let phi = bt * f1 / r;
        let dphi = bt * (f2 / r - f1 / (r * r));
        let y = rotate_about(&b.center, x, phi);
        let (s, c) = phi.sin_cos();
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let u: Vec<f64> = (0..2).map(|i| y[i] - b.center[i]).collect();
        let ju = apply_j(&u);
        let m = DMatrix::from_fn(2, 2, |i, j| rot[(i, j)] + ju[i] * dphi * (x[j] - b.center[j]) / r);
        (y, m)
    }
}

impl Hamiltonian for Twisted {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        let own = self
            .bump_at(x)
            .map(|(b, r)| self.schedule.beta(t) * (b.profile)(r).0)
            .unwrap_or(0.0);
        let (y, _) = self.unwind(t, x);
        own + self.inner.value(t, &y)
    }
    fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let (y, m) = self.unwind(t, x);
        let g = m.transpose() * DVector::from_vec(self.inner.gradient(t, &y));
        let mut out = g.as_slice().to_vec();
        if let Some((b, r)) = self.bump_at(x) {
            let k = self.schedule.beta(t) * (b.profile)(r).1 / r.max(1e-300);
            for i in 0..2 {
                out[i] += k * (x[i] - b.center[i]);
            }
        }
        out
    }
}

/// `F_t + H_t ∘ ψ_t⁻¹`, the loop `ψ` centred at `center`.
struct Scrubbed {
    lp: ScrubLoop,
    center: Vec<f64>,
    inner: SharedHamiltonian,
}

impl Scrubbed {
    fn local(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.center).map(|(a, c)| a - c).collect()
    }
    fn global(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.center).map(|(a, c)| a + c).collect()
    }
}

impl Hamiltonian for Scrubbed {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        let y = self.local(x);
        if norm(&y) >= 3.0 * self.lp.delta {
            return self.inner.value(t, x);
        }
        match (self.lp.generator(t, &y), self.lp.apply_inverse(t, &y)) {
            (Ok((f, _)), Ok(z)) => f + self.inner.value(t, &self.global(&z)),
            _ => f64::NAN,
        }
    }
    fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let y = self.local(x);
        if norm(&y) >= 3.0 * self.lp.delta {
            return self.inner.gradient(t, x);
        }
        match (self.lp.generator(t, &y), self.lp.apply_inverse_jacobian(t, &y)) {
            (Ok((_, gf)), Ok((z, m))) => {
                let g = m.transpose() * DVector::from_vec(self.inner.gradient(t, &self.global(&z)));
                gf.iter().zip(g.iter()).map(|(a, b)| a + b).collect()
            }
            _ => vec![f64::NAN; 2],
        }
    }
}

/// `H'_t(x) = s·(H_t(σx) − H_t(p))` with `σ` the reflection `(x₁, x₂) ↦ (x₁, −x₂)`
/// about `p` when mirroring (`s = −1`), the identity otherwise (`s = 1`).
struct Normalized {
    inner: SharedHamiltonian,
    p: Vec<f64>,
    mirror: bool,
}

impl Normalized {
    fn sigma(&self, x: &[f64]) -> Vec<f64> {
        if self.mirror {
            vec![x[0], 2.0 * self.p[1] - x[1]]
        } else {
            x.to_vec()
        }
    }
    fn sign(&self) -> f64 {
        if self.mirror {
            -1.0
        } else {
            1.0
        }
    }
}

impl Hamiltonian for Normalized {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.sign() * (self.inner.value(t, &self.sigma(x)) - self.inner.value(t, &self.p))
    }
    fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut g = self.inner.gradient(t, &self.sigma(x));
        if self.mirror {
            g[1] = -g[1];
        }
        g.into_iter().map(|v| self.sign() * v).collect()
    }
}

/// Undoes [`Normalized`] on a generator built for the mirrored path:
/// `K(x) = s·K'(σx)` generates `σ φ' σ`.
struct Unmirrored {
    inner: SharedHamiltonian,
    p: Vec<f64>,
}

impl Hamiltonian for Unmirrored {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        -self.inner.value(t, &[x[0], 2.0 * self.p[1] - x[1]])
    }
    fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let g = self.inner.gradient(t, &[x[0], 2.0 * self.p[1] - x[1]]);
        vec![-g[0], g[1]]
    }
}

fn annulus_samples(p: &[f64], r0: f64, r1: f64, rings: usize, spokes: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(rings * spokes);
    for i in 0..rings {
        let r = r0 + (r1 - r0) * i as f64 / (rings - 1) as f64;
        for j in 0..spokes {
            let a = 2.0 * std::f64::consts::PI * j as f64 / spokes as f64;
            out.push(vec![p[0] + r * a.cos(), p[1] + r * a.sin()]);
        }
    }
    out
}

fn sample_times(path: &IsotopyPath, extra: usize) -> Vec<f64> {
    let mut ts: Vec<f64> = path.times.clone();
    ts.extend((0..=extra).map(|k| k as f64 / extra as f64));
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    ts
}

/// Smallest value over `(t, x)` samples, with the place it occurs.
fn sampled_min(h: &dyn Hamiltonian, times: &[f64], pts: &[Vec<f64>]) -> (f64, f64, Vec<f64>) {
    times
        .par_iter()
        .map(|&t| {
            pts.iter()
                .map(|x| (h.value(t, x), t, x.clone()))
                .fold((f64::INFINITY, t, vec![]), |a, b| if b.0 < a.0 { b } else { a })
        })
        .reduce(|| (f64::INFINITY, 0.0, vec![]), |a, b| if b.0 < a.0 { b } else { a })
}

/// Parameters of the annulus-positivity deformation.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct AnnulusPlan {
    pub delta: f64,
    /// Half-width of the window where `β` sits at its minimum.
    pub xi: f64,
    /// `|β| < ε`.
    pub eps: f64,
    /// Rings and spokes of the polar sample of the annulus.
    pub rings: usize,
    pub spokes: usize,
}

impl AnnulusPlan {
    pub fn new(delta: f64, xi: f64, eps: f64) -> Self {
        Self {
            delta,
            xi,
            eps,
            rings: 16,
            spokes: 32,
        }
    }
}

#[derive(Clone, Serialize)]
pub struct AnnulusReport {
    pub original_length: f64,
    pub new_length: f64,
    pub t0: f64,
    /// Smallest sampled value of the old and new generator on `D(4δ) − D(δ/2)`.
    pub min_before: f64,
    pub min_after: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Whether the rank-one fallback (two discs along a kernel line) was used.
    pub fallback: bool,
    #[serde(skip)]
    pub path: IsotopyPath,
}

impl std::fmt::Debug for AnnulusReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnnulusReport")
            .field("original_length", &self.original_length)
            .field("new_length", &self.new_length)
            .field("t0", &self.t0)
            .field("min_before", &self.min_before)
            .field("min_after", &self.min_after)
            .field("beta", &(self.beta_min, self.beta_max))
            .field("fallback", &self.fallback)
            .finish()
    }
}

fn jet(h: &dyn Hamiltonian, t: f64, p: &[f64], delta: f64) -> DMatrix<f64> {
    let f = |u: &[f64]| h.value(t, &[p[0] + u[0], p[1] + u[1]]);
    fd_hessian(&f, 2, 1e-3 * delta)
}

/// Twist built from `h` (already normalised, min 0 at `p`) making it positive on
/// the annulus. Returns the new generator and the report fields.
fn annulus_twist(
    h: SharedHamiltonian,
    p: &[f64],
    plan: &AnnulusPlan,
    times: &[f64],
    grid_pts: &[Vec<f64>],
) -> Result<(SharedHamiltonian, f64, f64, f64, bool)> {
    let d = plan.delta;
    if !(d > 0.0 && plan.xi > 0.0 && plan.eps > 0.0) || plan.rings < 2 || plan.spokes < 3 {
        return Err(LabError::Config("annulus plan needs positive δ, ξ, ε and a nondegenerate sample".into()));
    }
    // regularity and the size guard ε < M/2
    let maxes: Vec<(f64, f64)> = times
        .par_iter()
        .map(|&t| (t, grid_pts.iter().map(|x| h.value(t, x).abs()).fold(0.0, f64::max)))
        .collect();
    if let Some((t, _)) = maxes.iter().find(|(_, m)| *m <= 1e-14) {
        return Err(LabError::Refused(format!("H_t vanishes identically at t = {t}")));
    }
    let big_m = maxes
        .iter()
        .map(|(t, _)| grid_pts.iter().map(|x| h.value(*t, x)).fold(f64::NEG_INFINITY, f64::max))
        .fold(f64::INFINITY, f64::min);
    if plan.eps >= big_m / 2.0 {
        return Err(LabError::Refused(format!("ε = {} is not smaller than M/2 = {}", plan.eps, big_m / 2.0)));
    }
    // pick the most nondegenerate jet
    let jets: Vec<(f64, f64, f64, DMatrix<f64>)> = times
        .par_iter()
        .map(|&t| {
            let b = jet(h.as_ref(), t, p, d);
            let e = b.clone().symmetric_eigen();
            (t, e.eigenvalues.min(), e.eigenvalues.max(), b)
        })
        .collect();
    let scale = jets.iter().map(|j| j.2.abs()).fold(1e-300, f64::max);
    let best = jets.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let fallback = best.1 <= 1e-6 * scale;
    let (t0, bumps) = if !fallback {
        let prof: Profile = Arc::new(move |r| {
            let (a, a1, a2) = (
                smoothstep((r - d / 4.0) / (d / 4.0)),
                smoothstep_deriv((r - d / 4.0) / (d / 4.0)) / (d / 4.0),
                smoothstep_deriv2((r - d / 4.0) / (d / 4.0)) / (d * d / 16.0),
            );
            let (c, c1, c2) = (plateau(r, 4.0 * d, 5.0 * d), plateau_deriv(r, 4.0 * d, 5.0 * d), plateau_deriv2(r, 4.0 * d, 5.0 * d));
            (a * c, a1 * c + a * c1, a2 * c + 2.0 * a1 * c1 + a * c2)
        });
        (
            best.0,
            vec![Bump {
                center: p.to_vec(),
                reach: 5.0 * d,
                profile: prof,
            }],
        )
    } else {
        // rank-one jets: two discs along the kernel of B_{t1}, the negative
        // window placed at a time t2 whose kernel differs
        let kernel = |b: &DMatrix<f64>| {
            let e = b.clone().symmetric_eigen();
            let i = if e.eigenvalues[0] <= e.eigenvalues[1] { 0 } else { 1 };
            e.eigenvectors.column(i).into_owned()
        };
        let rank1: Vec<&(f64, f64, f64, DMatrix<f64>)> = jets.iter().filter(|j| j.2 > 1e-6 * scale).collect();
        let first = rank1
            .first()
            .ok_or_else(|| LabError::Refused("every sampled 2-jet vanishes; no fallback available".into()))?;
        let k1 = kernel(&first.3);
        let second = rank1
            .iter()
            .max_by(|a, b| kernel(&a.3).dot(&k1).abs().total_cmp(&kernel(&b.3).dot(&k1).abs()).reverse())
            .unwrap();
        if kernel(&second.3).dot(&k1).abs() > 0.99 {
            return Err(LabError::Refused("degenerate 2-jets share their kernel; the rank-one fallback is unavailable".into()));
        }
        let prof: Profile = Arc::new(move |r| {
            (plateau(r, 1.75 * d, 2.1 * d), plateau_deriv(r, 1.75 * d, 2.1 * d), plateau_deriv2(r, 1.75 * d, 2.1 * d))
        });
        let bumps = [1.0, -1.0]
            .iter()
            .map(|s| Bump {
                center: vec![p[0] + s * 2.25 * d * k1[0], p[1] + s * 2.25 * d * k1[1]],
                reach: 2.1 * d,
                profile: prof.clone(),
            })
            .collect();
        (second.0, bumps)
    };
    let w = window_primitive(1.0, t0, plan.xi) - window_primitive(0.0, t0, plan.xi);
    if !(w < 1.0) {
        return Err(LabError::Config("ξ too large: the window covers [0, 1]".into()));
    }
    let depth = 0.9 * plan.eps * ((1.0 - w) / w).min(1.0);
    let schedule = Schedule::window(t0, plan.xi, depth);
    let (bmin, bmax) = schedule.range();
    // supports must sit below M/2 and above |β_min| while β < 0
    let support: Vec<Vec<f64>> = bumps
        .iter()
        .flat_map(|b| annulus_samples(&b.center, 0.0, b.reach, plan.rings, plan.spokes))
        .filter(|x| super::dist(x, p) > d / 4.0)
        .collect();
    let neg_times: Vec<f64> = times
        .iter()
        .copied()
        .filter(|&t| schedule.beta(t) < 0.0)
        .chain((0..=64).map(|k| t0 - 2.0 * plan.xi + 4.0 * plan.xi * k as f64 / 64.0).filter(|t| (0.0..=1.0).contains(t)))
        .collect();
    let (low, lt, lx) = sampled_min(h.as_ref(), &neg_times, &support);
    if neg_times.is_empty() || low <= -bmin {
        return Err(LabError::Refused(format!(
            "H_t = {low:e} at t = {lt}, x = {lx:?} does not dominate |β_min| = {:e}; shrink ε or ξ",
            -bmin
        )));
    }
    let high = times
        .par_iter()
        .map(|&t| support.iter().map(|x| h.value(t, x)).fold(f64::NEG_INFINITY, f64::max))
        .reduce(|| f64::NEG_INFINITY, f64::max);
    if high + bmax >= big_m {
        return Err(LabError::Refused(format!(
            "H_t reaches {high:e} on the twist support; adding β would move the maximum (M = {big_m:e})"
        )));
    }
    let twisted = Twisted {
        bumps,
        schedule,
        inner: h,
    };
    Ok((Arc::new(twisted), t0, bmin, bmax, fallback))
}

fn check_plane(path: &IsotopyPath, p: &[f64]) -> Result<()> {
    if path.domain != PhaseDomain::Euclidean(2) {
        return Err(LabError::Domain("the scrubbing construction runs in ℝ²".into()));
    }
    if p.len() != 2 {
        return Err(LabError::Domain("the fixed point must have two coordinates".into()));
    }
    Ok(())
}

/// Deforms the path near the fixed minimum `p` so that its generator is strictly
/// positive on `D(4δ) − D(δ/2)`, without changing endpoints or length. The returned
/// path is generated by the normalised Hamiltonian (minimum 0 at `p`) plus the twist.
pub fn step1_annulus_positivity(path: &IsotopyPath, p: &[f64], plan: &AnnulusPlan) -> Result<AnnulusReport> {
    check_plane(path, p)?;
    let h: SharedHamiltonian = Arc::new(Normalized {
        inner: path.hamiltonian.clone(),
        p: p.to_vec(),
        mirror: false,
    });
    let times = sample_times(path, 64);
    let ring = annulus_samples(p, plan.delta / 2.0, 4.0 * plan.delta, plan.rings, plan.spokes);
    let min_before = sampled_min(h.as_ref(), &times, &ring).0;
    let (k, t0, beta_min, beta_max, fallback) = annulus_twist(h, p, plan, &times, &path.grid.points)?;
    let (min_after, t, x) = sampled_min(k.as_ref(), &times, &ring);
    if !(min_after > 0.0) {
        return Err(LabError::Refused(format!("generator not positive on the annulus: {min_after:e} at t = {t}, x = {x:?}")));
    }
    let new_path = path.with_hamiltonian(k);
    Ok(AnnulusReport {
        original_length: hofer_length(path)?,
        new_length: hofer_length(&new_path)?,
        t0,
        min_before,
        min_after,
        beta_min,
        beta_max,
        fallback,
        path: new_path,
    })
}

/// Parameters of the scrubbing motion.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct ScrubPlan {
    pub delta: f64,
    /// Translation amplitude; defaults to `safety ×` the largest admissible value.
    pub rho: Option<f64>,
    pub safety: f64,
    /// Window and bound of the annulus step, used only when positivity fails.
    pub xi: f64,
    pub eps: f64,
    /// Uniform samples of `min_{D(4δ)} K_t` used to flatten it.
    pub flatten_samples: usize,
    /// Time panels of the output path (at least those of the input).
    pub panels: usize,
    /// Cap on the endpoint cloud drawn from a 4× denser box near `p`.
    pub cloud_points: usize,
    /// Plan for the final non-fixed-minimum step when scrubbing alone does not shorten.
    pub step5: Option<NoFixedPlan>,
}

impl ScrubPlan {
    pub fn new(delta: f64) -> Self {
        Self {
            delta,
            rho: None,
            safety: 0.9,
            xi: 0.05,
            eps: 1e-3,
            flatten_samples: 64,
            panels: 64,
            cloud_points: 24,
            step5: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScrubReport {
    pub result: ShorteningResult,
    pub lambda: f64,
    pub rho: f64,
    pub rho_max: f64,
    /// `inf` of the normalised generator on `D(4δ) − D(δ/2)`.
    pub annulus_min: f64,
    pub step1_applied: bool,
    /// `∫ min_{D(4δ)} K_t dt` before flattening.
    pub min_integral: f64,
    /// `(1 − λ)λρ² ∫ H̃_t(α) dt`.
    pub predicted_gain: f64,
    /// The same expression at `α₀`.
    pub predicted_gain_alpha0: f64,
    /// `max_t |max K_t − max H_t|` over the path's time nodes.
    pub max_mismatch: f64,
    pub step5_applied: bool,
}

/// Scrubbing near a fixed extremum of a path in ℝ²: composes with the loop of
/// translations by `ρ(α − α(0))`, flattens `min_{D(4δ)}` in time, and returns the
/// shorter path. `witness` refers to the 2-jets of `H − H(p)` at a minimum, or of
/// `−(H − H(p))∘σ` (σ the reflection in the horizontal line through `p`) at a maximum;
/// when absent it is computed.
pub fn scrubbing_motion(
    path: &IsotopyPath,
    p: &[f64],
    side: Side,
    witness: Option<&LambdaWitness>,
    plan: &ScrubPlan,
) -> Result<ScrubReport> {
    check_plane(path, p)?;
    let d = plan.delta;
    if !(d > 0.0 && plan.safety > 0.0 && plan.safety <= 1.0) || plan.flatten_samples < 4 {
        return Err(LabError::Config("scrubbing plan needs δ > 0, safety in (0, 1] and ≥ 4 samples".into()));
    }
    let mirror = side == Side::Max;
    let h0: SharedHamiltonian = Arc::new(Normalized {
        inner: path.hamiltonian.clone(),
        p: p.to_vec(),
        mirror,
    });
    let times = sample_times(path, 64);

    // λ-witness of the jets at p
    let jets = {
        let hh = h0.clone();
        let pp = p.to_vec();
        HessianPath::new(2, move |t| jet(hh.as_ref(), t, &pp, d))?
    };
    let owned;
    let w = match witness {
        Some(w) => w,
        None => {
            owned = lambda_conjugate(&jets, 1e-8)?
                .ok_or_else(|| LabError::Refused("no λ-conjugate value in (0, 1): the jets do not rotate enough".into()))?;
            &owned
        }
    };
    let alpha = ClosedLoop::from_witness(&jets, w)?;

    // Step 1 only when positivity on the annulus fails
    let ring = annulus_samples(p, d / 2.0, 4.0 * d, 16, 32);
    let (mut m, _, _) = sampled_min(h0.as_ref(), &times, &ring);
    let mut h1 = h0.clone();
    let step1_applied = !(m > 0.0);
    if step1_applied {
        let ap = AnnulusPlan::new(d, plan.xi, plan.eps);
        h1 = annulus_twist(h0.clone(), p, &ap, &times, &path.grid.points)?.0;
        m = sampled_min(h1.as_ref(), &times, &ring).0;
        if !(m > 0.0) {
            return Err(LabError::Refused(format!("annulus positivity failed after the twist: {m:e}")));
        }
    }

    // amplitude guards
    let amax = alpha.max_norm();
    let vmax = alpha.max_speed();
    let rho_max = (d / (6.0 * amax)).min(m / (12.0 * d * vmax));
    let rho = plan.rho.unwrap_or(plan.safety * rho_max);
    let mut violated = vec![];
    if rho * amax > d / 6.0 {
        violated.push(format!("ρ·max‖α‖ = {:e} > δ/6 = {:e}", rho * amax, d / 6.0));
    }
    if 4.0 * d * rho * vmax >= m / 3.0 {
        violated.push(format!("4δρ·max‖α'‖ = {:e} ≥ m/3 = {:e}", 4.0 * d * rho * vmax, m / 3.0));
    }
    if !(rho > 0.0) {
        violated.push("ρ must be positive".into());
    }
    if !violated.is_empty() {
        return Err(LabError::Refused(format!("scrubbing guards fail: {}", violated.join("; "))));
    }
    let lp = ScrubLoop::new(alpha.clone(), d, rho)?;
    let k: SharedHamiltonian = Arc::new(Scrubbed {
        lp,
        center: p.to_vec(),
        inner: h1,
    });

    // flatten t ↦ min_{D(4δ)} K_t
    let n = plan.flatten_samples;
    let disc = annulus_samples(p, 0.0, 4.0 * d, 17, 32);
    let mu: Vec<f64> = (0..=n)
        .into_par_iter()
        .map(|i| {
            let t = i as f64 / n as f64;
            let (x0, _) = disc
                .iter()
                .map(|x| (x, k.value(t, x)))
                .fold((&disc[0], f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            let f = |x: &[f64]| {
                if super::dist(x, p) > 4.0 * d {
                    f64::INFINITY
                } else {
                    k.value(t, x)
                }
            };
            compass_minimize(f, x0, d / 8.0, 1e-12 * d, 20_000).1
        })
        .collect();
    let schedule = Schedule::flatten(mu.clone());
    let min_integral = match &schedule {
        Schedule::Flatten { mean, .. } => *mean,
        _ => unreachable!(),
    };
    let flat_prof: Profile =
        Arc::new(move |r| (plateau(r, 3.0 * d, 4.0 * d), plateau_deriv(r, 3.0 * d, 4.0 * d), plateau_deriv2(r, 3.0 * d, 4.0 * d)));
    let k4: SharedHamiltonian = Arc::new(Twisted {
        bumps: vec![Bump {
            center: p.to_vec(),
            reach: 4.0 * d,
            profile: flat_prof,
        }],
        schedule,
        inner: k,
    });
    let (lowest, lt, lx) = sampled_min(k4.as_ref(), &times, &disc);
    if !(lowest > 0.0) {
        return Err(LabError::Refused(format!(
            "flattened generator not positive near p: {lowest:e} at t = {lt}, x = {lx:?}"
        )));
    }

    // predicted leading term
    let c = alpha.value(0.0);
    let (mut ia, mut ia0) = (0.0, 0.0);
    for (t, wt) in composite_gauss(0.0, 1.0, 64, 8) {
        let a = DVector::from_vec(alpha.value(t));
        let a0 = &a - DVector::from_column_slice(&c);
        let bt = jets.at(t);
        ia += wt * 0.5 * a.dot(&(&bt * &a));
        ia0 += wt * 0.5 * a0.dot(&(&bt * &a0));
    }
    let kk = (1.0 - w.lambda) * w.lambda * rho * rho;

    // back to the original frame
    let ref_h: SharedHamiltonian = Arc::new(Normalized {
        inner: path.hamiltonian.clone(),
        p: p.to_vec(),
        mirror: false,
    });
    let new_h: SharedHamiltonian = if mirror {
        Arc::new(Unmirrored { inner: k4, p: p.to_vec() })
    } else {
        k4
    };
    let mut parameters = BTreeMap::new();
    parameters.insert("delta".into(), d);
    parameters.insert("rho".into(), rho);
    parameters.insert("lambda".into(), w.lambda);
    parameters.insert("annulus_min".into(), m);
    let mut cloud = dense_cloud(path, 4);
    cloud.retain(|x| super::dist(x, p) < 4.5 * d);
    let stride = (cloud.len() / plan.cloud_points.max(1)).max(1);
    let cloud: Vec<Vec<f64>> = cloud.into_iter().step_by(stride).collect();
    let ref_path = path.with_hamiltonian(ref_h);
    let panels = plan.panels.max(path.times.len() / 2);
    let notes = vec![format!("scrubbing at {p:?} on the {side:?} side")];
    let scrubbed = finish(PlanKind::Scrubbing, &ref_path, new_h.clone(), panels, &[], cloud.clone(), parameters.clone(), notes.clone());
    let (result, step5_applied) = match (scrubbed, &plan.step5) {
        (Ok(r), _) => (r, false),
        (Err(LabError::Refused(msg)), Some(p5)) if msg.contains("did not shorten") => {
            let mid = path.with_hamiltonian(new_h);
            let mut r = shorten_no_fixed_min(&mid, p5)?;
            r.kind = PlanKind::Scrubbing;
            r.original_length = hofer_length(&ref_path)?;
            r.margin = r.original_length - r.new_length;
            (r, true)
        }
        (Err(e), _) => return Err(e),
    };
    let max_mismatch = result
        .path
        .times
        .par_iter()
        .map(|&t| {
            let a = extremes(result.path.hamiltonian.as_ref(), t, &result.path.grid)?;
            let b = extremes(ref_path.hamiltonian.as_ref(), t, &path.grid)?;
            Ok(if mirror { (a.min - b.min).abs() } else { (a.max - b.max).abs() })
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(ScrubReport {
        result,
        lambda: w.lambda,
        rho,
        rho_max,
        annulus_min: m,
        step1_applied,
        min_integral,
        predicted_gain: kk * ia,
        predicted_gain_alpha0: kk * ia0,
        max_mismatch,
        step5_applied,
    })
}
