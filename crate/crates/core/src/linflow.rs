//! Linearised flows `L' = −J B_t L` at fixed extrema: monodromy, closures,
//! λ-conjugate values, planar rotation numbers and the stability condition.

use crate::error::{LabError, Result};
use crate::grid::Grid;
use crate::hofer::{extremum_table, refine_extremum, IsotopyPath};
use crate::numerics::{compass_minimize, golden_min};
use crate::ode::{dopri5, dopri5_dense, StepControl};
use crate::symplectic::{j_matrix, wrap_angle, PhaseDomain, SharedHamiltonian};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use std::sync::Arc;

/// Default threshold on `σ_min` for an eigenvalue 1 of the monodromy.
pub const DEFAULT_TOL_EIG: f64 = 1e-8;
/// Number of scan points before refinement.
pub const SCAN_POINTS: usize = 512;
/// Subintervals per coarse bracket when resolving nearby closures.
const SUBDIVISION: usize = 32;
const ODE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremumKind {
    Minimum,
    Maximum,
    Unspecified,
}

/// Family of symmetric matrices `B_t`, the 2-jets `½ x·B_t x` at a fixed extremum.
#[derive(Clone)]
pub struct HessianPath {
    pub dim: usize,
    pub kind: ExtremumKind,
    b: Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>,
}

impl std::fmt::Debug for HessianPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "HessianPath(dim={}, B_0={})", self.dim, self.at(0.0))
    }
}

impl HessianPath {
    /// Validates shape and symmetry at a few sample times.
    pub fn new(dim: usize, b: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static) -> Result<Self> {
        if dim < 2 || dim % 2 != 0 {
            return Err(LabError::Domain(format!("dimension {dim} must be even and at least 2")));
        }
        let path = Self {
            dim,
            kind: ExtremumKind::Unspecified,
            b: Arc::new(b),
        };
        for k in 0..=8 {
            let m = path.at(k as f64 / 8.0);
            if m.nrows() != dim || m.ncols() != dim {
                return Err(LabError::Domain(format!("B_t must be {dim}x{dim}")));
            }
            let asym = (&m - m.transpose()).amax();
            if asym > 1e-12 * m.amax().max(1.0) {
                return Err(LabError::Domain(format!("B_t is not symmetric (defect {asym:e})")));
            }
        }
        Ok(path)
    }

    pub fn constant(b: DMatrix<f64>) -> Result<Self> {
        let dim = b.nrows();
        Self::new(dim, move |_| b.clone())
    }

    /// `B_t = c I`.
    pub fn scalar(dim: usize, c: f64) -> Result<Self> {
        Self::constant(DMatrix::identity(dim, dim) * c)
    }

    pub fn with_kind(mut self, kind: ExtremumKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn at(&self, t: f64) -> DMatrix<f64> {
        (self.b)(t)
    }

    /// `λ B_t`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let b = self.b.clone();
        Self {
            dim: self.dim,
            kind: self.kind,
            b: Arc::new(move |t| b(t) * lambda),
        }
    }

    /// Finite-difference Hessians of `H_t` at `point`, in Darboux coordinates
    /// centred there (the pole charts `z = ±(1 − |u|²/2)` on the sphere).
    pub fn from_hamiltonian(h: SharedHamiltonian, domain: PhaseDomain, point: &[f64], step: f64) -> Result<Self> {
        domain.check_point(point)?;
        let chart = darboux_chart(domain, point);
        let dim = domain.dim();
        Self::new(dim, move |t| {
            let f = |u: &[f64]| h.value(t, &chart(u));
            fd_hessian(&f, dim, step)
        })
    }
}

type Chart = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Symplectic chart sending `0` to `point`.
pub fn darboux_chart(domain: PhaseDomain, point: &[f64]) -> Chart {
    let p = point.to_vec();
    match domain {
        PhaseDomain::Euclidean(_) => Arc::new(move |u: &[f64]| p.iter().zip(u).map(|(a, b)| a + b).collect()),
        PhaseDomain::Sphere if p[1] >= 1.0 - 1e-12 => Arc::new(|u: &[f64]| {
            vec![wrap_angle(u[1].atan2(u[0])), 1.0 - 0.5 * (u[0] * u[0] + u[1] * u[1])]
        }),
        PhaseDomain::Sphere if p[1] <= -1.0 + 1e-12 => Arc::new(|u: &[f64]| {
            vec![wrap_angle(-u[1].atan2(u[0])), -1.0 + 0.5 * (u[0] * u[0] + u[1] * u[1])]
        }),
        PhaseDomain::Sphere => Arc::new(move |u: &[f64]| vec![wrap_angle(p[0] + u[0]), p[1] + u[1]]),
    }
}

/// Central second differences at the origin, symmetrised.
pub fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, dim: usize, s: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    let f0 = f(&vec![0.0; dim]);
    let at = |i: usize, a: f64, j: usize, b: f64| {
        let mut u = vec![0.0; dim];
        u[i] += a;
        u[j] += b;
        f(&u)
    };
    for i in 0..dim {
        m[(i, i)] = (at(i, s, i, 0.0) - 2.0 * f0 + at(i, -s, i, 0.0)) / (s * s);
        for j in i + 1..dim {
            let v = (at(i, s, j, s) - at(i, s, j, -s) - at(i, -s, j, s) + at(i, -s, j, -s)) / (4.0 * s * s);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Fundamental solution sampled at the accepted integrator steps.
#[derive(Debug, Clone)]
pub struct Monodromy {
    pub times: Vec<f64>,
    pub matrices: Vec<DMatrix<f64>>,
    /// `max_t ‖L_tᵀ J L_t − J‖`.
    pub symplectic_defect: f64,
}

impl Monodromy {
    pub fn final_matrix(&self) -> &DMatrix<f64> {
        self.matrices.last().expect("monodromy is never empty")
    }
}

pub fn symplectic_defect(l: &DMatrix<f64>) -> f64 {
    let j = j_matrix(l.nrows());
    (l.transpose() * &j * l - j).amax()
}

fn rhs(b: &HessianPath) -> impl FnMut(f64, &[f64], &mut [f64]) + '_ {
    let n = b.dim;
    let j = j_matrix(n);
    move |t, y, dy| {
        let l = DMatrix::from_column_slice(n, n, y);
        let d = -(&j * b.at(t)) * l;
        dy.copy_from_slice(d.as_slice());
    }
}

/// Solves `L' = −J B_t L`, `L_0 = I` on `[0, t_end]`.
pub fn fundamental_solution(b: &HessianPath, t_end: f64, tol: f64) -> Result<Monodromy> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(LabError::Precondition(format!("t' = {t_end} must be positive")));
    }
    let n = b.dim;
    let id = DMatrix::<f64>::identity(n, n);
    let mut times = vec![0.0];
    let mut matrices = vec![id.clone()];
    let mut defect = 0.0f64;
    dopri5(rhs(b), 0.0, id.as_slice(), t_end, StepControl::with_tol(tol), |t, y| {
        let l = DMatrix::from_column_slice(n, n, y);
        defect = defect.max(symplectic_defect(&l));
        times.push(t);
        matrices.push(l);
        Ok(())
    })?;
    Ok(Monodromy {
        times,
        matrices,
        symplectic_defect: defect,
    })
}

/// `L_{t1}` given `L_{t0}`.
fn propagate(b: &HessianPath, t0: f64, t1: f64, l0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = b.dim;
    let y = dopri5(rhs(b), t0, l0.as_slice(), t1, StepControl::with_tol(ODE_TOL), |_, _| Ok(()))?;
    Ok(DMatrix::from_column_slice(n, n, &y))
}

fn on_grid(b: &HessianPath, times: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    let n = b.dim;
    let id = DMatrix::<f64>::identity(n, n);
    let ys = dopri5_dense(rhs(b), id.as_slice(), times, StepControl::with_tol(ODE_TOL))?;
    Ok(ys.into_iter().map(|y| DMatrix::from_column_slice(n, n, &y)).collect())
}

/// Orthonormal basis (columns) of the orthogonal complement of `∩_t ker B_t`.
/// Vectors in the common kernel are constant trajectories and never count as closures.
/// Singular values below `1e-6` of the largest count as kernel, which absorbs
/// finite-difference noise in estimated jets.
pub fn moving_subspace(b: &HessianPath) -> DMatrix<f64> {
    let n = b.dim;
    let samples = 33;
    let mut stack = DMatrix::zeros(samples * n, n);
    for k in 0..samples {
        let m = b.at(k as f64 / (samples - 1) as f64);
        stack.view_mut((k * n, 0), (n, n)).copy_from(&m);
    }
    let svd = stack.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &x| a.max(x));
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| smax > 0.0 && svd.singular_values[i] > 1e-6 * smax)
        .collect();
    let mut q = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        q.set_column(c, &vt.row(i).transpose());
    }
    q
}

/// `(σ_min((L − I) Q), x)` with `x = Q v` the corresponding unit vector.
fn closure_defect(l: &DMatrix<f64>, q: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let n = l.nrows();
    let m = (l - DMatrix::<f64>::identity(n, n)) * q;
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let (mut i_min, mut s_min) = (0, f64::INFINITY);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s < s_min {
            s_min = s;
            i_min = i;
        }
    }
    let v = vt.row(i_min).transpose();
    let mut x = q * v;
    let nx = x.norm();
    if nx > 0.0 {
        x /= nx;
    }
    (s_min, x)
}

/// A nonconstant solution `L_t x` with `L_{t'} x = x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Closure {
    pub t: f64,
    pub vector: Vec<f64>,
    /// `‖L_{t'} x − x‖`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosureScan {
    pub t_max: f64,
    /// Closures with `t' < t_max`, in increasing order.
    pub interior: Vec<Closure>,
    /// Closure at `t' = t_max`, if any.
    pub boundary: Option<Closure>,
    /// Smallest refined `σ_min` found strictly inside `(0, t_max)`.
    pub min_interior_sigma: f64,
}

/// Local minima of `sigma` (indices into `sigma`, which starts at grid index 1).
fn local_minima(sigma: &[f64]) -> Vec<usize> {
    let n = sigma.len();
    (0..n)
        .filter(|&k| (k == 0 || sigma[k] <= sigma[k - 1]) && (k + 1 == n || sigma[k] <= sigma[k + 1]))
        .collect()
}

/// Every closure time of the linearised flow in `(0, t_max]`.
pub fn closure_times(b: &HessianPath, t_max: f64, tol_eig: f64) -> Result<ClosureScan> {
    if !(t_max > 0.0) {
        return Err(LabError::Precondition("t_max must be positive".into()));
    }
    let q = moving_subspace(b);
    let mut scan = ClosureScan {
        t_max,
        interior: Vec::new(),
        boundary: None,
        min_interior_sigma: f64::INFINITY,
    };
    if q.ncols() == 0 {
        return Ok(scan);
    }
    let n = SCAN_POINTS;
    let times: Vec<f64> = (0..=n).map(|k| t_max * k as f64 / n as f64).collect();
    let mats = on_grid(b, &times)?;
    let sigma: Vec<f64> = mats[1..].iter().map(|l| closure_defect(l, &q).0).collect();
    let mut found: Vec<Closure> = Vec::new();
    for m in local_minima(&sigma) {
        let k = m + 1;
        let lo_idx = k - 1;
        let lo = if lo_idx == 0 { 0.5 * times[1] } else { times[lo_idx] };
        let hi = times[(k + 1).min(n)];
        let base = if lo_idx == 0 { 1 } else { lo_idx };
        let l_base = &mats[base];
        let t_base = times[base];
        let eval = |t: f64| -> f64 {
            propagate(b, t_base, t, l_base)
                .map(|l| closure_defect(&l, &q).0)
                .unwrap_or(f64::INFINITY)
        };
        // two closures can share a coarse dip; resolve them on a finer subgrid
        let sub: Vec<f64> = (0..=SUBDIVISION)
            .map(|j| lo + (hi - lo) * j as f64 / SUBDIVISION as f64)
            .collect();
        let sub_sigma: Vec<f64> = sub.iter().map(|&t| eval(t)).collect();
        for j in local_minima(&sub_sigma) {
            let (a, c) = (sub[j.saturating_sub(1)], sub[(j + 1).min(SUBDIVISION)]);
            let (mut t_star, mut s_star) = golden_min(&eval, a, c, 1e-13 * t_max.max(1.0));
            if sub_sigma[j] < s_star {
                t_star = sub[j];
                s_star = sub_sigma[j];
            }
            let at_end = (t_max - t_star).abs() <= 1e-9 * t_max;
            // L_0 = I: a minimum pinned to the left end of the first bracket is that trivial closure
            if lo_idx == 0 && t_star <= lo * (1.0 + 1e-6) {
                continue;
            }
            if !at_end {
                scan.min_interior_sigma = scan.min_interior_sigma.min(s_star);
            }
            if s_star <= tol_eig {
                let l = propagate(b, t_base, t_star, l_base)?;
                let (_, x) = closure_defect(&l, &q);
                let residual = (&l * &x - &x).norm();
                let c = Closure {
                    t: t_star,
                    vector: x.as_slice().to_vec(),
                    residual,
                };
                if at_end {
                    scan.boundary = Some(c);
                } else if found.iter().all(|p| (p.t - t_star).abs() > 1e-9) {
                    found.push(c);
                }
            }
        }
    }
    found.sort_by(|a, b| a.t.total_cmp(&b.t));
    scan.interior = found;
    Ok(scan)
}

/// Smallest `t' ∈ (0, t_max)` with a nonconstant closed trajectory, if any.
pub fn closed_trajectory_in_time(b: &HessianPath, t_max: f64, tol_eig: f64) -> Result<Option<Closure>> {
    Ok(closure_times(b, t_max, tol_eig)?.interior.into_iter().next())
}

/// Closed loop `α(t) = L^λ_t x` of the rescaled jet `λ B_t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaWitness {
    pub lambda: f64,
    pub vector: Vec<f64>,
    pub times: Vec<f64>,
    pub loop_points: Vec<Vec<f64>>,
    /// `‖α(1) − α(0)‖`.
    pub closure_residual: f64,
}

fn monodromy_at_one(b: &HessianPath) -> Result<DMatrix<f64>> {
    let n = b.dim;
    propagate(b, 0.0, 1.0, &DMatrix::identity(n, n))
}

/// Smallest `λ ∈ (0, 1)` for which `λ B_t` has a nonconstant 1-periodic solution.
pub fn lambda_conjugate(b: &HessianPath, tol_eig: f64) -> Result<Option<LambdaWitness>> {
    if b.dim != 2 {
        return Err(LabError::Precondition(
            "λ-conjugate values are computed in dimension 2; use closure times with a slowdown in higher dimensions".into(),
        ));
    }
    let q = moving_subspace(b);
    if q.ncols() == 0 {
        return Ok(None);
    }
    let n = SCAN_POINTS;
    let lambdas: Vec<f64> = (1..n).map(|k| k as f64 / n as f64).collect();
    let sigma: Vec<f64> = lambdas
        .par_iter()
        .map(|&lam| monodromy_at_one(&b.scaled(lam)).map(|l| closure_defect(&l, &q).0))
        .collect::<Result<_>>()?;
    for m in local_minima(&sigma) {
        let lo = if m == 0 { 0.5 / n as f64 } else { lambdas[m - 1] };
        let hi = if m + 1 < lambdas.len() { lambdas[m + 1] } else { 1.0 };
        let eval = |lam: f64| {
            monodromy_at_one(&b.scaled(lam))
                .map(|l| closure_defect(&l, &q).0)
                .unwrap_or(f64::INFINITY)
        };
        let (mut lam, mut s) = golden_min(eval, lo, hi, 1e-14);
        if sigma[m] < s {
            lam = lambdas[m];
            s = sigma[m];
        }
        if s > tol_eig || lam >= 1.0 - 1e-9 {
            continue;
        }
        let bl = b.scaled(lam);
        let l1 = monodromy_at_one(&bl)?;
        let (_, x) = closure_defect(&l1, &q);
        let times: Vec<f64> = (0..=64).map(|k| k as f64 / 64.0).collect();
        let mats = on_grid(&bl, &times)?;
        let loop_points: Vec<Vec<f64>> = mats.iter().map(|l| (l * &x).as_slice().to_vec()).collect();
        let closure_residual = (&l1 * &x - &x).norm();
        return Ok(Some(LambdaWitness {
            lambda: lam,
            vector: x.as_slice().to_vec(),
            times,
            loop_points,
            closure_residual,
        }));
    }
    Ok(None)
}

/// Largest clockwise angle swept on `[0, t']` by a ray under `L_t`, over 64 rays.
pub fn rotation_number_2d(b: &HessianPath, t_end: f64) -> Result<f64> {
    if b.dim != 2 {
        return Err(LabError::Precondition("rotation numbers are planar".into()));
    }
    let mut bmax = 0.0f64;
    for k in 0..=64 {
        let m = b.at(t_end * k as f64 / 64.0);
        let e = SymmetricEigen::new(m.clone()).eigenvalues;
        let scale = m.amax().max(1.0);
        if e.iter().any(|&x| x < -1e-10 * scale) {
            return Err(LabError::Refused(
                "B_t is not positive semidefinite; the ray rotation is not monotone".into(),
            ));
        }
        bmax = bmax.max(e.iter().fold(0.0f64, |a, &x| a.max(x)));
    }
    let steps = 1024usize.max((4.0 * bmax * t_end).ceil() as usize);
    let times: Vec<f64> = (0..=steps).map(|k| t_end * k as f64 / steps as f64).collect();
    let mats = on_grid(b, &times)?;
    let rays = 64;
    let mut best = 0.0f64;
    for r in 0..rays {
        let phi = PI * r as f64 / rays as f64;
        let x = DVector::from_vec(vec![phi.cos(), phi.sin()]);
        let mut prev = phi;
        let mut total = 0.0;
        for l in &mats[1..] {
            let y = l * &x;
            let a = y[1].atan2(y[0]);
            let mut d = a - prev;
            d -= 2.0 * PI * (d / (2.0 * PI)).round();
            total += d;
            prev = a;
        }
        best = best.max(-total);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
    Refused,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremumEvidence {
    pub kind: ExtremumKind,
    pub point: Vec<f64>,
    pub cluster_cells: usize,
    pub isolated: bool,
    /// First closure in `(0, 1)`, if any.
    pub closure: Option<Closure>,
    pub boundary_closure: Option<Closure>,
    pub min_interior_sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub verdict: Verdict,
    pub evidence: Vec<ExtremumEvidence>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct StabilityTolerances {
    pub tol_ext: f64,
    pub tol_eig: f64,
    /// Largest grid cluster still treated as a single isolated extremum.
    pub max_cluster: usize,
    /// Closures with `σ_min` between `tol_eig` and this make the side inconclusive.
    pub near_closure: f64,
}

impl Default for StabilityTolerances {
    fn default() -> Self {
        Self {
            tol_ext: crate::hofer::DEFAULT_TOL_EXT,
            tol_eig: DEFAULT_TOL_EIG,
            max_cluster: 9,
            near_closure: 1e-5,
        }
    }
}

#[derive(PartialEq)]
enum SideStatus {
    Clear,
    Blocked,
    NoneFixed,
    NonIsolated,
    Near,
}

/// Best value of `±H_0` on the sphere of radius two grid spacings around `p`.
/// If it reaches the extremal level, other extrema accumulate at `p` (a ring
/// or a plateau) and `p` is not isolated.
fn probe_isolated(path: &IsotopyPath, p: &[f64], level: f64, band: f64, is_max: bool) -> bool {
    let grid: &Grid = &path.grid;
    let h = path.hamiltonian.as_ref();
    let d = grid.local_dim();
    let rho = 2.0 * grid.spacing();
    let sgn = if is_max { -1.0 } else { 1.0 };
    let f = |u: &[f64]| {
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        let v: Vec<f64> = u.iter().map(|x| rho * x / n).collect();
        sgn * h.value(0.0, &grid.local_point(p, &v))
    };
    let mut starts = Vec::new();
    for m in 0..3usize.pow(d as u32) {
        let mut r = m;
        let u: Vec<f64> = (0..d)
            .map(|_| {
                let o = (r % 3) as f64 - 1.0;
                r /= 3;
                o
            })
            .collect();
        if u.iter().any(|x| *x != 0.0) {
            starts.push(u);
        }
    }
    let start = starts
        .into_iter()
        .min_by(|a, b| f(a).total_cmp(&f(b)))
        .expect("at least one direction");
    let (_, best) = compass_minimize(f, &start, 0.25, 1e-10, 4000 * d);
    best - sgn * level > band
}

fn side_evidence(
    path: &IsotopyPath,
    cells: &[usize],
    kind: ExtremumKind,
    tols: &StabilityTolerances,
    band: f64,
) -> Result<Vec<ExtremumEvidence>> {
    let grid: &Grid = &path.grid;
    let h = path.hamiltonian.as_ref();
    let is_max = kind == ExtremumKind::Maximum;
    let step = (0.01 * grid.spacing()).clamp(1e-4, 1e-2);
    grid.clusters(cells)
        .into_par_iter()
        .map(|cl| {
            let best = *cl
                .iter()
                .min_by(|a, b| {
                    let (va, vb) = (h.value(0.0, &grid.points[**a]), h.value(0.0, &grid.points[**b]));
                    if is_max { vb.total_cmp(&va) } else { va.total_cmp(&vb) }
                })
                .unwrap();
            let mut point = grid.points[best].clone();
            let mut isolated = cl.len() <= tols.max_cluster;
            if isolated {
                let level;
                (point, level) = refine_extremum(h, 0.0, grid, &point, is_max);
                isolated = probe_isolated(path, &point, level, band, is_max);
            }
            if !isolated {
                return Ok(ExtremumEvidence {
                    kind,
                    point,
                    cluster_cells: cl.len(),
                    isolated,
                    closure: None,
                    boundary_closure: None,
                    min_interior_sigma: None,
                });
            }
            if path.domain == PhaseDomain::Sphere && point[1].abs() > 1.0 - 1e-7 {
                point = vec![0.0, point[1].signum()];
            }
            let b = HessianPath::from_hamiltonian(path.hamiltonian.clone(), path.domain, &point, step)?.with_kind(kind);
            let scan = closure_times(&b, 1.0, tols.tol_eig)?;
            Ok(ExtremumEvidence {
                kind,
                point,
                cluster_cells: cl.len(),
                isolated,
                closure: scan.interior.first().cloned(),
                boundary_closure: scan.boundary.clone(),
                min_interior_sigma: Some(scan.min_interior_sigma),
            })
        })
        .collect()
}

fn status(ev: &[ExtremumEvidence], tols: &StabilityTolerances) -> SideStatus {
    if ev.is_empty() {
        return SideStatus::NoneFixed;
    }
    let iso: Vec<&ExtremumEvidence> = ev.iter().filter(|e| e.isolated).collect();
    if iso.is_empty() {
        return SideStatus::NonIsolated;
    }
    if iso
        .iter()
        .any(|e| e.closure.is_none() && e.min_interior_sigma.unwrap_or(0.0) > tols.near_closure)
    {
        return SideStatus::Clear;
    }
    if iso.iter().all(|e| e.closure.is_some()) {
        return SideStatus::Blocked;
    }
    SideStatus::Near
}

/// Necessary condition for stability: a fixed minimum and a fixed maximum
/// whose linearised flows have no nonconstant closed trajectory in `(0, 1)`.
pub fn stability_necessary_check(path: &IsotopyPath, tols: &StabilityTolerances) -> Result<StabilityReport> {
    let table = extremum_table(path, tols.tol_ext)?;
    let fixed = crate::hofer::fixed_extrema_from_table(path, &table, 0.0, 1.0);
    let range = table[0].1.level - table[0].0.level;
    let band = (tols.tol_ext * range).max(1e-12 * table[0].1.level.abs().max(table[0].0.level.abs()));
    let mins = side_evidence(path, &fixed.min_cells, ExtremumKind::Minimum, tols, band)?;
    let maxs = side_evidence(path, &fixed.max_cells, ExtremumKind::Maximum, tols, band)?;
    let mut diagnostics = Vec::new();
    let mut verdict = Verdict::Pass;
    let mut refused = false;
    let mut near = false;
    for (name, ev) in [("minimum", &mins), ("maximum", &maxs)] {
        match status(ev, tols) {
            SideStatus::Clear => {}
            SideStatus::Blocked => {
                verdict = Verdict::Fail;
                diagnostics.push(format!("every isolated fixed {name} has a closed linearised trajectory in (0,1)"));
            }
            SideStatus::NoneFixed => {
                verdict = Verdict::Fail;
                diagnostics.push(format!("no fixed {name}"));
            }
            SideStatus::NonIsolated => {
                refused = true;
                diagnostics.push(format!(
                    "fixed {name} set is not isolated ({} cluster(s), largest {} cells); the criterion needs isolated fixed extrema",
                    ev.len(),
                    ev.iter().map(|e| e.cluster_cells).max().unwrap_or(0)
                ));
            }
            SideStatus::Near => {
                near = true;
                diagnostics.push(format!("isolated fixed {name} has a near-closure above tol_eig"));
            }
        }
    }
    if verdict != Verdict::Fail {
        if refused {
            verdict = Verdict::Refused;
        } else if near {
            verdict = Verdict::Inconclusive;
        }
    }
    let mut evidence = mins;
    evidence.extend(maxs);
    Ok(StabilityReport {
        verdict,
        evidence,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_monodromy_matches_exponential() {
        let c = 1.3;
        let m = fundamental_solution(&HessianPath::scalar(2, c).unwrap(), 1.0, 1e-12).unwrap();
        let l = m.final_matrix();
        // exp(−cJ): (x, y) ↦ (cos c x + sin c y, −sin c x + cos c y)
        let e = DMatrix::from_row_slice(2, 2, &[c.cos(), c.sin(), -c.sin(), c.cos()]);
        assert!((l - e).amax() < 1e-10);
        assert!(m.symplectic_defect < 1e-10);
    }

    #[test]
    fn closure_at_half_for_four_pi() {
        let b = HessianPath::scalar(2, 4.0 * PI).unwrap();
        let c = closed_trajectory_in_time(&b, 1.0, DEFAULT_TOL_EIG).unwrap().unwrap();
        assert!((c.t - 0.5).abs() < 1e-9 && c.residual < 1e-8);
    }

    #[test]
    fn rank_one_jet_never_closes() {
        let b = HessianPath::constant(DMatrix::from_row_slice(2, 2, &[5.0, 0.0, 0.0, 0.0])).unwrap();
        let s = closure_times(&b, 1.0, DEFAULT_TOL_EIG).unwrap();
        assert!(s.interior.is_empty() && s.boundary.is_none());
    }

    #[test]
    fn pole_chart_hessians() {
        let h: SharedHamiltonian = Arc::new(crate::symplectic::FnHamiltonian::new(2, |_, x| x[1]));
        let n = HessianPath::from_hamiltonian(h.clone(), PhaseDomain::Sphere, &[0.0, 1.0], 1e-3).unwrap();
        assert!((n.at(0.3) + DMatrix::<f64>::identity(2, 2)).amax() < 1e-6);
        let s = HessianPath::from_hamiltonian(h, PhaseDomain::Sphere, &[0.0, -1.0], 1e-3).unwrap();
        assert!((s.at(0.3) - DMatrix::<f64>::identity(2, 2)).amax() < 1e-6);
    }

    #[test]
    fn asymmetric_jets_are_rejected() {
        assert!(HessianPath::constant(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).is_err());
        assert!(HessianPath::scalar(3, 1.0).is_err());
    }
}
