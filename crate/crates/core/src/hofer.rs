//! Hofer length, extremum sets, fixed extrema, the window criteria for
//! geodesics and ℒ-critical paths, and the first-variation formula.

use crate::error::{LabError, Result};
use crate::grid::{Grid, Sampling};
use crate::numerics::{compass_minimize, simpson_weights};
use crate::symplectic::{flow, Hamiltonian, PhaseDomain, SharedHamiltonian, Trajectory};
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeSet;
use std::sync::Arc;

/// Relative tolerance defining extremum sets.
pub const DEFAULT_TOL_EXT: f64 = 1e-6;
/// Number of windows used by [`geodesic_check`] when none is given.
pub const DEFAULT_WINDOWS: usize = 16;
/// Largest exceptional-time fraction accepted by [`smooth_point_necessary_check`].
pub const DEFAULT_EXCEPTIONAL_THRESHOLD: f64 = 0.05;

/// A Hamiltonian isotopy sampled on a time grid and a spatial grid.
#[derive(Clone)]
pub struct IsotopyPath {
    pub domain: PhaseDomain,
    pub hamiltonian: SharedHamiltonian,
    pub grid: Arc<Grid>,
    pub times: Vec<f64>,
    /// Composite Simpson weights matching `times`.
    pub weights: Vec<f64>,
    pub tol: f64,
}

impl IsotopyPath {
    /// Uniform time grid of `panels` panels on `[0, 1]`.
    pub fn new(domain: PhaseDomain, hamiltonian: SharedHamiltonian, sampling: &Sampling, panels: usize) -> Result<Self> {
        Self::with_breakpoints(domain, hamiltonian, sampling, panels, &[])
    }

    /// Time grid refined so that every breakpoint is a node; Simpson is applied
    /// piecewise between breakpoints.
    pub fn with_breakpoints(
        domain: PhaseDomain,
        hamiltonian: SharedHamiltonian,
        sampling: &Sampling,
        panels: usize,
        breakpoints: &[f64],
    ) -> Result<Self> {
        if hamiltonian.dim() != domain.dim() {
            return Err(LabError::Domain("Hamiltonian and phase domain dimensions differ".into()));
        }
        let grid = Arc::new(Grid::build(domain, sampling)?);
        let (times, weights) = time_grid(0.0, 1.0, panels, breakpoints)?;
        Ok(Self {
            domain,
            hamiltonian,
            grid,
            times,
            weights,
            tol: 1e-10,
        })
    }

    /// Same sampling, different generating Hamiltonian.
    pub fn with_hamiltonian(&self, h: SharedHamiltonian) -> Self {
        Self {
            hamiltonian: h,
            ..self.clone()
        }
    }

    /// Trajectories of the tracked points over `[0, 1]`.
    pub fn track(&self, points: &[Vec<f64>]) -> Result<Vec<Trajectory>> {
        points
            .par_iter()
            .map(|p| flow(self.domain, self.hamiltonian.as_ref(), p, 0.0, 1.0, self.tol))
            .collect()
    }

    /// `min_t sup_x |X_{H_t}(x)|` over the spatial grid; the path is regular when positive.
    pub fn regularity(&self) -> Result<f64> {
        let h = self.hamiltonian.as_ref();
        let per_t: Vec<f64> = self
            .times
            .par_iter()
            .map(|&t| {
                self.grid
                    .points
                    .iter()
                    .map(|p| h.gradient(t, p).iter().map(|g| g * g).sum::<f64>().sqrt())
                    .fold(0.0, f64::max)
            })
            .collect();
        Ok(per_t.into_iter().fold(f64::INFINITY, f64::min))
    }
}

/// Nodes and composite Simpson weights on `[a, b]` with the given breakpoints.
pub fn time_grid(a: f64, b: f64, panels: usize, breakpoints: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if panels < 2 || !(b > a) {
        return Err(LabError::Config("time grid needs at least 2 panels on a nonempty interval".into()));
    }
    let mut cuts: Vec<f64> = vec![a];
    let mut inner: Vec<f64> = breakpoints.iter().copied().filter(|&s| s > a && s < b).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
    cuts.extend(inner);
    cuts.push(b);
    let mut times = vec![a];
    let mut weights = vec![0.0];
    for w in cuts.windows(2) {
        let len = w[1] - w[0];
        let mut m = ((panels as f64) * len / (b - a)).round() as usize;
        m = m.max(2);
        m += m % 2;
        let ws = simpson_weights(w[0], w[1], m);
        *weights.last_mut().unwrap() += ws[0];
        for k in 1..=m {
            times.push(w[0] + len * k as f64 / m as f64);
            weights.push(ws[k]);
        }
    }
    Ok((times, weights))
}

/// Extreme values of `H_t` over the sampled region together with where they occur.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extremes {
    pub min: f64,
    pub argmin: Vec<f64>,
    pub max: f64,
    pub argmax: Vec<f64>,
}

fn grid_values(h: &dyn Hamiltonian, t: f64, grid: &Grid) -> Result<Vec<f64>> {
    let v: Vec<f64> = grid.points.par_iter().map(|p| h.value(t, p)).collect();
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(LabError::Domain(format!(
            "H is not finite at t = {t}, x = {:?}",
            grid.points[i]
        )));
    }
    Ok(v)
}

/// Local refinement of a minimum (or maximum) of `H_t` started at `base`.
pub fn refine_extremum(h: &dyn Hamiltonian, t: f64, grid: &Grid, base: &[f64], is_max: bool) -> (Vec<f64>, f64) {
    let sgn = if is_max { -1.0 } else { 1.0 };
    let (p, v) = refine(grid, |x| sgn * h.value(t, x), base);
    (p, sgn * v)
}

/// Local refinement of a minimum of `f` started at the grid point `base`.
fn refine<F: Fn(&[f64]) -> f64>(grid: &Grid, f: F, base: &[f64]) -> (Vec<f64>, f64) {
    let d = grid.local_dim();
    let h = grid.spacing();
    let (u, v) = compass_minimize(
        |u| f(&grid.local_point(base, u)),
        &vec![0.0; d],
        h,
        1e-10 * h.max(1e-3),
        4000 * d,
    );
    (grid.local_point(base, &u), v)
}

/// One representative per cluster of grid-local minima of `v` lying within
/// `slack` of the grid minimum, best first.
fn local_min_candidates(grid: &Grid, v: &[f64], slack: f64, cap: usize) -> Vec<usize> {
    let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
    let cells: Vec<usize> = (0..v.len())
        .filter(|&i| v[i] <= vmin + slack && grid.neighbors(i).iter().all(|&j| v[j] >= v[i]))
        .collect();
    let mut reps: Vec<usize> = grid
        .clusters(&cells)
        .into_iter()
        .map(|c| *c.iter().min_by(|a, b| v[**a].total_cmp(&v[**b])).unwrap())
        .collect();
    reps.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
    reps.truncate(cap);
    reps
}

struct Side {
    level: f64,
    at: Vec<f64>,
    /// (cell, refined point, refined value) per candidate
    refined: Vec<(usize, Vec<f64>, f64)>,
}

fn side(grid: &Grid, v: &[f64], f: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Side {
    let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
    let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = 0.02 * (vmax - vmin);
    let cands = local_min_candidates(grid, v, slack, 32);
    let refined: Vec<(usize, Vec<f64>, f64)> = cands
        .par_iter()
        .map(|&c| {
            let (p, val) = refine(grid, f, &grid.points[c]);
            (c, p, val)
        })
        .collect();
    let i0 = (0..v.len()).min_by(|a, b| v[*a].total_cmp(&v[*b])).unwrap();
    let mut level = v[i0];
    let mut at = grid.points[i0].clone();
    for (_, p, val) in &refined {
        if *val < level {
            level = *val;
            at = p.clone();
        }
    }
    Side { level, at, refined }
}

/// Extreme values of `H_t` over `grid`, refined by local search.
pub fn extremes(h: &dyn Hamiltonian, t: f64, grid: &Grid) -> Result<Extremes> {
    let v = grid_values(h, t, grid)?;
    Ok(extremes_from_values(h, t, grid, &v).0)
}

fn extremes_from_values(h: &dyn Hamiltonian, t: f64, grid: &Grid, v: &[f64]) -> (Extremes, Side, Side) {
    let lo = side(grid, v, &|p| h.value(t, p));
    let neg: Vec<f64> = v.iter().map(|x| -x).collect();
    let hi = side(grid, &neg, &|p| -h.value(t, p));
    (
        Extremes {
            min: lo.level,
            argmin: lo.at.clone(),
            max: -hi.level,
            argmax: hi.at.clone(),
        },
        lo,
        hi,
    )
}

/// `Totvar H_t = sup H_t − inf H_t` over the sampled region.
pub fn total_variation(h: &dyn Hamiltonian, t: f64, grid: &Grid) -> Result<f64> {
    if grid.is_empty() {
        return Err(LabError::Config("empty grid".into()));
    }
    let e = extremes(h, t, grid)?;
    Ok((e.max - e.min).max(0.0))
}

/// `(t, Totvar H_t)` at every node of the path's time grid.
pub fn length_profile(path: &IsotopyPath) -> Result<Vec<(f64, f64)>> {
    path.times
        .par_iter()
        .map(|&t| total_variation(path.hamiltonian.as_ref(), t, &path.grid).map(|v| (t, v)))
        .collect()
}

/// `∫_0^1 Totvar H_t dt` by composite Simpson on the path's time grid.
pub fn hofer_length(path: &IsotopyPath) -> Result<f64> {
    let prof = length_profile(path)?;
    Ok(prof.iter().zip(&path.weights).map(|((_, v), w)| v * w).sum())
}

/// Grid approximation of `minset H_t` or `maxset H_t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremumSet {
    pub t: f64,
    pub level: f64,
    pub cells: Vec<usize>,
    /// Representative point for each entry of `cells`.
    pub points: Vec<Vec<f64>>,
}

impl ExtremumSet {
    pub fn cluster_count(&self, grid: &Grid) -> usize {
        grid.clusters(&self.cells).len()
    }
}

fn collect_set(t: f64, grid: &Grid, v: &[f64], s: &Side, band: f64) -> ExtremumSet {
    let mut cells = Vec::new();
    let mut points = Vec::new();
    let mut taken = BTreeSet::new();
    for (c, p, val) in &s.refined {
        if *val <= s.level + band && taken.insert(*c) {
            cells.push(*c);
            points.push(p.clone());
        }
    }
    for (i, &x) in v.iter().enumerate() {
        if x <= s.level + band && taken.insert(i) {
            cells.push(i);
            points.push(grid.points[i].clone());
        }
    }
    ExtremumSet {
        t,
        level: s.level,
        cells,
        points,
    }
}

/// `(minset H_t, maxset H_t)` with band `tol_ext · (sup − inf)`.
pub fn extremum_sets(h: &dyn Hamiltonian, t: f64, grid: &Grid, tol_ext: f64) -> Result<(ExtremumSet, ExtremumSet)> {
    let v = grid_values(h, t, grid)?;
    let (e, lo, hi) = extremes_from_values(h, t, grid, &v);
    let band = tol_ext * (e.max - e.min).max(0.0);
    let minset = collect_set(t, grid, &v, &lo, band);
    let neg: Vec<f64> = v.iter().map(|x| -x).collect();
    let mut maxset = collect_set(t, grid, &neg, &hi, band);
    maxset.level = -maxset.level;
    Ok((minset, maxset))
}

/// Extremum sets at every node of the path's time grid.
pub fn extremum_table(path: &IsotopyPath, tol_ext: f64) -> Result<Vec<(ExtremumSet, ExtremumSet)>> {
    path.times
        .par_iter()
        .map(|&t| extremum_sets(path.hamiltonian.as_ref(), t, &path.grid, tol_ext))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedExtremaReport {
    pub window: (f64, f64),
    pub fixed_minima: Vec<Vec<f64>>,
    pub fixed_maxima: Vec<Vec<f64>>,
    #[serde(skip)]
    pub min_cells: Vec<usize>,
    #[serde(skip)]
    pub max_cells: Vec<usize>,
}

fn intersect(grid: &Grid, sets: &[&ExtremumSet]) -> Vec<usize> {
    let Some(first) = sets.first() else {
        return Vec::new();
    };
    let mut keep: BTreeSet<usize> = first.cells.iter().copied().collect();
    for s in &sets[1..] {
        let d = grid.dilate(&s.cells);
        keep.retain(|c| d.contains(c));
        if keep.is_empty() {
            break;
        }
    }
    keep.into_iter().collect()
}

/// Fixed extrema on the window `[a, b]` from a precomputed [`extremum_table`].
pub fn fixed_extrema_from_table(path: &IsotopyPath, table: &[(ExtremumSet, ExtremumSet)], a: f64, b: f64) -> FixedExtremaReport {
    let eps = 1e-12;
    let idx: Vec<usize> = (0..path.times.len())
        .filter(|&k| path.times[k] >= a - eps && path.times[k] <= b + eps)
        .collect();
    let mins: Vec<&ExtremumSet> = idx.iter().map(|&k| &table[k].0).collect();
    let maxs: Vec<&ExtremumSet> = idx.iter().map(|&k| &table[k].1).collect();
    let min_cells = intersect(&path.grid, &mins);
    let max_cells = intersect(&path.grid, &maxs);
    let pts = |c: &[usize]| c.iter().map(|&i| path.grid.points[i].clone()).collect();
    FixedExtremaReport {
        window: (a, b),
        fixed_minima: pts(&min_cells),
        fixed_maxima: pts(&max_cells),
        min_cells,
        max_cells,
    }
}

/// Points lying in `minset H_t` (resp. `maxset H_t`) for every sampled `t ∈ [0, 1]`.
pub fn fixed_extrema(path: &IsotopyPath, tol_ext: f64) -> Result<FixedExtremaReport> {
    let table = extremum_table(path, tol_ext)?;
    Ok(fixed_extrema_from_table(path, &table, 0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowVerdict {
    pub a: f64,
    pub b: f64,
    pub fixed_minima: usize,
    pub fixed_maxima: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowReport {
    pub windows: Vec<WindowVerdict>,
    pub pass: bool,
}

fn window_report(path: &IsotopyPath, n_windows: usize, tol_ext: f64) -> Result<WindowReport> {
    if n_windows == 0 {
        return Err(LabError::Config("at least one window is required".into()));
    }
    let table = extremum_table(path, tol_ext)?;
    let windows: Vec<WindowVerdict> = (0..n_windows)
        .map(|s| {
            let a = s as f64 / n_windows as f64;
            let b = (s + 1) as f64 / n_windows as f64;
            let r = fixed_extrema_from_table(path, &table, a, b);
            WindowVerdict {
                a,
                b,
                fixed_minima: r.fixed_minima.len(),
                fixed_maxima: r.fixed_maxima.len(),
                pass: !r.fixed_minima.is_empty() && !r.fixed_maxima.is_empty(),
            }
        })
        .collect();
    let pass = windows.iter().all(|w| w.pass);
    Ok(WindowReport { windows, pass })
}

/// Necessary condition for a geodesic: a fixed minimum and a fixed maximum
/// on each of `n_windows` uniform windows.
pub fn geodesic_check(path: &IsotopyPath, n_windows: usize, tol_ext: f64) -> Result<WindowReport> {
    window_report(path, n_windows, tol_ext)
}

/// Characterisation of ℒ-critical paths: fixed extrema over all of `[0, 1]`.
pub fn lcritical_check(path: &IsotopyPath, tol_ext: f64) -> Result<WindowReport> {
    window_report(path, 1, tol_ext)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothPointReport {
    pub exceptional_times: Vec<f64>,
    pub exceptional_fraction: f64,
    pub threshold: f64,
    pub pass: bool,
}

fn is_singleton(grid: &Grid, s: &ExtremumSet) -> bool {
    let cl = grid.clusters(&s.cells);
    cl.len() == 1 && cl[0].len() <= 9
}

/// Unique minimum and maximum at all sampled times except a fraction below `threshold`.
pub fn smooth_point_necessary_check(path: &IsotopyPath, tol_ext: f64, threshold: f64) -> Result<SmoothPointReport> {
    let table = extremum_table(path, tol_ext)?;
    let exceptional_times: Vec<f64> = table
        .iter()
        .zip(&path.times)
        .filter(|((lo, hi), _)| !(is_singleton(&path.grid, lo) && is_singleton(&path.grid, hi)))
        .map(|(_, t)| *t)
        .collect();
    let exceptional_fraction = exceptional_times.len() as f64 / path.times.len() as f64;
    Ok(SmoothPointReport {
        pass: exceptional_fraction < threshold,
        exceptional_times,
        exceptional_fraction,
        threshold,
    })
}

/// Hessian of `H_t` at `p` in the grid's local coordinates.
fn local_hessian(h: &dyn Hamiltonian, t: f64, grid: &Grid, p: &[f64]) -> DMatrix<f64> {
    let d = grid.local_dim();
    let s = 1e-4;
    let f = |u: &[f64]| h.value(t, &grid.local_point(p, u));
    let mut m = DMatrix::zeros(d, d);
    let e = |i: usize, a: f64, j: usize, b: f64| {
        let mut u = vec![0.0; d];
        u[i] += a;
        u[j] += b;
        u
    };
    for i in 0..d {
        for j in i..d {
            let val = (f(&e(i, s, j, s)) - f(&e(i, s, j, -s)) - f(&e(i, -s, j, s)) + f(&e(i, -s, j, -s))) / (4.0 * s * s);
            m[(i, j)] = val;
            m[(j, i)] = val;
        }
    }
    m
}

/// Whether `s` is a single cluster at whose best point the Hessian is definite
/// with the sign appropriate to the side.
fn certified(h: &dyn Hamiltonian, grid: &Grid, s: &ExtremumSet, is_max: bool) -> bool {
    if grid.clusters(&s.cells).len() != 1 {
        return false;
    }
    let best = s
        .points
        .iter()
        .min_by(|a, b| {
            let (va, vb) = (h.value(s.t, a), h.value(s.t, b));
            if is_max { vb.total_cmp(&va) } else { va.total_cmp(&vb) }
        })
        .unwrap();
    let hess = local_hessian(h, s.t, grid, best);
    let eig = SymmetricEigen::new(hess).eigenvalues;
    let scale = eig.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let floor = 1e-6 * scale.max(1e-8);
    if is_max {
        eig.iter().all(|&x| x < -floor)
    } else {
        eig.iter().all(|&x| x > floor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstVariationReport {
    pub value: f64,
    /// Times where unique non-degenerate extrema could not be certified.
    pub uncertified_times: Vec<f64>,
    pub forced: bool,
}

/// `∫_0^1 (sup_{maxset H_t} G'_t − inf_{minset H_t} G'_t) dt` for a tangent
/// field `G` vanishing at `t = 0, 1`.
///
/// Unless `assume_continuity` is set, the continuity hypothesis is certified
/// through unique non-degenerate extrema at every sampled time, and the call is
/// refused when that fails.
pub fn first_variation(
    path: &IsotopyPath,
    g: &dyn Hamiltonian,
    assume_continuity: bool,
    tol_ext: f64,
) -> Result<FirstVariationReport> {
    let h = path.hamiltonian.as_ref();
    let table = extremum_table(path, tol_ext)?;
    let uncertified_times: Vec<f64> = table
        .par_iter()
        .filter(|(lo, hi)| !(certified(h, &path.grid, lo, false) && certified(h, &path.grid, hi, true)))
        .map(|(lo, _)| lo.t)
        .collect();
    if !uncertified_times.is_empty() && !assume_continuity {
        return Err(LabError::Refused(format!(
            "continuity hypothesis not certified at {} of {} sampled times (first at t = {})",
            uncertified_times.len(),
            path.times.len(),
            uncertified_times[0]
        )));
    }
    let value = table
        .iter()
        .zip(&path.weights)
        .map(|((lo, hi), w)| {
            let sup = hi.points.iter().map(|p| g.time_derivative(hi.t, p)).fold(f64::NEG_INFINITY, f64::max);
            let inf = lo.points.iter().map(|p| g.time_derivative(lo.t, p)).fold(f64::INFINITY, f64::min);
            w * (sup - inf)
        })
        .sum();
    Ok(FirstVariationReport {
        value,
        uncertified_times,
        forced: assume_continuity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symplectic::{FnHamiltonian, ZeroHamiltonian};
    use std::f64::consts::PI;

    fn sphere() -> Sampling {
        Sampling::Sphere { n_theta: 32, n_z: 17 }
    }

    #[test]
    fn time_grid_weights_integrate_constants() {
        let (t, w) = time_grid(0.0, 1.0, 16, &[0.3, 0.7]).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(t.iter().any(|x| (x - 0.3).abs() < 1e-15));
        let cubic: f64 = t.iter().zip(&w).map(|(t, w)| w * t.powi(3)).sum();
        assert!((cubic - 0.25).abs() < 1e-14);
    }

    #[test]
    fn total_variation_examples() {
        let g = Grid::build(PhaseDomain::Sphere, &sphere()).unwrap();
        let z = FnHamiltonian::new(2, |_, x| x[1]);
        assert!((total_variation(&z, 0.0, &g).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(total_variation(&ZeroHamiltonian(2), 0.0, &g).unwrap(), 0.0);
        let disc = Grid::build(
            PhaseDomain::Euclidean(2),
            &Sampling::Ball { center: vec![0.0, 0.0], radius: 1.0, n: 41 },
        )
        .unwrap();
        let r2 = FnHamiltonian::new(2, |_, x| PI * (x[0] * x[0] + x[1] * x[1]));
        assert!((total_variation(&r2, 0.0, &disc).unwrap() - PI).abs() < 1e-9);
    }

    #[test]
    fn refinement_finds_off_grid_maximum() {
        let g = Grid::build(PhaseDomain::Euclidean(2), &Sampling::Box { lo: vec![-1.0; 2], hi: vec![1.0; 2], n: 11 }).unwrap();
        let h = FnHamiltonian::new(2, |_, x| -((x[0] - 0.123).powi(2) + (x[1] + 0.057).powi(2)));
        let e = extremes(&h, 0.0, &g).unwrap();
        assert!(e.max.abs() < 1e-12);
        assert!((e.argmax[0] - 0.123).abs() < 1e-6);
    }

    #[test]
    fn sphere_height_extremum_sets_are_poles() {
        let g = Grid::build(PhaseDomain::Sphere, &sphere()).unwrap();
        let z = FnHamiltonian::new(2, |_, x| x[1]);
        let (lo, hi) = extremum_sets(&z, 0.0, &g, DEFAULT_TOL_EXT).unwrap();
        assert_eq!(lo.cells, vec![0]);
        assert_eq!(hi.cells, vec![g.len() - 1]);
    }
}
