//! Sample grids over phase domains, with cell adjacency for clustering.

use crate::error::{LabError, Result};
use crate::symplectic::{ambient_to_sphere, sphere_to_ambient, PhaseDomain};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::f64::consts::TAU;

/// How to sample a phase domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampling {
    /// `n` equispaced points per axis on the box `[lo, hi]`.
    Box { lo: Vec<f64>, hi: Vec<f64>, n: usize },
    /// Box grid around `center` restricted to the closed ball of `radius`.
    Ball { center: Vec<f64>, radius: f64, n: usize },
    /// `n_theta` longitudes times `n_z` latitude rows; the two pole rows are single points.
    Sphere { n_theta: usize, n_z: usize },
}

#[derive(Debug, Clone)]
enum Layout {
    Rect {
        lo: Vec<f64>,
        hi: Vec<f64>,
        n: usize,
        ball: Option<(Vec<f64>, f64)>,
        /// full box index -> active index
        lookup: Vec<Option<usize>>,
        /// active index -> full box index
        full: Vec<usize>,
    },
    Sphere {
        n_theta: usize,
        n_z: usize,
    },
}

#[derive(Debug, Clone)]
pub struct Grid {
    pub domain: PhaseDomain,
    pub points: Vec<Vec<f64>>,
    layout: Layout,
}

const MAX_POINTS: usize = 20_000_000;

impl Grid {
    pub fn build(domain: PhaseDomain, sampling: &Sampling) -> Result<Grid> {
        match (domain, sampling) {
            (PhaseDomain::Euclidean(d), Sampling::Box { lo, hi, n }) => {
                if lo.len() != d || hi.len() != d {
                    return Err(LabError::Config(format!("box bounds must have {d} entries")));
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
                    return Err(LabError::Config("box needs lo < hi on every axis".into()));
                }
                Self::rect(domain, lo.clone(), hi.clone(), *n, None)
            }
            (PhaseDomain::Euclidean(d), Sampling::Ball { center, radius, n }) => {
                if center.len() != d {
                    return Err(LabError::Config(format!("ball centre must have {d} entries")));
                }
                if !(*radius > 0.0) {
                    return Err(LabError::Config("ball radius must be positive".into()));
                }
                let lo = center.iter().map(|c| c - radius).collect();
                let hi = center.iter().map(|c| c + radius).collect();
                Self::rect(domain, lo, hi, *n, Some((center.clone(), *radius)))
            }
            (PhaseDomain::Sphere, Sampling::Sphere { n_theta, n_z }) => {
                if *n_theta < 3 || *n_z < 3 {
                    return Err(LabError::Config("sphere grid needs n_theta >= 3 and n_z >= 3".into()));
                }
                let mut points = vec![vec![0.0, -1.0]];
                for j in 1..n_z - 1 {
                    let z = -1.0 + 2.0 * j as f64 / (*n_z - 1) as f64;
                    for i in 0..*n_theta {
                        points.push(vec![TAU * i as f64 / *n_theta as f64, z]);
                    }
                }
                points.push(vec![0.0, 1.0]);
                Ok(Grid {
                    domain,
                    points,
                    layout: Layout::Sphere {
                        n_theta: *n_theta,
                        n_z: *n_z,
                    },
                })
            }
            _ => Err(LabError::Config("sampling kind does not match the phase domain".into())),
        }
    }

    fn rect(domain: PhaseDomain, lo: Vec<f64>, hi: Vec<f64>, n: usize, ball: Option<(Vec<f64>, f64)>) -> Result<Grid> {
        let d = lo.len();
        if n < 2 {
            return Err(LabError::Config("grid needs at least 2 points per axis".into()));
        }
        let total = (n as f64).powi(d as i32);
        if total > MAX_POINTS as f64 {
            return Err(LabError::Config(format!("grid of {total} points is too large")));
        }
        let total = total as usize;
        let mut lookup = vec![None; total];
        let mut full = Vec::new();
        let mut points = Vec::new();
        for idx in 0..total {
            let mut rem = idx;
            let mut p = vec![0.0; d];
            for k in 0..d {
                let i = rem % n;
                rem /= n;
                p[k] = lo[k] + (hi[k] - lo[k]) * i as f64 / (n - 1) as f64;
            }
            if let Some((c, r)) = &ball {
                let dist2: f64 = p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist2 > r * r * (1.0 + 1e-12) {
                    continue;
                }
            }
            lookup[idx] = Some(points.len());
            full.push(idx);
            points.push(p);
        }
        if points.is_empty() {
            return Err(LabError::Config("empty grid".into()));
        }
        Ok(Grid {
            domain,
            points,
            layout: Layout::Rect {
                lo,
                hi,
                n,
                ball,
                lookup,
                full,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Typical spacing between neighbouring points.
    pub fn spacing(&self) -> f64 {
        match &self.layout {
            Layout::Rect { lo, hi, n, .. } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| (b - a) / (*n - 1) as f64)
                .fold(f64::INFINITY, f64::min),
            Layout::Sphere { n_theta, n_z } => (TAU / *n_theta as f64).min(2.0 / (*n_z - 1) as f64),
        }
    }

    /// All cells sharing a face, edge or corner with `i` (periodic in θ on the sphere).
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        match &self.layout {
            Layout::Rect { n, lookup, full, lo, .. } => {
                let d = lo.len();
                let n = *n as isize;
                let mut coords = vec![0isize; d];
                let mut rem = full[i];
                for c in coords.iter_mut() {
                    *c = (rem % n as usize) as isize;
                    rem /= n as usize;
                }
                let mut out = Vec::new();
                let combos = 3usize.pow(d as u32);
                'outer: for m in 0..combos {
                    let mut r = m;
                    let mut idx = 0isize;
                    let mut stride = 1isize;
                    let mut all_zero = true;
                    for &c in &coords {
                        let off = (r % 3) as isize - 1;
                        r /= 3;
                        if off != 0 {
                            all_zero = false;
                        }
                        let v = c + off;
                        if v < 0 || v >= n {
                            continue 'outer;
                        }
                        idx += v * stride;
                        stride *= n;
                    }
                    if all_zero {
                        continue;
                    }
                    if let Some(a) = lookup[idx as usize] {
                        out.push(a);
                    }
                }
                out
            }
            Layout::Sphere { n_theta, n_z } => {
                let nt = *n_theta;
                let rows = n_z - 2;
                let last = self.points.len() - 1;
                let cell = |row: usize, col: usize| 1 + row * nt + col;
                if i == 0 {
                    return (0..nt).map(|c| cell(0, c)).collect();
                }
                if i == last {
                    return (0..nt).map(|c| cell(rows - 1, c)).collect();
                }
                let row = (i - 1) / nt;
                let col = (i - 1) % nt;
                let mut out = Vec::new();
                for dr in [-1isize, 0, 1] {
                    let r = row as isize + dr;
                    if r < 0 {
                        out.push(0);
                        continue;
                    }
                    if r >= rows as isize {
                        out.push(last);
                        continue;
                    }
                    for dc in [nt - 1, 0, 1] {
                        if dr == 0 && dc == 0 {
                            continue;
                        }
                        out.push(cell(r as usize, (col + dc) % nt));
                    }
                }
                out
            }
        }
    }

    /// Connected components of `cells` under [`neighbors`](Self::neighbors).
    pub fn clusters(&self, cells: &[usize]) -> Vec<Vec<usize>> {
        let set: BTreeSet<usize> = cells.iter().copied().collect();
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for &c in &set {
            if !seen.insert(c) {
                continue;
            }
            let mut comp = vec![c];
            let mut stack = vec![c];
            while let Some(x) = stack.pop() {
                for y in self.neighbors(x) {
                    if set.contains(&y) && seen.insert(y) {
                        comp.push(y);
                        stack.push(y);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// `cells` together with all their neighbours.
    pub fn dilate(&self, cells: &[usize]) -> BTreeSet<usize> {
        let mut out: BTreeSet<usize> = cells.iter().copied().collect();
        for &c in cells {
            out.extend(self.neighbors(c));
        }
        out
    }

    /// Maps local coordinates `u ∈ ℝ^d` around `base` into the sampled region:
    /// translation plus projection for boxes and balls, the tangent plane at
    /// `base` followed by radial projection on the sphere.
    pub fn local_point(&self, base: &[f64], u: &[f64]) -> Vec<f64> {
        match &self.layout {
            Layout::Rect { lo, hi, ball, .. } => {
                let mut p: Vec<f64> = base.iter().zip(u).map(|(a, b)| a + b).collect();
                if let Some((c, r)) = ball {
                    let dist: f64 = p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    if dist > *r {
                        for (x, cc) in p.iter_mut().zip(c) {
                            *x = cc + (*x - cc) * r / dist;
                        }
                    }
                }
                for k in 0..p.len() {
                    p[k] = p[k].clamp(lo[k], hi[k]);
                }
                p
            }
            Layout::Sphere { .. } => {
                let q = sphere_to_ambient(base);
                let (e1, e2) = tangent_frame(&q);
                let v = [
                    q[0] + u[0] * e1[0] + u[1] * e2[0],
                    q[1] + u[0] * e1[1] + u[1] * e2[1],
                    q[2] + u[0] * e1[2] + u[1] * e2[2],
                ];
                ambient_to_sphere(&v)
            }
        }
    }

    pub fn local_dim(&self) -> usize {
        self.domain.dim()
    }
}

/// Orthonormal basis of the tangent plane at the unit vector `q`.
pub fn tangent_frame(q: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
    let a = if q[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let d = a[0] * q[0] + a[1] * q[1] + a[2] * q[2];
    let mut e1 = [a[0] - d * q[0], a[1] - d * q[1], a[2] - d * q[2]];
    let n1 = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    for x in e1.iter_mut() {
        *x /= n1;
    }
    let e2 = [
        q[1] * e1[2] - q[2] * e1[1],
        q[2] * e1[0] - q[0] * e1[2],
        q[0] * e1[1] - q[1] * e1[0],
    ];
    (e1, e2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_grid_adjacency_is_symmetric() {
        let g = Grid::build(PhaseDomain::Sphere, &Sampling::Sphere { n_theta: 8, n_z: 6 }).unwrap();
        assert_eq!(g.len(), 2 + 8 * 4);
        for i in 0..g.len() {
            for j in g.neighbors(i) {
                assert!(g.neighbors(j).contains(&i), "{i} {j}");
            }
        }
        assert_eq!(g.clusters(&[0, 1, 2]).len(), 1);
        assert_eq!(g.clusters(&[1, 5]).len(), 2);
        // periodic wrap in θ
        assert_eq!(g.clusters(&[1, 8]).len(), 1);
    }

    #[test]
    fn ball_grid_masks_and_clusters() {
        let g = Grid::build(
            PhaseDomain::Euclidean(2),
            &Sampling::Ball { center: vec![0.0, 0.0], radius: 1.0, n: 21 },
        )
        .unwrap();
        assert!(g.points.iter().all(|p| p[0] * p[0] + p[1] * p[1] <= 1.0 + 1e-9));
        assert!(g.points.iter().any(|p| (p[0] - 1.0).abs() < 1e-12 && p[1].abs() < 1e-12));
        let i = g.points.iter().position(|p| p[0].abs() < 1e-12 && p[1].abs() < 1e-12).unwrap();
        assert_eq!(g.neighbors(i).len(), 8);
        let p = g.local_point(&[0.9, 0.0], &[0.5, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_sampling_is_rejected() {
        assert!(Grid::build(PhaseDomain::Sphere, &Sampling::Box { lo: vec![0.0; 2], hi: vec![1.0; 2], n: 3 }).is_err());
        assert!(Grid::build(PhaseDomain::Euclidean(2), &Sampling::Box { lo: vec![0.0; 2], hi: vec![1.0; 2], n: 1 }).is_err());
    }
}
