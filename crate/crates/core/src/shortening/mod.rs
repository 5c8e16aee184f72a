//! Constructive length reduction: removing a non-fixed extremum, the
//! displacement-energy shortcut, and the scrubbing motion near a fixed minimum.

mod nofixed;
mod scrubbing;
mod scrubmotion;
mod sikorav;

pub use nofixed::*;
pub use scrubbing::*;
pub use scrubmotion::*;
pub use sikorav::*;

use crate::error::{LabError, Result};
use crate::hofer::{hofer_length, time_grid, IsotopyPath};
use crate::symplectic::{flow_endpoint, Hamiltonian, PhaseDomain, SharedHamiltonian};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

/// Default endpoint tolerance per unit of domain scale.
pub const DEFAULT_ENDPOINT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    NoFixedMax,
    NoFixedMin,
    Sikorav,
    Scrubbing,
}

/// Which extremum a construction acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Min,
    Max,
}

#[derive(Clone, Serialize)]
pub struct ShorteningResult {
    pub kind: PlanKind,
    pub original_length: f64,
    pub new_length: f64,
    /// `original_length − new_length`.
    pub margin: f64,
    /// `sup ‖new φ_1(x) − old φ_1(x)‖` over the tracked cloud.
    pub endpoint_discrepancy: f64,
    pub endpoint_tolerance: f64,
    pub cloud_size: usize,
    pub parameters: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub path: IsotopyPath,
    /// The original path resampled on the time grid of `path`.
    #[serde(skip)]
    pub reference: IsotopyPath,
}

impl std::fmt::Debug for ShorteningResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ShorteningResult")
            .field("kind", &self.kind)
            .field("original_length", &self.original_length)
            .field("new_length", &self.new_length)
            .field("margin", &self.margin)
            .field("endpoint_discrepancy", &self.endpoint_discrepancy)
            .field("parameters", &self.parameters)
            .finish()
    }
}

/// Points of a box `factor` times denser per axis than the path's grid, spanning
/// the grid's bounding box.
pub fn dense_cloud(path: &IsotopyPath, factor: usize) -> Vec<Vec<f64>> {
    let pts = &path.grid.points;
    let d = path.domain.dim();
    if !matches!(path.domain, PhaseDomain::Euclidean(_)) || pts.is_empty() {
        return pts.clone();
    }
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in pts {
        for i in 0..d {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    let per_axis = (pts.len() as f64).powf(1.0 / d as f64).round().max(2.0) as usize;
    let n = (per_axis - 1) * factor.max(1) + 1;
    let total = n.pow(d as u32);
    (0..total)
        .map(|mut k| {
            (0..d)
                .map(|i| {
                    let j = k % n;
                    k /= n;
                    lo[i] + (hi[i] - lo[i]) * j as f64 / (n - 1) as f64
                })
                .collect()
        })
        .collect()
}

/// `sup_x ‖φ'_1(x) − φ_1(x)‖` for the time-one maps of two generators.
pub fn endpoint_discrepancy(
    domain: PhaseDomain,
    old: &dyn Hamiltonian,
    new: &dyn Hamiltonian,
    cloud: &[Vec<f64>],
    tol: f64,
) -> Result<f64> {
    let errs: Vec<f64> = cloud
        .par_iter()
        .map(|x| {
            let a = flow_endpoint(domain, old, x, 0.0, 1.0, tol)?;
            let b = flow_endpoint(domain, new, x, 0.0, 1.0, tol)?;
            Ok(a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        })
        .collect::<Result<_>>()?;
    Ok(errs.into_iter().fold(0.0, f64::max))
}

/// Half the largest side of the grid's bounding box, at least 1.
pub fn domain_scale(path: &IsotopyPath) -> f64 {
    let pts = &path.grid.points;
    let d = path.domain.dim();
    let mut s: f64 = 1.0;
    for i in 0..d {
        let lo = pts.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max);
        s = s.max(0.5 * (hi - lo));
    }
    s
}

/// Path with the same sampling as `base`, generator `h`, on a time grid whose
/// breakpoints include `breaks` and whose panels number at least `panels`.
pub(crate) fn resampled(base: &IsotopyPath, h: SharedHamiltonian, panels: usize, breaks: &[f64]) -> Result<IsotopyPath> {
    let (times, weights) = time_grid(0.0, 1.0, panels, breaks)?;
    Ok(IsotopyPath {
        hamiltonian: h,
        times,
        weights,
        ..base.clone()
    })
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn finish(
    kind: PlanKind,
    base: &IsotopyPath,
    new_h: SharedHamiltonian,
    panels: usize,
    breaks: &[f64],
    cloud: Vec<Vec<f64>>,
    parameters: BTreeMap<String, f64>,
    notes: Vec<String>,
) -> Result<ShorteningResult> {
    let path = resampled(base, new_h, panels, breaks)?;
    let reference = path.with_hamiltonian(base.hamiltonian.clone());
    let original_length = hofer_length(&reference)?;
    let new_length = hofer_length(&path)?;
    let endpoint_discrepancy = endpoint_discrepancy(
        base.domain,
        base.hamiltonian.as_ref(),
        path.hamiltonian.as_ref(),
        &cloud,
        1e-10,
    )?;
    let endpoint_tolerance = DEFAULT_ENDPOINT_TOL * domain_scale(base);
    let res = ShorteningResult {
        kind,
        original_length,
        new_length,
        margin: original_length - new_length,
        endpoint_discrepancy,
        endpoint_tolerance,
        cloud_size: cloud.len(),
        parameters,
        notes,
        path,
        reference,
    };
    if !(res.new_length < res.original_length) {
        return Err(LabError::Refused(format!(
            "construction did not shorten the path: {} -> {}",
            res.original_length, res.new_length
        )));
    }
    if !(res.endpoint_discrepancy <= res.endpoint_tolerance) {
        return Err(LabError::Refused(format!(
            "endpoint moved by {} (tolerance {})",
            res.endpoint_discrepancy, res.endpoint_tolerance
        )));
    }
    Ok(res)
}

/// Points of `cloud` within `radius` of some point of `centers`.
pub fn focus_cloud(cloud: Vec<Vec<f64>>, centers: &[Vec<f64>], radius: f64) -> Vec<Vec<f64>> {
    cloud
        .into_iter()
        .filter(|p| {
            centers
                .iter()
                .any(|c| c.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= radius * radius)
        })
        .collect()
}

/// `x ↦ q + e^{φJ}(x − q)`, the same rotation in every symplectic plane.
pub(crate) fn rotate_about(q: &[f64], x: &[f64], phi: f64) -> Vec<f64> {
    let (s, c) = phi.sin_cos();
    let mut y = x.to_vec();
    for i in (0..x.len()).step_by(2) {
        let u = x[i] - q[i];
        let v = x[i + 1] - q[i + 1];
        y[i] = q[i] + c * u - s * v;
        y[i + 1] = q[i + 1] + s * u + c * v;
    }
    y
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
