use super::{dense_cloud, dist, finish, focus_cloud, rotate_about, PlanKind, ShorteningResult, Side};
use crate::error::{LabError, Result};
use crate::hofer::{extremum_sets, ExtremumSet, IsotopyPath};
use crate::numerics::{plateau, plateau_deriv, smoothstep};
use crate::symplectic::{compose_hamiltonians, Hamiltonian, Isotopy, PhaseDomain};
use serde::Serialize;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Parameters of the construction that removes a non-fixed extremum.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct NoFixedPlan {
    /// `t_0 < t_1 < … < t_k`; the length is gained near `t_0`.
    pub times: Vec<f64>,
    /// Gap kept between a disc and the extremum sets it must avoid.
    pub nu: f64,
    /// Width of the smoothing collar of each disc.
    pub delta_bump: f64,
    pub eps: f64,
    /// Depth `c` of the bumps.
    pub depth: f64,
    pub tol_ext: f64,
    /// Refinement per axis of the endpoint cloud.
    pub cloud_refine: usize,
}

impl NoFixedPlan {
    pub fn new(times: Vec<f64>, eps: f64, depth: f64) -> Self {
        Self {
            times,
            nu: 0.05,
            delta_bump: 0.1,
            eps,
            depth,
            tol_ext: 1e-3,
            cloud_refine: 2,
        }
    }
}

/// Radial bump `value · plateau(|x − q|; inner, outer)`, undone at `times[undo]`.
#[derive(Debug, Clone, Serialize)]
pub struct Disc {
    pub center: Vec<f64>,
    pub inner: f64,
    pub outer: f64,
    /// Signed plateau value: `−c` on maxima, `+c` on minima.
    pub value: f64,
    pub undo: usize,
}

impl Disc {
    fn profile(&self, r: f64) -> (f64, f64) {
        (self.value * plateau(r, self.inner, self.outer), self.value * plateau_deriv(r, self.inner, self.outer))
    }
}

/// Start times of the push window near `t_0` and of the undo windows.
#[derive(Debug, Clone)]
struct Schedule {
    starts: Vec<f64>,
    width: f64,
}

impl Schedule {
    fn new(times: &[f64], eps: f64) -> Self {
        let width = 2.0 * eps;
        let starts = times.iter().map(|&t| (t - eps).clamp(0.0, 1.0 - width)).collect();
        Self { starts, width }
    }
    fn amount(&self, j: usize, t: f64) -> f64 {
        self.width * smoothstep((t - self.starts[j]) / self.width)
    }
    fn rate(&self, j: usize, t: f64) -> f64 {
        crate::numerics::smoothstep_deriv((t - self.starts[j]) / self.width)
    }
    fn window(&self, j: usize) -> (f64, f64) {
        (self.starts[j], self.starts[j] + self.width)
    }
    /// Flow time of a disc undone at `j`.
    fn disc_amount(&self, j: usize, t: f64) -> f64 {
        self.amount(0, t) - self.amount(j, t)
    }
    fn disc_rate(&self, j: usize, t: f64) -> f64 {
        self.rate(0, t) - self.rate(j, t)
    }
}

/// `H_Ψ(t, x) = Σ a_d'(t) K_d(x)` for discs with disjoint supports.
struct DiscLoop {
    dim: usize,
    discs: Vec<Disc>,
    schedule: Schedule,
}

impl Hamiltonian for DiscLoop {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.discs
            .iter()
            .map(|d| {
                let r = dist(x, &d.center);
                if r >= d.outer {
                    0.0
                } else {
                    self.schedule.disc_rate(d.undo, t) * d.profile(r).0
                }
            })
            .sum()
    }
    fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for d in &self.discs {
            let r = dist(x, &d.center);
            if r >= d.outer || r <= d.inner {
                continue;
            }
            let s = self.schedule.disc_rate(d.undo, t) * d.profile(r).1 / r;
            for i in 0..x.len() {
                g[i] += s * (x[i] - d.center[i]);
            }
        }
        g
    }
}

/// `Ψ_t⁻¹`: each disc rotates rigidly on circles about its centre.
struct DiscLoopInverse {
    discs: Vec<Disc>,
    schedule: Schedule,
}

impl Isotopy for DiscLoopInverse {
    fn apply(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        for d in &self.discs {
            let r = dist(x, &d.center);
            if r < d.outer && r > d.inner {
                // X = −J∇K turns circles with angular speed −K'(r)/r
                let omega = -d.profile(r).1 / r;
                let phi = self.schedule.disc_amount(d.undo, t) * omega;
                return Ok(rotate_about(&d.center, x, -phi));
            }
        }
        Ok(x.to_vec())
    }
}

fn sets(path: &IsotopyPath, t: f64, tol: f64, side: Side) -> Result<ExtremumSet> {
    let (lo, hi) = extremum_sets(path.hamiltonian.as_ref(), t, &path.grid, tol)?;
    Ok(match side {
        Side::Max => hi,
        Side::Min => lo,
    })
}

fn min_dist(p: &[f64], set: &[Vec<f64>]) -> f64 {
    set.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min)
}

/// Discs covering `X_0`, each assigned to the `X_j` it stays away from.
fn build_discs(path: &IsotopyPath, plan: &NoFixedPlan, side: Side, xs: &[ExtremumSet]) -> Result<Vec<Disc>> {
    let x0 = &xs[0];
    let clusters = path.grid.clusters(&x0.cells);
    let mut discs: Vec<Disc> = Vec::new();
    for cl in clusters {
        let pts: Vec<&Vec<f64>> = cl
            .iter()
            .map(|c| &x0.points[x0.cells.iter().position(|x| x == c).unwrap()])
            .collect();
        let d = pts[0].len();
        let center: Vec<f64> = if pts.len() == 1 {
            pts[0].clone()
        } else {
            (0..d).map(|i| pts.iter().map(|p| p[i]).sum::<f64>() / pts.len() as f64).collect()
        };
        let spread = pts.iter().map(|p| dist(p, &center)).fold(0.0, f64::max);
        let inner = spread + plan.nu;
        let outer = inner + plan.delta_bump;
        let (undo, gap) = (1..xs.len())
            .map(|j| (j, min_dist(&center, &xs[j].points)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| LabError::Precondition("need at least two times".into()))?;
        if gap - outer < plan.nu {
            return Err(LabError::Refused(format!(
                "no disc of radius {outer} around {center:?} avoids a later extremum set (best gap {gap})"
            )));
        }
        discs.push(Disc {
            center,
            inner,
            outer,
            value: match side {
                Side::Max => -plan.depth,
                Side::Min => plan.depth,
            },
            undo,
        });
    }
    for (i, a) in discs.iter().enumerate() {
        for b in &discs[i + 1..] {
            if dist(&a.center, &b.center) < a.outer + b.outer {
                return Err(LabError::Refused("discs around the extremum set overlap".into()));
            }
        }
    }
    Ok(discs)
}

/// Checks that, for this `ε`, the push window keeps the extremum inside the
/// plateaus and each undo window keeps it away from the discs being undone.
fn admissible(path: &IsotopyPath, plan: &NoFixedPlan, side: Side, discs: &[Disc], eps: f64) -> Result<Option<String>> {
    let sch = Schedule::new(&plan.times, eps);
    for j in 0..plan.times.len() {
        let (a, b) = sch.window(j);
        for k in 0..=8 {
            let t = a + (b - a) * k as f64 / 8.0;
            let x = sets(path, t, plan.tol_ext, side)?;
            for p in &x.points {
                if j == 0 {
                    if !discs.iter().any(|d| dist(p, &d.center) <= d.inner) {
                        return Ok(Some(format!("extremum at {p:?} leaves the plateaus at t = {t}")));
                    }
                } else if discs.iter().any(|d| d.undo == j && dist(p, &d.center) < d.outer) {
                    return Ok(Some(format!("extremum at {p:?} enters an undone disc at t = {t}")));
                }
            }
        }
    }
    Ok(None)
}

/// Deforms the path by a loop of bumps pushing down the maxima near `t_0` and
/// undone near later times where the maxima sit elsewhere.
pub fn shorten_no_fixed_max(path: &IsotopyPath, plan: &NoFixedPlan) -> Result<ShorteningResult> {
    shorten_no_fixed(path, plan, Side::Max)
}

/// Mirror of [`shorten_no_fixed_max`] on the minima.
pub fn shorten_no_fixed_min(path: &IsotopyPath, plan: &NoFixedPlan) -> Result<ShorteningResult> {
    shorten_no_fixed(path, plan, Side::Min)
}

fn shorten_no_fixed(path: &IsotopyPath, plan: &NoFixedPlan, side: Side) -> Result<ShorteningResult> {
    if !matches!(path.domain, PhaseDomain::Euclidean(_)) {
        return Err(LabError::Domain("this construction works in a Euclidean chart".into()));
    }
    if plan.times.len() < 2 || plan.times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(LabError::Precondition("times must be increasing with at least two entries".into()));
    }
    if !(plan.eps > 0.0 && plan.depth > 0.0 && plan.nu > 0.0 && plan.delta_bump > 0.0) {
        return Err(LabError::Config("eps, depth, nu and delta_bump must be positive".into()));
    }
    let xs: Vec<ExtremumSet> = plan
        .times
        .iter()
        .map(|&t| sets(path, t, plan.tol_ext, side))
        .collect::<Result<_>>()?;
    // cell-wise intersection, one cell of slack
    let mut common = path.grid.dilate(&xs[0].cells);
    for x in &xs[1..] {
        let d = path.grid.dilate(&x.cells);
        common = common.intersection(&d).copied().collect();
    }
    if !common.is_empty() {
        return Err(LabError::Refused(format!(
            "the {} sets at the chosen times share {} cells; a fixed extremum may exist",
            if side == Side::Max { "max" } else { "min" },
            common.len()
        )));
    }
    let discs = build_discs(path, plan, side, &xs)?;
    let width = 2.0 * plan.eps;
    if plan.times.windows(2).any(|w| w[1] - w[0] < width) {
        return Err(LabError::Refused(format!("windows of width {width} overlap; reduce eps")));
    }
    if let Some(why) = admissible(path, plan, side, &discs, plan.eps)? {
        let mut e = plan.eps;
        let mut found = None;
        for _ in 0..20 {
            e *= 0.5;
            if admissible(path, plan, side, &discs, e)?.is_none() {
                found = Some(e);
                break;
            }
        }
        return Err(LabError::Refused(match found {
            Some(e) => format!("eps = {} too large ({why}); largest admissible by halving: {e}", plan.eps),
            None => format!("eps = {} too large ({why}); halving found no admissible value", plan.eps),
        }));
    }
    let sch = Schedule::new(&plan.times, plan.eps);
    let h_psi = Arc::new(DiscLoop {
        dim: path.domain.dim(),
        discs: discs.clone(),
        schedule: sch.clone(),
    });
    let inv = Arc::new(DiscLoopInverse {
        discs: discs.clone(),
        schedule: sch.clone(),
    });
    let k = Arc::new(compose_hamiltonians(h_psi, path.hamiltonian.clone(), inv));
    let mut breaks = Vec::new();
    for j in 0..plan.times.len() {
        let (a, b) = sch.window(j);
        breaks.push(a);
        breaks.push(b);
    }
    // at least 8 Simpson panels inside each window
    let panels = (path.times.len() - 1).max((8.0 / width).ceil() as usize);
    let centers: Vec<Vec<f64>> = discs.iter().map(|d| d.center.clone()).collect();
    let reach = discs.iter().map(|d| d.outer).fold(0.0, f64::max);
    let mut cloud = focus_cloud(dense_cloud(path, plan.cloud_refine), &centers, 2.0 * reach);
    cloud.extend(dense_cloud(path, 1).into_iter().step_by(7));
    let mut params = BTreeMap::new();
    params.insert("eps".into(), plan.eps);
    params.insert("depth".into(), plan.depth);
    params.insert("nu".into(), plan.nu);
    params.insert("delta_bump".into(), plan.delta_bump);
    params.insert("expected_margin".into(), 2.0 * plan.depth * plan.eps);
    let notes = discs
        .iter()
        .map(|d| format!("disc at {:?}, radii {:.4}/{:.4}, undone at t = {}", d.center, d.inner, d.outer, plan.times[d.undo]))
        .collect();
    finish(
        if side == Side::Max { PlanKind::NoFixedMax } else { PlanKind::NoFixedMin },
        path,
        k,
        panels,
        &breaks,
        cloud,
        params,
        notes,
    )
}
