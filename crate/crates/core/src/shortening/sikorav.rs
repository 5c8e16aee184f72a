use super::{dense_cloud, domain_scale, PlanKind, ShorteningResult, DEFAULT_ENDPOINT_TOL};
use crate::error::{LabError, Result};
use crate::hofer::{extremes, hofer_length, IsotopyPath};
use crate::numerics::{plateau, smoothstep};
use crate::symplectic::{flow_endpoint, FlowIsotopy, Hamiltonian, Isotopy, PhaseDomain, SharedHamiltonian};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Translation by `shift` on the slab `|⟨e, x⟩| ≤ a`, `e = J·shift/|shift|`,
/// generated by `T(x) = |shift| φ(⟨e, x⟩)` where `φ` is the identity on
/// `[−a, a]` and flattens out by `|s| = b`. Hofer norm `|shift|(a + b)`.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct Translation {
    pub shift: Vec<f64>,
    pub a: f64,
    pub b: f64,
}

impl Translation {
    pub fn new(shift: Vec<f64>, a: f64, b: f64) -> Result<Self> {
        if shift.len() % 2 != 0 || !(a > 0.0 && b > a) {
            return Err(LabError::Config("translation needs an even dimension and 0 < a < b".into()));
        }
        Ok(Self { shift, a, b })
    }

    fn frame(&self) -> (f64, Vec<f64>) {
        let n = self.shift.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            return (0.0, vec![0.0; self.shift.len()]);
        }
        let e = crate::symplectic::apply_j(&self.shift).into_iter().map(|x| x / n).collect();
        (n, e)
    }

    fn slope(&self, s: f64) -> f64 {
        plateau(s.abs(), self.a, self.b)
    }

    fn clamp(&self, s: f64) -> f64 {
        let r = s.abs();
        let w = self.b - self.a;
        let v = if r <= self.a {
            r
        } else {
            // ∫ plateau = a + w ∫_0^u (1 − smoothstep)
            let u = ((r - self.a) / w).min(1.0);
            self.a + w * (u - crate::numerics::smoothstep_integral(u))
        };
        v * s.signum()
    }

    /// `‖τ‖` certified by the generating Hamiltonian.
    pub fn norm(&self) -> f64 {
        self.frame().0 * (self.a + self.b)
    }

    fn coord(&self, x: &[f64]) -> f64 {
        let (_, e) = self.frame();
        crate::symplectic::dot(&e, x)
    }

    /// `τ^s(x)`; the slab coordinate is conserved.
    pub fn apply_time(&self, s: f64, x: &[f64]) -> Vec<f64> {
        let k = s * self.slope(self.coord(x));
        x.iter().zip(&self.shift).map(|(p, d)| p + k * d).collect()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.apply_time(1.0, x)
    }

    pub fn inverse(&self, x: &[f64]) -> Vec<f64> {
        self.apply_time(-1.0, x)
    }

    pub fn hamiltonian(&self) -> SharedHamiltonian {
        Arc::new(self.clone())
    }
}

impl Hamiltonian for Translation {
    fn dim(&self) -> usize {
        self.shift.len()
    }
    fn value(&self, _t: f64, x: &[f64]) -> f64 {
        self.frame().0 * self.clamp(self.coord(x))
    }
    fn gradient(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        let (n, e) = self.frame();
        let k = n * self.slope(self.coord(x));
        e.into_iter().map(|v| k * v).collect()
    }
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct SikoravPlan {
    pub c: f64,
    /// The collar of `F` occupies `m ∈ [c/2 + η c/2, c − η c/2]`.
    pub collar: f64,
    pub tol: f64,
    /// Refinement factor of the grid used for the min/max certificates.
    pub certificate_refine: usize,
    /// Points of the endpoint cloud, taken near the sublevel set.
    pub cloud_points: usize,
}

impl SikoravPlan {
    pub fn new(c: f64) -> Self {
        Self {
            c,
            collar: 0.1,
            tol: 1e-6,
            certificate_refine: 10,
            cloud_points: 48,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SikoravReport {
    pub result: ShorteningResult,
    pub tau_norm: f64,
    /// `ℒ` of the path generated by `G_t`.
    pub g_length: f64,
    /// Measured length of the commutator part, `2‖τ‖`.
    pub commutator_length: f64,
    /// `min_t min_x G_t − c/2` on the refined grid.
    pub min_g_excess: f64,
    /// `max_t |max G_t − max H_t|` on the refined grid.
    pub max_mismatch: f64,
    pub certificate_points: usize,
    /// Largest relative mismatch between `∂_t Θ_t` and `X_{G_t}∘Θ_t` on the cloud.
    pub generator_residual: f64,
}

/// `m(x) = min_t H_t(x)` over sampled times (a single time when `H` is autonomous).
#[derive(Clone)]
struct MinOverTime {
    h: SharedHamiltonian,
    times: Vec<f64>,
}

impl MinOverTime {
    fn eval(&self, x: &[f64]) -> f64 {
        self.times.iter().map(|&t| self.h.value(t, x)).fold(f64::INFINITY, f64::min)
    }
}

/// `F = (c/2)(1 − smoothstep((m − lo)/(hi − lo)))`: `c/2` on `Z_{c/2}`, support in `Z_c`.
#[derive(Clone)]
struct CollarFunction {
    m: MinOverTime,
    c: f64,
    lo: f64,
    hi: f64,
    sign: f64,
    dim: usize,
}

impl CollarFunction {
    fn inside_support(&self, x: &[f64]) -> bool {
        self.m.eval(x) < self.hi
    }

    /// `dF/dm`.
    fn slope(&self, m: f64) -> f64 {
        let w = self.hi - self.lo;
        -self.sign * 0.5 * self.c * crate::numerics::smoothstep_deriv((m - self.lo) / w) / w
    }

    /// `α_t = φ^H_{−F'(H) t}` when `H` is autonomous with a closed-form flow and `F = f(H)`.
    fn alpha_exact(&self, t: f64, x: &[f64]) -> Option<Vec<f64>> {
        if self.m.times.len() != 1 {
            return None;
        }
        let s = -self.slope(self.m.eval(x)) * t;
        self.m.h.exact_flow(0.0, s, x)
    }
}

impl Hamiltonian for CollarFunction {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, _t: f64, x: &[f64]) -> f64 {
        let m = self.m.eval(x);
        self.sign * 0.5 * self.c * (1.0 - smoothstep((m - self.lo) / (self.hi - self.lo)))
    }
}

/// `G_t = −F∘τ⁻¹ + (H_t∘α_t + F)∘(τ α_t⁻¹ τ⁻¹)` where `α` is the flow of `−F`.
struct SikoravG {
    h: SharedHamiltonian,
    f: CollarFunction,
    alpha: FlowIsotopy,
    alpha_inv: FlowIsotopy,
    tau: Translation,
}

impl SikoravG {
    fn alpha_at(&self, inverse: bool, t: f64, y: &[f64]) -> Vec<f64> {
        if !self.f.inside_support(y) || t == 0.0 {
            return y.to_vec();
        }
        // α_t preserves F, so α_t⁻¹ is the same closed form run backwards
        if let Some(z) = self.f.alpha_exact(if inverse { -t } else { t }, y) {
            return z;
        }
        let iso = if inverse { &self.alpha_inv } else { &self.alpha };
        iso.apply(t, y).unwrap_or_else(|_| vec![f64::NAN; y.len()])
    }
}

impl Hamiltonian for SikoravG {
    fn dim(&self) -> usize {
        self.h.dim()
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        let y1 = self.tau.inverse(x);
        let y2 = self.alpha_at(true, t, &y1);
        let y3 = self.tau.apply(&y2);
        let y4 = self.alpha_at(false, t, &y3);
        -self.f.value(t, &y1) + self.h.value(t, &y4) + self.f.value(t, &y3)
    }
    // α_t twists strongly across the collar; the default step would straddle many turns
    fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let h = 1e-8;
        let mut y = x.to_vec();
        (0..x.len())
            .map(|i| {
                y[i] = x[i] + h;
                let a = self.value(t, &y);
                y[i] = x[i] - h;
                let b = self.value(t, &y);
                y[i] = x[i];
                (a - b) / (2.0 * h)
            })
            .collect()
    }
}

fn is_autonomous(path: &IsotopyPath) -> bool {
    let h = path.hamiltonian.as_ref();
    path.grid.points.iter().step_by(7).all(|p| {
        let v = h.value(0.0, p);
        [0.31, 0.67, 1.0].iter().all(|&t| (h.value(t, p) - v).abs() <= 1e-14 * (1.0 + v.abs()))
    })
}

/// The displacement-energy shortcut: when a set carrying at least `c` of
/// energy is displaced by `τ` with `‖τ‖ < c/4`, builds `G_t` and the
/// composite path `τ⁻¹ (G-path) τ · [τ⁻¹, β⁻¹]` to the same endpoint.
pub fn sikorav_shorten(path: &IsotopyPath, plan: &SikoravPlan, tau: &Translation) -> Result<SikoravReport> {
    if !matches!(path.domain, PhaseDomain::Euclidean(_)) {
        return Err(LabError::Domain("this construction works in a Euclidean chart".into()));
    }
    let c = plan.c;
    if !(c > 0.0) || !(plan.collar > 0.0 && plan.collar < 0.5) {
        return Err(LabError::Config("need c > 0 and collar in (0, 1/2)".into()));
    }
    let h = path.hamiltonian.clone();
    let grid = &path.grid;
    // normalisation
    for &t in &path.times {
        let e = extremes(h.as_ref(), t, grid)?;
        if e.min.abs() > plan.tol * (1.0 + e.max.abs()) {
            return Err(LabError::Precondition(format!("min H_t = {} at t = {t}; normalise to 0 first", e.min)));
        }
    }
    let tau_norm = tau.norm();
    if !(tau_norm < c / 4.0) {
        return Err(LabError::Refused(format!("‖τ‖ = {tau_norm} is not below c/4 = {}", c / 4.0)));
    }
    let m = MinOverTime {
        h: h.clone(),
        times: if is_autonomous(path) {
            vec![0.0]
        } else {
            (0..=16).map(|k| k as f64 / 16.0).collect()
        },
    };
    let fine = dense_cloud(path, plan.certificate_refine);
    let zc: Vec<&Vec<f64>> = fine.iter().filter(|p| m.eval(p) <= c).collect();
    if zc.is_empty() {
        return Err(LabError::Precondition("Z_c is empty on the grid".into()));
    }
    if let Some(p) = zc.iter().find(|p| m.eval(&tau.apply(p)) <= c) {
        return Err(LabError::Refused(format!("τ does not disjoin Z_c: {p:?} lands back in it")));
    }
    for &t in &path.times {
        let e = extremes(h.as_ref(), t, grid)?;
        let zmax = zc.iter().map(|p| h.value(t, p)).fold(f64::NEG_INFINITY, f64::max);
        if !(e.max > c / 2.0 + zmax) {
            return Err(LabError::Refused(format!(
                "max H_t = {} does not exceed c/2 + max_Z H_t = {} at t = {t}",
                e.max,
                c / 2.0 + zmax
            )));
        }
    }
    let eta = plan.collar * c / 2.0;
    let f = CollarFunction {
        m,
        c,
        lo: c / 2.0 + eta,
        hi: c - eta,
        sign: 1.0,
        dim: path.domain.dim(),
    };
    let minus_f: SharedHamiltonian = Arc::new(CollarFunction { sign: -1.0, ..f.clone() });
    let alpha_inv = FlowIsotopy {
        hamiltonian: minus_f.clone(),
        domain: path.domain,
        tol: 1e-11,
        inverse: true,
    };
    let gs = Arc::new(SikoravG {
        h: h.clone(),
        f: f.clone(),
        alpha: FlowIsotopy {
            hamiltonian: minus_f.clone(),
            domain: path.domain,
            tol: 1e-11,
            inverse: false,
        },
        alpha_inv,
        tau: tau.clone(),
    });
    let g: SharedHamiltonian = gs.clone();

    // certificates on the refined grid
    let cert: Vec<(f64, f64)> = path
        .times
        .par_iter()
        .map(|&t| {
            let (mut gmin, mut gmax) = (f64::INFINITY, f64::NEG_INFINITY);
            let mut hmax = f64::NEG_INFINITY;
            for p in &fine {
                let v = g.value(t, p);
                gmin = gmin.min(v);
                gmax = gmax.max(v);
                hmax = hmax.max(h.value(t, p));
            }
            (gmin - c / 2.0, (gmax - hmax).abs())
        })
        .collect();
    let min_g_excess = cert.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
    let max_mismatch = cert.iter().map(|x| x.1).fold(0.0, f64::max);
    let slack = plan.tol * (1.0 + c);
    if min_g_excess < -slack {
        let (k, _) = cert.iter().enumerate().min_by(|a, b| a.1 .0.total_cmp(&b.1 .0)).unwrap();
        return Err(LabError::Refused(format!("min G_t falls below c/2 by {} at t = {}", -min_g_excess, path.times[k])));
    }
    let hrange = extremes(h.as_ref(), 0.0, grid)?;
    if max_mismatch > slack * (1.0 + hrange.max.abs()) {
        return Err(LabError::Refused(format!("max G_t differs from max H_t by {max_mismatch}")));
    }

    let g_path = path.with_hamiltonian(g.clone());
    let g_length = hofer_length(&g_path)?;
    let original_length = hofer_length(path)?;
    // each half of [τ⁻¹, β⁻¹] = τ⁻¹ · (β⁻¹ τ β) is generated by T composed with a symplectic map
    let t_osc = {
        let e = extremes(tau.hamiltonian().as_ref(), 0.0, grid)?;
        e.max - e.min
    };
    let commutator_length = 2.0 * t_osc.min(tau_norm);
    let new_length = g_length + commutator_length;

    // β_t = α_t⁻¹ φ_t and Θ_t = τ α_t τ⁻¹ β_t is the isotopy G_t should generate
    let d = path.domain;
    let phi = |t: f64, x: &[f64]| flow_endpoint(d, h.as_ref(), x, 0.0, t, 1e-11);
    let phi_inv = |x: &[f64]| flow_endpoint(d, h.as_ref(), x, 1.0, 0.0, 1e-11);
    let theta = |t: f64, x: &[f64]| -> Result<Vec<f64>> {
        let b = gs.alpha_at(true, t, &phi(t, x)?);
        Ok(tau.apply(&gs.alpha_at(false, t, &tau.inverse(&b))))
    };
    let near: Vec<Vec<f64>> = {
        let mut v: Vec<Vec<f64>> = fine
            .iter()
            .filter(|p| f.m.eval(p) <= 2.0 * c || f.m.eval(&tau.inverse(p)) <= 2.0 * c)
            .cloned()
            .collect();
        let stride = (v.len() / plan.cloud_points.max(1)).max(1);
        v = v.into_iter().step_by(stride).collect();
        v.extend(dense_cloud(path, 1).into_iter().step_by(97));
        v
    };
    let checks: Vec<(f64, f64)> = near
        .par_iter()
        .map(|x| {
            // endpoint: φ = τ⁻¹ Θ_1 β_1⁻¹ τ β_1
            let old = phi(1.0, x)?;
            let b1 = gs.alpha_at(true, 1.0, &old);
            let y = tau.apply(&b1);
            let y = phi_inv(&gs.alpha_at(false, 1.0, &y))?;
            let y = tau.inverse(&theta(1.0, &y)?);
            let end = old.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            // generator: ∂_t Θ_t(x) = X_{G_t}(Θ_t(x))
            let mut worst: f64 = 0.0;
            for k in 1..8 {
                let t = k as f64 / 8.0;
                let hstep = 1e-7;
                let a = theta(t + hstep, x)?;
                let b = theta(t - hstep, x)?;
                let p = theta(t, x)?;
                let xg = crate::symplectic::symplectic_gradient(d, g.as_ref(), t, &p)?;
                let mut num = 0.0;
                let mut den = 1.0;
                for i in 0..p.len() {
                    let v = (a[i] - b[i]) / (2.0 * hstep);
                    num += (v - xg[i]).powi(2);
                    den += xg[i] * xg[i];
                }
                worst = worst.max((num / den).sqrt());
            }
            Ok((end, worst))
        })
        .collect::<Result<_>>()?;
    let endpoint_discrepancy = checks.iter().map(|x| x.0).fold(0.0, f64::max);
    let generator_residual = checks.iter().map(|x| x.1).fold(0.0, f64::max);
    let endpoint_tolerance = DEFAULT_ENDPOINT_TOL * domain_scale(path);

    let mut parameters = BTreeMap::new();
    parameters.insert("c".into(), c);
    parameters.insert("collar".into(), plan.collar);
    parameters.insert("tau_norm".into(), tau_norm);
    parameters.insert("bound".into(), original_length - c / 2.0 + 2.0 * tau_norm);
    let result = ShorteningResult {
        kind: PlanKind::Sikorav,
        original_length,
        new_length,
        margin: original_length - new_length,
        endpoint_discrepancy,
        endpoint_tolerance,
        cloud_size: near.len(),
        parameters,
        notes: vec!["path: τ⁻¹ then β⁻¹τβ (each of length ‖τ‖), then τ⁻¹(G-path)τ".into()],
        path: g_path,
        reference: path.clone(),
    };
    if !(endpoint_discrepancy <= endpoint_tolerance) {
        return Err(LabError::Refused(format!("endpoint moved by {endpoint_discrepancy}")));
    }
    if !(generator_residual <= 1e-3) {
        return Err(LabError::Refused(format!("G_t does not generate the composite isotopy (residual {generator_residual})")));
    }
    Ok(SikoravReport {
        result,
        tau_norm,
        g_length,
        commutator_length,
        min_g_excess,
        max_mismatch,
        certificate_points: fine.len(),
        generator_residual,
    })
}
