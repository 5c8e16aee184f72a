//! Phase domains, the standard structures `J` and `ω₀`, Hamiltonian fields and
//! their flows.

use crate::error::{LabError, Result};
use crate::numerics::composite_gauss;
use crate::ode::{dopri5, StepControl};
use nalgebra::DMatrix;
use std::f64::consts::TAU;
use std::sync::Arc;

/// Half-width of the excluded cap around each pole of the sphere chart, in `z`.
pub const POLE_CAP: f64 = 1e-9;
/// Total area of the round sphere with the form `dθ ∧ dz`.
pub const SPHERE_AREA: f64 = 2.0 * TAU;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PhaseDomain {
    /// `ℝ^dim`, `dim` even.
    Euclidean(usize),
    /// The sphere in the chart `(θ, z)`.
    Sphere,
}

impl PhaseDomain {
    pub fn euclidean(dim: usize) -> Result<Self> {
        if dim < 2 || dim % 2 != 0 {
            return Err(LabError::Domain(format!("dimension {dim} must be even and at least 2")));
        }
        Ok(PhaseDomain::Euclidean(dim))
    }

    pub fn dim(&self) -> usize {
        match self {
            PhaseDomain::Euclidean(d) => *d,
            PhaseDomain::Sphere => 2,
        }
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(LabError::Domain(format!(
                "point has {} coordinates, domain needs {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Domain("non-finite coordinate".into()));
        }
        if let PhaseDomain::Sphere = self {
            if x[1].abs() > 1.0 {
                return Err(LabError::Domain(format!("z = {} outside [-1, 1]", x[1])));
            }
        }
        Ok(())
    }

    /// Like [`check_point`](Self::check_point) but also rejects the pole caps.
    pub fn check_chart(&self, x: &[f64]) -> Result<()> {
        self.check_point(x)?;
        if let PhaseDomain::Sphere = self {
            if x[1].abs() > 1.0 - POLE_CAP {
                return Err(LabError::Chart(format!("z = {} lies in a pole cap", x[1])));
            }
        }
        Ok(())
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// `J v` with `J e_{2i-1} = e_{2i}`, `J e_{2i} = -e_{2i-1}`.
pub fn apply_j(v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for i in (0..v.len()).step_by(2) {
        out[i] = -v[i + 1];
        out[i + 1] = v[i];
    }
    out
}

pub fn j_matrix(dim: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(dim, dim);
    for i in (0..dim).step_by(2) {
        j[(i + 1, i)] = 1.0;
        j[(i, i + 1)] = -1.0;
    }
    j
}

/// `ω₀(u, v) = (J u) · v`.
pub fn omega0(u: &[f64], v: &[f64]) -> f64 {
    apply_j(u).iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central-difference step for coordinate value `x`.
pub fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = fd_step(x[i]);
            y[i] = x[i] + h;
            let fp = f(&y);
            y[i] = x[i] - h;
            let fm = f(&y);
            y[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Axis-aligned box known to contain the support of every `H_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Support {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// A time-dependent Hamiltonian `H(t, x)`.
pub trait Hamiltonian: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, t: f64, x: &[f64]) -> f64;

    fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        fd_gradient(|y| self.value(t, y), x)
    }

    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        let h = fd_step(t);
        (self.value(t + h, x) - self.value(t - h, x)) / (2.0 * h)
    }

    /// On the sphere: `Some(∂H/∂z)` when `H_t` depends on `z` alone. Such
    /// fields are flowed by the exact rotation formula, poles included.
    fn zonal_slope(&self, _t: f64, _z: f64) -> Option<f64> {
        None
    }

    fn support(&self) -> Option<Support> {
        None
    }

    /// Time-`[t0, t1]` flow map when it is known in closed form.
    fn exact_flow(&self, _t0: f64, _t1: f64, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

pub type SharedHamiltonian = Arc<dyn Hamiltonian>;

type ValueFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
type SlopeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Hamiltonian given by closures.
#[derive(Clone)]
pub struct FnHamiltonian {
    dim: usize,
    value: ValueFn,
    grad: Option<GradFn>,
    slope: Option<SlopeFn>,
    support: Option<Support>,
}

impl FnHamiltonian {
    pub fn new(dim: usize, f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            dim,
            value: Arc::new(f),
            grad: None,
            slope: None,
            support: None,
        }
    }

    pub fn with_gradient(mut self, g: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.grad = Some(Arc::new(g));
        self
    }

    /// Zonal sphere Hamiltonian `H(t, θ, z) = h(t, z)` with slope `∂h/∂z`.
    pub fn zonal(
        h: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        dh: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let dh: SlopeFn = Arc::new(dh);
        let dh2 = dh.clone();
        Self {
            dim: 2,
            value: Arc::new(move |t, x: &[f64]| h(t, x[1])),
            grad: Some(Arc::new(move |t, x: &[f64]| vec![0.0, dh2(t, x[1])])),
            slope: Some(dh),
            support: None,
        }
    }

    pub fn with_support(mut self, s: Support) -> Self {
        self.support = Some(s);
        self
    }

    pub fn shared(self) -> SharedHamiltonian {
        Arc::new(self)
    }
}

impl Hamiltonian for FnHamiltonian {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        (self.value)(t, x)
    }
    fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        match &self.grad {
            Some(g) => g(t, x),
            None => fd_gradient(|y| (self.value)(t, y), x),
        }
    }
    fn zonal_slope(&self, t: f64, z: f64) -> Option<f64> {
        self.slope.as_ref().map(|s| s(t, z))
    }
    fn support(&self) -> Option<Support> {
        self.support.clone()
    }
}

/// `H ≡ 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroHamiltonian(pub usize);

impl Hamiltonian for ZeroHamiltonian {
    fn dim(&self) -> usize {
        self.0
    }
    fn value(&self, _t: f64, _x: &[f64]) -> f64 {
        0.0
    }
    fn gradient(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }
    fn time_derivative(&self, _t: f64, _x: &[f64]) -> f64 {
        0.0
    }
    fn zonal_slope(&self, _t: f64, _z: f64) -> Option<f64> {
        Some(0.0)
    }
}

/// `H_t(x) = ½ xᵀ B_t x` on `ℝ^{2n}`.
#[derive(Clone)]
pub struct QuadraticHamiltonian {
    dim: usize,
    b: Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>,
}

impl QuadraticHamiltonian {
    pub fn new(dim: usize, b: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        Self { dim, b: Arc::new(b) }
    }
    pub fn constant(b: DMatrix<f64>) -> Self {
        let dim = b.nrows();
        Self::new(dim, move |_| b.clone())
    }
    pub fn matrix(&self, t: f64) -> DMatrix<f64> {
        (self.b)(t)
    }
}

impl Hamiltonian for QuadraticHamiltonian {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        let b = (self.b)(t);
        let v = nalgebra::DVector::from_column_slice(x);
        0.5 * v.dot(&(&b * &v))
    }
    fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let b = (self.b)(t);
        (&b * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec()
    }
}

type RadialProfile = Arc<dyn Fn(f64, f64) -> (f64, f64) + Send + Sync>;

/// Planar Hamiltonian `f_t(|x − c|)`; the profile returns `(f, f')`.
/// Its flow is a rotation on every circle about `c`, computed exactly.
#[derive(Clone)]
pub struct RadialHamiltonian {
    pub center: [f64; 2],
    profile: RadialProfile,
    /// Outer radius of the support of `f'`, if bounded.
    pub radius: Option<f64>,
}

impl RadialHamiltonian {
    pub fn new(center: [f64; 2], profile: impl Fn(f64, f64) -> (f64, f64) + Send + Sync + 'static) -> Self {
        Self {
            center,
            profile: Arc::new(profile),
            radius: None,
        }
    }

    pub fn with_radius(mut self, r: f64) -> Self {
        self.radius = Some(r);
        self
    }

    pub fn profile(&self, t: f64, r: f64) -> (f64, f64) {
        (self.profile)(t, r)
    }

    /// Angular velocity `−f'(r)/r` of the flow on the circle of radius `r`.
    pub fn angular_velocity(&self, t: f64, r: f64) -> f64 {
        let r = r.max(1e-12);
        -(self.profile)(t, r).1 / r
    }

    /// Exact time-`[t0, t1]` flow map.
    pub fn flow_map(&self, t0: f64, t1: f64, x: &[f64]) -> Vec<f64> {
        let dx = x[0] - self.center[0];
        let dy = x[1] - self.center[1];
        let r = dx.hypot(dy);
        if r == 0.0 || t0 == t1 {
            return x.to_vec();
        }
        let panels = 8;
        let angle: f64 = composite_gauss(t0.min(t1), t0.max(t1), panels, 8)
            .iter()
            .map(|(s, w)| w * self.angular_velocity(*s, r))
            .sum::<f64>()
            * (t1 - t0).signum();
        let (s, c) = angle.sin_cos();
        vec![self.center[0] + c * dx - s * dy, self.center[1] + s * dx + c * dy]
    }
}

impl Hamiltonian for RadialHamiltonian {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        let r = (x[0] - self.center[0]).hypot(x[1] - self.center[1]);
        (self.profile)(t, r).0
    }
    fn exact_flow(&self, t0: f64, t1: f64, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.flow_map(t0, t1, x))
    }
    fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let dx = x[0] - self.center[0];
        let dy = x[1] - self.center[1];
        let r = dx.hypot(dy);
        if r < 1e-12 {
            return vec![0.0, 0.0];
        }
        let d = (self.profile)(t, r).1 / r;
        vec![d * dx, d * dy]
    }
    fn support(&self) -> Option<Support> {
        self.radius.map(|r| Support {
            lo: vec![self.center[0] - r, self.center[1] - r],
            hi: vec![self.center[0] + r, self.center[1] + r],
        })
    }
}

/// Pointwise sum of Hamiltonians.
#[derive(Clone)]
pub struct SumHamiltonian(pub Vec<SharedHamiltonian>);

impl Hamiltonian for SumHamiltonian {
    fn dim(&self) -> usize {
        self.0.first().map_or(2, |h| h.dim())
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.0.iter().map(|h| h.value(t, x)).sum()
    }
    fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for h in &self.0 {
            for (a, b) in g.iter_mut().zip(h.gradient(t, x)) {
                *a += b;
            }
        }
        g
    }
    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        self.0.iter().map(|h| h.time_derivative(t, x)).sum()
    }
    fn zonal_slope(&self, t: f64, z: f64) -> Option<f64> {
        self.0.iter().map(|h| h.zonal_slope(t, z)).sum()
    }
}

/// `(t, x) ↦ c · H(t, x)`.
#[derive(Clone)]
pub struct ScaledHamiltonian(pub f64, pub SharedHamiltonian);

impl Hamiltonian for ScaledHamiltonian {
    fn dim(&self) -> usize {
        self.1.dim()
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.0 * self.1.value(t, x)
    }
    fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self.1.gradient(t, x).into_iter().map(|g| self.0 * g).collect()
    }
    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        self.0 * self.1.time_derivative(t, x)
    }
    fn zonal_slope(&self, t: f64, z: f64) -> Option<f64> {
        self.1.zonal_slope(t, z).map(|s| self.0 * s)
    }
}

/// Generator of the reversed path `s ↦ φ_{T−s} ∘ φ_T⁻¹`: `−H(T − s, x)`.
#[derive(Clone)]
pub struct ReversedHamiltonian {
    pub inner: SharedHamiltonian,
    pub total: f64,
}

impl Hamiltonian for ReversedHamiltonian {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        -self.inner.value(self.total - t, x)
    }
    fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self.inner.gradient(self.total - t, x).into_iter().map(|g| -g).collect()
    }
    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        self.inner.time_derivative(self.total - t, x)
    }
    fn zonal_slope(&self, t: f64, z: f64) -> Option<f64> {
        self.inner.zonal_slope(self.total - t, z).map(|s| -s)
    }
}

/// A time-dependent family of maps `x ↦ Ψ_t(x)`.
pub trait Isotopy: Send + Sync {
    fn apply(&self, t: f64, x: &[f64]) -> Result<Vec<f64>>;
}

pub type SharedIsotopy = Arc<dyn Isotopy>;

pub struct IdentityIsotopy;

impl Isotopy for IdentityIsotopy {
    fn apply(&self, _t: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }
}

pub struct FnIsotopy(pub Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>);

impl FnIsotopy {
    pub fn new(f: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }
}

impl Isotopy for FnIsotopy {
    fn apply(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok((self.0)(t, x))
    }
}

/// The isotopy `φ_t` generated by `H` from time 0, or its inverse `φ_t⁻¹`.
pub struct FlowIsotopy {
    pub hamiltonian: SharedHamiltonian,
    pub domain: PhaseDomain,
    pub tol: f64,
    pub inverse: bool,
}

impl Isotopy for FlowIsotopy {
    fn apply(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let (t0, t1) = if self.inverse { (t, 0.0) } else { (0.0, t) };
        flow_endpoint(self.domain, self.hamiltonian.as_ref(), x, t0, t1, self.tol)
    }
}

/// `X = −J ∇H`; on the sphere chart this reads `θ' = H_z`, `z' = −H_θ`.
pub fn symplectic_gradient(domain: PhaseDomain, h: &dyn Hamiltonian, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    domain.check_chart(x)?;
    let g = h.gradient(t, x);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(LabError::Domain("gradient is not finite".into()));
    }
    Ok(neg_j(&g))
}

fn neg_j(g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    for i in (0..g.len()).step_by(2) {
        out[i] = g[i + 1];
        out[i + 1] = -g[i];
    }
    out
}

/// `{F, G} = ∇F · J∇G`, which equals `ω₀(X_G, X_F)`. With this sign the
/// Hamiltonian of `ε ↦ φ^{εG}_t ∘ φ_t` is `H + ε(G' + {−G, H}) + O(ε²)`.
pub fn poisson_bracket(
    domain: PhaseDomain,
    f: &dyn Hamiltonian,
    g: &dyn Hamiltonian,
    t: f64,
    x: &[f64],
) -> Result<f64> {
    domain.check_chart(x)?;
    let gf = f.gradient(t, x);
    let gg = g.gradient(t, x);
    Ok(dot(&gf, &apply_j(&gg)))
}

/// Sampled solution of `x' = X_{H_t}(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn endpoint(&self) -> &[f64] {
        self.points.last().expect("trajectory is never empty")
    }
}

fn sphere_rotation(h: &dyn Hamiltonian, t0: f64, t1: f64, x: &[f64]) -> Option<Vec<f64>> {
    let z = x[1];
    h.zonal_slope(t0, z)?;
    let (a, b) = (t0.min(t1), t0.max(t1));
    let mut angle = 0.0;
    for (s, w) in composite_gauss(a, b, 16, 8) {
        angle += w * h.zonal_slope(s, z)?;
    }
    angle *= (t1 - t0).signum();
    Some(vec![wrap_angle(x[0] + angle), z])
}

fn vector_field(domain: PhaseDomain, h: &dyn Hamiltonian) -> impl FnMut(f64, &[f64], &mut [f64]) + '_ {
    let _ = domain;
    move |t, y, dy| {
        let g = h.gradient(t, y);
        for i in (0..y.len()).step_by(2) {
            dy[i] = g[i + 1];
            dy[i + 1] = -g[i];
        }
    }
}

fn pole_guard(domain: PhaseDomain) -> impl FnMut(f64, &[f64]) -> Result<()> {
    move |t, y| {
        if domain == PhaseDomain::Sphere && y[1].abs() > 1.0 - POLE_CAP {
            return Err(LabError::Integration {
                t_last: t,
                reason: "trajectory entered a pole cap".into(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Integration {
                t_last: t,
                reason: "non-finite state".into(),
            });
        }
        Ok(())
    }
}

/// Integrates the Hamiltonian flow from `t0` to `t1` (either direction),
/// recording every accepted step.
pub fn flow(domain: PhaseDomain, h: &dyn Hamiltonian, x0: &[f64], t0: f64, t1: f64, tol: f64) -> Result<Trajectory> {
    domain.check_point(x0)?;
    if domain == PhaseDomain::Sphere {
        if h.zonal_slope(t0, x0[1]).is_some() {
            let n = 32;
            let times: Vec<f64> = (0..=n).map(|k| t0 + (t1 - t0) * k as f64 / n as f64).collect();
            let mut points = Vec::with_capacity(times.len());
            for &s in &times {
                points.push(sphere_rotation(h, t0, s, x0).ok_or_else(|| {
                    LabError::Integration {
                        t_last: s,
                        reason: "zonal slope unavailable".into(),
                    }
                })?);
            }
            return Ok(Trajectory { times, points });
        }
        domain.check_chart(x0).map_err(|e| LabError::Integration {
            t_last: t0,
            reason: e.to_string(),
        })?;
    }
    let mut times = vec![t0];
    let mut points = vec![x0.to_vec()];
    let mut guard = pole_guard(domain);
    dopri5(vector_field(domain, h), t0, x0, t1, StepControl::with_tol(tol), |t, y| {
        guard(t, y)?;
        times.push(t);
        points.push(y.to_vec());
        Ok(())
    })?;
    if domain == PhaseDomain::Sphere {
        for p in &mut points {
            p[0] = wrap_angle(p[0]);
        }
    }
    Ok(Trajectory { times, points })
}

/// Endpoint of [`flow`] without recording the trajectory.
pub fn flow_endpoint(domain: PhaseDomain, h: &dyn Hamiltonian, x0: &[f64], t0: f64, t1: f64, tol: f64) -> Result<Vec<f64>> {
    domain.check_point(x0)?;
    if domain == PhaseDomain::Sphere {
        if let Some(p) = sphere_rotation(h, t0, t1, x0) {
            return Ok(p);
        }
        domain.check_chart(x0).map_err(|e| LabError::Integration {
            t_last: t0,
            reason: e.to_string(),
        })?;
    } else if let Some(y) = h.exact_flow(t0, t1, x0) {
        return Ok(y);
    }
    let mut y = dopri5(vector_field(domain, h), t0, x0, t1, StepControl::with_tol(tol), pole_guard(domain))?;
    if domain == PhaseDomain::Sphere {
        y[0] = wrap_angle(y[0]);
    }
    Ok(y)
}

/// Chart point `(θ, z)` to the unit sphere in `ℝ³`.
pub fn sphere_to_ambient(x: &[f64]) -> [f64; 3] {
    let rho = (1.0 - x[1] * x[1]).max(0.0).sqrt();
    [rho * x[0].cos(), rho * x[0].sin(), x[1]]
}

/// Nearest chart point `(θ, z)` to a nonzero vector of `ℝ³`.
pub fn ambient_to_sphere(q: &[f64; 3]) -> Vec<f64> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
    let z = (q[2] / n).clamp(-1.0, 1.0);
    let theta = if q[0] == 0.0 && q[1] == 0.0 { 0.0 } else { wrap_angle(q[1].atan2(q[0])) };
    vec![theta, z]
}

/// Gradient in `ℝ³` of `q ↦ H(t, chart(q/|q|))`.
pub fn sphere_ambient_gradient(h: &dyn Hamiltonian, t: f64, q: &[f64; 3]) -> [f64; 3] {
    let g = fd_gradient(|y| h.value(t, &ambient_to_sphere(&[y[0], y[1], y[2]])), q);
    [g[0], g[1], g[2]]
}

/// Flow of `H` on the sphere integrated in `ℝ³` with `X = ∇H × p`. Works
/// through the poles for any `H` smooth on the sphere.
pub fn sphere_flow_ambient(h: &dyn Hamiltonian, x0: &[f64], t0: f64, t1: f64, tol: f64) -> Result<Vec<f64>> {
    PhaseDomain::Sphere.check_point(x0)?;
    let q0 = sphere_to_ambient(x0);
    let q = dopri5(
        |t, y, dy| {
            let p = [y[0], y[1], y[2]];
            let g = sphere_ambient_gradient(h, t, &p);
            dy[0] = g[1] * p[2] - g[2] * p[1];
            dy[1] = g[2] * p[0] - g[0] * p[2];
            dy[2] = g[0] * p[1] - g[1] * p[0];
        },
        t0,
        &q0,
        t1,
        StepControl::with_tol(tol),
        |t, y| {
            if y.iter().all(|v| v.is_finite()) {
                Ok(())
            } else {
                Err(LabError::Integration {
                    t_last: t,
                    reason: "non-finite state".into(),
                })
            }
        },
    )?;
    Ok(ambient_to_sphere(&[q[0], q[1], q[2]]))
}

/// `K(t, x) = H_Ψ(t, x) + H_φ(t, Ψ_t⁻¹(x))`, the generator of `t ↦ Ψ_t ∘ φ_t`.
pub struct ComposedHamiltonian {
    pub h_psi: SharedHamiltonian,
    pub h_phi: SharedHamiltonian,
    pub psi_inverse: SharedIsotopy,
}

pub fn compose_hamiltonians(
    h_psi: SharedHamiltonian,
    h_phi: SharedHamiltonian,
    psi_inverse: SharedIsotopy,
) -> ComposedHamiltonian {
    ComposedHamiltonian {
        h_psi,
        h_phi,
        psi_inverse,
    }
}

impl Hamiltonian for ComposedHamiltonian {
    fn dim(&self) -> usize {
        self.h_psi.dim()
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        let y = self
            .psi_inverse
            .apply(t, x)
            .unwrap_or_else(|_| vec![f64::NAN; x.len()]);
        self.h_psi.value(t, x) + self.h_phi.value(t, &y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn disc() -> FnHamiltonian {
        FnHamiltonian::new(2, |_, x| PI * (x[0] * x[0] + x[1] * x[1]))
    }

    #[test]
    fn j_squares_to_minus_identity() {
        let j = j_matrix(4);
        let jj = &j * &j + DMatrix::identity(4, 4);
        assert!(jj.amax() < 1e-15);
        assert_eq!(apply_j(&[1.0, 0.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn gradient_examples() {
        let d = PhaseDomain::Euclidean(2);
        let h = FnHamiltonian::new(2, |_, x| x[1]);
        let x = symplectic_gradient(d, &h, 0.0, &[0.3, -2.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-9 && x[1].abs() < 1e-9);
        let x = symplectic_gradient(d, &disc(), 0.0, &[1.0, 0.0]).unwrap();
        assert!(x[0].abs() < 1e-8 && (x[1] + 2.0 * PI).abs() < 1e-8);
    }

    #[test]
    fn disc_flow_period_one() {
        let d = PhaseDomain::Euclidean(2);
        let tr = flow(d, &disc(), &[1.0, 0.0], 0.0, 1.0, 1e-11).unwrap();
        let e = tr.endpoint();
        assert!((e[0] - 1.0).abs() < 1e-8 && e[1].abs() < 1e-8);
        // clockwise: first quarter goes to negative y
        let q = flow_endpoint(d, &disc(), &[1.0, 0.0], 0.0, 0.25, 1e-11).unwrap();
        assert!((q[1] + 1.0).abs() < 1e-7);
    }

    #[test]
    fn sphere_z_rotation_and_pole_errors() {
        let h = FnHamiltonian::zonal(|_, z| z, |_, _| 1.0);
        let p = flow_endpoint(PhaseDomain::Sphere, &h, &[6.0, 0.2], 0.0, 1.0, 1e-10).unwrap();
        assert!((p[0] - wrap_angle(7.0)).abs() < 1e-12 && p[1] == 0.2);
        let p = flow_endpoint(PhaseDomain::Sphere, &h, &[1.0, 1.0], 0.0, 1.0, 1e-10).unwrap();
        assert!((p[0] - 2.0).abs() < 1e-12 && p[1] == 1.0);
        let e = symplectic_gradient(PhaseDomain::Sphere, &h, 0.0, &[0.0, 1.0]).unwrap_err();
        assert!(matches!(e, LabError::Chart(_)));
        let e = symplectic_gradient(PhaseDomain::Sphere, &h, 0.0, &[0.0, 1.5]).unwrap_err();
        assert!(matches!(e, LabError::Domain(_)));
        // non-zonal field pushing into the cap
        let push = FnHamiltonian::new(2, |_, x| -x[0]);
        let e = flow_endpoint(PhaseDomain::Sphere, &push, &[0.0, 0.5], 0.0, 1.0, 1e-10).unwrap_err();
        assert!(matches!(e, LabError::Integration { .. }));
    }

    #[test]
    fn radial_exact_flow_matches_integration() {
        let h = RadialHamiltonian::new([0.5, -0.2], |t, r| ((1.0 + t) * r * r * r, 3.0 * (1.0 + t) * r * r));
        let x = [1.1, 0.3];
        let exact = h.flow_map(0.0, 0.7, &x);
        let num = flow_endpoint(PhaseDomain::Euclidean(2), &h, &x, 0.0, 0.7, 1e-12).unwrap();
        assert!((exact[0] - num[0]).abs() < 1e-8 && (exact[1] - num[1]).abs() < 1e-8);
    }

    #[test]
    fn ambient_sphere_flow_agrees_with_chart() {
        let h = FnHamiltonian::new(2, |_, x| x[1] + 0.3 * x[1] * x[1]);
        let a = sphere_flow_ambient(&h, &[0.4, 0.5], 0.0, 1.0, 1e-12).unwrap();
        let c = flow_endpoint(PhaseDomain::Sphere, &h, &[0.4, 0.5], 0.0, 1.0, 1e-12).unwrap();
        assert!((a[0] - c[0]).abs() < 1e-7 && (a[1] - c[1]).abs() < 1e-7);
        assert!((c[0] - (0.4 + 1.3)).abs() < 1e-7);
        // a field tilting the rotation axis passes over the north pole
        let tilt = FnHamiltonian::new(2, |_, x| sphere_to_ambient(x)[0]);
        let p = sphere_flow_ambient(&tilt, &[PI / 2.0, 0.0], 0.0, PI / 2.0, 1e-12).unwrap();
        assert!((p[1].abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn domain_validation() {
        assert!(PhaseDomain::euclidean(3).is_err());
        assert!(PhaseDomain::euclidean(0).is_err());
        assert!(PhaseDomain::Euclidean(4).check_point(&[0.0; 2]).is_err());
    }
}
