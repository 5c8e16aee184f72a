use crate::error::{LabError, Result};
use crate::linflow::{HessianPath, LambdaWitness};
use crate::numerics::{composite_gauss, plateau, plateau_deriv, plateau_deriv2};
use crate::ode::{dopri5, dopri5_dense, StepControl};
use crate::symplectic::{apply_j, dot, j_matrix, omega0};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

type CurveFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// A closed curve `α : [0, 1] → ℝ^{2n}` with its velocity.
#[derive(Clone)]
pub struct ClosedLoop {
    dim: usize,
    value: CurveFn,
    deriv: CurveFn,
}

impl std::fmt::Debug for ClosedLoop {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ClosedLoop(dim={}, α(0)={:?})", self.dim, self.value(0.0))
    }
}

impl ClosedLoop {
    pub fn new(
        dim: usize,
        value: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
        deriv: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            value: Arc::new(value),
            deriv: Arc::new(deriv),
        }
    }

    /// Counter-clockwise circle of radius `r` about the origin, starting at `(r, 0)`.
    pub fn circle(r: f64) -> Self {
        Self::ellipse(r, r)
    }

    pub fn ellipse(a: f64, b: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI;
        Self::new(
            2,
            move |t| vec![a * (w * t).cos(), b * (w * t).sin()],
            move |t| vec![-a * w * (w * t).sin(), b * w * (w * t).cos()],
        )
    }

    pub fn constant(point: Vec<f64>) -> Self {
        let d = point.len();
        Self::new(d, move |_| point.clone(), move |_| vec![0.0; d])
    }

    /// `α(t) = L^λ_t x` from a λ-witness, integrated densely and interpolated by
    /// cubic Hermite pieces whose slopes come from `α' = −λ J B_t α`.
    pub fn from_witness(b: &HessianPath, w: &LambdaWitness) -> Result<Self> {
        let n = 1024;
        let d = b.dim;
        let lam = w.lambda;
        let bb = b.clone();
        let rhs = move |t: f64, y: &[f64]| -> Vec<f64> {
            let by = &bb.at(t) * DVector::from_column_slice(y);
            apply_j(by.as_slice()).into_iter().map(|v| -lam * v).collect()
        };
        let times: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let r2 = rhs.clone();
        let pts = dopri5_dense(
            move |t, y, dy| dy.copy_from_slice(&r2(t, y)),
            &w.vector,
            &times,
            StepControl::with_tol(1e-13),
        )?;
        let slopes: Vec<Vec<f64>> = times.iter().zip(&pts).map(|(&t, y)| rhs(t, y)).collect();
        let pts = Arc::new(pts);
        let slopes = Arc::new(slopes);
        let (p2, s2) = (pts.clone(), slopes.clone());
        Ok(Self::new(
            d,
            move |t| hermite(&pts, &slopes, t).0,
            move |t| hermite(&p2, &s2, t).1,
        ))
    }

    /// `t ↦ α(1 − t)`.
    pub fn reversed(&self) -> Self {
        let (v, d) = (self.value.clone(), self.deriv.clone());
        Self::new(self.dim, move |t| v(1.0 - t), move |t| d(1.0 - t).into_iter().map(|x| -x).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, t: f64) -> Vec<f64> {
        (self.value)(t)
    }

    pub fn derivative(&self, t: f64) -> Vec<f64> {
        (self.deriv)(t)
    }

    fn sup(&self, f: impl Fn(f64) -> f64) -> f64 {
        (0..=1024).map(|k| f(k as f64 / 1024.0)).fold(0.0, f64::max)
    }

    /// `max_t ‖α(t)‖`, sampled.
    pub fn max_norm(&self) -> f64 {
        self.sup(|t| norm(&self.value(t)))
    }

    /// `max_t ‖α(t) − α(0)‖`, sampled.
    pub fn max_excursion(&self) -> f64 {
        let c = self.value(0.0);
        self.sup(|t| dist(&self.value(t), &c))
    }

    pub fn max_speed(&self) -> f64 {
        self.sup(|t| norm(&self.derivative(t)))
    }

    /// Signed enclosed area `½ ∫ (J α)·α'`.
    pub fn area(&self) -> f64 {
        0.5 * composite_gauss(0.0, 1.0, 64, 8)
            .into_iter()
            .map(|(t, w)| w * omega0(&self.value(t), &self.derivative(t)))
            .sum::<f64>()
    }
}

fn hermite(p: &[Vec<f64>], m: &[Vec<f64>], t: f64) -> (Vec<f64>, Vec<f64>) {
    let n = p.len() - 1;
    let h = 1.0 / n as f64;
    let k = ((t.clamp(0.0, 1.0) / h) as usize).min(n - 1);
    let s = t.clamp(0.0, 1.0) / h - k as f64;
    let (s2, s3) = (s * s, s * s * s);
    let (h00, h10, h01, h11) = (2.0 * s3 - 3.0 * s2 + 1.0, s3 - 2.0 * s2 + s, -2.0 * s3 + 3.0 * s2, s3 - s2);
    let (d00, d10, d01, d11) = (6.0 * s2 - 6.0 * s, 3.0 * s2 - 4.0 * s + 1.0, -6.0 * s2 + 6.0 * s, 3.0 * s2 - 2.0 * s);
    let val = (0..p[k].len())
        .map(|i| h00 * p[k][i] + h10 * h * m[k][i] + h01 * p[k + 1][i] + h11 * h * m[k + 1][i])
        .collect();
    let der = (0..p[k].len())
        .map(|i| (d00 * p[k][i] + d01 * p[k + 1][i]) / h + d10 * m[k][i] + d11 * m[k + 1][i])
        .collect();
    (val, der)
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    super::dist(a, b)
}

/// The closed loop of symplectomorphisms `ψ_t`: translation by `v(t) = ρ(α(t) − α(0))`
/// on `D(2δ)`, the identity off `D(3δ)`.
///
/// `ψ_t` is the time-one map of the autonomous `G_v(x) = χ(|x|) J v·x` with `χ = 1` on
/// `D(7δ/3)`; its generator is `F_t = ∫_0^1 (∂_t G_{v(t)}) ∘ φ^{G_v}_{−u} du`.
#[derive(Clone, Debug)]
pub struct ScrubLoop {
    pub delta: f64,
    pub rho: f64,
    pub alpha: ClosedLoop,
    base: Vec<f64>,
    tol: f64,
}

impl ScrubLoop {
    pub fn new(alpha: ClosedLoop, delta: f64, rho: f64) -> Result<Self> {
        if !(delta > 0.0) || !(rho >= 0.0) || alpha.dim() % 2 != 0 || alpha.dim() == 0 {
            return Err(LabError::Config("loop needs δ > 0, ρ ≥ 0 and an even dimension".into()));
        }
        let exc = rho * alpha.max_excursion();
        if exc > delta / 3.0 {
            return Err(LabError::Precondition(format!(
                "translation amplitude ρ·max‖α − α(0)‖ = {exc:e} exceeds δ/3 = {:e}",
                delta / 3.0
            )));
        }
        let base = alpha.value(0.0);
        Ok(Self {
            delta,
            rho,
            alpha,
            base,
            tol: 1e-12,
        })
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    fn inner(&self) -> f64 {
        7.0 * self.delta / 3.0
    }

    fn outer(&self) -> f64 {
        3.0 * self.delta
    }

    /// `v(t) = ρ α₀(t)`.
    pub fn shift(&self, t: f64) -> Vec<f64> {
        self.alpha.value(t).iter().zip(&self.base).map(|(a, c)| self.rho * (a - c)).collect()
    }

    pub fn shift_rate(&self, t: f64) -> Vec<f64> {
        self.alpha.derivative(t).into_iter().map(|a| self.rho * a).collect()
    }

    fn chi(&self, r: f64) -> (f64, f64, f64) {
        let (a, b) = (self.inner(), self.outer());
        (plateau(r, a, b), plateau_deriv(r, a, b), plateau_deriv2(r, a, b))
    }

    /// `∇(χ(|x|) w·x)`.
    fn g_grad(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let r = norm(x);
        let (c, c1, _) = self.chi(r);
        if c1 == 0.0 {
            return w.iter().map(|v| c * v).collect();
        }
        let l = dot(w, x);
        w.iter().zip(x).map(|(wi, xi)| c * wi + l * c1 * xi / r).collect()
    }

    fn g_hess(&self, w: &[f64], x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        let r = norm(x);
        let (_, c1, c2) = self.chi(r);
        if c1 == 0.0 && c2 == 0.0 {
            return DMatrix::zeros(d, d);
        }
        let l = dot(w, x);
        let u: Vec<f64> = x.iter().map(|v| v / r).collect();
        DMatrix::from_fn(d, d, |i, j| {
            let proj = if i == j { 1.0 } else { 0.0 } - u[i] * u[j];
            c1 * (w[i] * u[j] + u[i] * w[j]) + l * c2 * u[i] * u[j] + l * c1 * proj / r
        })
    }

    fn moves(&self, v: &[f64], x: &[f64]) -> Option<bool> {
        let r = norm(x);
        if r >= self.outer() {
            Some(false)
        } else if r + norm(v) <= self.inner() {
            Some(true)
        } else {
            None
        }
    }

    /// `T_v(x)`, the time-one map of `G_v`.
    pub fn transport(&self, v: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        match self.moves(v, x) {
            Some(false) => return Ok(x.to_vec()),
            Some(true) => return Ok(x.iter().zip(v).map(|(a, b)| a + b).collect()),
            None => {}
        }
        let w = apply_j(v);
        dopri5(
            |_, y, dy| {
                let g = apply_j(&self.g_grad(&w, y));
                for (o, gi) in dy.iter_mut().zip(g) {
                    *o = -gi;
                }
            },
            0.0,
            x,
            1.0,
            StepControl::with_tol(self.tol),
            |_, _| Ok(()),
        )
    }

    /// `T_v(x)` and its Jacobian.
    pub fn transport_jacobian(&self, v: &[f64], x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let d = x.len();
        match self.moves(v, x) {
            Some(false) => return Ok((x.to_vec(), DMatrix::identity(d, d))),
            Some(true) => return Ok((x.iter().zip(v).map(|(a, b)| a + b).collect(), DMatrix::identity(d, d))),
            None => {}
        }
        let w = apply_j(v);
        let jm = j_matrix(d);
        let mut y0 = x.to_vec();
        y0.extend(DMatrix::<f64>::identity(d, d).iter());
        let y = dopri5(
            |_, y, dy| {
                let g = apply_j(&self.g_grad(&w, &y[..d]));
                for i in 0..d {
                    dy[i] = -g[i];
                }
                let m = DMatrix::from_column_slice(d, d, &y[d..]);
                let dm = -(&jm * self.g_hess(&w, &y[..d])) * m;
                dy[d..].copy_from_slice(dm.as_slice());
            },
            0.0,
            &y0,
            1.0,
            StepControl::with_tol(self.tol),
            |_, _| Ok(()),
        )?;
        Ok((y[..d].to_vec(), DMatrix::from_column_slice(d, d, &y[d..])))
    }

    pub fn apply(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.transport(&self.shift(t), x)
    }

    pub fn apply_inverse(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let v: Vec<f64> = self.shift(t).into_iter().map(|a| -a).collect();
        self.transport(&v, x)
    }

    pub fn apply_inverse_jacobian(&self, t: f64, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let v: Vec<f64> = self.shift(t).into_iter().map(|a| -a).collect();
        self.transport_jacobian(&v, x)
    }

    /// `F_t(y)` and `∇F_t(y)`, normalised to vanish off `D(3δ)`.
    pub fn generator(&self, t: f64, y: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = y.len();
        let v = self.shift(t);
        let w = apply_j(&v);
        let w1 = apply_j(&self.shift_rate(t));
        match self.moves(&v, y) {
            Some(false) => return Ok((0.0, vec![0.0; d])),
            Some(true) => return Ok((dot(&w1, y) - 0.5 * dot(&w1, &v), w1)),
            None => {}
        }
        let jm = j_matrix(d);
        // state: point of φ_{−u}(y), its Jacobian, ∫ G', ∫ Dᵀ∇G'
        let mut y0 = y.to_vec();
        y0.extend(DMatrix::<f64>::identity(d, d).iter());
        y0.extend(std::iter::repeat(0.0).take(d + 1));
        let out = dopri5(
            |_, s, ds| {
                let z = &s[..d];
                let g = apply_j(&self.g_grad(&w, z));
                ds[..d].copy_from_slice(&g);
                let m = DMatrix::from_column_slice(d, d, &s[d..d + d * d]);
                let dm = (&jm * self.g_hess(&w, z)) * &m;
                ds[d..d + d * d].copy_from_slice(dm.as_slice());
                let r = norm(z);
                let (c, _, _) = self.chi(r);
                ds[d + d * d] = c * dot(&w1, z);
                let q = m.transpose() * DVector::from_vec(self.g_grad(&w1, z));
                ds[d + d * d + 1..].copy_from_slice(q.as_slice());
            },
            0.0,
            &y0,
            1.0,
            StepControl::with_tol(self.tol),
            |_, _| Ok(()),
        )?;
        Ok((out[d + d * d], out[d + d * d + 1..].to_vec()))
    }

    /// `X_t(y) = ∂_t ψ_t(ψ_t⁻¹ y)` by central differences in `t`, without using `F`.
    pub fn velocity(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let h = 1e-5;
        let x = self.apply_inverse(t, y)?;
        let a = self.apply(t + h, &x)?;
        let b = self.apply(t - h, &x)?;
        Ok(a.iter().zip(&b).map(|(p, q)| (p - q) / (2.0 * h)).collect())
    }
}

/// Default midpoint nodes in `t` and along the arc for [`verify_lemma_z`].
pub const DEFAULT_Z_NODES: (usize, usize) = (32, 128);

#[derive(Debug, Clone, Serialize)]
pub struct LemmaZReport {
    /// `∫_0^1 z(t) dt` with `z(t) = F_t(0)` from the flux of `X_t` through the arc.
    pub flux: f64,
    /// `½ ∮ (J ρα₀)·(ρα₀)'`.
    pub area: f64,
    pub abs_residual: f64,
    /// Relative residual, or the absolute one when the area vanishes.
    pub residual: f64,
    pub nodes_t: usize,
    pub nodes_s: usize,
}

/// Integrates `ω(X_t(β(s)), β'(s))` along the segment from `(3δ, 0, …)` to `0`
/// (midpoint rule, `nodes_s` nodes) and over `t` (midpoint rule, `nodes_t` nodes).
pub fn verify_lemma_z(lp: &ScrubLoop, nodes_t: usize, nodes_s: usize) -> Result<LemmaZReport> {
    if nodes_t == 0 || nodes_s == 0 {
        return Err(LabError::Config("lemma z needs positive node counts".into()));
    }
    let d = lp.dim();
    let mut b0 = vec![0.0; d];
    b0[0] = lp.outer();
    let db: Vec<f64> = b0.iter().map(|x| -x).collect();
    let z: Vec<f64> = (0..nodes_t)
        .into_par_iter()
        .map(|i| {
            let t = (i as f64 + 0.5) / nodes_t as f64;
            let mut acc = 0.0;
            for j in 0..nodes_s {
                let s = (j as f64 + 0.5) / nodes_s as f64;
                let y: Vec<f64> = b0.iter().map(|x| (1.0 - s) * x).collect();
                acc += omega0(&lp.velocity(t, &y)?, &db);
            }
            Ok(acc / nodes_s as f64)
        })
        .collect::<Result<_>>()?;
    let flux = z.iter().sum::<f64>() / nodes_t as f64;
    let area = lp.rho * lp.rho * lp.alpha.area();
    let abs_residual = (flux - area).abs();
    let residual = if area.abs() > 0.0 { abs_residual / area.abs() } else { abs_residual };
    Ok(LemmaZReport {
        flux,
        area,
        abs_residual,
        residual,
        nodes_t,
        nodes_s,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LemmaLambdaReport {
    /// `∫_0^1 min_{D(δ)} K̃_t dt` by grid minimisation.
    pub lhs: f64,
    /// `(1 − λ)λρ² ∫ H̃_t(α) dt`.
    pub rhs: f64,
    pub residual: f64,
    /// The same closed form evaluated at `α₀ = α − α(0)` instead of `α`.
    pub rhs_at_alpha0: f64,
    pub residual_at_alpha0: f64,
    /// `max_t` distance from the grid minimiser to `p(t) + ker B_t`, divided by `ρ`.
    pub minimizer_error: f64,
    /// `max_t ‖α' + λ J B_t α‖`.
    pub trajectory_defect: f64,
    pub grid: usize,
}

/// Minimises `f` on `D(radius)` by a square grid of `n` points per axis, then
/// `levels` zooms onto the best cell.
fn grid_min(f: &dyn Fn(&[f64]) -> f64, radius: f64, n: usize, levels: usize) -> (Vec<f64>, f64) {
    let mut center = [0.0, 0.0];
    let mut half = radius;
    let mut best = (vec![0.0, 0.0], f64::INFINITY);
    for _ in 0..=levels {
        let h = 2.0 * half / (n - 1) as f64;
        for i in 0..n {
            for j in 0..n {
                let x = [center[0] - half + i as f64 * h, center[1] - half + j as f64 * h];
                if x[0] * x[0] + x[1] * x[1] > radius * radius {
                    continue;
                }
                let v = f(&x);
                if v < best.1 {
                    best = (x.to_vec(), v);
                }
            }
        }
        center = [best.0[0], best.0[1]];
        half = 2.0 * h;
    }
    best
}

/// Checks the minimum of the model `K̃_t(x) = z(t) + ρ Jα'·x + H̃_t(x − ρα₀)`,
/// `H̃_t = ½ x·B_t x`, against its closed form, in dimension 2.
pub fn verify_lemma_lambda(
    b: &HessianPath,
    lambda: f64,
    alpha: &ClosedLoop,
    rho: f64,
    delta: f64,
    grid: usize,
) -> Result<LemmaLambdaReport> {
    if b.dim != 2 || alpha.dim() != 2 {
        return Err(LabError::Domain("the λ-lemma check runs in dimension 2".into()));
    }
    if grid < 5 || !(delta > 0.0) || !(lambda > 0.0 && lambda < 1.0) {
        return Err(LabError::Config("need grid ≥ 5, δ > 0 and λ in (0, 1)".into()));
    }
    let c = alpha.value(0.0);
    let nodes_t = grid;
    let rows: Vec<(f64, f64, f64)> = (0..nodes_t)
        .into_par_iter()
        .map(|i| {
            let t = (i as f64 + 0.5) / nodes_t as f64;
            let a = alpha.value(t);
            let da = alpha.derivative(t);
            let a0: Vec<f64> = a.iter().zip(&c).map(|(x, y)| x - y).collect();
            let bt = b.at(t);
            let z = 0.5 * rho * rho * omega0(&a0, &da);
            let jda = apply_j(&da);
            let k = |x: &[f64]| {
                let u = DVector::from_vec(vec![x[0] - rho * a0[0], x[1] - rho * a0[1]]);
                z + rho * dot(&jda, x) + 0.5 * u.dot(&(&bt * &u))
            };
            let (xm, m) = grid_min(&k, delta, grid, 4);
            // distance to p(t) + ker B_t
            let p: Vec<f64> = (0..2).map(|i| rho * (1.0 - lambda) * a[i] - rho * c[i]).collect();
            let e = bt.clone().symmetric_eigen();
            let top = e.eigenvalues.amax();
            let diff = DVector::from_vec(vec![xm[0] - p[0], xm[1] - p[1]]);
            let mut err2 = 0.0;
            for (j, &ev) in e.eigenvalues.iter().enumerate() {
                if ev.abs() > 1e-9 * top {
                    err2 += diff.dot(&e.eigenvectors.column(j)).powi(2);
                }
            }
            let err = if rho > 0.0 { err2.sqrt() / rho } else { 0.0 };
            let jbad = apply_j((&bt * DVector::from_vec(a)).as_slice());
            let defect = (0..2).map(|i| (da[i] + lambda * jbad[i]).powi(2)).sum::<f64>().sqrt();
            Ok((m, err, defect))
        })
        .collect::<Result<_>>()?;
    let lhs = rows.iter().map(|r| r.0).sum::<f64>() / nodes_t as f64;
    let minimizer_error = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let trajectory_defect = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let (mut ia, mut ia0) = (0.0, 0.0);
    for (t, w) in composite_gauss(0.0, 1.0, 64, 8) {
        let a = DVector::from_vec(alpha.value(t));
        let a0 = &a - DVector::from_column_slice(&c);
        let bt = b.at(t);
        ia += w * 0.5 * a.dot(&(&bt * &a));
        ia0 += w * 0.5 * a0.dot(&(&bt * &a0));
    }
    let k = (1.0 - lambda) * lambda * rho * rho;
    let (rhs, rhs_at_alpha0) = (k * ia, k * ia0);
    let rel = |x: f64, y: f64| if y.abs() > 0.0 { (x - y).abs() / y.abs() } else { (x - y).abs() };
    Ok(LemmaLambdaReport {
        lhs,
        rhs,
        residual: rel(lhs, rhs),
        rhs_at_alpha0,
        residual_at_alpha0: rel(lhs, rhs_at_alpha0),
        minimizer_error,
        trajectory_defect,
        grid,
    })
}

/// Reparametrisation `f : [0, 1] → [0, t']`, the identity on `[0, t' − ε]`,
/// then `t' − ε + ε(1 − (1 − u)^k)` with `k` chosen so `f` is C¹ and `f' ≤ 1`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Slowdown {
    pub t_prime: f64,
    pub eps: f64,
}

impl Slowdown {
    pub fn new(t_prime: f64, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps <= t_prime && t_prime <= 1.0) {
            return Err(LabError::Config(format!("slowdown needs 0 < ε ≤ t' ≤ 1, got ε={eps}, t'={t_prime}")));
        }
        Ok(Self { t_prime, eps })
    }

    fn tail(&self) -> (f64, f64, f64) {
        let start = self.t_prime - self.eps;
        let len = 1.0 - start;
        (start, len, len / self.eps)
    }

    pub fn map(&self, s: f64) -> f64 {
        let (start, len, k) = self.tail();
        if s <= start {
            return s;
        }
        let u = ((s - start) / len).min(1.0);
        start + self.eps * (1.0 - (1.0 - u).powf(k))
    }

    pub fn rate(&self, s: f64) -> f64 {
        let (start, len, k) = self.tail();
        if s <= start {
            return 1.0;
        }
        let u = ((s - start) / len).min(1.0);
        (1.0 - u).powf(k - 1.0)
    }
}

/// `α = ᾱ ∘ f` for a closed trajectory `ᾱ` on `[0, t']`.
pub fn slowdown_loop(
    dim: usize,
    value: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    derivative: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    t_prime: f64,
    eps: f64,
) -> Result<ClosedLoop> {
    let f = Slowdown::new(t_prime, eps)?;
    let a0 = value(0.0);
    let a1 = value(t_prime);
    let gap = dist(&a0, &a1);
    if gap > 1e-8 * norm(&a0).max(1.0) {
        return Err(LabError::Precondition(format!("trajectory does not close at t' (gap {gap:e})")));
    }
    let value = Arc::new(value);
    let v2 = value.clone();
    Ok(ClosedLoop::new(
        dim,
        move |s| v2(f.map(s)),
        move |s| derivative(f.map(s)).into_iter().map(|x| x * f.rate(s)).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_matches_velocity_in_the_collar() {
        let lp = ScrubLoop::new(ClosedLoop::circle(1.0), 0.1, 0.01).unwrap();
        let t = 0.3;
        for y in [[0.25, 0.01], [0.0, -0.27], [0.2, 0.15]] {
            let x = lp.velocity(t, &y).unwrap();
            let (_, g) = lp.generator(t, &y).unwrap();
            // X_F = −J ∇F
            let jx = apply_j(&g);
            let err = ((x[0] + jx[0]).powi(2) + (x[1] + jx[1]).powi(2)).sqrt();
            assert!(err < 1e-7 * lp.rho, "{y:?}: {x:?} vs {jx:?}");
        }
    }

    #[test]
    fn transport_closes_up() {
        let lp = ScrubLoop::new(ClosedLoop::ellipse(1.0, 0.5), 0.1, 0.01).unwrap();
        let y = lp.apply(1.0, &[0.26, 0.05]).unwrap();
        assert!((y[0] - 0.26).abs() < 1e-12 && (y[1] - 0.05).abs() < 1e-12);
        let (y, m) = lp.transport_jacobian(&[0.004, 0.003], &[0.25, 0.0]).unwrap();
        let h = 1e-6;
        let a = lp.transport(&[0.004, 0.003], &[0.25 + h, 0.0]).unwrap();
        let b = lp.transport(&[0.004, 0.003], &[0.25 - h, 0.0]).unwrap();
        assert!(((a[0] - b[0]) / (2.0 * h) - m[(0, 0)]).abs() < 1e-6);
        assert!(((a[1] - b[1]) / (2.0 * h) - m[(1, 0)]).abs() < 1e-6);
        assert!((m.determinant() - 1.0).abs() < 1e-8);
        let _ = y;
    }
}
