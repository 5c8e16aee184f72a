//! The second-variation form `Q(g) = ∫ (B_t⁻¹ g')·g' ± (Jg)·g'` on based loops,
//! its Galerkin discretisation, index and nullity, and conjugate values.

use crate::error::{LabError, Result};
use crate::linflow::HessianPath;
use crate::numerics::{composite_gauss, gauss_legendre, legendre_all};
use crate::symplectic::{apply_j, dot};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use std::sync::Arc;

/// Eigenvalues with `|μ| ≤ DEFAULT_TOL_NULL · max|μ|` count as null.
pub const DEFAULT_TOL_NULL: f64 = 1e-6;
pub const DEFAULT_MODES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremumSign {
    /// `+ (Jg)·g'`
    Minimum,
    /// `− (Jg)·g'`
    Maximum,
}

impl ExtremumSign {
    fn factor(self) -> f64 {
        match self {
            ExtremumSign::Minimum => 1.0,
            ExtremumSign::Maximum => -1.0,
        }
    }
}

/// Basis of loops on `[0, t']` vanishing at both ends, normalised so that
/// `∫ ψ_k' ψ_j' dt = δ_kj`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// `ψ_k ∝ P_{k+1}(s) − P_{k−1}(s)`, `s = 2t/t' − 1`; spectrally accurate up to the endpoints.
    IntegratedLegendre,
    /// `ψ_k ∝ sin(π k t / t')`.
    Sine,
}

impl Basis {
    /// `(ψ_k(t), ψ_k'(t))` for `k = 1..=n`.
    pub fn eval(self, n: usize, t_end: f64, t: f64) -> (Vec<f64>, Vec<f64>) {
        match self {
            Basis::IntegratedLegendre => {
                let s = 2.0 * t / t_end - 1.0;
                let p = legendre_all(n + 1, s);
                let mut v = Vec::with_capacity(n);
                let mut d = Vec::with_capacity(n);
                for k in 1..=n {
                    let kf = (2 * k + 1) as f64;
                    let c = (t_end / (4.0 * kf)).sqrt();
                    v.push(c * (p[k + 1] - p[k - 1]));
                    d.push(c * kf * p[k] * 2.0 / t_end);
                }
                (v, d)
            }
            Basis::Sine => {
                let mut v = Vec::with_capacity(n);
                let mut d = Vec::with_capacity(n);
                for k in 1..=n {
                    let w = PI * k as f64 / t_end;
                    let a = (2.0 * t_end).sqrt() / (PI * k as f64);
                    v.push(a * (w * t).sin());
                    d.push(a * w * (w * t).cos());
                }
                (v, d)
            }
        }
    }
}

type LoopFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// A loop `g : [0, t'] → ℝ^{2n}` with `g(0) = g(t') = 0`.
#[derive(Clone)]
pub enum TangentLoop {
    /// Uniform samples including both (zero) endpoints.
    Samples { t_end: f64, values: Vec<Vec<f64>> },
    /// Coefficients in a [`Basis`]; entry `i * modes + (k − 1)` multiplies `ψ_k e_i`.
    Modes {
        basis: Basis,
        t_end: f64,
        dim: usize,
        modes: usize,
        coeffs: Vec<f64>,
    },
    /// Closed-form loop with its derivative.
    Function {
        t_end: f64,
        dim: usize,
        value: LoopFn,
        derivative: LoopFn,
    },
}

impl std::fmt::Debug for TangentLoop {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TangentLoop::Samples { values, .. } => write!(f, "TangentLoop::Samples({} points)", values.len()),
            TangentLoop::Modes { basis, modes, .. } => write!(f, "TangentLoop::Modes({basis:?}, {modes})"),
            TangentLoop::Function { .. } => write!(f, "TangentLoop::Function"),
        }
    }
}

impl TangentLoop {
    pub fn from_samples(t_end: f64, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() < 3 {
            return Err(LabError::Domain("a sampled loop needs at least 3 samples".into()));
        }
        let closes = |v: &Vec<f64>| v.iter().all(|x| x.abs() <= 1e-12);
        if !closes(&values[0]) || !closes(values.last().unwrap()) {
            return Err(LabError::Domain("a based loop must vanish at both ends".into()));
        }
        Ok(TangentLoop::Samples { t_end, values })
    }

    pub fn from_fn(
        t_end: f64,
        dim: usize,
        value: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
        derivative: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        TangentLoop::Function {
            t_end,
            dim,
            value: Arc::new(value),
            derivative: Arc::new(derivative),
        }
    }

    /// `g ≡ 0`.
    pub fn zero(t_end: f64, dim: usize) -> Self {
        Self::from_fn(t_end, dim, move |_| vec![0.0; dim], move |_| vec![0.0; dim])
    }

    /// `r (cos 2πt/t' − 1, sin 2πt/t')` in the first symplectic plane.
    pub fn circle(t_end: f64, dim: usize, r: f64) -> Self {
        let w = 2.0 * PI / t_end;
        Self::from_fn(
            t_end,
            dim,
            move |t| {
                let mut v = vec![0.0; dim];
                v[0] = r * ((w * t).cos() - 1.0);
                v[1] = r * (w * t).sin();
                v
            },
            move |t| {
                let mut v = vec![0.0; dim];
                v[0] = -r * w * (w * t).sin();
                v[1] = r * w * (w * t).cos();
                v
            },
        )
    }

    pub fn t_end(&self) -> f64 {
        match self {
            TangentLoop::Samples { t_end, .. } | TangentLoop::Modes { t_end, .. } | TangentLoop::Function { t_end, .. } => *t_end,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TangentLoop::Samples { values, .. } => values[0].len(),
            TangentLoop::Modes { dim, .. } | TangentLoop::Function { dim, .. } => *dim,
        }
    }

    /// `t ↦ g(t_end − t)`.
    pub fn reversed(&self) -> Self {
        match self {
            TangentLoop::Samples { t_end, values } => TangentLoop::Samples {
                t_end: *t_end,
                values: values.iter().rev().cloned().collect(),
            },
            other => {
                let me = other.clone();
                let me2 = other.clone();
                let te = other.t_end();
                Self::from_fn(
                    te,
                    other.dim(),
                    move |t| me.value(te - t),
                    move |t| me2.derivative(te - t).into_iter().map(|x| -x).collect(),
                )
            }
        }
    }

    pub fn value(&self, t: f64) -> Vec<f64> {
        match self {
            TangentLoop::Samples { t_end, values } => {
                let m = values.len() - 1;
                let x = (t / t_end * m as f64).clamp(0.0, m as f64);
                let i = (x.floor() as usize).min(m - 1);
                let f = x - i as f64;
                values[i].iter().zip(&values[i + 1]).map(|(a, b)| a + f * (b - a)).collect()
            }
            TangentLoop::Modes {
                basis,
                t_end,
                dim,
                modes,
                coeffs,
            } => {
                let (v, _) = basis.eval(*modes, *t_end, t);
                (0..*dim).map(|i| dot(&coeffs[i * modes..(i + 1) * modes], &v)).collect()
            }
            TangentLoop::Function { value, .. } => value(t),
        }
    }

    pub fn derivative(&self, t: f64) -> Vec<f64> {
        match self {
            TangentLoop::Samples { t_end, values } => {
                let m = values.len() - 1;
                let h = t_end / m as f64;
                let x = (t / h).clamp(0.0, m as f64);
                let i = (x.round() as usize).min(m);
                let (a, b, w) = if i == 0 {
                    (0, 1, h)
                } else if i == m {
                    (m - 1, m, h)
                } else {
                    (i - 1, i + 1, 2.0 * h)
                };
                values[a].iter().zip(&values[b]).map(|(p, q)| (q - p) / w).collect()
            }
            TangentLoop::Modes {
                basis,
                t_end,
                dim,
                modes,
                coeffs,
            } => {
                let (_, d) = basis.eval(*modes, *t_end, t);
                (0..*dim).map(|i| dot(&coeffs[i * modes..(i + 1) * modes], &d)).collect()
            }
            TangentLoop::Function { derivative, .. } => derivative(t),
        }
    }

    /// Quadrature nodes and weights suited to the representation.
    fn quadrature(&self) -> Vec<(f64, f64)> {
        match self {
            TangentLoop::Samples { t_end, values } => {
                let m = values.len() - 1;
                let w = crate::numerics::simpson_weights(0.0, *t_end, m);
                (0..=m).map(|k| (t_end * k as f64 / m as f64, w[k])).collect()
            }
            TangentLoop::Modes { t_end, modes, .. } => gauss_on(*t_end, 2 * modes + 64),
            TangentLoop::Function { t_end, .. } => composite_gauss(0.0, *t_end, 64, 10),
        }
    }
}

fn gauss_on(t_end: f64, n: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    x.iter()
        .zip(&w)
        .map(|(x, w)| (0.5 * t_end * (x + 1.0), 0.5 * t_end * w))
        .collect()
}

/// `area g = ½ ∫ (Jg)·g' dt`.
pub fn loop_area(g: &TangentLoop) -> f64 {
    0.5 * g
        .quadrature()
        .iter()
        .map(|&(t, w)| w * dot(&apply_j(&g.value(t)), &g.derivative(t)))
        .sum::<f64>()
}

fn inverse_checked(m: &DMatrix<f64>, t: f64) -> Result<(DMatrix<f64>, f64)> {
    let e = SymmetricEigen::new(m.clone()).eigenvalues;
    let amax = e.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let amin = e.iter().fold(f64::INFINITY, |a, &x| a.min(x.abs()));
    let cond = if amin > 0.0 { amax / amin } else { f64::INFINITY };
    if !(cond < 1e12) {
        return Err(LabError::Refused(format!(
            "B_t is singular at t = {t} (condition number {cond:e}); the metric needs (d²H)⁻¹"
        )));
    }
    let inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| LabError::Singular(format!("B_t at t = {t}")))?;
    Ok((inv, cond))
}

/// `(∫ (B⁻¹g')·g', ∫ (Jg)·g')` for the loop on `[0, t']`.
pub fn q_terms(b: &HessianPath, g: &TangentLoop) -> Result<(f64, f64)> {
    if g.dim() != b.dim {
        return Err(LabError::Domain("loop and Hessian dimensions differ".into()));
    }
    let mut kin = 0.0;
    let mut area = 0.0;
    for (t, w) in g.quadrature() {
        let (inv, _) = inverse_checked(&b.at(t), t)?;
        let gv = g.value(t);
        let dg = DVector::from_vec(g.derivative(t));
        kin += w * dg.dot(&(&inv * &dg));
        area += w * dot(&apply_j(&gv), dg.as_slice());
    }
    Ok((kin, area))
}

/// `Q(g) = ∫ (B_t⁻¹ g')·g' ± (Jg)·g' dt`.
pub fn q_functional(b: &HessianPath, g: &TangentLoop, sign: ExtremumSign) -> Result<f64> {
    let (k, a) = q_terms(b, g)?;
    Ok(k + sign.factor() * a)
}

/// Kinetic term `± 2 area(g)`; the same quantity as [`q_functional`] assembled
/// from [`loop_area`].
pub fn second_variation_contribution(b: &HessianPath, g: &TangentLoop, sign: ExtremumSign) -> Result<f64> {
    let (k, _) = q_terms(b, g)?;
    Ok(k + sign.factor() * 2.0 * loop_area(g))
}

#[derive(Debug, Clone, Serialize)]
pub struct QFormReport {
    pub t_end: f64,
    pub modes: usize,
    pub basis: Basis,
    pub dimension: usize,
    pub index: usize,
    pub nullity: usize,
    pub positive: usize,
    /// Smallest five eigenvalues, ascending.
    pub smallest: Vec<f64>,
    pub max_abs_eigenvalue: f64,
    pub tol_null: f64,
    pub max_condition_number: f64,
    #[serde(skip)]
    pub null_vectors: Vec<TangentLoop>,
}

/// Symmetric matrix of `Q_{t'}` in `basis` with `modes` functions per coordinate,
/// plus the largest condition number of `B_t` met.
pub fn assemble_q(b: &HessianPath, t_end: f64, modes: usize, sign: ExtremumSign, basis: Basis) -> Result<(DMatrix<f64>, f64)> {
    if !(t_end > 0.0) {
        return Err(LabError::Precondition("t' must be positive".into()));
    }
    if modes == 0 {
        return Err(LabError::Config("at least one mode is required".into()));
    }
    let d = b.dim;
    let n = modes;
    let size = d * n;
    let mut q = DMatrix::<f64>::zeros(size, size);
    let mut cond_max = 0.0f64;
    let j = crate::symplectic::j_matrix(d);
    let sgn = sign.factor();
    for (t, w) in gauss_on(t_end, 2 * n + 64) {
        let (inv, cond) = inverse_checked(&b.at(t), t)?;
        cond_max = cond_max.max(cond);
        let (v, dv) = basis.eval(n, t_end, t);
        for a in 0..d {
            for c in 0..d {
                let kin = w * inv[(a, c)];
                // (Jφ)·ψ' with φ = ψ_k e_c, ψ = ψ_l e_a contributes J[a, c] ψ_k ψ_l'
                let jac = 0.5 * sgn * w * j[(a, c)];
                if kin == 0.0 && jac == 0.0 {
                    continue;
                }
                for l in 0..n {
                    let row = a * n + l;
                    for k in 0..n {
                        let col = c * n + k;
                        q[(row, col)] += kin * dv[l] * dv[k] + jac * v[k] * dv[l];
                        q[(col, row)] += jac * v[k] * dv[l];
                    }
                }
            }
        }
    }
    Ok((q, cond_max))
}

/// Index, nullity and null vectors of `Q_{t'}`.
pub fn q_form_matrix(b: &HessianPath, t_end: f64, modes: usize, sign: ExtremumSign) -> Result<QFormReport> {
    q_form_matrix_with(b, t_end, modes, sign, Basis::IntegratedLegendre, DEFAULT_TOL_NULL)
}

pub fn q_form_matrix_with(
    b: &HessianPath,
    t_end: f64,
    modes: usize,
    sign: ExtremumSign,
    basis: Basis,
    tol_null: f64,
) -> Result<QFormReport> {
    let (q, cond) = assemble_q(b, t_end, modes, sign, basis)?;
    let eig = SymmetricEigen::new(q);
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let thr = tol_null * max_abs;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|a, c| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*c]));
    let mut index = 0;
    let mut nullity = 0;
    let mut null_vectors = Vec::new();
    for &i in &order {
        let mu = eig.eigenvalues[i];
        if mu.abs() <= thr {
            nullity += 1;
            null_vectors.push(TangentLoop::Modes {
                basis,
                t_end,
                dim: b.dim,
                modes,
                coeffs: eig.eigenvectors.column(i).iter().copied().collect(),
            });
        } else if mu < 0.0 {
            index += 1;
        }
    }
    let dimension = order.len();
    Ok(QFormReport {
        t_end,
        modes,
        basis,
        dimension,
        index,
        nullity,
        positive: dimension - index - nullity,
        smallest: order.iter().take(5).map(|&i| eig.eigenvalues[i]).collect(),
        max_abs_eigenvalue: max_abs,
        tol_null,
        max_condition_number: cond,
        null_vectors,
    })
}

/// Result of fitting `g' = B_t(−Jg + c)`.
#[derive(Debug, Clone, Serialize)]
pub struct NullCheck {
    pub c: Vec<f64>,
    /// `sup_t ‖g' − B_t(−Jg + c)‖` over the sample times.
    pub residual: f64,
}

/// Least-squares fit of the constant in the Euler–Lagrange equation of `Q`;
/// a small residual certifies that `g` is a null vector.
pub fn nullspace_trajectory_check(b: &HessianPath, t_end: f64, g: &TangentLoop) -> Result<NullCheck> {
    let d = b.dim;
    let m = 201;
    let times: Vec<f64> = (0..m).map(|k| t_end * (k as f64 + 0.5) / m as f64).collect();
    let mut a = DMatrix::<f64>::zeros(m * d, d);
    let mut rhs = DVector::<f64>::zeros(m * d);
    let mut r0 = Vec::with_capacity(m);
    for (k, &t) in times.iter().enumerate() {
        let bt = b.at(t);
        let gv = DVector::from_vec(g.value(t));
        let dg = DVector::from_vec(g.derivative(t));
        let jg = DVector::from_vec(apply_j(gv.as_slice()));
        // g' + B J g = B c
        let target = &dg + &bt * &jg;
        a.view_mut((k * d, 0), (d, d)).copy_from(&bt);
        rhs.rows_mut(k * d, d).copy_from(&target);
        r0.push((bt, target));
    }
    let svd = a.svd(true, true);
    let c = svd
        .solve(&rhs, 1e-12)
        .map_err(|e| LabError::Singular(format!("least squares for c: {e}")))?;
    let residual = r0
        .iter()
        .map(|(bt, target)| (target - bt * &c).norm())
        .fold(0.0, f64::max);
    Ok(NullCheck {
        c: c.as_slice().to_vec(),
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjugateValue {
    pub t: f64,
    pub nullity: usize,
    pub index_before: usize,
    pub index_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjugateReport {
    pub values: Vec<ConjugateValue>,
    pub scan: Vec<(f64, usize, usize)>,
    /// Index never decreases along the scan.
    pub index_monotone: bool,
    /// Each index jump equals the nullity at the refined conjugate value.
    pub jumps_match_nullity: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct ConjugateScan {
    pub points: usize,
    pub modes: usize,
    pub sign: ExtremumSign,
    pub t_max: f64,
}

impl Default for ConjugateScan {
    fn default() -> Self {
        Self {
            points: 64,
            modes: 32,
            sign: ExtremumSign::Minimum,
            t_max: 1.0,
        }
    }
}

/// Values `t' ∈ (0, t_max]` where `Q_{t'}` is degenerate.
pub fn conjugate_values(b: &HessianPath, scan: &ConjugateScan) -> Result<ConjugateReport> {
    let n = scan.points.max(2);
    let times: Vec<f64> = (1..=n).map(|k| scan.t_max * k as f64 / n as f64).collect();
    let eval = |t: f64| -> Result<(usize, usize)> {
        let r = q_form_matrix(b, t, scan.modes, scan.sign)?;
        Ok((r.index, r.nullity))
    };
    // sign count without the null band, so bisection lands on the crossing itself
    let raw_negative = |t: f64| -> Result<usize> {
        let (q, _) = assemble_q(b, t, scan.modes, scan.sign, Basis::IntegratedLegendre)?;
        Ok(q.symmetric_eigenvalues().iter().filter(|&&x| x < 0.0).count())
    };
    let pts: Vec<(usize, usize)> = times.par_iter().map(|&t| eval(t)).collect::<Result<_>>()?;
    let mut values = Vec::new();
    let mut monotone = true;
    let mut matches = true;
    let mut prev_t = 0.0;
    let mut prev_idx = 0usize;
    for (k, &(idx, nul)) in pts.iter().enumerate() {
        let t = times[k];
        if idx < prev_idx {
            monotone = false;
        }
        if idx > prev_idx {
            // several crossings may share a scan cell; peel them off left to right
            let mut lo0 = if prev_t == 0.0 { 1e-6 * t } else { prev_t };
            let mut cur = prev_idx;
            while cur < idx {
                let (mut lo, mut hi) = (lo0, t);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if raw_negative(mid)? > cur {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                    if hi - lo < 1e-11 {
                        break;
                    }
                }
                let after = raw_negative(hi)?.min(idx);
                let nullity = eval(lo)?.1.max(eval(hi)?.1);
                if after <= cur {
                    matches = false;
                    break;
                }
                if nullity != after - cur {
                    matches = false;
                }
                let on_previous_grid_point = k > 0 && pts[k - 1].1 > 0 && hi - prev_t < 1e-9;
                if !on_previous_grid_point {
                    values.push(ConjugateValue {
                        t: 0.5 * (lo + hi),
                        nullity,
                        index_before: cur,
                        index_after: after,
                    });
                }
                cur = after;
                lo0 = hi;
            }
        }
        if nul > 0 && values.last().is_none_or(|v: &ConjugateValue| (v.t - t).abs() > 1e-9) {
            values.push(ConjugateValue {
                t,
                nullity: nul,
                index_before: idx,
                index_after: pts.get(k + 1).map_or(idx + nul, |p| p.0),
            });
        }
        prev_t = t;
        prev_idx = idx;
    }
    Ok(ConjugateReport {
        values,
        scan: times.iter().zip(&pts).map(|(t, (i, n))| (*t, *i, *n)).collect(),
        index_monotone: monotone,
        jumps_match_nullity: matches,
    })
}
