//! Turns validated specs into core objects.

use crate::config::{HamSpec, HessSpec, LoopSpec, Scenario};
use crate::expr::{Compiled, Expr};
use anyhow::{anyhow, Result};
use hoferlab::hofer::IsotopyPath;
use hoferlab::linflow::HessianPath;
use hoferlab::shortening::ClosedLoop;
use hoferlab::sphere::ProfileFunction;
use hoferlab::symplectic::{FnHamiltonian, PhaseDomain, RadialHamiltonian, SharedHamiltonian};
use nalgebra::DMatrix;
use std::sync::Arc;

/// `(1 − |x − c|²/r²)³` inside the disc, zero outside.
fn disc_bump(x: &[f64], c: [f64; 2], r: f64) -> f64 {
    let d2 = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)) / (r * r);
    if d2 >= 1.0 {
        0.0
    } else {
        (1.0 - d2).powi(3)
    }
}

/// Variable slots: `t`, the state coordinates, then `θ` as an alias on the sphere.
fn slots(sc: &Scenario) -> Vec<String> {
    let mut v = vec!["t".to_string()];
    v.extend(sc.state_vars());
    if sc.domain == PhaseDomain::Sphere {
        v.push("θ".into());
    }
    v
}

fn compiled(e: &Expr, vars: &[String]) -> Result<Compiled> {
    let names: Vec<&str> = vars.iter().map(String::as_str).collect();
    e.compile(&names).map_err(|m| anyhow!(m))
}

pub fn hamiltonian(sc: &Scenario) -> Result<SharedHamiltonian> {
    let spec = sc.hamiltonian.as_ref().ok_or_else(|| anyhow!("no hamiltonian configured"))?;
    Ok(match spec {
        HamSpec::Expr { ast, .. } => {
            let ast = ast.bind(&sc.params);
            let vars = slots(sc);
            let sphere = sc.domain == PhaseDomain::Sphere;
            let load = move |t: f64, x: &[f64]| {
                let mut s = Vec::with_capacity(x.len() + 2);
                s.push(t);
                s.extend_from_slice(x);
                if sphere {
                    s.push(x[0]);
                }
                s
            };
            let value = compiled(&ast, &vars)?;
            let dim = sc.domain.dim();
            let state = sc.state_vars();
            let mut grads = vec![];
            for (i, name) in state.iter().enumerate() {
                let mut d = ast.derivative(name);
                if sphere && i == 0 {
                    d = Expr::Bin(crate::expr::BinOp::Add, Box::new(d), Box::new(ast.derivative("θ")));
                }
                grads.push(compiled(&d, &vars)?);
            }
            let zonal = sphere && !ast.depends_on("theta") && !ast.depends_on("θ");
            if zonal {
                let (v, dz) = (value, grads.pop().unwrap());
                let (l1, l2) = (load.clone(), load);
                FnHamiltonian::zonal(move |t, z| v.eval(&l1(t, &[0.0, z])), move |t, z| dz.eval(&l2(t, &[0.0, z])))
                    .shared()
            } else {
                let l2 = load.clone();
                FnHamiltonian::new(dim, move |t, x| value.eval(&load(t, x)))
                    .with_gradient(move |t, x| {
                        let s = l2(t, x);
                        grads.iter().map(|g| g.eval(&s)).collect()
                    })
                    .shared()
            }
        }
        &HamSpec::TwoBump {
            amplitude,
            radius,
            switch,
        } => {
            need_plane(sc)?;
            FnHamiltonian::new(2, move |t, x| {
                let a = amplitude * (switch - t);
                (1.0 + a) * disc_bump(x, [-1.0, 0.0], radius) + (1.0 - a) * disc_bump(x, [1.0, 0.0], radius)
            })
            .shared()
        }
        &HamSpec::RadialGaussian { c, sign } => {
            need_plane(sc)?;
            Arc::new(RadialHamiltonian::new([0.0, 0.0], move |_, r| {
                let e = (-std::f64::consts::PI * c * r * r).exp();
                (sign * (1.0 - e), sign * 2.0 * std::f64::consts::PI * c * r * e)
            }))
        }
        &HamSpec::SteepDisc { k } => {
            need_plane(sc)?;
            Arc::new(RadialHamiltonian::new([0.0, 0.0], move |_, r| {
                let e = (-k * r * r).exp();
                (1.0 - e, 2.0 * k * r * e)
            }))
        }
    })
}

fn need_plane(sc: &Scenario) -> Result<()> {
    if sc.domain != PhaseDomain::Euclidean(2) {
        return Err(anyhow!("this builtin family lives on the plane (euclidean, dim 2)"));
    }
    Ok(())
}

pub fn path(sc: &Scenario) -> Result<IsotopyPath> {
    Ok(IsotopyPath::new(sc.domain, hamiltonian(sc)?, &sc.sampling, sc.panels)?)
}

pub fn hessian(sc: &Scenario) -> Result<HessianPath> {
    match sc.hessian.as_ref().ok_or_else(|| anyhow!("no hessian configured"))? {
        HessSpec::Matrix(rows) => {
            let n = rows.len();
            let vars = vec!["t".to_string()];
            let cells: Vec<Compiled> =
                rows.iter().flatten().map(|e| compiled(&e.bind(&sc.params), &vars)).collect::<Result<_>>()?;
            Ok(HessianPath::new(n, move |t| DMatrix::from_iterator(n, n, cells.iter().map(|c| c.eval(&[t]))))?)
        }
        HessSpec::At { point, step } => {
            Ok(HessianPath::from_hamiltonian(hamiltonian(sc)?, sc.domain, point, *step)?)
        }
    }
}

/// Profile `h(z)` with symbolic first and second derivatives.
pub fn profile(sc: &Scenario) -> Result<ProfileFunction> {
    let src = sc.profile.as_ref().ok_or_else(|| anyhow!("no profile configured"))?;
    let e = src.bind(&sc.params);
    let d1 = e.derivative("z");
    let d2 = d1.derivative("z");
    let vars = vec!["z".to_string()];
    let (h, dh, ddh) = (compiled(&e, &vars)?, compiled(&d1, &vars)?, compiled(&d2, &vars)?);
    Ok(ProfileFunction::new(
        e.to_string(),
        move |z| h.eval(&[z]),
        move |z| dh.eval(&[z]),
        move |z| ddh.eval(&[z]),
    ))
}

pub fn closed_loop(spec: &LoopSpec, sc: &Scenario) -> Result<ClosedLoop> {
    Ok(match spec {
        LoopSpec::Circle(r) => ClosedLoop::circle(*r),
        LoopSpec::Ellipse(a, b) => ClosedLoop::ellipse(*a, *b),
        LoopSpec::Expr(comps) => {
            let vars = vec!["t".to_string()];
            let bound: Vec<Expr> = comps.iter().map(|e| e.bind(&sc.params)).collect();
            let vals: Vec<Compiled> = bound.iter().map(|e| compiled(e, &vars)).collect::<Result<_>>()?;
            let ders: Vec<Compiled> =
                bound.iter().map(|e| compiled(&e.derivative("t"), &vars)).collect::<Result<_>>()?;
            let gap: f64 = vals.iter().map(|c| (c.eval(&[1.0]) - c.eval(&[0.0])).abs()).sum();
            if gap > 1e-9 {
                return Err(anyhow!("loop does not close: |α(1) − α(0)| = {gap:e}"));
            }
            ClosedLoop::new(
                2,
                move |t| vals.iter().map(|c| c.eval(&[t])).collect(),
                move |t| ders.iter().map(|c| c.eval(&[t])).collect(),
            )
        }
    })
}
