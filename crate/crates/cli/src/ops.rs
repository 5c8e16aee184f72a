//! Executes a validated scenario.

use crate::config::{LemmaSpec, OpSpec, Scenario, ShortenSpec};
use crate::model;
use anyhow::{anyhow, Result};
use hoferlab::hofer::{geodesic_check, hofer_length, lcritical_check, length_profile};
use hoferlab::linflow::{lambda_conjugate, stability_necessary_check, ExtremumKind, StabilityTolerances};
use hoferlab::secondvar::{conjugate_values, q_form_matrix_with, Basis, ConjugateScan, ExtremumSign};
use hoferlab::shortening::*;
use hoferlab::sphere::{no_stable_geodesic_certificate, quadratic_threshold};
use rayon::prelude::*;
use serde_json::{json, Value};
use std::collections::BTreeMap;

/// Rows of a CSV table with its header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    /// `None` for purely numerical operations.
    pub verdict: Option<String>,
    /// Headline number of the operation, used as the sweep column.
    pub value: Option<f64>,
    pub values: Value,
    pub residuals: BTreeMap<String, f64>,
    pub table: Option<Table>,
    /// A refusal recorded as a verdict: the report is written but the exit is nonzero.
    pub refused: bool,
}

impl Outcome {
    fn new(values: Value) -> Self {
        Self {
            verdict: None,
            value: None,
            values,
            residuals: BTreeMap::new(),
            table: None,
            refused: false,
        }
    }

    fn verdict(mut self, v: impl Into<String>) -> Self {
        self.verdict = Some(v.into());
        self
    }

    fn value(mut self, v: f64) -> Self {
        self.value = Some(v);
        self
    }

    fn residual(mut self, k: &str, v: f64) -> Self {
        self.residuals.insert(k.into(), v);
        self
    }
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn sign(maximum: bool) -> ExtremumSign {
    if maximum {
        ExtremumSign::Maximum
    } else {
        ExtremumSign::Minimum
    }
}

pub fn run(sc: &Scenario) -> Result<Outcome> {
    run_op(sc, &sc.operation)
}

fn run_op(sc: &Scenario, op: &OpSpec) -> Result<Outcome> {
    match op {
        OpSpec::Length => {
            let path = model::path(sc)?;
            let len = hofer_length(&path)?;
            let profile = length_profile(&path)?;
            let mut out = Outcome::new(json!({ "length": len, "time_nodes": profile.len() })).value(len);
            out.table = Some(Table {
                header: vec!["t".into(), "oscillation".into()],
                rows: profile.iter().map(|(t, v)| vec![t.to_string(), v.to_string()]).collect(),
            });
            Ok(out)
        }
        OpSpec::GeodesicCheck { windows } => {
            let r = geodesic_check(&model::path(sc)?, *windows, sc.tol("tol_ext"))?;
            let mut out = Outcome::new(serde_json::to_value(&r)?).verdict(pass(r.pass));
            out.table = Some(Table {
                header: ["a", "b", "fixed_minima", "fixed_maxima", "pass"].map(String::from).to_vec(),
                rows: r
                    .windows
                    .iter()
                    .map(|w| {
                        vec![
                            w.a.to_string(),
                            w.b.to_string(),
                            w.fixed_minima.to_string(),
                            w.fixed_maxima.to_string(),
                            w.pass.to_string(),
                        ]
                    })
                    .collect(),
            });
            Ok(out)
        }
        OpSpec::LcriticalCheck => {
            let r = lcritical_check(&model::path(sc)?, sc.tol("tol_ext"))?;
            Ok(Outcome::new(serde_json::to_value(&r)?).verdict(pass(r.pass)))
        }
        OpSpec::StabilityCheck {
            max_cluster,
            near_closure,
        } => {
            let tols = StabilityTolerances {
                tol_ext: sc.tol("tol_ext"),
                tol_eig: sc.tol("tol_eig"),
                max_cluster: *max_cluster,
                near_closure: *near_closure,
            };
            let r = stability_necessary_check(&model::path(sc)?, &tols)?;
            let v = serde_json::to_value(r.verdict)?.as_str().unwrap_or("").to_uppercase();
            let mut out = Outcome::new(serde_json::to_value(&r)?).verdict(v.clone());
            out.refused = v == "REFUSED";
            Ok(out)
        }
        &OpSpec::QForm {
            t_end,
            modes,
            maximum,
            sine,
        } => {
            let b = model::hessian(sc)?;
            let basis = if sine { Basis::Sine } else { Basis::IntegratedLegendre };
            let r = q_form_matrix_with(&b, t_end, modes, sign(maximum), basis, sc.tol("null"))?;
            Ok(Outcome::new(serde_json::to_value(&r)?).value(r.index as f64))
        }
        &OpSpec::ConjugateValues {
            points,
            modes,
            maximum,
            t_max,
        } => {
            let b = model::hessian(sc)?;
            let r = conjugate_values(
                &b,
                &ConjugateScan {
                    points,
                    modes,
                    sign: sign(maximum),
                    t_max,
                },
            )?;
            let mut out = Outcome::new(serde_json::to_value(&r)?).value(r.values.len() as f64);
            out.table = Some(Table {
                header: ["t", "index", "nullity"].map(String::from).to_vec(),
                rows: r.scan.iter().map(|(t, i, n)| vec![t.to_string(), i.to_string(), n.to_string()]).collect(),
            });
            Ok(out)
        }
        OpSpec::Shorten(spec) => shorten(sc, spec),
        OpSpec::VerifyLemma(spec) => lemma(sc, spec),
        OpSpec::SphereCertificate { bracket } => {
            let h = model::profile(sc)?;
            let mut cert = no_stable_geodesic_certificate(&h)?;
            if let Some((lo, hi)) = bracket {
                cert.threshold = Some(quadratic_threshold(*lo, *hi)?);
            }
            let verdict = serde_json::to_value(cert.verdict)?.as_str().unwrap_or("").to_string();
            Ok(Outcome::new(serde_json::to_value(&cert)?).verdict(verdict).value(cert.c))
        }
        OpSpec::Sweep {
            parameter,
            values,
            inner,
        } => sweep(sc, parameter, values, inner),
    }
}

fn endpoint_ok(r: &ShorteningResult) -> bool {
    r.endpoint_discrepancy <= r.endpoint_tolerance
}

fn shorten(sc: &Scenario, spec: &ShortenSpec) -> Result<Outcome> {
    let path = model::path(sc)?;
    let (result, extra) = match spec {
        ShortenSpec::NoFixed { max, times, eps, depth } => {
            let mut plan = NoFixedPlan::new(times.clone(), *eps, *depth);
            plan.tol_ext = plan.tol_ext.max(sc.tol("tol_ext"));
            let r = if *max {
                shorten_no_fixed_max(&path, &plan)?
            } else {
                shorten_no_fixed_min(&path, &plan)?
            };
            let predicted = 2.0 * depth * eps;
            (r, json!({ "predicted_margin": predicted }))
        }
        ShortenSpec::Sikorav { c, shift, a, b } => {
            let tau = Translation::new(shift.clone(), *a, *b)?;
            let rep = sikorav_shorten(&path, &SikoravPlan::new(*c), &tau)?;
            let extra = serde_json::to_value(&rep)?;
            (rep.result, extra)
        }
        ShortenSpec::Scrubbing { point, max, delta, rho } => {
            let mut plan = ScrubPlan::new(*delta);
            plan.rho = *rho;
            let side = if *max { Side::Max } else { Side::Min };
            let rep = scrubbing_motion(&path, point, side, None, &plan)?;
            let extra = serde_json::to_value(&rep)?;
            (rep.result, extra)
        }
    };
    let ok = result.new_length < result.original_length && endpoint_ok(&result);
    Ok(Outcome::new(json!({ "result": serde_json::to_value(&result)?, "details": extra }))
        .verdict(pass(ok))
        .value(result.margin)
        .residual("endpoint_discrepancy", result.endpoint_discrepancy))
}

fn lemma(sc: &Scenario, spec: &LemmaSpec) -> Result<Outcome> {
    let tol = sc.tol("lemma");
    match spec {
        LemmaSpec::Z {
            shape,
            delta,
            rho,
            nodes_t,
            nodes_s,
        } => {
            let lp = ScrubLoop::new(model::closed_loop(shape, sc)?, *delta, *rho)?;
            let r = verify_lemma_z(&lp, *nodes_t, *nodes_s)?;
            let fine = verify_lemma_z(&lp, 2 * nodes_t, 2 * nodes_s)?;
            let halves = fine.abs_residual <= 0.5 * r.abs_residual || r.abs_residual <= 1e-14;
            Ok(Outcome::new(json!({ "default": r, "refined": fine, "halves_under_refinement": halves }))
                .verdict(pass(r.residual <= tol && halves))
                .value(r.flux)
                .residual("relative", r.residual)
                .residual("relative_refined", fine.residual))
        }
        LemmaSpec::Lambda { rho, delta, grid } => {
            let b = model::hessian(sc)?.with_kind(ExtremumKind::Minimum);
            let w = lambda_conjugate(&b, sc.tol("tol_eig"))?
                .ok_or_else(|| anyhow!("refused: the jet has no closed trajectory for any λ in (0, 1)"))?;
            let alpha = ClosedLoop::from_witness(&b, &w)?;
            let r = verify_lemma_lambda(&b, w.lambda, &alpha, *rho, *delta, *grid)?;
            Ok(Outcome::new(json!({ "lambda": w.lambda, "report": r }))
                .verdict(pass(r.residual <= tol && r.minimizer_error <= tol))
                .value(r.lhs)
                .residual("relative", r.residual)
                .residual("minimizer_error", r.minimizer_error))
        }
    }
}

fn sweep(sc: &Scenario, parameter: &str, values: &[f64], inner: &OpSpec) -> Result<Outcome> {
    let runs: Vec<(f64, Result<Outcome>)> = values
        .par_iter()
        .map(|&v| {
            let mut local = sc.clone();
            local.params.insert(parameter.to_string(), v);
            (v, run_op(&local, inner))
        })
        .collect();
    let mut rows = vec![];
    let mut entries = vec![];
    for (v, r) in runs {
        match r {
            Ok(o) => {
                rows.push(vec![
                    v.to_string(),
                    o.value.map_or(String::new(), |x| x.to_string()),
                    o.verdict.clone().unwrap_or_default(),
                ]);
                entries.push(json!({ parameter: v, "verdict": o.verdict, "value": o.value, "values": o.values }));
            }
            Err(e) => {
                rows.push(vec![v.to_string(), String::new(), "ERROR".into()]);
                entries.push(json!({ parameter: v, "error": e.to_string() }));
            }
        }
    }
    let failures = rows.iter().filter(|r| r[2] == "ERROR").count();
    let mut out = Outcome::new(json!({ "parameter": parameter, "operation": inner.name(), "runs": entries }));
    out.table = Some(Table {
        header: vec![parameter.to_string(), value_label(inner).into(), "verdict".into()],
        rows,
    });
    out.verdict = Some(format!("{} of {} runs completed", values.len() - failures, values.len()));
    out.refused = failures > 0;
    Ok(out)
}

/// Column name of an operation's headline number.
fn value_label(op: &OpSpec) -> &'static str {
    match op {
        OpSpec::Length => "length",
        OpSpec::QForm { .. } => "index",
        OpSpec::ConjugateValues { .. } => "conjugate_values",
        OpSpec::Shorten(_) => "margin",
        OpSpec::VerifyLemma(LemmaSpec::Z { .. }) => "flux",
        OpSpec::VerifyLemma(LemmaSpec::Lambda { .. }) => "integral_min",
        OpSpec::SphereCertificate { .. } => "c",
        _ => "value",
    }
}
