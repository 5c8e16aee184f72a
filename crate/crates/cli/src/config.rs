//! Scenario files: a versioned JSON schema, validated in one pass so that every
//! violation is reported before anything runs.

use crate::expr::{parse_scoped, Expr};
use hoferlab::grid::Sampling;
use hoferlab::symplectic::PhaseDomain;
use serde_json::{Map, Value};
use std::collections::BTreeMap;

pub const SCHEMA_VERSION: u64 = 1;

/// Operation names, as used by the subcommands.
pub const OPERATIONS: [&str; 10] = [
    "length",
    "geodesic-check",
    "lcritical-check",
    "stability-check",
    "qform",
    "conjugate-values",
    "shorten",
    "verify-lemma",
    "sphere-certificate",
    "sweep",
];

/// Named tolerances and their defaults.
pub const TOLERANCES: [(&str, f64); 6] = [
    ("tol_ext", hoferlab::hofer::DEFAULT_TOL_EXT),
    ("tol_eig", hoferlab::linflow::DEFAULT_TOL_EIG),
    ("ode", 1e-10),
    ("lemma", 1e-3),
    ("endpoint", hoferlab::shortening::DEFAULT_ENDPOINT_TOL),
    ("null", hoferlab::secondvar::DEFAULT_TOL_NULL),
];

#[derive(Debug, Clone)]
pub enum HamSpec {
    Expr { source: String, ast: Expr },
    TwoBump { amplitude: f64, radius: f64, switch: f64 },
    RadialGaussian { c: f64, sign: f64 },
    SteepDisc { k: f64 },
}

#[derive(Debug, Clone)]
pub enum HessSpec {
    Matrix(Vec<Vec<Expr>>),
    At { point: Vec<f64>, step: f64 },
}

#[derive(Debug, Clone)]
pub enum LoopSpec {
    Circle(f64),
    Ellipse(f64, f64),
    Expr(Vec<Expr>),
}

#[derive(Debug, Clone)]
pub enum ShortenSpec {
    NoFixed { max: bool, times: Vec<f64>, eps: f64, depth: f64 },
    Sikorav { c: f64, shift: Vec<f64>, a: f64, b: f64 },
    Scrubbing { point: Vec<f64>, max: bool, delta: f64, rho: Option<f64> },
}

#[derive(Debug, Clone)]
pub enum LemmaSpec {
    Z { shape: LoopSpec, delta: f64, rho: f64, nodes_t: usize, nodes_s: usize },
    Lambda { rho: f64, delta: f64, grid: usize },
}

#[derive(Debug, Clone)]
pub enum OpSpec {
    Length,
    GeodesicCheck { windows: usize },
    LcriticalCheck,
    StabilityCheck { max_cluster: usize, near_closure: f64 },
    QForm { t_end: f64, modes: usize, maximum: bool, sine: bool },
    ConjugateValues { points: usize, modes: usize, maximum: bool, t_max: f64 },
    Shorten(ShortenSpec),
    VerifyLemma(LemmaSpec),
    SphereCertificate { bracket: Option<(f64, f64)> },
    Sweep { parameter: String, values: Vec<f64>, inner: Box<OpSpec> },
}

impl OpSpec {
    pub fn name(&self) -> &'static str {
        match self {
            OpSpec::Length => "length",
            OpSpec::GeodesicCheck { .. } => "geodesic-check",
            OpSpec::LcriticalCheck => "lcritical-check",
            OpSpec::StabilityCheck { .. } => "stability-check",
            OpSpec::QForm { .. } => "qform",
            OpSpec::ConjugateValues { .. } => "conjugate-values",
            OpSpec::Shorten(_) => "shorten",
            OpSpec::VerifyLemma(_) => "verify-lemma",
            OpSpec::SphereCertificate { .. } => "sphere-certificate",
            OpSpec::Sweep { .. } => "sweep",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub params: BTreeMap<String, f64>,
    pub domain: PhaseDomain,
    pub sampling: Sampling,
    pub panels: usize,
    pub hamiltonian: Option<HamSpec>,
    pub hessian: Option<HessSpec>,
    pub profile: Option<Expr>,
    pub operation: OpSpec,
    pub tolerances: BTreeMap<String, f64>,
    pub report: String,
    pub csv: Option<String>,
    /// The file as read, echoed into reports.
    pub raw: Value,
}

impl Scenario {
    pub fn tol(&self, key: &str) -> f64 {
        self.tolerances[key]
    }

    /// Variables of a Hamiltonian expression on this domain.
    pub fn state_vars(&self) -> Vec<String> {
        match self.domain {
            PhaseDomain::Sphere => vec!["theta".into(), "z".into()],
            PhaseDomain::Euclidean(d) => (1..=d).map(|i| format!("x{i}")).collect(),
        }
    }
}

/// Cursor over a JSON object that records problems instead of stopping.
struct Fields<'a, 'e> {
    path: String,
    map: Option<&'a Map<String, Value>>,
    seen: Vec<&'static str>,
    errors: &'e mut Vec<String>,
}

impl<'a, 'e> Fields<'a, 'e> {
    fn new(path: &str, v: Option<&'a Value>, errors: &'e mut Vec<String>) -> Self {
        let map = match v {
            Some(Value::Object(m)) => Some(m),
            Some(_) => {
                errors.push(format!("{path}: expected an object"));
                None
            }
            None => None,
        };
        Self {
            path: path.into(),
            map,
            seen: vec![],
            errors,
        }
    }

    fn at(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.into()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn get(&mut self, key: &'static str) -> Option<&'a Value> {
        self.seen.push(key);
        self.map.and_then(|m| m.get(key))
    }

    fn err(&mut self, key: &str, msg: impl std::fmt::Display) {
        let at = self.at(key);
        self.errors.push(format!("{at}: {msg}"));
    }

    fn f64_opt(&mut self, key: &'static str) -> Option<f64> {
        match self.get(key) {
            None => None,
            Some(v) => match v.as_f64() {
                Some(x) if x.is_finite() => Some(x),
                _ => {
                    self.err(key, "expected a finite number");
                    None
                }
            },
        }
    }

    fn f64_or(&mut self, key: &'static str, default: f64) -> f64 {
        self.f64_opt(key).unwrap_or(default)
    }

    fn f64_req(&mut self, key: &'static str) -> f64 {
        if self.get(key).is_none() {
            self.err(key, "required");
        }
        self.f64_or(key, f64::NAN)
    }

    fn positive(&mut self, key: &'static str, default: Option<f64>) -> f64 {
        let v = match default {
            Some(d) => self.f64_or(key, d),
            None => self.f64_req(key),
        };
        if v.is_finite() && v <= 0.0 {
            self.err(key, "must be positive");
        }
        v
    }

    fn usize_or(&mut self, key: &'static str, default: usize) -> usize {
        match self.get(key) {
            None => default,
            Some(v) => match v.as_u64() {
                Some(n) if n > 0 => n as usize,
                _ => {
                    self.err(key, "expected a positive integer");
                    default
                }
            },
        }
    }

    fn str_opt(&mut self, key: &'static str) -> Option<&'a str> {
        match self.get(key) {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(_) => {
                self.err(key, "expected a string");
                None
            }
        }
    }

    fn choice(&mut self, key: &'static str, options: &[&str], default: Option<&'static str>) -> Option<String> {
        let s = self.str_opt(key).map(str::to_string).or(default.map(str::to_string));
        match s {
            None => {
                self.err(key, format!("required, one of {options:?}"));
                None
            }
            Some(s) if !options.contains(&s.as_str()) => {
                self.err(key, format!("`{s}` is not one of {options:?}"));
                None
            }
            s => s,
        }
    }

    fn vec_f64(&mut self, key: &'static str) -> Option<Vec<f64>> {
        let v = self.get(key)?;
        let out: Option<Vec<f64>> = v.as_array().and_then(|a| a.iter().map(Value::as_f64).collect());
        if out.is_none() {
            self.err(key, "expected an array of numbers");
        }
        out
    }

    fn expr(&mut self, key: &str, src: &str, scope: &[&str]) -> Option<Expr> {
        match parse_scoped(src, scope) {
            Ok(e) => Some(e),
            Err(e) => {
                self.err(key, e);
                None
            }
        }
    }

    /// Flags keys nobody asked for.
    fn finish(self) {
        if let Some(m) = self.map {
            for k in m.keys() {
                if !self.seen.contains(&k.as_str()) {
                    let at = if self.path.is_empty() { k.clone() } else { format!("{}.{k}", self.path) };
                    self.errors.push(format!("{at}: unknown field"));
                }
            }
        }
    }
}

/// Validates `raw`. `forced` is the operation named on the command line, if any.
/// `tol_overrides` replace tolerances after validation of their names.
pub fn load(raw: Value, forced: Option<&str>, tol_overrides: &[(String, f64)]) -> Result<Scenario, Vec<String>> {
    let mut errors = vec![];
    let mut top = Fields::new("", Some(&raw), &mut errors);
    match top.get("schema_version").and_then(Value::as_u64) {
        Some(SCHEMA_VERSION) => {}
        Some(v) => top.err("schema_version", format!("unsupported version {v}, expected {SCHEMA_VERSION}")),
        None => top.err("schema_version", format!("required integer, expected {SCHEMA_VERSION}")),
    }
    let name = top.str_opt("name").unwrap_or("scenario").to_string();
    let seed = match top.get("seed") {
        None => 0,
        Some(v) => v.as_u64().unwrap_or_else(|| {
            top.err("seed", "expected a non-negative integer");
            0
        }),
    };
    let params_v = top.get("params");
    let domain_v = top.get("domain");
    let sampling_v = top.get("sampling");
    let panels = top.usize_or("time_panels", 16);
    let ham_v = top.get("hamiltonian");
    let hess_v = top.get("hessian");
    let profile_v = top.get("profile");
    let op_v = top.get("operation");
    let tol_v = top.get("tolerances");
    let out_v = top.get("outputs");
    top.finish();

    let mut params = BTreeMap::new();
    {
        let mut p = Fields::new("params", params_v, &mut errors);
        if let Some(m) = p.map {
            for (k, v) in m {
                match v.as_f64() {
                    Some(x) if x.is_finite() => {
                        params.insert(k.clone(), x);
                    }
                    _ => p.errors.push(format!("params.{k}: expected a finite number")),
                }
                if crate::expr::parse_expression(k).ok() != Some(Expr::Var(k.clone())) {
                    p.errors.push(format!("params.{k}: not a valid identifier"));
                }
            }
        }
        p.seen.clear();
        p.map = None;
        p.finish();
    }

    let domain = {
        let mut d = Fields::new("domain", domain_v, &mut errors);
        let kind = d.choice("kind", &["euclidean", "sphere"], Some("euclidean"));
        let dim = d.usize_or("dim", 2);
        d.finish();
        match kind.as_deref() {
            Some("sphere") => PhaseDomain::Sphere,
            _ => match PhaseDomain::euclidean(dim) {
                Ok(p) => p,
                Err(e) => {
                    errors.push(format!("domain.dim: {e}"));
                    PhaseDomain::Euclidean(2)
                }
            },
        }
    };
    let sampling = match sampling_v {
        Some(v) => match serde_json::from_value::<Sampling>(v.clone()) {
            Ok(s) => s,
            Err(e) => {
                errors.push(format!("sampling: {e}"));
                default_sampling(domain)
            }
        },
        None => default_sampling(domain),
    };

    let state: Vec<String> = match domain {
        PhaseDomain::Sphere => vec!["theta".into(), "z".into()],
        PhaseDomain::Euclidean(d) => (1..=d).map(|i| format!("x{i}")).collect(),
    };
    let mut scope: Vec<&str> = vec!["t"];
    scope.extend(state.iter().map(String::as_str));
    if domain == PhaseDomain::Sphere {
        scope.push("θ");
    }
    scope.extend(params.keys().map(String::as_str));
    let hamiltonian = ham_v.and_then(|v| ham_spec(v, &scope, &mut errors));

    let mut t_scope: Vec<&str> = vec!["t"];
    t_scope.extend(params.keys().map(String::as_str));
    let hessian = hess_v.and_then(|v| hess_spec(v, &t_scope, domain, &mut errors));

    let mut z_scope: Vec<&str> = vec!["z"];
    z_scope.extend(params.keys().map(String::as_str));
    let profile = match profile_v {
        None => None,
        Some(Value::String(s)) => match parse_scoped(s, &z_scope) {
            Ok(e) => Some(e),
            Err(e) => {
                errors.push(format!("profile: {e}"));
                None
            }
        },
        Some(_) => {
            errors.push("profile: expected an expression string in z".into());
            None
        }
    };

    let operation = op_spec("operation", op_v, forced, &t_scope, &params, &mut errors);

    let mut tolerances: BTreeMap<String, f64> = TOLERANCES.iter().map(|&(k, v)| (k.to_string(), v)).collect();
    if let Some(v) = tol_v {
        match v.as_object() {
            Some(m) => {
                for (k, x) in m {
                    match (tolerances.contains_key(k), x.as_f64()) {
                        (false, _) => errors.push(format!("tolerances.{k}: unknown tolerance")),
                        (true, Some(x)) if x > 0.0 => {
                            tolerances.insert(k.clone(), x);
                        }
                        _ => errors.push(format!("tolerances.{k}: expected a positive number")),
                    }
                }
            }
            None => errors.push("tolerances: expected an object".into()),
        }
    }
    for (k, x) in tol_overrides {
        if !tolerances.contains_key(k) {
            errors.push(format!("--tol {k}: unknown tolerance"));
        } else if *x <= 0.0 || !x.is_finite() {
            errors.push(format!("--tol {k}: expected a positive number"));
        } else {
            tolerances.insert(k.clone(), *x);
        }
    }

    let (report, csv) = {
        let mut o = Fields::new("outputs", out_v, &mut errors);
        let report = o.str_opt("report").map(str::to_string).unwrap_or_else(|| format!("{name}.json"));
        let csv = o.str_opt("csv").map(str::to_string);
        o.finish();
        (report, csv)
    };

    if let Some(op) = &operation {
        check_requirements(op, domain, hamiltonian.is_some(), hessian.is_some(), profile.is_some(), &mut errors);
    }
    let operation = match operation {
        Some(op) if errors.is_empty() => op,
        _ => return Err(errors),
    };
    Ok(Scenario {
        name,
        seed,
        params,
        domain,
        sampling,
        panels,
        hamiltonian,
        hessian,
        profile,
        operation,
        tolerances,
        report,
        csv,
        raw,
    })
}

fn default_sampling(domain: PhaseDomain) -> Sampling {
    match domain {
        PhaseDomain::Sphere => Sampling::Sphere { n_theta: 32, n_z: 33 },
        PhaseDomain::Euclidean(d) => Sampling::Box {
            lo: vec![-1.0; d],
            hi: vec![1.0; d],
            n: if d == 2 { 41 } else { 9 },
        },
    }
}

fn ham_spec(v: &Value, scope: &[&str], errors: &mut Vec<String>) -> Option<HamSpec> {
    let mut f = Fields::new("hamiltonian", Some(v), errors);
    let expr = f.str_opt("expr");
    let builtin = f.str_opt("builtin");
    let out = match (expr, builtin) {
        (Some(src), None) => f.expr("expr", src, scope).map(|ast| HamSpec::Expr {
            source: src.to_string(),
            ast,
        }),
        (None, Some("two_bump")) => Some(HamSpec::TwoBump {
            amplitude: f.f64_or("amplitude", 0.6),
            radius: f.positive("radius", Some(0.6)),
            switch: f.f64_or("switch", 1.0 / 3.0),
        }),
        (None, Some("radial_gaussian")) => Some(HamSpec::RadialGaussian {
            c: f.positive("c", Some(2.0)),
            sign: f.f64_or("sign", 1.0).signum(),
        }),
        (None, Some("steep_disc")) => Some(HamSpec::SteepDisc {
            k: f.positive("k", Some(150.0)),
        }),
        (None, Some(other)) => {
            f.err("builtin", format!("unknown family `{other}` (two_bump, radial_gaussian, steep_disc)"));
            None
        }
        _ => {
            f.err("", "exactly one of `expr` or `builtin` is required");
            None
        }
    };
    f.finish();
    out
}

fn hess_spec(v: &Value, scope: &[&str], domain: PhaseDomain, errors: &mut Vec<String>) -> Option<HessSpec> {
    let mut f = Fields::new("hessian", Some(v), errors);
    let matrix = f.get("matrix");
    let at = f.vec_f64("at");
    let step = f.positive("step", Some(1e-3));
    let out = match (matrix, at) {
        (Some(Value::Array(rows)), None) => {
            let n = rows.len();
            let mut m = vec![];
            let mut ok = n >= 2 && n % 2 == 0;
            if !ok {
                f.err("matrix", "must be square of even size");
            }
            for (i, r) in rows.iter().enumerate() {
                let Some(r) = r.as_array().filter(|r| r.len() == n) else {
                    f.err("matrix", format!("row {i} must hold {n} entries"));
                    ok = false;
                    continue;
                };
                let mut row = vec![];
                for (j, e) in r.iter().enumerate() {
                    let key = format!("matrix[{i}][{j}]");
                    let parsed = match e {
                        Value::Number(x) => x.as_f64().map(Expr::Num),
                        Value::String(s) => f.expr(&key, s, scope),
                        _ => {
                            f.err(&key, "expected a number or expression string");
                            None
                        }
                    };
                    match parsed {
                        Some(x) => row.push(x),
                        None => ok = false,
                    }
                }
                m.push(row);
            }
            ok.then_some(HessSpec::Matrix(m))
        }
        (None, Some(point)) => {
            if point.len() != domain.dim() {
                f.err("at", format!("expected {} coordinates", domain.dim()));
            }
            Some(HessSpec::At { point, step })
        }
        _ => {
            f.err("", "exactly one of `matrix` (array of rows) or `at` is required");
            None
        }
    };
    f.finish();
    out
}

fn sign_max(f: &mut Fields<'_, '_>, key: &'static str) -> bool {
    f.choice(key, &["minimum", "maximum"], Some("minimum")).as_deref() == Some("maximum")
}

fn op_spec(
    path: &str,
    v: Option<&Value>,
    forced: Option<&str>,
    t_scope: &[&str],
    params: &BTreeMap<String, f64>,
    errors: &mut Vec<String>,
) -> Option<OpSpec> {
    let mut f = Fields::new(path, v, errors);
    let kind = match (f.str_opt("kind"), forced) {
        (Some(k), Some(c)) if k != c => {
            f.err("kind", format!("`{k}` does not match the subcommand `{c}`"));
            // the remaining fields belong to another operation; skip them
            return None;
        }
        (Some(k), _) | (None, Some(k)) => Some(k.to_string()),
        (None, None) => {
            f.err("kind", "required when no subcommand names the operation");
            None
        }
    };
    let op = match kind.as_deref() {
        Some("length") => Some(OpSpec::Length),
        Some("geodesic-check") => Some(OpSpec::GeodesicCheck {
            windows: f.usize_or("windows", hoferlab::hofer::DEFAULT_WINDOWS),
        }),
        Some("lcritical-check") => Some(OpSpec::LcriticalCheck),
        Some("stability-check") => Some(OpSpec::StabilityCheck {
            max_cluster: f.usize_or("max_cluster", 9),
            near_closure: f.positive("near_closure", Some(1e-5)),
        }),
        Some("qform") => Some(OpSpec::QForm {
            t_end: f.positive("t_end", Some(1.0)),
            modes: f.usize_or("modes", hoferlab::secondvar::DEFAULT_MODES),
            maximum: sign_max(&mut f, "sign"),
            sine: f.choice("basis", &["integrated_legendre", "sine"], Some("integrated_legendre")).as_deref()
                == Some("sine"),
        }),
        Some("conjugate-values") => Some(OpSpec::ConjugateValues {
            points: f.usize_or("points", 64),
            modes: f.usize_or("modes", 32),
            maximum: sign_max(&mut f, "sign"),
            t_max: f.positive("t_max", Some(1.0)),
        }),
        Some("shorten") => shorten_spec(&mut f),
        Some("verify-lemma") => lemma_spec(&mut f, t_scope),
        Some("sphere-certificate") => {
            let bracket = f.vec_f64("threshold_bracket").and_then(|b| match b[..] {
                [lo, hi] if 0.0 < lo && lo < hi => Some((lo, hi)),
                _ => {
                    f.err("threshold_bracket", "expected [lo, hi] with 0 < lo < hi");
                    None
                }
            });
            Some(OpSpec::SphereCertificate { bracket })
        }
        Some("sweep") => {
            let parameter = f.str_opt("parameter").map(str::to_string);
            if parameter.is_none() {
                f.err("parameter", "required");
            } else if !params.contains_key(parameter.as_deref().unwrap()) {
                f.err("parameter", "must name an entry of `params`");
            }
            let values = sweep_values(&mut f);
            let inner_v = f.get("inner");
            if inner_v.is_none() {
                f.err("inner", "required");
            }
            let inner_path = f.at("inner");
            let inner = inner_v.and_then(|v| op_spec(&inner_path, Some(v), None, t_scope, params, f.errors));
            if matches!(inner, Some(OpSpec::Sweep { .. })) {
                f.err("inner", "sweeps do not nest");
            }
            match (parameter, values, inner) {
                (Some(parameter), Some(values), Some(inner)) => Some(OpSpec::Sweep {
                    parameter,
                    values,
                    inner: Box::new(inner),
                }),
                _ => None,
            }
        }
        Some(other) => {
            f.err("kind", format!("unknown operation `{other}`; one of {OPERATIONS:?}"));
            None
        }
        None => None,
    };
    f.finish();
    op
}

fn sweep_values(f: &mut Fields<'_, '_>) -> Option<Vec<f64>> {
    match f.get("values") {
        Some(Value::Array(a)) => {
            let v: Option<Vec<f64>> = a.iter().map(Value::as_f64).collect();
            if v.as_ref().is_none_or(|v| v.is_empty()) {
                f.err("values", "expected a non-empty array of numbers");
            }
            v
        }
        Some(Value::Object(m)) => {
            let get = |k: &str| m.get(k).and_then(Value::as_f64);
            match (get("from"), get("to"), m.get("steps").and_then(Value::as_u64)) {
                (Some(a), Some(b), Some(n)) if n >= 2 && m.len() == 3 => {
                    Some((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect())
                }
                _ => {
                    f.err("values", "expected {from, to, steps ≥ 2}");
                    None
                }
            }
        }
        _ => {
            f.err("values", "required: an array or {from, to, steps}");
            None
        }
    }
}

fn shorten_spec(f: &mut Fields<'_, '_>) -> Option<OpSpec> {
    let method = f.choice("method", &["no_fixed_max", "no_fixed_min", "sikorav", "scrubbing"], None)?;
    let spec = match method.as_str() {
        "no_fixed_max" | "no_fixed_min" => ShortenSpec::NoFixed {
            max: method == "no_fixed_max",
            times: f.vec_f64("times").unwrap_or_else(|| vec![0.0, 1.0]),
            eps: f.positive("eps", Some(0.02)),
            depth: f.positive("depth", Some(0.05)),
        },
        "sikorav" => ShortenSpec::Sikorav {
            c: f.positive("c", None),
            shift: f.vec_f64("shift").unwrap_or_else(|| {
                f.err("shift", "required");
                vec![]
            }),
            a: f.positive("a", None),
            b: f.positive("b", None),
        },
        _ => ShortenSpec::Scrubbing {
            point: f.vec_f64("point").unwrap_or_else(|| vec![0.0, 0.0]),
            max: f.choice("side", &["min", "max"], Some("min")).as_deref() == Some("max"),
            delta: f.positive("delta", None),
            rho: f.f64_opt("rho"),
        },
    };
    Some(OpSpec::Shorten(spec))
}

fn lemma_spec(f: &mut Fields<'_, '_>, t_scope: &[&str]) -> Option<OpSpec> {
    let lemma = f.choice("lemma", &["z", "lambda"], None)?;
    let rho = f.positive("rho", Some(0.01));
    let delta = f.positive("delta", Some(0.1));
    let spec = if lemma == "z" {
        let loop_v = f.get("loop");
        let path = f.at("loop");
        let mut l = Fields::new(&path, loop_v, f.errors);
        let shape = match l.choice("shape", &["circle", "ellipse", "expr"], Some("circle")).as_deref() {
            Some("ellipse") => LoopSpec::Ellipse(l.positive("a", Some(1.0)), l.positive("b", Some(0.5))),
            Some("expr") => {
                let mut comps = vec![];
                for key in ["x", "y"] {
                    let src = l.str_opt(if key == "x" { "x" } else { "y" });
                    match src {
                        Some(s) => {
                            if let Some(e) = l.expr(key, s, t_scope) {
                                comps.push(e);
                            }
                        }
                        None => l.err(key, "required expression in t"),
                    }
                }
                LoopSpec::Expr(comps)
            }
            _ => LoopSpec::Circle(l.positive("r", Some(1.0))),
        };
        l.finish();
        LemmaSpec::Z {
            shape,
            delta,
            rho,
            nodes_t: f.usize_or("nodes_t", hoferlab::shortening::DEFAULT_Z_NODES.0),
            nodes_s: f.usize_or("nodes_s", hoferlab::shortening::DEFAULT_Z_NODES.1),
        }
    } else {
        LemmaSpec::Lambda {
            rho,
            delta,
            grid: f.usize_or("grid", 41),
        }
    };
    Some(OpSpec::VerifyLemma(spec))
}

fn check_requirements(
    op: &OpSpec,
    domain: PhaseDomain,
    ham: bool,
    hess: bool,
    profile: bool,
    errors: &mut Vec<String>,
) {
    let mut need = |cond: bool, what: &str| {
        if !cond {
            errors.push(format!("{}: requires {what}", op.name()));
        }
    };
    match op {
        OpSpec::Length | OpSpec::GeodesicCheck { .. } | OpSpec::LcriticalCheck | OpSpec::StabilityCheck { .. } => {
            need(ham, "`hamiltonian`")
        }
        OpSpec::QForm { .. } | OpSpec::ConjugateValues { .. } => need(hess, "`hessian`"),
        OpSpec::Shorten(_) => {
            need(ham, "`hamiltonian`");
            need(matches!(domain, PhaseDomain::Euclidean(_)), "a euclidean domain");
        }
        OpSpec::VerifyLemma(LemmaSpec::Lambda { .. }) => need(hess, "`hessian`"),
        OpSpec::VerifyLemma(LemmaSpec::Z { .. }) => {}
        OpSpec::SphereCertificate { .. } => need(profile, "`profile`"),
        OpSpec::Sweep { inner, .. } => check_requirements(inner, domain, ham, hess, profile, errors),
    }
}
