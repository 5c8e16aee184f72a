use hoferlab_cli::expr::*;
use proptest::prelude::*;
use std::collections::BTreeMap;

fn env<'a>(vals: &'a [(&'a str, f64)]) -> impl Fn(&str) -> Option<f64> + 'a {
    move |name| vals.iter().find(|(k, _)| *k == name).map(|p| p.1)
}

#[test]
fn variables_and_parameters() {
    assert_eq!(parse_expression("z").unwrap(), Expr::Var("z".into()));
    let e = parse_expression("0.5*K*z^2").unwrap();
    assert_eq!(e.eval(&env(&[("K", 4.0), ("z", 1.0)])), Some(2.0));
    let mut k = BTreeMap::new();
    k.insert("K".to_string(), 4.0);
    assert_eq!(e.bind(&k).eval(&env(&[("z", 1.0)])), Some(2.0));
    assert_eq!(e.variables(), vec!["K".to_string(), "z".to_string()]);
    assert_eq!(parse_expression("pi").unwrap(), Expr::Num(std::f64::consts::PI));
}

#[test]
fn precedence_and_associativity() {
    let v = |s: &str| parse_expression(s).unwrap().eval(&|_| None).unwrap();
    assert_eq!(v("2+3*4"), 14.0);
    assert_eq!(v("2^3^2"), 512.0);
    assert_eq!(v("-2^2"), -4.0);
    assert_eq!(v("2^-1"), 0.5);
    assert_eq!(v("8/4/2"), 1.0);
    assert_eq!(v("1-2-3"), -4.0);
    assert_eq!(v("1.5e2 + .5"), 150.5);
}

#[test]
fn diagnostics_carry_positions() {
    let e = parse_expression("sin(").unwrap_err();
    assert_eq!((e.kind, e.pos), (ErrorKind::Syntax, Pos { line: 1, column: 5 }));
    let e = parse_scoped("x1 + y", &["x1"]).unwrap_err();
    assert_eq!((e.kind, e.pos.column), (ErrorKind::UnknownIdentifier, 6));
    let e = parse_expression("1 +\n  foo(2)").unwrap_err();
    assert_eq!((e.kind, e.pos), (ErrorKind::UnknownIdentifier, Pos { line: 2, column: 3 }));
    let e = parse_expression("bump(x, 1)").unwrap_err();
    assert_eq!((e.kind, e.pos.column), (ErrorKind::Arity, 1));
    let e = parse_expression("(1 + 2").unwrap_err();
    assert_eq!(e.pos.column, 7);
    assert!(parse_expression("2 $ 3").unwrap_err().message.contains('$'));
    assert!(parse_expression("1 2").is_err());
    assert!(e.to_string().starts_with("1:7:"));
}

#[test]
fn smooth_building_blocks() {
    let v = |s: &str| parse_expression(s).unwrap().eval(&|_| None).unwrap();
    assert_eq!(v("smoothstep(-1)"), 0.0);
    assert_eq!(v("smoothstep(2)"), 1.0);
    assert_eq!(v("smoothstep(0.5)"), 0.5);
    assert_eq!(v("bump(3, 3, 2)"), 1.0);
    assert_eq!(v("bump(5, 3, 2)"), 0.0);
    assert!((v("bump(4, 3, 2)") - 0.421875).abs() < 1e-15);
    assert_eq!(v("smoothstep_d6(0.3)"), 0.0);
}

#[test]
fn derivative_examples() {
    let d = |s: &str, x: f64| {
        parse_expression(s).unwrap().derivative("x").eval(&env(&[("x", x)])).unwrap()
    };
    assert_eq!(d("0.5*4*x^2", 1.0), 4.0);
    assert!((d("sin(x)", 0.3) - 0.3f64.cos()).abs() < 1e-15);
    assert!((d("x^x", 2.0) - 4.0 * (2f64.ln() + 1.0)).abs() < 1e-12);
    assert!((d("tanh(x)", 0.2) - (1.0 - 0.2f64.tanh().powi(2))).abs() < 1e-15);
    assert_eq!(d("y", 1.0), 0.0);
    // the derivative of a constant collapses to a literal
    assert_eq!(parse_expression("3*y^2").unwrap().derivative("x"), Expr::Num(0.0));
}

const VARS: [&str; 3] = ["x", "y", "t"];

/// ASTs built only from shapes the parser produces.
fn ast() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0.0..100.0f64).prop_map(|v| Expr::Num((v * 8.0).round() / 8.0)),
        (0usize..3).prop_map(|i| Expr::Var(VARS[i].into())),
    ];
    leaf.prop_recursive(4, 32, 3, |inner| {
        let func = prop_oneof![
            Just(Func::Sin),
            Just(Func::Cos),
            Just(Func::Exp),
            Just(Func::Ln),
            Just(Func::Sqrt),
            Just(Func::Tanh),
            Just(Func::Smoothstep(0)),
            Just(Func::Smoothstep(2)),
            Just(Func::Cut(0)),
            Just(Func::Cut(1)),
        ];
        let op = prop_oneof![
            Just(BinOp::Add),
            Just(BinOp::Sub),
            Just(BinOp::Mul),
            Just(BinOp::Div),
            Just(BinOp::Pow)
        ];
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (op, inner.clone(), inner.clone()).prop_map(|(o, a, b)| Expr::Bin(o, Box::new(a), Box::new(b))),
            (func, inner.clone()).prop_map(|(f, a)| Expr::Call(f, vec![a])),
            (inner.clone(), inner.clone(), inner).prop_map(|(a, b, c)| Expr::Call(Func::Bump, vec![a, b, c])),
        ]
    })
}

fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
    Expr::Bin(op, Box::new(a), Box::new(b))
}

/// Smooth on all of ℝ³: logs, roots, powers and quotients get arguments bounded
/// away from zero, and `bump` a radius bounded away from zero.
fn smooth_ast() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-3.0..3.0f64).prop_map(|v| Expr::Num((v * 8.0).round() / 8.0)),
        (0usize..3).prop_map(|i| Expr::Var(VARS[i].into())),
    ];
    let positive = |e: Expr| bin(BinOp::Add, Expr::Num(1.0), bin(BinOp::Pow, e, Expr::Num(2.0)));
    leaf.prop_recursive(3, 24, 3, move |inner| {
        let plain = prop_oneof![
            Just(Func::Sin),
            Just(Func::Cos),
            Just(Func::Tanh),
            Just(Func::Smoothstep(0)),
            Just(Func::Cut(0)),
        ];
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul)], inner.clone(), inner.clone())
                .prop_map(|(o, a, b)| bin(o, a, b)),
            (inner.clone(), inner.clone()).prop_map(move |(a, b)| bin(BinOp::Div, a, positive(b))),
            (inner.clone(), inner.clone()).prop_map(move |(a, b)| {
                bin(BinOp::Pow, positive(a), Expr::Call(Func::Sin, vec![b]))
            }),
            (inner.clone(), 0u8..4).prop_map(|(a, k)| bin(BinOp::Pow, a, Expr::Num(k as f64))),
            (plain, inner.clone()).prop_map(|(f, a)| Expr::Call(f, vec![a])),
            inner.clone().prop_map(move |a| Expr::Call(Func::Ln, vec![positive(a)])),
            inner.clone().prop_map(move |a| Expr::Call(Func::Sqrt, vec![positive(a)])),
            inner.clone().prop_map(|a| Expr::Call(Func::Exp, vec![Expr::Call(Func::Sin, vec![a])])),
            (inner.clone(), inner.clone(), inner).prop_map(move |(a, b, c)| {
                Expr::Call(Func::Bump, vec![a, b, positive(c)])
            }),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn printing_round_trips(e in ast()) {
        let text = e.to_string();
        let back = parse_expression(&text).map_err(|err| TestCaseError::fail(format!("{text}: {err}")))?;
        prop_assert_eq!(&back, &e, "{}", text);
    }

    #[test]
    fn derivatives_match_central_differences(e in smooth_ast(), x in -2.0..2.0f64, y in -2.0..2.0f64, t in -2.0..2.0f64, wrt in 0usize..3) {
        let at = |dx: f64| {
            let p = [x, y, t];
            move |name: &str| VARS.iter().position(|v| *v == name).map(|i| p[i] + if i == wrt { dx } else { 0.0 })
        };
        let f0 = e.eval(&at(0.0)).unwrap();
        prop_assume!(f0.is_finite() && f0.abs() < 1e6);
        let d = e.derivative(VARS[wrt]);
        let sym = d.eval(&at(0.0)).unwrap();
        // central differences at two steps: the error must shrink like h²
        let fd = |h: f64| (e.eval(&at(h)).unwrap() - e.eval(&at(-h)).unwrap()) / (2.0 * h);
        let h = 1e-3;
        let (e1, e2) = ((fd(h) - sym).abs(), (fd(h / 4.0) - sym).abs());
        let scale = 1.0 + sym.abs();
        prop_assert!(e1 <= 1e-3 * scale, "{}: sym {} fd {}", e, sym, fd(h));
        // a factor of 16 expected; piecewise-polynomial kinks and rounding leave slack
        prop_assert!(e2 <= e1 / 4.0 + 1e-9 * scale, "{}: {} then {}", e, e1, e2);
        // compiled evaluation agrees with the tree walk
        let c = d.compile(&VARS).unwrap();
        prop_assert_eq!(c.eval(&[x, y, t]).to_bits(), sym.to_bits());
    }
}
