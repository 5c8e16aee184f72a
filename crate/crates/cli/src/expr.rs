//! Scalar expression language: parsing with positioned diagnostics, printing,
//! evaluation and symbolic differentiation.
//!
//! Grammar, loosest binding first:
//! `sum := product (('+' | '-') product)*`,
//! `product := unary (('*' | '/') unary)*`,
//! `unary := '-' unary | power`,
//! `power := atom ('^' unary)?` (right associative),
//! `atom := number | identifier | identifier '(' args ')' | '(' sum ')'`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Built-in functions. `Smoothstep(k)` and `Cut(k)` are the `k`-th derivatives of
/// `smoothstep` and of `cut(u) = (1 − u²)³` on `|u| < 1` (zero outside); they
/// keep the grammar closed under differentiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Tanh,
    Smoothstep(u8),
    Cut(u8),
    /// `bump(s, c, r) = cut((s − c) / r)`.
    Bump,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        let derived = |prefix: &str| -> Option<u8> {
            let rest = name.strip_prefix(prefix)?;
            if rest.is_empty() {
                return Some(0);
            }
            rest.strip_prefix("_d")?.parse().ok().filter(|&k: &u8| k > 0)
        };
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "tanh" => Func::Tanh,
            "bump" => Func::Bump,
            _ => {
                if let Some(k) = derived("smoothstep") {
                    Func::Smoothstep(k)
                } else {
                    Func::Cut(derived("cut")?)
                }
            }
        })
    }

    pub fn arity(self) -> usize {
        if self == Func::Bump {
            3
        } else {
            1
        }
    }

    pub fn name(self) -> String {
        let with_order = |base: &str, k: u8| if k == 0 { base.to_string() } else { format!("{base}_d{k}") };
        match self {
            Func::Sin => "sin".into(),
            Func::Cos => "cos".into(),
            Func::Exp => "exp".into(),
            Func::Ln => "ln".into(),
            Func::Sqrt => "sqrt".into(),
            Func::Tanh => "tanh".into(),
            Func::Bump => "bump".into(),
            Func::Smoothstep(k) => with_order("smoothstep", k),
            Func::Cut(k) => with_order("cut", k),
        }
    }

    fn apply(self, a: &[f64]) -> f64 {
        let x = a[0];
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Ln => x.ln(),
            Func::Sqrt => x.sqrt(),
            Func::Tanh => x.tanh(),
            Func::Smoothstep(k) => {
                if x <= 0.0 {
                    0.0
                } else if x >= 1.0 {
                    if k == 0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    poly_deriv(&[0.0, 0.0, 0.0, 10.0, -15.0, 6.0], k, x)
                }
            }
            Func::Cut(k) => {
                if x.abs() >= 1.0 {
                    0.0
                } else {
                    poly_deriv(&[1.0, 0.0, -3.0, 0.0, 3.0, 0.0, -1.0], k, x)
                }
            }
            Func::Bump => Func::Cut(0).apply(&[(a[0] - a[1]) / a[2]]),
        }
    }
}

/// `k`-th derivative of `Σ c_i x^i` at `x`.
fn poly_deriv(c: &[f64], k: u8, x: f64) -> f64 {
    let k = k as usize;
    let mut acc = 0.0;
    for i in (k..c.len()).rev() {
        let falling: f64 = (i - k + 1..=i).map(|j| j as f64).product();
        acc = acc * x + c[i] * falling;
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Position of a diagnostic, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Syntax,
    UnknownIdentifier,
    Arity,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{column}: {message}", line = pos.line, column = pos.column)]
pub struct ParseError {
    pub kind: ErrorKind,
    pub pos: Pos,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

fn lex(src: &str) -> Result<Vec<(Tok, Pos)>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = vec![];
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, column: col };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text.parse::<f64>().map_err(|_| ParseError {
                kind: ErrorKind::Syntax,
                pos,
                message: format!("malformed number `{text}`"),
            })?;
            out.push((Tok::Num(v), pos));
        } else if c.is_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), pos));
        } else if "+-*/^(),".contains(c) {
            i += 1;
            out.push((Tok::Sym(c), pos));
        } else {
            return Err(ParseError {
                kind: ErrorKind::Syntax,
                pos,
                message: format!("unexpected character `{c}`"),
            });
        }
        col += i - start;
    }
    out.push((Tok::End, Pos { line, column: col }));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    scope: Option<&'a [&'a str]>,
}

impl Parser<'_> {
    fn peek(&self) -> &(Tok, Pos) {
        &self.toks[self.at]
    }

    fn bump(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn syntax(&self, expected: &str) -> ParseError {
        let (tok, pos) = self.peek();
        let found = match tok {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Sym(c) => format!("`{c}`"),
            Tok::End => "end of input".into(),
        };
        ParseError {
            kind: ErrorKind::Syntax,
            pos: *pos,
            message: format!("expected {expected}, found {found}"),
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek().0 == Tok::Sym(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek().0 {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.product()?));
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().0 {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        let base = self.atom()?;
        if self.eat('^') {
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let (tok, pos) = self.peek().clone();
        match tok {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::Sym('(') => {
                self.bump();
                let e = self.sum()?;
                if !self.eat(')') {
                    return Err(self.syntax("`)`"));
                }
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if self.peek().0 == Tok::Sym('(') {
                    let f = Func::lookup(&name).ok_or_else(|| ParseError {
                        kind: ErrorKind::UnknownIdentifier,
                        pos,
                        message: format!("unknown function `{name}`"),
                    })?;
                    self.bump();
                    let mut args = vec![self.sum()?];
                    while self.eat(',') {
                        args.push(self.sum()?);
                    }
                    if !self.eat(')') {
                        return Err(self.syntax("`,` or `)`"));
                    }
                    if args.len() != f.arity() {
                        return Err(ParseError {
                            kind: ErrorKind::Arity,
                            pos,
                            message: format!("`{name}` takes {} argument(s), got {}", f.arity(), args.len()),
                        });
                    }
                    Ok(Expr::Call(f, args))
                } else if name == "pi" {
                    Ok(Expr::Num(PI))
                } else if self.scope.is_some_and(|s| !s.contains(&name.as_str())) {
                    Err(ParseError {
                        kind: ErrorKind::UnknownIdentifier,
                        pos,
                        message: format!("unknown identifier `{name}`"),
                    })
                } else {
                    Ok(Expr::Var(name))
                }
            }
            _ => Err(self.syntax("expression")),
        }
    }
}

fn parse_in(src: &str, scope: Option<&[&str]>) -> Result<Expr, ParseError> {
    let mut p = Parser {
        toks: lex(src)?,
        at: 0,
        scope,
    };
    let e = p.sum()?;
    if p.peek().0 != Tok::End {
        return Err(p.syntax("operator or end of input"));
    }
    Ok(e)
}

/// Parses with any identifier accepted as a variable (`pi` is the constant).
pub fn parse_expression(src: &str) -> Result<Expr, ParseError> {
    parse_in(src, None)
}

/// Parses and rejects identifiers outside `scope`.
pub fn parse_scoped(src: &str, scope: &[&str]) -> Result<Expr, ParseError> {
    parse_in(src, Some(scope))
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
        Expr::Neg(_) => 3,
        Expr::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => 3,
        Expr::Bin(BinOp::Pow, ..) => 4,
        _ => 5,
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let wrap = |f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool| {
            if parens {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        };
        match self {
            Expr::Num(v) if prec(self) == 3 => write!(f, "-{}", -v),
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(s) => write!(f, "{s}"),
            Expr::Neg(e) => {
                write!(f, "-")?;
                wrap(f, e, prec(e) < 3)
            }
            Expr::Bin(op, l, r) => {
                let p = prec(self);
                let sym = match op {
                    BinOp::Add => " + ",
                    BinOp::Sub => " - ",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                if *op == BinOp::Pow {
                    wrap(f, l, prec(l) <= p)?;
                    write!(f, "{sym}")?;
                    wrap(f, r, prec(r) < 3)
                } else {
                    wrap(f, l, prec(l) < p)?;
                    write!(f, "{sym}")?;
                    wrap(f, r, prec(r) <= p)
                }
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

// constructors that fold constants and drop neutral elements

fn num(v: f64) -> Expr {
    Expr::Num(v)
}

fn is_num(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Num(x) if *x == v)
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(v) => num(-v),
        Expr::Neg(e) => *e,
        e => Expr::Neg(Box::new(e)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) => num(x + y),
        (a, b) if is_num(&a, 0.0) => b,
        (a, b) if is_num(&b, 0.0) => a,
        (a, Expr::Neg(b)) => sub(a, *b),
        (a, b) => Expr::Bin(BinOp::Add, Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) => num(x - y),
        (a, b) if is_num(&b, 0.0) => a,
        (a, b) if is_num(&a, 0.0) => neg(b),
        (a, b) => Expr::Bin(BinOp::Sub, Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) => num(x * y),
        (a, b) if is_num(&a, 0.0) || is_num(&b, 0.0) => num(0.0),
        (a, b) if is_num(&a, 1.0) => b,
        (a, b) if is_num(&b, 1.0) => a,
        (Expr::Neg(a), b) => neg(mul(*a, b)),
        (a, Expr::Neg(b)) => neg(mul(a, *b)),
        (a, b) => Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) if y != 0.0 => num(x / y),
        (a, _) if is_num(&a, 0.0) => num(0.0),
        (a, b) if is_num(&b, 1.0) => a,
        (a, b) => Expr::Bin(BinOp::Div, Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) => num(apply_bin(BinOp::Pow, x, y)),
        (a, b) if is_num(&b, 1.0) => a,
        (_, b) if is_num(&b, 0.0) => num(1.0),
        (a, b) => Expr::Bin(BinOp::Pow, Box::new(a), Box::new(b)),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    Expr::Call(f, vec![a])
}

impl Expr {
    pub fn depends_on(&self, var: &str) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(s) => s == var,
            Expr::Neg(e) => e.depends_on(var),
            Expr::Bin(_, l, r) => l.depends_on(var) || r.depends_on(var),
            Expr::Call(_, a) => a.iter().any(|e| e.depends_on(var)),
        }
    }

    /// Free variables in first-use order.
    pub fn variables(&self) -> Vec<String> {
        fn walk(e: &Expr, out: &mut Vec<String>) {
            match e {
                Expr::Num(_) => {}
                Expr::Var(s) => {
                    if !out.contains(s) {
                        out.push(s.clone());
                    }
                }
                Expr::Neg(e) => walk(e, out),
                Expr::Bin(_, l, r) => {
                    walk(l, out);
                    walk(r, out);
                }
                Expr::Call(_, a) => a.iter().for_each(|e| walk(e, out)),
            }
        }
        let mut out = vec![];
        walk(self, &mut out);
        out
    }

    /// Replaces the named variables by constants.
    pub fn bind(&self, values: &BTreeMap<String, f64>) -> Expr {
        match self {
            Expr::Var(s) => values.get(s).map_or_else(|| self.clone(), |&v| num(v)),
            Expr::Num(_) => self.clone(),
            Expr::Neg(e) => Expr::Neg(Box::new(e.bind(values))),
            Expr::Bin(op, l, r) => Expr::Bin(*op, Box::new(l.bind(values)), Box::new(r.bind(values))),
            Expr::Call(f, a) => Expr::Call(*f, a.iter().map(|e| e.bind(values)).collect()),
        }
    }

    /// Evaluates with `env` supplying variables; `None` for an unbound one.
    pub fn eval(&self, env: &dyn Fn(&str) -> Option<f64>) -> Option<f64> {
        Some(match self {
            Expr::Num(v) => *v,
            Expr::Var(s) => env(s)?,
            Expr::Neg(e) => -e.eval(env)?,
            Expr::Bin(op, l, r) => apply_bin(*op, l.eval(env)?, r.eval(env)?),
            Expr::Call(f, a) => {
                let v: Option<Vec<f64>> = a.iter().map(|e| e.eval(env)).collect();
                f.apply(&v?)
            }
        })
    }

    /// Symbolic `∂/∂var`.
    pub fn derivative(&self, var: &str) -> Expr {
        match self {
            Expr::Num(_) => num(0.0),
            Expr::Var(s) => num(if s == var { 1.0 } else { 0.0 }),
            Expr::Neg(e) => neg(e.derivative(var)),
            Expr::Bin(op, l, r) => {
                let (a, b) = (l.as_ref().clone(), r.as_ref().clone());
                let (da, db) = (a.derivative(var), b.derivative(var));
                match op {
                    BinOp::Add => add(da, db),
                    BinOp::Sub => sub(da, db),
                    BinOp::Mul => add(mul(da, b), mul(a, db)),
                    BinOp::Div => div(sub(mul(da, b.clone()), mul(a, db)), pow(b, num(2.0))),
                    BinOp::Pow => {
                        if !b.depends_on(var) {
                            // b a^(b−1) a'
                            let lower = match &b {
                                Expr::Num(v) => num(v - 1.0),
                                _ => sub(b.clone(), num(1.0)),
                            };
                            mul(mul(b, pow(a, lower)), da)
                        } else {
                            // a^b (b' ln a + b a'/a)
                            let inner = add(mul(db, call(Func::Ln, a.clone())), div(mul(b.clone(), da), a.clone()));
                            mul(pow(a, b), inner)
                        }
                    }
                }
            }
            Expr::Call(f, args) => {
                if *f == Func::Bump {
                    let u = div(sub(args[0].clone(), args[1].clone()), args[2].clone());
                    return mul(call(Func::Cut(1), u.clone()), u.derivative(var));
                }
                let a = args[0].clone();
                let da = a.derivative(var);
                if is_num(&da, 0.0) {
                    return num(0.0);
                }
                let outer = match f {
                    Func::Sin => call(Func::Cos, a),
                    Func::Cos => neg(call(Func::Sin, a)),
                    Func::Exp => call(Func::Exp, a),
                    Func::Ln => div(num(1.0), a),
                    Func::Sqrt => div(num(0.5), call(Func::Sqrt, a)),
                    Func::Tanh => sub(num(1.0), pow(call(Func::Tanh, a), num(2.0))),
                    Func::Smoothstep(k) => call(Func::Smoothstep(k + 1), a),
                    Func::Cut(k) => call(Func::Cut(k + 1), a),
                    Func::Bump => unreachable!(),
                };
                mul(outer, da)
            }
        }
    }

    /// Compiles against a fixed variable order for repeated evaluation.
    pub fn compile(&self, vars: &[&str]) -> Result<Compiled, String> {
        fn go(e: &Expr, vars: &[&str]) -> Result<Compiled, String> {
            Ok(match e {
                Expr::Num(v) => Compiled::Num(*v),
                Expr::Var(s) => Compiled::Slot(
                    vars.iter().position(|v| v == s).ok_or_else(|| format!("unbound variable `{s}`"))?,
                ),
                Expr::Neg(e) => Compiled::Neg(Box::new(go(e, vars)?)),
                Expr::Bin(op, l, r) => Compiled::Bin(*op, Box::new(go(l, vars)?), Box::new(go(r, vars)?)),
                Expr::Call(f, a) => Compiled::Call(*f, a.iter().map(|e| go(e, vars)).collect::<Result<_, _>>()?),
            })
        }
        go(self, vars)
    }
}

fn apply_bin(op: BinOp, x: f64, y: f64) -> f64 {
    match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div => x / y,
        BinOp::Pow => {
            if y == y.trunc() && y.abs() <= 64.0 {
                x.powi(y as i32)
            } else {
                x.powf(y)
            }
        }
    }
}

/// Expression with variables resolved to slots.
#[derive(Debug, Clone)]
pub enum Compiled {
    Num(f64),
    Slot(usize),
    Neg(Box<Compiled>),
    Bin(BinOp, Box<Compiled>, Box<Compiled>),
    Call(Func, Vec<Compiled>),
}

impl Compiled {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Compiled::Num(v) => *v,
            Compiled::Slot(i) => x[*i],
            Compiled::Neg(e) => -e.eval(x),
            Compiled::Bin(op, l, r) => apply_bin(*op, l.eval(x), r.eval(x)),
            Compiled::Call(f, a) => {
                if a.len() == 1 {
                    f.apply(&[a[0].eval(x)])
                } else {
                    let v: Vec<f64> = a.iter().map(|e| e.eval(x)).collect();
                    f.apply(&v)
                }
            }
        }
    }
}
