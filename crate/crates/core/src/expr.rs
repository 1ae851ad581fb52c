//! Factorable expressions: parsing, interval bound propagation and
//! reformulation into the factored normal form
//!
//! ```text
//! min c^T x   s.t.   f_j(x_{i_j}) <= y_j  (j = 1..m),   (x, y) in Omega
//! ```
//!
//! where every `f_j` is a [`UnivariateFunction`] and `Omega` collects linear
//! and quadratic rows, variable bounds and integrality.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functions::{FunctionError, FunctionKind, Interval, UnivariateFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("domain violation: {0}")]
    DomainViolation(String),
    #[error("unsupported operation: {0}")]
    UnsupportedOperation(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Function(#[from] FunctionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnaryOp {
    Sin,
    Cos,
    Exp,
    Log,
    Abs,
    Neg,
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Abs => "abs",
            UnaryOp::Neg => "-",
        }
    }

    fn function_kind(self) -> Option<FunctionKind> {
        match self {
            UnaryOp::Sin => Some(FunctionKind::Sin),
            UnaryOp::Cos => Some(FunctionKind::Cos),
            UnaryOp::Exp => Some(FunctionKind::Exp),
            UnaryOp::Log => Some(FunctionKind::Ln),
            UnaryOp::Abs | UnaryOp::Neg => None,
        }
    }
}

/// Expression tree node. Variables are 0-based and print as `x1, x2, ...`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(i: usize) -> Self {
        Expr::Var(i)
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Self {
        Expr::Unary(op, Box::new(a))
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Self {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    /// Largest variable index + 1.
    pub fn dimension(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Unary(_, a) => a.dimension(),
            Expr::Binary(_, a, b) => a.dimension().max(b.dimension()),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Unary(op, a) => {
                let v = a.eval(x);
                match op {
                    UnaryOp::Sin => v.sin(),
                    UnaryOp::Cos => v.cos(),
                    UnaryOp::Exp => v.exp(),
                    UnaryOp::Log => v.ln(),
                    UnaryOp::Abs => v.abs(),
                    UnaryOp::Neg => -v,
                }
            }
            Expr::Binary(op, a, b) => {
                let (u, v) = (a.eval(x), b.eval(x));
                match op {
                    BinaryOp::Add => u + v,
                    BinaryOp::Mul => u * v,
                    BinaryOp::Div => u / v,
                    BinaryOp::Pow => match integer_exponent(b) {
                        Some(n) => u.powi(n),
                        None => u.powf(v),
                    },
                }
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) if c.is_sign_negative() => write!(f, "({c})"),
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Unary(UnaryOp::Neg, a) => write!(f, "(-({a}))"),
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, a, b) => {
                let sym = match op {
                    BinaryOp::Add => "+",
                    BinaryOp::Mul => "*",
                    BinaryOp::Div => "/",
                    BinaryOp::Pow => "^",
                };
                write!(f, "({a} {sym} {b})")
            }
        }
    }
}

fn integer_exponent(e: &Expr) -> Option<i32> {
    match e {
        Expr::Const(c) if c.fract() == 0.0 && c.abs() <= 64.0 => Some(*c as i32),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Parsing

/// Parses infix text with `+ - * / ^`, parentheses, calls to
/// `sin cos exp log ln abs`, numeric literals, `pi`, and variables `x1..xn`.
pub fn parse(text: &str) -> Result<Expr, ExprError> {
    parse_with_names(text, &[])
}

/// As [`parse`], additionally resolving the given variable names (index =
/// position in `names`).
pub fn parse_with_names(text: &str, names: &[String]) -> Result<Expr, ExprError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0, names };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    names: &'a [String],
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> ExprError {
        ExprError::Syntax { pos: self.pos, msg: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::binary(BinaryOp::Add, lhs, self.term()?);
            } else if self.eat(b'-') {
                let rhs = self.term()?;
                lhs = Expr::binary(BinaryOp::Add, lhs, Expr::unary(UnaryOp::Neg, rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::binary(BinaryOp::Mul, lhs, self.unary()?);
            } else if self.eat(b'/') {
                lhs = Expr::binary(BinaryOp::Div, lhs, self.unary()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat(b'-') {
            // A minus glued to a numeric literal is part of the constant.
            if let Some(c) = self.src.get(self.pos) {
                if c.is_ascii_digit() || *c == b'.' {
                    let v = self.number()?;
                    if self.peek() == Some(b'^') {
                        return Ok(Expr::unary(UnaryOp::Neg, self.power_tail(Expr::Const(v))?));
                    }
                    return Ok(Expr::Const(-v));
                }
            }
            return Ok(Expr::unary(UnaryOp::Neg, self.unary()?));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        let base = self.atom()?;
        self.power_tail(base)
    }

    fn power_tail(&mut self, base: Expr) -> Result<Expr, ExprError> {
        if self.eat(b'^') {
            let exponent = self.unary()?;
            Ok(Expr::binary(BinaryOp::Pow, base, exponent))
        } else {
            Ok(base)
        }
    }

    fn number(&mut self) -> Result<f64, ExprError> {
        let start = self.pos;
        let s = self.src;
        while self.pos < s.len() && (s[self.pos].is_ascii_digit() || s[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let mut q = self.pos + 1;
            if q < s.len() && (s[q] == b'+' || s[q] == b'-') {
                q += 1;
            }
            if q < s.len() && s[q].is_ascii_digit() {
                self.pos = q;
                while self.pos < s.len() && s[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let text = std::str::from_utf8(&s[start..self.pos]).unwrap();
        text.parse::<f64>().map_err(|_| ExprError::Syntax { pos: start, msg: format!("bad number `{text}`") })
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => Ok(Expr::Const(self.number()?)),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let ident = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                let func = match ident {
                    "sin" => Some(UnaryOp::Sin),
                    "cos" => Some(UnaryOp::Cos),
                    "exp" => Some(UnaryOp::Exp),
                    "log" | "ln" => Some(UnaryOp::Log),
                    "abs" => Some(UnaryOp::Abs),
                    _ => None,
                };
                if let Some(op) = func {
                    if !self.eat(b'(') {
                        return Err(self.error("expected `(` after function name"));
                    }
                    let arg = self.expr()?;
                    if !self.eat(b')') {
                        return Err(self.error("expected `)`"));
                    }
                    return Ok(Expr::unary(op, arg));
                }
                if ident == "pi" {
                    return Ok(Expr::Const(PI));
                }
                if let Some(i) = self.names.iter().position(|n| n == ident) {
                    return Ok(Expr::Var(i));
                }
                if let Some(i) = ident.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()) {
                    if i >= 1 {
                        return Ok(Expr::Var(i - 1));
                    }
                }
                Err(ExprError::UnknownVariable(ident.to_string()))
            }
            Some(c) => Err(self.error(&format!("unexpected character `{}`", c as char))),
        }
    }
}

// ---------------------------------------------------------------------------
// Interval bounds

fn mul_iv(a: Interval, b: Interval) -> Interval {
    combine_iv(a, b, |u, v| u * v)
}

fn combine_iv(a: Interval, b: Interval, op: fn(f64, f64) -> f64) -> Interval {
    let p = [op(a.lo, b.lo), op(a.lo, b.hi), op(a.hi, b.lo), op(a.hi, b.hi)];
    Interval {
        lo: p.iter().copied().fold(f64::INFINITY, f64::min),
        hi: p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

fn powi_iv(a: Interval, n: i32) -> Result<Interval, ExprError> {
    if n == 0 {
        return Ok(Interval::point(1.0));
    }
    if n < 0 {
        if a.contains(0.0) {
            return Err(ExprError::DomainViolation(format!("negative power of an interval containing 0: {a}")));
        }
        let inv = Interval { lo: 1.0 / a.hi, hi: 1.0 / a.lo };
        return powi_iv(inv, -n);
    }
    let (l, h) = (a.lo.powi(n), a.hi.powi(n));
    if n % 2 == 1 {
        Ok(Interval { lo: l, hi: h })
    } else if a.lo >= 0.0 {
        Ok(Interval { lo: l, hi: h })
    } else if a.hi <= 0.0 {
        Ok(Interval { lo: h, hi: l })
    } else {
        Ok(Interval { lo: 0.0, hi: l.max(h) })
    }
}

/// Whether `[lo, hi]` contains `phase + 2 pi k` for some integer `k`.
fn hits_phase(a: Interval, phase: f64) -> bool {
    let k = ((a.lo - phase) / (2.0 * PI)).ceil();
    phase + 2.0 * PI * k <= a.hi
}

fn periodic_iv(a: Interval, kind: UnaryOp) -> Interval {
    if a.len() >= 2.0 * PI {
        return Interval { lo: -1.0, hi: 1.0 };
    }
    let (f, max_phase, min_phase): (fn(f64) -> f64, f64, f64) = match kind {
        UnaryOp::Sin => (f64::sin, PI / 2.0, -PI / 2.0),
        _ => (f64::cos, 0.0, PI),
    };
    let (u, v) = (f(a.lo), f(a.hi));
    Interval {
        lo: if hits_phase(a, min_phase) { -1.0 } else { u.min(v) },
        hi: if hits_phase(a, max_phase) { 1.0 } else { u.max(v) },
    }
}

/// Interval enclosure of `expr` given per-variable bounds.
pub fn propagate_bounds(expr: &Expr, bounds: &[Interval]) -> Result<Interval, ExprError> {
    Ok(match expr {
        Expr::Const(c) => Interval::point(*c),
        Expr::Var(i) => *bounds
            .get(*i)
            .ok_or_else(|| ExprError::InvalidProblem(format!("no bounds for x{}", i + 1)))?,
        Expr::Unary(op, a) => {
            let a = propagate_bounds(a, bounds)?;
            match op {
                UnaryOp::Neg => Interval { lo: -a.hi, hi: -a.lo },
                UnaryOp::Exp => Interval { lo: a.lo.exp(), hi: a.hi.exp() },
                UnaryOp::Log => {
                    if a.lo <= 0.0 {
                        return Err(ExprError::DomainViolation(format!("log of {a}")));
                    }
                    Interval { lo: a.lo.ln(), hi: a.hi.ln() }
                }
                UnaryOp::Abs => {
                    if a.lo >= 0.0 {
                        a
                    } else if a.hi <= 0.0 {
                        Interval { lo: -a.hi, hi: -a.lo }
                    } else {
                        Interval { lo: 0.0, hi: a.hi.max(-a.lo) }
                    }
                }
                UnaryOp::Sin | UnaryOp::Cos => periodic_iv(a, *op),
            }
        }
        Expr::Binary(op, a, b) => {
            let (ia, ib) = (propagate_bounds(a, bounds)?, propagate_bounds(b, bounds)?);
            match op {
                BinaryOp::Add => Interval { lo: ia.lo + ib.lo, hi: ia.hi + ib.hi },
                BinaryOp::Mul => mul_iv(ia, ib),
                BinaryOp::Div => {
                    if ib.contains(0.0) {
                        return Err(ExprError::DomainViolation(format!("division by {ib}")));
                    }
                    combine_iv(ia, ib, |u, v| u / v)
                }
                BinaryOp::Pow => {
                    let n = integer_exponent(b)
                        .ok_or_else(|| ExprError::UnsupportedOperation("non-integer or non-constant exponent".into()))?;
                    powi_iv(ia, n)?
                }
            }
        }
    })
}

// ---------------------------------------------------------------------------
// Factored problem

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
}

impl Sense {
    pub fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        }
    }

    /// Whether `lhs sense rhs` holds up to `tol`.
    pub fn holds(self, lhs: f64, rhs: f64, tol: f64) -> bool {
        match self {
            Sense::Le => lhs <= rhs + tol,
            Sense::Ge => lhs >= rhs - tol,
            Sense::Eq => (lhs - rhs).abs() <= tol,
        }
    }
}

impl Default for Sense {
    fn default() -> Self {
        Sense::Le
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub lb: f64,
    pub ub: f64,
    #[serde(default)]
    pub integer: bool,
    /// Defining expression over the original variables, for auxiliaries.
    #[serde(skip)]
    pub definition: Option<Expr>,
}

impl Variable {
    pub fn continuous(name: impl Into<String>, lb: f64, ub: f64) -> Self {
        Variable { name: name.into(), lb, ub, integer: false, definition: None }
    }

    pub fn integer(name: impl Into<String>, lb: f64, ub: f64) -> Self {
        Variable { integer: true, ..Variable::continuous(name, lb, ub) }
    }

    pub fn bounds(&self) -> Interval {
        Interval { lo: self.lb, hi: self.ub }
    }
}

/// `sum linear + sum quadratic  sense  rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    pub linear: Vec<(usize, f64)>,
    #[serde(default)]
    pub quadratic: Vec<(usize, usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn lhs(&self, point: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().map(|(i, c)| c * point[*i]).sum();
        let quad: f64 = self.quadratic.iter().map(|(i, j, c)| c * point[*i] * point[*j]).sum();
        lin + quad
    }

    pub fn is_satisfied(&self, point: &[f64], tol: f64) -> bool {
        self.sense.holds(self.lhs(point), self.rhs, tol)
    }

    pub fn variables(&self) -> impl Iterator<Item = usize> + '_ {
        self.linear
            .iter()
            .map(|(i, _)| *i)
            .chain(self.quadratic.iter().flat_map(|(i, j, _)| [*i, *j]))
    }
}

/// `f(x) <= y` (`Le`), `f(x) >= y` (`Ge`) or both (`Eq`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivariateConstraint {
    pub function: UnivariateFunction,
    pub x: usize,
    pub y: usize,
    pub domain: Interval,
    pub sense: Sense,
}

impl UnivariateConstraint {
    pub fn is_satisfied(&self, point: &[f64], tol: f64) -> bool {
        self.sense.holds(self.function.value(point[self.x]), point[self.y], tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactoredProblem {
    pub variables: Vec<Variable>,
    /// Minimised linear objective.
    pub objective: Vec<(usize, f64)>,
    pub omega: Vec<Row>,
    pub univariate: Vec<UnivariateConstraint>,
}

impl FactoredProblem {
    pub fn objective_value(&self, point: &[f64]) -> f64 {
        self.objective.iter().map(|(i, c)| c * point[*i]).sum()
    }

    /// Extends values of the original variables with the values of every
    /// auxiliary variable, computed from its definition.
    pub fn lift(&self, original: &[f64]) -> Vec<f64> {
        let mut point = original.to_vec();
        point.resize(self.variables.len(), 0.0);
        for (i, v) in self.variables.iter().enumerate() {
            if let Some(def) = &v.definition {
                point[i] = def.eval(original);
            }
        }
        point
    }

    /// Feasibility of a full point (bounds, integrality, Omega, univariate rows).
    pub fn is_feasible(&self, point: &[f64], tol: f64) -> bool {
        self.variables.iter().zip(point).all(|(v, x)| {
            *x >= v.lb - tol && *x <= v.ub + tol && (!v.integer || (x - x.round()).abs() <= tol)
        }) && self.omega.iter().all(|r| r.is_satisfied(point, tol))
            && self.univariate.iter().all(|u| u.is_satisfied(point, tol))
    }

    pub fn validate(&self) -> Result<(), ExprError> {
        let n = self.variables.len();
        for v in &self.variables {
            if !(v.lb.is_finite() && v.ub.is_finite() && v.lb <= v.ub) {
                return Err(ExprError::InvalidProblem(format!("variable {} needs finite bounds lb <= ub", v.name)));
            }
        }
        let bad = |i: usize| i >= n;
        if self.objective.iter().any(|(i, _)| bad(*i)) || self.omega.iter().any(|r| r.variables().any(bad)) {
            return Err(ExprError::InvalidProblem("reference to an undeclared variable".into()));
        }
        let mut seen = vec![false; n];
        for u in &self.univariate {
            if bad(u.x) || bad(u.y) {
                return Err(ExprError::InvalidProblem("univariate constraint references an undeclared variable".into()));
            }
            if u.domain.is_degenerate() && u.domain.lo != u.domain.hi {
                return Err(ExprError::InvalidProblem("empty univariate domain".into()));
            }
            if !u.domain.contains_interval(&self.variables[u.x].bounds()) {
                return Err(ExprError::InvalidProblem(format!(
                    "domain {} of a univariate constraint does not cover the bounds of {}",
                    u.domain, self.variables[u.x].name
                )));
            }
            u.function.check_interval(&u.domain)?;
            if std::mem::replace(&mut seen[u.y], true) {
                return Err(ExprError::InvalidProblem(format!(
                    "variable {} is the y of more than one univariate constraint",
                    self.variables[u.y].name
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Problem envelope and reformulation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeVariable {
    pub name: String,
    pub lb: f64,
    pub ub: f64,
    #[serde(default)]
    pub integer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeObjective {
    pub coeffs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeConstraint {
    pub expr: String,
    #[serde(default)]
    pub sense: Sense,
    pub rhs: f64,
}

/// JSON problem envelope:
/// `{variables: [{name, lb, ub, integer}], objective: {coeffs}, constraints: [{expr, rhs}]}`.
/// Constraints read `expr <= rhs` unless `sense` says otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemEnvelope {
    pub variables: Vec<EnvelopeVariable>,
    pub objective: EnvelopeObjective,
    pub constraints: Vec<EnvelopeConstraint>,
}

/// A parsed constraint `expr sense rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub expr: Expr,
    pub sense: Sense,
    pub rhs: f64,
}

impl ProblemEnvelope {
    pub fn from_json(text: &str) -> Result<Self, ExprError> {
        serde_json::from_str(text).map_err(|e| ExprError::InvalidProblem(e.to_string()))
    }

    /// Parses every constraint and reformulates.
    pub fn reformulate(&self) -> Result<FactoredProblem, ExprError> {
        let names: Vec<String> = self.variables.iter().map(|v| v.name.clone()).collect();
        let constraints = self
            .constraints
            .iter()
            .map(|c| Ok(Constraint { expr: parse_with_names(&c.expr, &names)?, sense: c.sense, rhs: c.rhs }))
            .collect::<Result<Vec<_>, ExprError>>()?;
        let objective = self
            .objective
            .coeffs
            .iter()
            .map(|(name, c)| {
                names
                    .iter()
                    .position(|n| n == name)
                    .map(|i| (i, *c))
                    .ok_or_else(|| ExprError::UnknownVariable(name.clone()))
            })
            .collect::<Result<Vec<_>, ExprError>>()?;
        let variables = self
            .variables
            .iter()
            .map(|v| Variable { name: v.name.clone(), lb: v.lb, ub: v.ub, integer: v.integer, definition: None })
            .collect();
        reformulate(&constraints, &objective, variables)
    }
}

/// Sparse `constant + linear + quadratic` form.
#[derive(Debug, Clone, Default, PartialEq)]
struct QuadForm {
    constant: f64,
    linear: BTreeMap<usize, f64>,
    quadratic: BTreeMap<(usize, usize), f64>,
}

impl QuadForm {
    fn constant(c: f64) -> Self {
        QuadForm { constant: c, ..Default::default() }
    }

    fn var(i: usize) -> Self {
        let mut q = QuadForm::default();
        q.linear.insert(i, 1.0);
        q
    }

    fn is_affine(&self) -> bool {
        self.quadratic.is_empty()
    }

    /// `scale * x_i + shift` when the form is affine in a single variable.
    fn as_single_affine(&self) -> Option<(usize, f64, f64)> {
        if !self.quadratic.is_empty() || self.linear.len() != 1 {
            return None;
        }
        let (&i, &s) = self.linear.iter().next().unwrap();
        (s != 0.0).then_some((i, s, self.constant))
    }

    fn scale(mut self, k: f64) -> Self {
        self.constant *= k;
        self.linear.values_mut().for_each(|v| *v *= k);
        self.quadratic.values_mut().for_each(|v| *v *= k);
        self
    }

    fn add(mut self, other: QuadForm) -> Self {
        self.constant += other.constant;
        for (k, v) in other.linear {
            *self.linear.entry(k).or_insert(0.0) += v;
        }
        for (k, v) in other.quadratic {
            *self.quadratic.entry(k).or_insert(0.0) += v;
        }
        self
    }

    /// Product of two affine forms.
    fn mul_affine(&self, other: &QuadForm) -> Self {
        let mut out = QuadForm::constant(self.constant * other.constant);
        for (&i, &a) in &self.linear {
            *out.linear.entry(i).or_insert(0.0) += a * other.constant;
            for (&j, &b) in &other.linear {
                let key = if i <= j { (i, j) } else { (j, i) };
                *out.quadratic.entry(key).or_insert(0.0) += a * b;
            }
        }
        for (&j, &b) in &other.linear {
            *out.linear.entry(j).or_insert(0.0) += self.constant * b;
        }
        out
    }

    fn into_row(self, name: String, sense: Sense, rhs: f64) -> Row {
        Row {
            name,
            linear: self.linear.into_iter().filter(|(_, c)| *c != 0.0).collect(),
            quadratic: self.quadratic.into_iter().filter(|(_, c)| *c != 0.0).map(|((i, j), c)| (i, j, c)).collect(),
            sense,
            rhs: rhs - self.constant,
        }
    }
}

/// Sign with which a subexpression enters a `<=` row; `None` when the
/// context is not monotone (inside products, powers, functions, equalities).
type Polarity = Option<f64>;

struct Reformulator {
    problem: FactoredProblem,
    original_bounds: Vec<Interval>,
    aux_count: usize,
}

/// Rewrites constraints into the factored form: every `sin/cos/exp/log` node
/// gets an auxiliary `y` with a univariate constraint, products and squares
/// become quadratic rows of Omega, and nonlinear arguments are lifted into
/// auxiliary variables. A univariate node entering a `<=` row with positive
/// (negative) sign only needs `f(x) <= y` (`f(x) >= y`); everywhere else the
/// equality `f(x) = y` is kept as a two-sided constraint.
pub fn reformulate(
    constraints: &[Constraint],
    objective: &[(usize, f64)],
    variables: Vec<Variable>,
) -> Result<FactoredProblem, ExprError> {
    let original_bounds: Vec<Interval> = variables
        .iter()
        .map(|v| Interval::new(v.lb, v.ub).map_err(|_| ExprError::InvalidProblem(format!("bad bounds on {}", v.name))))
        .collect::<Result<_, _>>()?;
    for c in constraints {
        if c.expr.dimension() > variables.len() {
            return Err(ExprError::InvalidProblem(format!("constraint `{}` uses undeclared variables", c.expr)));
        }
    }
    let mut r = Reformulator {
        problem: FactoredProblem { variables, objective: objective.to_vec(), omega: Vec::new(), univariate: Vec::new() },
        original_bounds,
        aux_count: 0,
    };
    for (k, c) in constraints.iter().enumerate() {
        let polarity = match c.sense {
            Sense::Le => Some(1.0),
            Sense::Ge => Some(-1.0),
            Sense::Eq => None,
        };
        let form = r.lower(&c.expr, polarity)?;
        r.problem.omega.push(form.into_row(format!("c{}", k + 1), c.sense, c.rhs));
    }
    r.problem.validate()?;
    Ok(r.problem)
}

impl Reformulator {
    fn new_aux(&mut self, prefix: &str, def: &Expr) -> Result<usize, ExprError> {
        let bounds = propagate_bounds(def, &self.original_bounds)?;
        self.aux_count += 1;
        let mut v = Variable::continuous(format!("{prefix}{}", self.aux_count), bounds.lo, bounds.hi);
        v.definition = Some(def.clone());
        self.problem.variables.push(v);
        Ok(self.problem.variables.len() - 1)
    }

    /// Variable holding the value of `form` (defined by `def`), introducing
    /// an auxiliary with an equality row when needed.
    fn as_variable(&mut self, form: QuadForm, def: &Expr) -> Result<usize, ExprError> {
        if form.constant == 0.0 && form.quadratic.is_empty() && form.linear.len() == 1 {
            if let Some((&i, &1.0)) = form.linear.iter().next() {
                return Ok(i);
            }
        }
        let aux = self.new_aux("t", def)?;
        let row = form.add(QuadForm::var(aux).scale(-1.0));
        let name = format!("def_{}", self.problem.variables[aux].name);
        self.problem.omega.push(row.into_row(name, Sense::Eq, 0.0));
        Ok(aux)
    }

    fn lower(&mut self, e: &Expr, polarity: Polarity) -> Result<QuadForm, ExprError> {
        match e {
            Expr::Const(c) => Ok(QuadForm::constant(*c)),
            Expr::Var(i) => Ok(QuadForm::var(*i)),
            Expr::Unary(UnaryOp::Neg, a) => Ok(self.lower(a, polarity.map(|p| -p))?.scale(-1.0)),
            Expr::Unary(UnaryOp::Abs, a) => {
                let b = propagate_bounds(a, &self.original_bounds)?;
                if b.lo >= 0.0 {
                    self.lower(a, polarity)
                } else if b.hi <= 0.0 {
                    Ok(self.lower(a, polarity.map(|p| -p))?.scale(-1.0))
                } else {
                    Err(ExprError::UnsupportedOperation(format!("abs of `{a}` whose sign is not fixed by its bounds {b}")))
                }
            }
            Expr::Unary(op, a) => {
                let kind = op.function_kind().unwrap();
                let inner = self.lower(a, None)?;
                let (x, function) = match inner.as_single_affine() {
                    Some((i, s, t)) => (i, UnivariateFunction::new(kind).with_pre(s, t)),
                    None => (self.as_variable(inner, a)?, UnivariateFunction::new(kind)),
                };
                let domain = self.problem.variables[x].bounds();
                function.check_interval(&domain).map_err(|_| {
                    ExprError::DomainViolation(format!("{} is not defined on the bounds {domain} of its argument", e))
                })?;
                let y = self.new_aux("y", e)?;
                let sense = match polarity {
                    Some(p) if p > 0.0 => Sense::Le,
                    Some(p) if p < 0.0 => Sense::Ge,
                    _ => Sense::Eq,
                };
                self.problem.univariate.push(UnivariateConstraint { function, x, y, domain, sense });
                Ok(QuadForm::var(y))
            }
            Expr::Binary(BinaryOp::Add, a, b) => Ok(self.lower(a, polarity)?.add(self.lower(b, polarity)?)),
            Expr::Binary(BinaryOp::Mul, a, b) => {
                if let Some(k) = constant_value(a) {
                    return Ok(self.lower(b, polarity.map(|p| p * k))?.scale(k));
                }
                if let Some(k) = constant_value(b) {
                    return Ok(self.lower(a, polarity.map(|p| p * k))?.scale(k));
                }
                let la = self.lower(a, None)?;
                let lb = self.lower(b, None)?;
                let la = self.affine(la, a)?;
                let lb = self.affine(lb, b)?;
                Ok(la.mul_affine(&lb))
            }
            Expr::Binary(BinaryOp::Div, a, b) => {
                if let Some(k) = constant_value(b) {
                    if k == 0.0 {
                        return Err(ExprError::DomainViolation("division by zero".into()));
                    }
                    return Ok(self.lower(a, polarity.map(|p| p / k))?.scale(1.0 / k));
                }
                let lb = self.lower(b, None)?;
                let divisor = propagate_bounds(b, &self.original_bounds)?;
                if divisor.contains(0.0) {
                    return Err(ExprError::DomainViolation(format!("division by `{b}` with bounds {divisor}")));
                }
                let la = self.lower(a, None)?;
                let lb = self.affine(lb, b)?;
                // q = a / b  <=>  q * b - a = 0
                let q = self.new_aux("q", e)?;
                let row = QuadForm::var(q).mul_affine(&lb).add(la.scale(-1.0));
                let name = format!("def_{}", self.problem.variables[q].name);
                self.problem.omega.push(row.into_row(name, Sense::Eq, 0.0));
                Ok(QuadForm::var(q))
            }
            Expr::Binary(BinaryOp::Pow, a, b) => {
                let n = integer_exponent(b).ok_or_else(|| {
                    ExprError::UnsupportedOperation(format!("exponent `{b}` must be an integer constant"))
                })?;
                let base = self.lower(a, None)?;
                self.power(base, a, n)
            }
        }
    }

    fn affine(&mut self, form: QuadForm, def: &Expr) -> Result<QuadForm, ExprError> {
        if form.is_affine() {
            Ok(form)
        } else {
            Ok(QuadForm::var(self.as_variable(form, def)?))
        }
    }

    fn power(&mut self, base: QuadForm, def: &Expr, n: i32) -> Result<QuadForm, ExprError> {
        match n {
            0 => Ok(QuadForm::constant(1.0)),
            1 => Ok(base),
            _ if n < 0 => {
                let bounds = propagate_bounds(def, &self.original_bounds)?;
                if bounds.contains(0.0) {
                    return Err(ExprError::DomainViolation(format!("negative power of `{def}` with bounds {bounds}")));
                }
                let v = self.as_variable(base, def)?;
                let recip_def = Expr::binary(BinaryOp::Div, Expr::Const(1.0), def.clone());
                let r = self.new_aux("q", &recip_def)?;
                let row = QuadForm::var(r).mul_affine(&QuadForm::var(v));
                let name = format!("def_{}", self.problem.variables[r].name);
                self.problem.omega.push(row.into_row(name, Sense::Eq, 1.0));
                self.power(QuadForm::var(r), &recip_def, -n)
            }
            2 => {
                let b = self.affine(base, def)?;
                Ok(b.mul_affine(&b))
            }
            _ => {
                // x^n = x^(n-1) * x with x^(n-1) lifted into an auxiliary.
                let b = self.affine(base, def)?;
                let lower_def = Expr::binary(BinaryOp::Pow, def.clone(), Expr::Const((n - 1) as f64));
                let lower = self.power(b.clone(), def, n - 1)?;
                let v = self.as_variable(lower, &lower_def)?;
                Ok(QuadForm::var(v).mul_affine(&b))
            }
        }
    }
}

/// Value of a variable-free subexpression.
fn constant_value(e: &Expr) -> Option<f64> {
    if e.dimension() == 0 {
        let v = e.eval(&[]);
        v.is_finite().then_some(v)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_examples() {
        let e = parse("sin(x1*x2)^2").unwrap();
        let want = Expr::binary(
            BinaryOp::Pow,
            Expr::unary(UnaryOp::Sin, Expr::binary(BinaryOp::Mul, Expr::Var(0), Expr::Var(1))),
            Expr::Const(2.0),
        );
        assert_eq!(e, want);
        assert_eq!(parse("x1").unwrap(), Expr::Var(0));
        assert_eq!(
            parse("exp(x1)+log(x2)").unwrap(),
            Expr::binary(BinaryOp::Add, Expr::unary(UnaryOp::Exp, Expr::Var(0)), Expr::unary(UnaryOp::Log, Expr::Var(1)))
        );
    }

    #[test]
    fn parse_precedence() {
        assert_eq!(parse("-x1^2").unwrap(), Expr::unary(UnaryOp::Neg, Expr::binary(BinaryOp::Pow, Expr::Var(0), Expr::Const(2.0))));
        assert_eq!(parse("2^3^2").unwrap().eval(&[]), 512.0);
        assert_eq!(parse("1 - 2 - 3").unwrap().eval(&[]), -4.0);
        assert_eq!(parse("8 / 2 / 2").unwrap().eval(&[]), 2.0);
        assert_eq!(parse("-3").unwrap(), Expr::Const(-3.0));
        assert_eq!(parse("-3^2").unwrap().eval(&[]), -9.0);
        assert_eq!(parse("2.5e-3*x1").unwrap().eval(&[2.0]), 5e-3);
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse("sin(x1") {
            Err(ExprError::Syntax { pos, .. }) => assert_eq!(pos, 6),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("x1 +"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("x1 x2"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("foo(x1)"), Err(ExprError::Syntax { .. }) | Err(ExprError::UnknownVariable(_))));
        assert!(matches!(parse("y + 1"), Err(ExprError::UnknownVariable(_))));
    }

    #[test]
    fn named_variables() {
        let names = vec!["flow".to_string(), "p".to_string()];
        let e = parse_with_names("exp(flow) - p", &names).unwrap();
        assert_eq!(e.eval(&[0.0, 3.0]), -2.0);
    }

    #[test]
    fn bounds_examples() {
        let bounds = [Interval::new(1.0, 2.0).unwrap(), Interval::new(0.0, PI / 4.0).unwrap()];
        let prod = parse("x1*x2").unwrap();
        let ib = propagate_bounds(&prod, &bounds).unwrap();
        assert_eq!((ib.lo, ib.hi), (0.0, PI / 2.0));
        let s = propagate_bounds(&parse("sin(x1*x2)").unwrap(), &bounds).unwrap();
        assert_eq!((s.lo, s.hi), (0.0, 1.0));
        assert_eq!(propagate_bounds(&Expr::Const(5.0), &[]).unwrap(), Interval::point(5.0));
        let full = [Interval::new(0.0, 2.0 * PI).unwrap()];
        let s = propagate_bounds(&parse("sin(x1)").unwrap(), &full).unwrap();
        assert_eq!((s.lo, s.hi), (-1.0, 1.0));
        let c = propagate_bounds(&parse("cos(x1)").unwrap(), &[Interval::new(0.5, 3.0).unwrap()]).unwrap();
        assert_eq!((c.lo, c.hi), (3.0f64.cos(), 0.5f64.cos()));
    }

    #[test]
    fn bounds_domain_violations() {
        let b = [Interval::new(-1.0, 1.0).unwrap()];
        assert!(matches!(propagate_bounds(&parse("log(x1)").unwrap(), &b), Err(ExprError::DomainViolation(_))));
        assert!(matches!(propagate_bounds(&parse("1/x1").unwrap(), &b), Err(ExprError::DomainViolation(_))));
        assert!(matches!(propagate_bounds(&parse("x1^-2").unwrap(), &b), Err(ExprError::DomainViolation(_))));
        let sq = propagate_bounds(&parse("x1^2").unwrap(), &b).unwrap();
        assert_eq!((sq.lo, sq.hi), (0.0, 1.0));
    }

    fn vars(bounds: &[(f64, f64)]) -> Vec<Variable> {
        bounds.iter().enumerate().map(|(i, (l, u))| Variable::continuous(format!("x{}", i + 1), *l, *u)).collect()
    }

    #[test]
    fn reformulate_worked_example() {
        let c = Constraint { expr: parse("sin(x1*x2)^2").unwrap(), sense: Sense::Le, rhs: 0.0 };
        let p = reformulate(&[c], &[], vars(&[(1.0, 2.0), (0.0, PI / 4.0)])).unwrap();
        // x~ = x1*x2, y = sin(x~), y^2 <= 0
        assert_eq!(p.variables.len(), 4);
        assert_eq!(p.univariate.len(), 1);
        let u = &p.univariate[0];
        assert_eq!(u.sense, Sense::Eq);
        assert_eq!(u.function, UnivariateFunction::sin());
        assert_eq!((u.domain.lo, u.domain.hi), (0.0, PI / 2.0));
        let yb = p.variables[u.y].bounds();
        assert_eq!((yb.lo, yb.hi), (0.0, 1.0));
        let def = p.omega.iter().find(|r| r.name.starts_with("def_")).unwrap();
        assert_eq!(def.sense, Sense::Eq);
        assert_eq!(def.quadratic, vec![(0, 1, 1.0)]);
        let top = p.omega.iter().find(|r| r.name == "c1").unwrap();
        assert_eq!(top.quadratic, vec![(u.y, u.y, 1.0)]);
        assert!(top.linear.is_empty());
    }

    #[test]
    fn reformulate_linear_passthrough() {
        let c = Constraint { expr: parse("2*x1 - 3*x2 + 1").unwrap(), sense: Sense::Le, rhs: 4.0 };
        let p = reformulate(&[c], &[(0, 1.0)], vars(&[(0.0, 1.0), (0.0, 1.0)])).unwrap();
        assert_eq!(p.variables.len(), 2);
        assert!(p.univariate.is_empty());
        assert_eq!(p.omega.len(), 1);
        assert_eq!(p.omega[0].linear, vec![(0, 2.0), (1, -3.0)]);
        assert_eq!(p.omega[0].rhs, 3.0);
    }

    #[test]
    fn reformulate_exp_le_variable() {
        let c = Constraint { expr: parse("exp(x1) - x2").unwrap(), sense: Sense::Le, rhs: 0.0 };
        let p = reformulate(&[c], &[(1, 1.0)], vars(&[(-1.0, 2.0), (0.0, 10.0)])).unwrap();
        assert_eq!(p.univariate.len(), 1);
        assert_eq!(p.univariate[0].sense, Sense::Le);
        let y = p.univariate[0].y;
        assert_eq!(p.omega[0].linear, vec![(1, -1.0), (y, 1.0)]);
        assert_eq!(p.omega[0].sense, Sense::Le);
    }

    #[test]
    fn affine_arguments_fold_into_the_function() {
        let c = Constraint { expr: parse("-cos(2*x1 + 1)").unwrap(), sense: Sense::Le, rhs: 0.5 };
        let p = reformulate(&[c], &[], vars(&[(0.0, 1.0)])).unwrap();
        let u = &p.univariate[0];
        assert_eq!(u.x, 0);
        assert_eq!(u.sense, Sense::Ge);
        assert_eq!((u.function.pre_scale, u.function.pre_shift), (2.0, 1.0));
        assert_eq!(p.variables.len(), 2);
    }

    #[test]
    fn reformulate_rejects_ambiguous_abs() {
        let c = Constraint { expr: parse("abs(x1)").unwrap(), sense: Sense::Le, rhs: 1.0 };
        assert!(matches!(reformulate(&[c], &[], vars(&[(-1.0, 1.0)])), Err(ExprError::UnsupportedOperation(_))));
        let c = Constraint { expr: parse("abs(x1)").unwrap(), sense: Sense::Le, rhs: 1.0 };
        let p = reformulate(&[c], &[], vars(&[(-3.0, -1.0)])).unwrap();
        assert_eq!(p.omega[0].linear, vec![(0, -1.0)]);
    }

    #[test]
    fn reformulate_rejects_log_of_nonpositive() {
        let c = Constraint { expr: parse("log(x1)").unwrap(), sense: Sense::Le, rhs: 1.0 };
        assert!(matches!(reformulate(&[c], &[], vars(&[(-1.0, 1.0)])), Err(ExprError::DomainViolation(_))));
    }

    #[test]
    fn envelope_round_trip() {
        let text = r#"{
            "variables": [{"name": "x", "lb": 0, "ub": 6.283185307179586}, {"name": "t", "lb": -2, "ub": 2}],
            "objective": {"coeffs": {"t": 1}},
            "constraints": [{"expr": "sin(x) - t", "rhs": 0}]
        }"#;
        let env = ProblemEnvelope::from_json(text).unwrap();
        let p = env.reformulate().unwrap();
        assert_eq!(p.univariate.len(), 1);
        assert_eq!(p.objective, vec![(1, 1.0)]);
        let back: ProblemEnvelope = serde_json::from_str(&serde_json::to_string(&env).unwrap()).unwrap();
        assert_eq!(back, env);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        fn arb_expr() -> impl Strategy<Value = Expr> {
            let leaf = prop_oneof![
                (0usize..3).prop_map(Expr::Var),
                (-3.0..3.0f64).prop_map(|c| Expr::Const((c * 4.0).round() / 4.0)),
            ];
            leaf.prop_recursive(4, 24, 2, |inner| {
                prop_oneof![
                    (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::binary(BinaryOp::Add, a, b)),
                    (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::binary(BinaryOp::Mul, a, b)),
                    (inner.clone(), 2..4i32).prop_map(|(a, n)| Expr::binary(BinaryOp::Pow, a, Expr::Const(n as f64))),
                    (inner.clone(), 1.0..4.0f64).prop_map(|(a, d)| Expr::binary(BinaryOp::Div, a, Expr::Const(d))),
                    inner.clone().prop_map(|a| Expr::unary(UnaryOp::Neg, a)),
                    inner.clone().prop_map(|a| Expr::unary(UnaryOp::Sin, a)),
                    inner.clone().prop_map(|a| Expr::unary(UnaryOp::Cos, a)),
                    inner.clone().prop_map(|a| Expr::unary(UnaryOp::Exp, Expr::unary(UnaryOp::Sin, a))),
                    inner.clone().prop_map(|a| Expr::unary(
                        UnaryOp::Log,
                        Expr::binary(BinaryOp::Add, Expr::binary(BinaryOp::Pow, a, Expr::Const(2.0)), Expr::Const(1.0)),
                    )),
                    inner.prop_map(|a| Expr::unary(UnaryOp::Abs, a)),
                ]
            })
        }

        fn arb_boxes() -> impl Strategy<Value = Vec<Interval>> {
            proptest::collection::vec((-2.0..2.0f64, 0.0..2.0f64), 3)
                .prop_map(|v| v.into_iter().map(|(lo, w)| Interval::new(lo, lo + w).unwrap()).collect())
        }

        fn random_point(rng: &mut ChaCha8Rng, boxes: &[Interval]) -> Vec<f64> {
            boxes.iter().map(|b| if b.is_degenerate() { b.lo } else { rng.gen_range(b.lo..=b.hi) }).collect()
        }

        proptest! {
            #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

            #[test]
            fn print_parse_round_trip(e in arb_expr()) {
                let printed = e.to_string();
                let back = parse(&printed).unwrap();
                prop_assert_eq!(&back, &e);
                prop_assert_eq!(back.to_string(), printed);
            }

            #[test]
            fn propagated_bounds_contain_values(e in arb_expr(), boxes in arb_boxes(), seed in any::<u64>()) {
                if let Ok(iv) = propagate_bounds(&e, &boxes) {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    for _ in 0..10_000 {
                        let x = random_point(&mut rng, &boxes);
                        let v = e.eval(&x);
                        prop_assert!(iv.lo <= v && v <= iv.hi, "{} at {:?} = {} outside {}", e, x, v, iv);
                    }
                }
            }

            #[test]
            fn reformulation_agrees_with_original(
                e in arb_expr(), boxes in arb_boxes(), rhs in -2.0..2.0f64, sense_ix in 0..3usize, seed in any::<u64>(),
            ) {
                let sense = [Sense::Le, Sense::Ge, Sense::Eq][sense_ix];
                let variables = boxes
                    .iter()
                    .enumerate()
                    .map(|(i, b)| Variable::continuous(format!("x{}", i + 1), b.lo, b.hi))
                    .collect();
                let c = Constraint { expr: e.clone(), sense, rhs };
                let Ok(p) = reformulate(&[c], &[], variables) else { return Ok(()) };
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let tol = 1e-9;
                for _ in 0..200 {
                    let x = random_point(&mut rng, &boxes);
                    let lhs = e.eval(&x);
                    // Skip points whose status is decided by rounding.
                    if (lhs - rhs).abs() < 1e-6 && sense != Sense::Eq {
                        continue;
                    }
                    let original = sense.holds(lhs, rhs, tol);
                    let lifted = p.lift(&x);
                    prop_assert_eq!(p.is_feasible(&lifted, tol), original, "{} {} {} at {:?}", e, sense.symbol(), rhs, x);
                }
            }
        }
    }
}
