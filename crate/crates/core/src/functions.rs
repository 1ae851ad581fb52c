//! Univariate elementary functions and closed intervals.
//!
//! A [`UnivariateFunction`] is one of `sin`, `cos`, `exp`, `ln` wrapped in an
//! affine pre-composition, an affine post-composition and an optional sign
//! flip:
//!
//! ```text
//! f(x) = s * (post_scale * g(pre_scale * x + pre_shift) + post_shift),  s = -1 if negated
//! ```

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim1d::{self, Objective};

/// Relative inflation applied to Lipschitz bounds so they stay upper bounds
/// under floating point.
pub const LIPSCHITZ_INFLATION: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunctionError {
    #[error("ln argument {arg} is not positive (x = {x})")]
    Domain { x: f64, arg: f64 },
    #[error("interval [{lo}, {hi}] leaves the validity region of {function}")]
    IntervalDomain { function: String, lo: f64, hi: f64 },
    #[error("derivative order {0} is not supported (use 1, 2 or 3)")]
    UnsupportedOrder(u8),
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("maximisation failed: {0}")]
    Optim(#[from] optim1d::OptimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionKind {
    Sin,
    Cos,
    Exp,
    Ln,
}

impl FunctionKind {
    pub fn name(self) -> &'static str {
        match self {
            FunctionKind::Sin => "sin",
            FunctionKind::Cos => "cos",
            FunctionKind::Exp => "exp",
            FunctionKind::Ln => "ln",
        }
    }

    pub fn is_periodic(self) -> bool {
        matches!(self, FunctionKind::Sin | FunctionKind::Cos)
    }

    /// Value and first three derivatives of the bare kind at `u`.
    fn jet(self, u: f64) -> [f64; 4] {
        match self {
            FunctionKind::Sin => {
                let (s, c) = u.sin_cos();
                [s, c, -s, -c]
            }
            FunctionKind::Cos => {
                let (s, c) = u.sin_cos();
                [c, -s, -c, s]
            }
            FunctionKind::Exp => {
                let e = u.exp();
                [e; 4]
            }
            FunctionKind::Ln => {
                let r = 1.0 / u;
                [u.ln(), r, -r * r, 2.0 * r * r * r]
            }
        }
    }
}

impl fmt::Display for FunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FunctionKind {
    type Err = FunctionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sin" => Ok(FunctionKind::Sin),
            "cos" => Ok(FunctionKind::Cos),
            "exp" => Ok(FunctionKind::Exp),
            "ln" | "log" => Ok(FunctionKind::Ln),
            other => Err(FunctionError::UnknownFunction(other.to_string())),
        }
    }
}

/// Closed interval `[lo, hi]` with `lo <= hi`, both finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, FunctionError> {
        if lo.is_finite() && hi.is_finite() && lo <= hi {
            Ok(Interval { lo, hi })
        } else {
            Err(FunctionError::InvalidInterval { lo, hi })
        }
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    /// True when the interval has no interior.
    pub fn is_degenerate(&self) -> bool {
        self.hi <= self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Evenly spaced samples including both endpoints; `n >= 2`.
    pub fn samples(&self, n: usize) -> impl Iterator<Item = f64> + '_ {
        let n = n.max(2);
        let h = self.len() / (n - 1) as f64;
        (0..n).map(move |i| if i + 1 == n { self.hi } else { self.lo + i as f64 * h })
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnivariateFunction {
    pub kind: FunctionKind,
    pub pre_scale: f64,
    pub pre_shift: f64,
    pub post_scale: f64,
    pub post_shift: f64,
    pub negated: bool,
}

impl UnivariateFunction {
    pub fn new(kind: FunctionKind) -> Self {
        UnivariateFunction {
            kind,
            pre_scale: 1.0,
            pre_shift: 0.0,
            post_scale: 1.0,
            post_shift: 0.0,
            negated: false,
        }
    }

    pub fn sin() -> Self {
        Self::new(FunctionKind::Sin)
    }

    pub fn cos() -> Self {
        Self::new(FunctionKind::Cos)
    }

    pub fn exp() -> Self {
        Self::new(FunctionKind::Exp)
    }

    pub fn ln() -> Self {
        Self::new(FunctionKind::Ln)
    }

    /// The constant zero function, expressed as `0 * sin(x)`.
    pub fn zero() -> Self {
        UnivariateFunction { post_scale: 0.0, ..Self::sin() }
    }

    /// `x ↦ self(scale * x + shift)`.
    pub fn with_pre(mut self, scale: f64, shift: f64) -> Self {
        self.pre_shift += self.pre_scale * shift;
        self.pre_scale *= scale;
        self
    }

    /// `x ↦ scale * self(x) + shift`.
    pub fn with_post(mut self, scale: f64, shift: f64) -> Self {
        let sign = self.sign();
        self.post_scale *= scale;
        self.post_shift = scale * self.post_shift + sign * shift;
        self
    }

    fn sign(&self) -> f64 {
        if self.negated {
            -1.0
        } else {
            1.0
        }
    }

    fn argument(&self, x: f64) -> f64 {
        self.pre_scale * x + self.pre_shift
    }

    fn arg_valid(&self, u: f64) -> bool {
        match self.kind {
            FunctionKind::Ln => u > 0.0 || self.post_scale == 0.0,
            _ => true,
        }
    }

    /// True when `x` lies inside the validity region.
    pub fn is_valid_at(&self, x: f64) -> bool {
        x.is_finite() && self.arg_valid(self.argument(x))
    }

    /// Checks that the whole interval lies inside the validity region.
    pub fn check_interval(&self, interval: &Interval) -> Result<(), FunctionError> {
        if self.is_valid_at(interval.lo) && self.is_valid_at(interval.hi) {
            Ok(())
        } else {
            Err(FunctionError::IntervalDomain {
                function: self.to_string(),
                lo: interval.lo,
                hi: interval.hi,
            })
        }
    }

    /// Unchecked value; `NaN` outside the validity region.
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        if self.post_scale == 0.0 {
            return self.sign() * self.post_shift;
        }
        let u = self.argument(x);
        let g = match self.kind {
            FunctionKind::Sin => u.sin(),
            FunctionKind::Cos => u.cos(),
            FunctionKind::Exp => u.exp(),
            FunctionKind::Ln => {
                if u > 0.0 {
                    u.ln()
                } else {
                    f64::NAN
                }
            }
        };
        self.sign() * (self.post_scale * g + self.post_shift)
    }

    /// Unchecked derivative of order 1, 2 or 3; `NaN` outside the validity region.
    #[inline]
    pub fn deriv(&self, x: f64, order: usize) -> f64 {
        debug_assert!((1..=3).contains(&order));
        if self.post_scale == 0.0 {
            return 0.0;
        }
        let u = self.argument(x);
        if !self.arg_valid(u) {
            return f64::NAN;
        }
        let g = self.kind.jet(u)[order];
        self.sign() * self.post_scale * self.pre_scale.powi(order as i32) * g
    }

    pub fn evaluate(&self, x: f64) -> Result<f64, FunctionError> {
        self.checked(x)?;
        Ok(self.value(x))
    }

    pub fn derivative(&self, x: f64, order: u8) -> Result<f64, FunctionError> {
        if !(1..=3).contains(&order) {
            return Err(FunctionError::UnsupportedOrder(order));
        }
        self.checked(x)?;
        Ok(self.deriv(x, order as usize))
    }

    fn checked(&self, x: f64) -> Result<(), FunctionError> {
        if self.is_valid_at(x) {
            Ok(())
        } else {
            Err(FunctionError::Domain { x, arg: self.argument(x) })
        }
    }

    /// Returns `-f`. Underestimating `-f` and negating the result overestimates `f`.
    pub fn flip_for_overestimation(&self) -> Self {
        UnivariateFunction { negated: !self.negated, ..*self }
    }

    /// Points strictly inside `interval` where `f''` changes sign, ascending.
    pub fn inflection_points(&self, interval: &Interval) -> Vec<f64> {
        let offset = match self.kind {
            FunctionKind::Sin => 0.0,
            FunctionKind::Cos => std::f64::consts::FRAC_PI_2,
            FunctionKind::Exp | FunctionKind::Ln => return Vec::new(),
        };
        if self.post_scale == 0.0 || self.pre_scale == 0.0 {
            return Vec::new();
        }
        let (u0, u1) = (self.argument(interval.lo), self.argument(interval.hi));
        let (ulo, uhi) = (u0.min(u1), u0.max(u1));
        let first = ((ulo - offset) / std::f64::consts::PI).floor() as i64 + 1;
        let mut out: Vec<f64> = (first..)
            .map(|k| offset + k as f64 * std::f64::consts::PI)
            .take_while(|&u| u < uhi)
            .map(|u| (u - self.pre_shift) / self.pre_scale)
            .filter(|&x| x > interval.lo && x < interval.hi)
            .collect();
        out.sort_by(f64::total_cmp);
        out
    }

    /// Upper bound on `sup |f'|` over `interval`, inflated by
    /// [`LIPSCHITZ_INFLATION`] relative.
    pub fn lipschitz_bound(&self, interval: &Interval) -> Result<f64, FunctionError> {
        self.check_interval(interval)?;
        let n = optim1d::default_grid(interval);
        let up = optim1d::global_max(&SignedSlope { f: self, sign: 1.0 }, interval, n)?;
        let down = optim1d::global_max(&SignedSlope { f: self, sign: -1.0 }, interval, n)?;
        let l = up.value.max(down.value).max(0.0);
        Ok(l * (1.0 + LIPSCHITZ_INFLATION))
    }
}

/// `±f'` as a maximisation objective.
struct SignedSlope<'a> {
    f: &'a UnivariateFunction,
    sign: f64,
}

impl Objective for SignedSlope<'_> {
    fn value(&self, x: f64) -> f64 {
        self.sign * self.f.deriv(x, 1)
    }
    fn slope(&self, x: f64) -> f64 {
        self.sign * self.f.deriv(x, 2)
    }
    fn curvature(&self, x: f64) -> f64 {
        self.sign * self.f.deriv(x, 3)
    }
}

impl fmt::Display for UnivariateFunction {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.post_scale == 0.0 {
            return write!(out, "{}", self.sign() * self.post_shift);
        }
        let arg = match (self.pre_scale, self.pre_shift) {
            (s, t) if s == 1.0 && t == 0.0 => "x".to_string(),
            (s, t) if t == 0.0 => format!("{s}*x"),
            (s, t) if s == 1.0 => format!("x + {t}"),
            (s, t) => format!("{s}*x + {t}"),
        };
        let mut body = format!("{}({})", self.kind, arg);
        if self.post_scale != 1.0 {
            body = format!("{}*{}", self.post_scale, body);
        }
        if self.post_shift != 0.0 {
            body = format!("{} + {}", body, self.post_shift);
        }
        if self.negated {
            body = format!("-({body})");
        }
        out.write_str(&body)
    }
}

/// Parses the CLI function names: `sin`, `cos`, `exp`, `ln`, `const0`, and a
/// leading `-` for negation.
pub fn parse_function(name: &str) -> Result<UnivariateFunction, FunctionError> {
    let name = name.trim();
    if let Some(rest) = name.strip_prefix('-') {
        return parse_function(rest).map(|f| f.flip_for_overestimation());
    }
    if name == "const0" || name == "zero" {
        return Ok(UnivariateFunction::zero());
    }
    name.parse::<FunctionKind>().map(UnivariateFunction::new)
}

/// Parses a real literal that may use `pi` and `e`, e.g. `-pi/2`, `3*pi/2`,
/// `e^-4`, `2pi`, `0.5`.
pub fn parse_real(text: &str) -> Result<f64, String> {
    let t = text.trim().replace(' ', "");
    if t.is_empty() {
        return Err("empty number".into());
    }
    if let Ok(v) = t.parse::<f64>() {
        return Ok(v);
    }
    if let Some(rest) = t.strip_prefix('-') {
        return parse_real(rest).map(|v| -v);
    }
    if let Some(rest) = t.strip_prefix('+') {
        return parse_real(rest);
    }
    if let Some((num, den)) = t.rsplit_once('/') {
        return Ok(parse_real(num)? / parse_real(den)?);
    }
    if let Some((l, r)) = t.split_once('*') {
        return Ok(parse_real(l)? * parse_real(r)?);
    }
    if let Some(exponent) = t.strip_prefix("e^") {
        return Ok(parse_real(exponent)?.exp());
    }
    if t == "pi" {
        return Ok(PI);
    }
    if t == "e" {
        return Ok(std::f64::consts::E);
    }
    if let Some(coef) = t.strip_suffix("pi") {
        return Ok(parse_real(coef)? * PI);
    }
    Err(format!("cannot parse number `{text}`"))
}

/// Parses `lo:hi` with [`parse_real`] literals.
pub fn parse_interval(text: &str) -> Result<Interval, String> {
    let (lo, hi) = text
        .split_once(':')
        .ok_or_else(|| format!("domain `{text}` must look like lo:hi"))?;
    Interval::new(parse_real(lo)?, parse_real(hi)?).map_err(|e| e.to_string())
}
