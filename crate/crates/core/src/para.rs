//! Global one-sided parabolic (PARA) approximations.
//!
//! A PARA underestimation of `f` on `D` is a list of parabolas `p_k`, each
//! attached to a piece `D_k = [t_{k-1}, t_k]`, such that
//!
//! * `p_k <= f` on all of `D` (every parabola is a global underestimator),
//! * `p_k >= f - eps` on `D_k`,
//! * the pieces cover `D`.
//!
//! The envelope `max_k p_k` then satisfies `f - eps <= max_k p_k <= f` on `D`.
//!
//! Pieces are computed left to right ([`outer_loop`]). For a fixed piece the
//! parabola is pinned to `f - eps` at both piece endpoints, which leaves only
//! the quadratic coefficient `a` free; [`inner_loop`] then tightens bounds on
//! `a` using the violators found by [`inner_maxima`] until the parabola is
//! feasible or the bounds cross.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functions::{FunctionError, Interval, UnivariateFunction};
use crate::optim1d::{self, MaxResult, Objective, OptimError};

/// Absolute tolerance on `v_max <= 0` in the inner loop.
pub const FEASIBILITY_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_INNER_ITER: usize = 200;
/// Fraction of the current piece kept when the outer loop shrinks it.
pub const DEFAULT_LAMBDA: f64 = 0.9;
/// Relative slack used by [`verify`].
pub const VERIFY_SLACK: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParaError {
    #[error(transparent)]
    Function(#[from] FunctionError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("point {x} is too close to a piece endpoint of [{t_lo}, {t_hi}]")]
    DegenerateDenominator { x: f64, t_lo: f64, t_hi: f64 },
    #[error("piece [{t_lo}, {t_hi}] is too short to pin a parabola")]
    DegenerateInterval { t_lo: f64, t_hi: f64 },
    #[error("domain {0} has zero length")]
    DegenerateDomain(Interval),
    #[error("piece starting at {t_lo} shrank below the minimum length without a feasible parabola")]
    MinimumIntervalReached { t_lo: f64, t_hi: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Parabola {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Parabola {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Parabola { a, b, c }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.a * x + self.b) * x + self.c
    }

    pub fn negated(&self) -> Self {
        Parabola { a: -self.a, b: -self.b, c: -self.c }
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite()
    }
}

/// Something that evaluates like a parabola.
pub trait Quadratic {
    fn value(&self, x: f64) -> f64;
    fn slope(&self, x: f64) -> f64;
    fn curvature(&self) -> f64;
}

impl Quadratic for Parabola {
    fn value(&self, x: f64) -> f64 {
        self.eval(x)
    }
    fn slope(&self, x: f64) -> f64 {
        2.0 * self.a * x + self.b
    }
    fn curvature(&self) -> f64 {
        2.0 * self.a
    }
}

/// Parabola pinned to `f - eps` at `t_lo` and `t_hi`, held in the form
/// `a (x - t_lo)(x - t_hi) + chord(x) - eps`, which stays accurate on short
/// pieces far from the origin.
#[derive(Debug, Clone, Copy)]
struct PinnedParabola {
    a: f64,
    t_lo: f64,
    t_hi: f64,
    f_lo: f64,
    f_hi: f64,
    slope: f64,
    eps: f64,
}

impl PinnedParabola {
    fn new(a: f64, f: &UnivariateFunction, t_lo: f64, t_hi: f64, eps: f64) -> Self {
        let (f_lo, f_hi) = (f.value(t_lo), f.value(t_hi));
        PinnedParabola { a, t_lo, t_hi, f_lo, f_hi, slope: (f_hi - f_lo) / (t_hi - t_lo), eps }
    }

    #[inline]
    fn chord(&self, x: f64) -> f64 {
        if x - self.t_lo <= self.t_hi - x {
            self.f_lo + self.slope * (x - self.t_lo)
        } else {
            self.f_hi + self.slope * (x - self.t_hi)
        }
    }

    fn coefficients(&self) -> Parabola {
        let b = self.slope - self.a * (self.t_hi + self.t_lo);
        let c = self.f_lo - self.eps + self.t_lo * (self.a * self.t_hi - self.slope);
        Parabola { a: self.a, b, c }
    }
}

impl Quadratic for PinnedParabola {
    fn value(&self, x: f64) -> f64 {
        self.a * (x - self.t_lo) * (x - self.t_hi) + self.chord(x) - self.eps
    }
    fn slope(&self, x: f64) -> f64 {
        self.a * (2.0 * x - self.t_lo - self.t_hi) + self.slope
    }
    fn curvature(&self) -> f64 {
        2.0 * self.a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Every parabola lies below `f`.
    Under,
    /// Every parabola lies above `f`.
    Over,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Under => "under",
            Side::Over => "over",
        }
    }

    fn sign(self) -> f64 {
        match self {
            Side::Under => 1.0,
            Side::Over => -1.0,
        }
    }
}

impl std::str::FromStr for Side {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "under" | "below" => Ok(Side::Under),
            "over" | "above" => Ok(Side::Over),
            other => Err(format!("unknown side `{other}` (use under/over)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PieceRecord", into = "PieceRecord")]
pub struct ParaPiece {
    pub parabola: Parabola,
    pub domain: Interval,
}

#[derive(Serialize, Deserialize)]
struct PieceRecord {
    a: f64,
    b: f64,
    c: f64,
    t_lo: f64,
    t_hi: f64,
}

impl From<PieceRecord> for ParaPiece {
    fn from(r: PieceRecord) -> Self {
        ParaPiece { parabola: Parabola::new(r.a, r.b, r.c), domain: Interval { lo: r.t_lo, hi: r.t_hi } }
    }
}

impl From<ParaPiece> for PieceRecord {
    fn from(p: ParaPiece) -> Self {
        PieceRecord { a: p.parabola.a, b: p.parabola.b, c: p.parabola.c, t_lo: p.domain.lo, t_hi: p.domain.hi }
    }
}

/// Serialises as the look-up-table record
/// `{function, domain, epsilon, side, lambda, pieces: [{a, b, c, t_lo, t_hi}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaApproximation {
    pub function: UnivariateFunction,
    pub domain: Interval,
    pub epsilon: f64,
    pub side: Side,
    pub lambda: Option<f64>,
    pub pieces: Vec<ParaPiece>,
}

impl ParaApproximation {
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn parabolas(&self) -> impl Iterator<Item = &Parabola> {
        self.pieces.iter().map(|p| &p.parabola)
    }

    /// `max_k p_k(x)` for the under side, `min_k p_k(x)` for the over side.
    pub fn envelope(&self, x: f64) -> f64 {
        let s = self.side.sign();
        s * self.parabolas().map(|p| s * p.eval(x)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// The same approximation seen from the other side of `-f`.
    pub fn negated(&self) -> Self {
        ParaApproximation {
            function: self.function.flip_for_overestimation(),
            side: match self.side {
                Side::Under => Side::Over,
                Side::Over => Side::Under,
            },
            pieces: self
                .pieces
                .iter()
                .map(|p| ParaPiece { parabola: p.parabola.negated(), domain: p.domain })
                .collect(),
            ..self.clone()
        }
    }

    /// Checks the structural invariants: pieces nonempty, contiguous and
    /// covering the domain, coefficients finite.
    pub fn check_structure(&self) -> Result<(), String> {
        let first = self.pieces.first().ok_or("no pieces")?;
        if first.domain.lo != self.domain.lo {
            return Err(format!("first piece starts at {} instead of {}", first.domain.lo, self.domain.lo));
        }
        let last = self.pieces.last().unwrap();
        if last.domain.hi != self.domain.hi {
            return Err(format!("last piece ends at {} instead of {}", last.domain.hi, self.domain.hi));
        }
        for (k, w) in self.pieces.windows(2).enumerate() {
            if w[0].domain.hi != w[1].domain.lo {
                return Err(format!("pieces {k} and {} are not contiguous", k + 1));
            }
        }
        for (k, p) in self.pieces.iter().enumerate() {
            if p.domain.is_degenerate() {
                return Err(format!("piece {k} is empty"));
            }
            if !p.parabola.is_finite() {
                return Err(format!("piece {k} has non-finite coefficients"));
            }
        }
        Ok(())
    }
}

/// Bounds on the quadratic coefficient `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ABounds {
    pub lower: f64,
    pub upper: f64,
}

impl ABounds {
    pub fn is_feasible(&self) -> bool {
        self.lower <= self.upper
    }
}

fn check_denominator(t_lo: f64, t_hi: f64, x: f64) -> Result<(), ParaError> {
    let guard = 1e-12 * (t_hi - t_lo);
    if (x - t_lo).abs() < guard || (x - t_hi).abs() < guard {
        Err(ParaError::DegenerateDenominator { x, t_lo, t_hi })
    } else {
        Ok(())
    }
}

/// Coefficient at which the pinned parabola meets `f(x) + shift` at `x`:
/// `(f(x) + shift - chord(x)) / ((x - t_lo)(x - t_hi))`.
fn crossing_coefficient(f: &UnivariateFunction, t_lo: f64, t_hi: f64, shift: f64, x: f64) -> f64 {
    let pinned = PinnedParabola::new(0.0, f, t_lo, t_hi, 0.0);
    (f.value(x) + shift - pinned.chord(x)) / ((x - t_lo) * (x - t_hi))
}

/// `A(x)`: for `x` outside `[t_lo, t_hi]`, `p(x) <= f(x)` iff `a <= A(x)`;
/// for `x` strictly inside, iff `a >= A(x)`.
pub fn bound_a(f: &UnivariateFunction, t_lo: f64, t_hi: f64, eps: f64, x: f64) -> Result<f64, ParaError> {
    check_pinned_interval(t_lo, t_hi)?;
    check_denominator(t_lo, t_hi, x)?;
    Ok(crossing_coefficient(f, t_lo, t_hi, eps, x))
}

/// `B(x)`: for `x` strictly inside `[t_lo, t_hi]`, `p(x) >= f(x) - eps` iff `a <= B(x)`.
pub fn bound_b(f: &UnivariateFunction, t_lo: f64, t_hi: f64, x: f64) -> Result<f64, ParaError> {
    check_pinned_interval(t_lo, t_hi)?;
    check_denominator(t_lo, t_hi, x)?;
    Ok(crossing_coefficient(f, t_lo, t_hi, 0.0, x))
}

/// Upper bound on `a` from the slopes of `f` at both piece endpoints (the
/// limits of `B` at the endpoints).
pub fn initial_upper_a(f: &UnivariateFunction, t_lo: f64, t_hi: f64) -> Result<f64, ParaError> {
    check_pinned_interval(t_lo, t_hi)?;
    let (f_lo, f_hi) = (f.evaluate(t_lo)?, f.evaluate(t_hi)?);
    let (d_lo, d_hi) = (f.derivative(t_lo, 1)?, f.derivative(t_hi, 1)?);
    let len = t_hi - t_lo;
    let slope = (f_hi - f_lo) / len;
    let left = (slope - d_lo) / len;
    let right = (d_hi - slope) / len;
    Ok(left.min(right))
}

fn check_pinned_interval(t_lo: f64, t_hi: f64) -> Result<(), ParaError> {
    if t_hi - t_lo < 1e-12 * (1.0 + t_hi.abs()) || !t_lo.is_finite() || !t_hi.is_finite() {
        Err(ParaError::DegenerateInterval { t_lo, t_hi })
    } else {
        Ok(())
    }
}

/// Solves the 2x2 system `p(t_lo) = f(t_lo) - eps`, `p(t_hi) = f(t_hi) - eps`
/// for `(b, c)` given `a`.
pub fn solve_bc(a: f64, t_lo: f64, t_hi: f64, f: &UnivariateFunction, eps: f64) -> Result<(f64, f64), ParaError> {
    check_pinned_interval(t_lo, t_hi)?;
    let d1 = f.evaluate(t_lo)? - eps - a * t_lo * t_lo;
    let d2 = f.evaluate(t_hi)? - eps - a * t_hi * t_hi;
    // [t_lo 1; t_hi 1] (b, c)^T = (d1, d2)^T
    let det = t_lo - t_hi;
    let b = (d1 - d2) / det;
    let c = (t_lo * d2 - t_hi * d1) / det;
    Ok((b, c))
}

/// The same parabola as [`solve_bc`], obtained by expanding the form
/// parameterised in `a`.
pub fn parabola_from_a(a: f64, t_lo: f64, t_hi: f64, f: &UnivariateFunction, eps: f64) -> Result<Parabola, ParaError> {
    check_pinned_interval(t_lo, t_hi)?;
    f.evaluate(t_lo)?;
    f.evaluate(t_hi)?;
    Ok(PinnedParabola::new(a, f, t_lo, t_hi, eps).coefficients())
}

struct Excess<'a, Q: Quadratic> {
    p: &'a Q,
    f: &'a UnivariateFunction,
}

impl<Q: Quadratic> Objective for Excess<'_, Q> {
    fn value(&self, x: f64) -> f64 {
        self.p.value(x) - self.f.value(x)
    }
    fn slope(&self, x: f64) -> f64 {
        self.p.slope(x) - self.f.deriv(x, 1)
    }
    fn curvature(&self, _x: f64) -> f64 {
        self.p.curvature() - self.f.deriv(_x, 2)
    }
}

struct Shortfall<'a, Q: Quadratic> {
    p: &'a Q,
    f: &'a UnivariateFunction,
    eps: f64,
}

impl<Q: Quadratic> Objective for Shortfall<'_, Q> {
    fn value(&self, x: f64) -> f64 {
        self.f.value(x) - self.p.value(x) - self.eps
    }
    fn slope(&self, x: f64) -> f64 {
        self.f.deriv(x, 1) - self.p.slope(x)
    }
    fn curvature(&self, x: f64) -> f64 {
        self.f.deriv(x, 2) - self.p.curvature()
    }
}

/// The three maxima checked by the inner loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerMaxima {
    /// `max (p - f)` over `D \ D_loc`; empty when `D_loc = D`.
    pub outside: MaxResult,
    /// `max (p - f)` over `int(D_loc)`.
    pub inside_under: MaxResult,
    /// `max (f - p - eps)` over `int(D_loc)`.
    pub inside_eps: MaxResult,
    pub v_max: f64,
}

pub fn inner_maxima<Q: Quadratic>(
    p: &Q,
    f: &UnivariateFunction,
    domain: &Interval,
    local: &Interval,
    eps: f64,
) -> Result<InnerMaxima, ParaError> {
    if !domain.contains_interval(local) {
        return Err(ParaError::InvalidInput(format!("local domain {local} is not inside {domain}")));
    }
    let excess = Excess { p, f };
    let mut outside = MaxResult::empty();
    for part in [Interval { lo: domain.lo, hi: local.lo }, Interval { lo: local.hi, hi: domain.hi }] {
        if part.is_degenerate() {
            continue;
        }
        let r = optim1d::global_max(&excess, &part, optim1d::default_grid(&part))?;
        outside.iterations += r.iterations;
        if r.value > outside.value {
            outside = MaxResult { iterations: outside.iterations, ..r };
        }
    }
    let n = optim1d::default_grid(local);
    let inside_under = optim1d::global_max_open(&excess, local, n)?;
    let inside_eps = optim1d::global_max_open(&Shortfall { p, f, eps }, local, n)?;
    let v_max = outside.value.max(inside_under.value).max(inside_eps.value);
    Ok(InnerMaxima { outside, inside_under, inside_eps, v_max })
}

#[derive(Debug, Clone, PartialEq)]
pub enum InnerOutcome {
    Feasible(Parabola),
    /// The bounds on `a` crossed.
    Infeasible(ABounds),
    /// Neither outcome within the iteration budget, or the bounds stopped
    /// moving. Callers treat this as infeasible.
    IterationLimit(ABounds),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerReport {
    pub outcome: InnerOutcome,
    /// The coefficient `a_l` tried in each iteration.
    pub a_history: Vec<f64>,
}

impl InnerReport {
    pub fn parabola(&self) -> Option<Parabola> {
        match self.outcome {
            InnerOutcome::Feasible(p) => Some(p),
            _ => None,
        }
    }
}

/// Searches a parabola with `p >= f - eps` on `local` and `p <= f` on `domain`,
/// pinned to `f - eps` at both ends of `local`.
pub fn inner_loop(
    f: &UnivariateFunction,
    domain: &Interval,
    local: &Interval,
    eps: f64,
    max_iter: usize,
) -> Result<InnerReport, ParaError> {
    if !(eps > 0.0) {
        return Err(ParaError::InvalidInput(format!("epsilon must be positive, got {eps}")));
    }
    if !domain.contains_interval(local) {
        return Err(ParaError::InvalidInput(format!("local domain {local} is not inside {domain}")));
    }
    f.check_interval(domain)?;
    let (t_lo, t_hi) = (local.lo, local.hi);
    let mut bounds = ABounds { lower: f64::NEG_INFINITY, upper: initial_upper_a(f, t_lo, t_hi)? };
    let mut a_history = Vec::new();

    for _ in 0..max_iter {
        let a = bounds.upper;
        a_history.push(a);
        let p = PinnedParabola::new(a, f, t_lo, t_hi, eps);
        let m = inner_maxima(&p, f, domain, local, eps)?;
        if m.v_max <= FEASIBILITY_TOL {
            return Ok(InnerReport { outcome: InnerOutcome::Feasible(p.coefficients()), a_history });
        }

        let before = bounds;
        if m.outside.value > FEASIBILITY_TOL {
            bounds.upper = bounds.upper.min(crossing_coefficient(f, t_lo, t_hi, eps, m.outside.argmax));
        }
        if m.inside_eps.value > FEASIBILITY_TOL {
            bounds.upper = bounds.upper.min(crossing_coefficient(f, t_lo, t_hi, 0.0, m.inside_eps.argmax));
        }
        if m.inside_under.value > FEASIBILITY_TOL {
            bounds.lower = bounds.lower.max(crossing_coefficient(f, t_lo, t_hi, eps, m.inside_under.argmax));
        }

        if bounds.lower > bounds.upper - 1e-12 * (1.0 + bounds.upper.abs()) {
            return Ok(InnerReport { outcome: InnerOutcome::Infeasible(bounds), a_history });
        }
        if bounds == before || bounds.upper.is_nan() {
            break;
        }
    }
    Ok(InnerReport { outcome: InnerOutcome::IterationLimit(bounds), a_history })
}

/// Computes an underestimating PARA approximation of `f` on `domain`,
/// placing pieces left to right. A rejected piece `[t_prev, t]` is shrunk to
/// `[t_prev, (1 - lambda) t_prev + lambda t]`.
pub fn outer_loop(
    f: &UnivariateFunction,
    domain: &Interval,
    eps: f64,
    lambda: f64,
) -> Result<ParaApproximation, ParaError> {
    outer_loop_within(f, domain, domain, eps, lambda)
}

/// [`outer_loop`] with pieces covering `cover` while every parabola stays
/// below `f` on the larger `global` interval.
pub fn outer_loop_within(
    f: &UnivariateFunction,
    global: &Interval,
    cover: &Interval,
    eps: f64,
    lambda: f64,
) -> Result<ParaApproximation, ParaError> {
    if !global.contains_interval(cover) {
        return Err(ParaError::InvalidInput(format!("{cover} is not inside {global}")));
    }
    f.check_interval(global)?;
    let domain = cover;
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(ParaError::InvalidInput(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    if !(eps > 0.0) {
        return Err(ParaError::InvalidInput(format!("epsilon must be positive, got {eps}")));
    }
    if domain.is_degenerate() {
        return Err(ParaError::DegenerateDomain(*domain));
    }
    f.check_interval(domain)?;

    let min_len = 1e-9 * domain.len().max(1.0);
    let sliver = 1e-9 * domain.len();
    let mut pieces: Vec<ParaPiece> = Vec::new();
    let mut t_prev = domain.lo;

    while t_prev < domain.hi {
        let mut t = domain.hi;
        loop {
            if t - t_prev < min_len {
                return Err(ParaError::MinimumIntervalReached { t_lo: t_prev, t_hi: t });
            }
            let local = Interval { lo: t_prev, hi: t };
            let report = inner_loop(f, global, &local, eps, DEFAULT_MAX_INNER_ITER)?;
            if let Some(parabola) = report.parabola() {
                pieces.push(ParaPiece { parabola, domain: local });
                break;
            }
            t = (1.0 - lambda) * t_prev + lambda * t;
        }

        if t < domain.hi && domain.hi - t < sliver {
            let last = pieces.last_mut().unwrap();
            let widened = Interval { lo: last.domain.lo, hi: domain.hi };
            let m = inner_maxima(&last.parabola, f, global, &widened, eps)?;
            if m.v_max <= FEASIBILITY_TOL {
                last.domain = widened;
                t = domain.hi;
            }
        }
        t_prev = t;
    }

    Ok(ParaApproximation {
        function: *f,
        domain: *domain,
        epsilon: eps,
        side: Side::Under,
        lambda: Some(lambda),
        pieces,
    })
}

/// PARA approximation from the requested side. The over side underestimates
/// `-f` and negates every parabola.
pub fn approximate(
    f: &UnivariateFunction,
    domain: &Interval,
    eps: f64,
    side: Side,
    lambda: f64,
) -> Result<ParaApproximation, ParaError> {
    match side {
        Side::Under => outer_loop(f, domain, eps, lambda),
        Side::Over => Ok(outer_loop(&f.flip_for_overestimation(), domain, eps, lambda)?.negated()),
    }
}

/// [`approximate`] with pieces covering `cover` and validity on `global`.
pub fn approximate_within(
    f: &UnivariateFunction,
    global: &Interval,
    cover: &Interval,
    eps: f64,
    side: Side,
    lambda: f64,
) -> Result<ParaApproximation, ParaError> {
    match side {
        Side::Under => outer_loop_within(f, global, cover, eps, lambda),
        Side::Over => Ok(outer_loop_within(&f.flip_for_overestimation(), global, cover, eps, lambda)?.negated()),
    }
}

/// Number of uniform pieces used by [`uniform_construct`]:
/// `ceil(3 L |D| / eps)`.
pub fn uniform_piece_count(domain: &Interval, eps: f64, lipschitz: f64) -> usize {
    ((3.0 * lipschitz * domain.len()) / eps).ceil().max(1.0) as usize
}

/// Constructive approximation on a uniform partition with piece length
/// `delta <= eps / (3 L)` and `a = -4 L / delta` on every piece.
pub fn uniform_construct(
    f: &UnivariateFunction,
    domain: &Interval,
    eps: f64,
    lipschitz: f64,
) -> Result<ParaApproximation, ParaError> {
    if domain.is_degenerate() {
        return Err(ParaError::DegenerateDomain(*domain));
    }
    if !(eps > 0.0) || !(lipschitz > 0.0) || !lipschitz.is_finite() {
        return Err(ParaError::InvalidInput(format!("need eps > 0 and finite L > 0, got eps={eps}, L={lipschitz}")));
    }
    f.check_interval(domain)?;
    let count = uniform_piece_count(domain, eps, lipschitz);
    let delta = domain.len() / count as f64;
    let a = -4.0 * lipschitz / delta;
    let knot = |k: usize| if k == count { domain.hi } else { domain.lo + k as f64 * delta };
    let pieces = (0..count)
        .map(|k| {
            let (t_lo, t_hi) = (knot(k), knot(k + 1));
            let (b, c) = solve_bc(a, t_lo, t_hi, f, eps)?;
            Ok(ParaPiece { parabola: Parabola { a, b, c }, domain: Interval { lo: t_lo, hi: t_hi } })
        })
        .collect::<Result<Vec<_>, ParaError>>()?;
    Ok(ParaApproximation { function: *f, domain: *domain, epsilon: eps, side: Side::Under, lambda: None, pieces })
}

/// Sampled check of the approximation properties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub samples: usize,
    /// Max over samples of the envelope crossing `f` (`f̆ - f` on the under
    /// side, `f - f̆` on the over side).
    pub max_crossing: f64,
    /// Max over samples of the envelope gap beyond `eps`
    /// (`f - eps - f̆` under, `f̆ - f - eps` over).
    pub max_gap: f64,
    /// Per parabola, the max crossing of `f` over the whole domain.
    pub per_piece_crossing: Vec<f64>,
    /// Largest violation divided by `1 + |f|`.
    pub worst_relative: f64,
    pub pass: bool,
}

/// Samples the domain (`samples` points plus every piece endpoint) and checks
/// that each parabola stays on its side of `f` and the envelope stays within
/// `eps`. Violations up to `1e-8 (1 + |f|)` are tolerated.
pub fn verify(approx: &ParaApproximation, f: &UnivariateFunction, samples: usize) -> ViolationReport {
    verify_on(approx, f, &approx.domain, samples)
}

/// [`verify`] restricted to a sub-domain.
pub fn verify_on(approx: &ParaApproximation, f: &UnivariateFunction, domain: &Interval, samples: usize) -> ViolationReport {
    let samples = samples.max(1000);
    let s = approx.side.sign();
    let mut points: Vec<f64> = domain.samples(samples).collect();
    points.extend(
        approx
            .pieces
            .iter()
            .flat_map(|p| [p.domain.lo, p.domain.hi])
            .filter(|x| domain.contains(*x)),
    );

    let mut max_crossing = f64::NEG_INFINITY;
    let mut max_gap = f64::NEG_INFINITY;
    let mut per_piece_crossing = vec![f64::NEG_INFINITY; approx.pieces.len()];
    let mut worst_relative = f64::NEG_INFINITY;
    let mut all_finite = !approx.pieces.is_empty();

    for &x in &points {
        let fx = s * f.value(x);
        let scale = 1.0 + fx.abs();
        let mut env = f64::NEG_INFINITY;
        for (k, piece) in approx.pieces.iter().enumerate() {
            let px = s * piece.parabola.eval(x);
            env = env.max(px);
            let cross = px - fx;
            per_piece_crossing[k] = per_piece_crossing[k].max(cross);
            worst_relative = worst_relative.max(cross / scale);
        }
        let gap = fx - approx.epsilon - env;
        max_crossing = max_crossing.max(env - fx);
        max_gap = max_gap.max(gap);
        worst_relative = worst_relative.max(gap / scale);
        all_finite &= fx.is_finite() && env.is_finite();
    }

    ViolationReport {
        samples: points.len(),
        max_crossing,
        max_gap,
        per_piece_crossing,
        worst_relative,
        pass: all_finite && worst_relative <= VERIFY_SLACK,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, PI};

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval::new(lo, hi).unwrap()
    }

    /// `A` in the quotient form with the chord anchored at `t_lo`.
    fn bound_a_literal(f: &UnivariateFunction, tl: f64, th: f64, eps: f64, x: f64) -> f64 {
        (f.value(x) - f.value(tl) + eps) / ((x - tl) * (x - th)) - (f.value(th) - f.value(tl)) / ((th - tl) * (x - th))
    }

    fn bound_b_literal(f: &UnivariateFunction, tl: f64, th: f64, x: f64) -> f64 {
        bound_a_literal(f, tl, th, 0.0, x)
    }

    /// `B` in the form anchored at the right endpoint.
    fn bound_b_rewritten(f: &UnivariateFunction, tl: f64, th: f64, x: f64) -> f64 {
        (f.value(x) - f.value(th)) / ((x - tl) * (x - th)) - (f.value(th) - f.value(tl)) / ((th - tl) * (x - tl))
    }

    #[test]
    fn bound_a_sin_exterior() {
        let sin = UnivariateFunction::sin();
        let x = 1.5 * PI;
        let a = bound_a(&sin, 0.0, PI, 0.1, x).unwrap();
        let expected = -0.9 * 4.0 / (3.0 * PI * PI);
        assert!((a - expected).abs() < 1e-14);
        assert!((a - (-0.121_585_420_370_805_33)).abs() < 1e-12);
        let (b, c) = solve_bc(a, 0.0, PI, &sin, 0.1).unwrap();
        let p = Parabola::new(a, b, c);
        assert!((p.eval(x) - sin.value(x)).abs() < 1e-12);
    }

    #[test]
    fn bound_a_zero_function() {
        let z = UnivariateFunction::zero();
        for (tl, th, x) in [(0.0, 1.0, 2.0), (-3.0, -1.0, -5.0), (1.0, 4.0, 0.5)] {
            let a = bound_a(&z, tl, th, 0.25, x).unwrap();
            assert!((a - 0.25 / ((x - tl) * (x - th))).abs() < 1e-15);
            assert!(a > 0.0);
        }
    }

    #[test]
    fn bound_a_exp_interior_is_tight() {
        let exp = UnivariateFunction::exp();
        let a = bound_a(&exp, -1.0, 1.0, 0.5, 0.0).unwrap();
        let p = parabola_from_a(a, -1.0, 1.0, &exp, 0.5).unwrap();
        assert!((p.eval(0.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn bound_b_examples() {
        let z = UnivariateFunction::zero();
        assert_eq!(bound_b(&z, 0.0, 2.0, 0.7).unwrap(), 0.0);
        let sin = UnivariateFunction::sin();
        let b = bound_b(&sin, 0.0, PI, PI / 2.0).unwrap();
        assert!((b + 4.0 / (PI * PI)).abs() < 1e-14);
        let p = parabola_from_a(b, 0.0, PI, &sin, 0.1).unwrap();
        assert!((p.eval(PI / 2.0) - (1.0 - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn bound_b_forms_agree() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let fs = [UnivariateFunction::sin(), UnivariateFunction::cos(), UnivariateFunction::exp(), UnivariateFunction::ln()];
        for i in 0..100 {
            let f = fs[i % 4];
            let tl: f64 = rng.gen_range(0.1..2.0);
            let th = tl + rng.gen_range(0.1..2.0);
            let x = rng.gen_range(tl + 1e-3 * (th - tl)..th - 1e-3 * (th - tl));
            let ours = bound_b(&f, tl, th, x).unwrap();
            let lit = bound_b_literal(&f, tl, th, x);
            let rew = bound_b_rewritten(&f, tl, th, x);
            assert!((lit - rew).abs() <= 1e-10 * (1.0 + lit.abs()), "{lit} vs {rew}");
            assert!((ours - lit).abs() <= 1e-10 * (1.0 + lit.abs()), "{ours} vs {lit}");
        }
    }

    #[test]
    fn degenerate_denominator() {
        let sin = UnivariateFunction::sin();
        assert!(matches!(bound_a(&sin, 0.0, 1.0, 0.1, 0.0), Err(ParaError::DegenerateDenominator { .. })));
        assert!(matches!(bound_b(&sin, 0.0, 1.0, 1.0), Err(ParaError::DegenerateDenominator { .. })));
    }

    #[test]
    fn initial_upper_examples() {
        let a = initial_upper_a(&UnivariateFunction::sin(), 0.0, PI).unwrap();
        assert!((a + 1.0 / PI).abs() < 1e-15);
        assert_eq!(initial_upper_a(&UnivariateFunction::zero(), 0.0, 3.0).unwrap(), 0.0);
        let a = initial_upper_a(&UnivariateFunction::exp(), 0.0, 1.0).unwrap();
        assert!((a - (E - 2.0)).abs() < 1e-15);
    }

    #[test]
    fn solve_bc_examples() {
        let sin = UnivariateFunction::sin();
        let (b, c) = solve_bc(0.0, 0.0, PI, &sin, 0.1).unwrap();
        assert!(b.abs() < 1e-15 && (c + 0.1).abs() < 1e-15);
        let (b, c) = solve_bc(0.0, 0.0, 1.0, &UnivariateFunction::exp(), 0.0).unwrap();
        assert!((b - (E - 1.0)).abs() < 1e-15 && (c - 1.0).abs() < 1e-15);
        let (b, c) = solve_bc(-0.3, 0.0, PI, &sin, 0.1).unwrap();
        assert!((b - 0.3 * PI).abs() < 1e-14 && (c + 0.1).abs() < 1e-14);
        assert!(matches!(solve_bc(0.0, 1.0, 1.0, &sin, 0.1), Err(ParaError::DegenerateInterval { .. })));
    }

    #[test]
    fn parabola_from_a_matches_solve_bc() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let fs = [UnivariateFunction::sin(), UnivariateFunction::cos(), UnivariateFunction::exp()];
        for i in 0..100 {
            let f = fs[i % 3];
            let a: f64 = rng.gen_range(-5.0..5.0);
            let tl: f64 = rng.gen_range(-3.0..3.0);
            let th = tl + rng.gen_range(0.05..3.0);
            let eps = rng.gen_range(0.001..1.0);
            let (b, c) = solve_bc(a, tl, th, &f, eps).unwrap();
            let p = parabola_from_a(a, tl, th, &f, eps).unwrap();
            let scale = 1.0 + a.abs() * (tl.abs() + th.abs()).powi(2);
            assert!((p.b - b).abs() <= 1e-10 * scale, "b {} vs {}", p.b, b);
            assert!((p.c - c).abs() <= 1e-10 * scale, "c {} vs {}", p.c, c);
            for t in [tl, th] {
                assert!((p.eval(t) - (f.value(t) - eps)).abs() <= 1e-10 * (1.0 + f.value(t).abs()));
            }
        }
        let p = parabola_from_a(0.0, 0.0, 1.0, &UnivariateFunction::zero(), 1.0).unwrap();
        assert_eq!(p, Parabola::new(0.0, 0.0, -1.0));
    }

    #[test]
    fn inner_maxima_constant_parabola_under_sine() {
        let sin = UnivariateFunction::sin();
        let d = iv(0.0, PI);
        let p = Parabola::new(0.0, 0.0, -0.1);
        let m = inner_maxima(&p, &sin, &d, &d, 0.1).unwrap();
        assert!(m.outside.is_empty());
        assert!((m.inside_eps.value - 1.0).abs() < 1e-14);
        assert!((m.inside_eps.argmax - PI / 2.0).abs() < 1e-10);
        assert!((m.v_max - 1.0).abs() < 1e-14);
    }

    #[test]
    fn inner_maxima_zero_function() {
        let z = UnivariateFunction::zero();
        let d = iv(0.0, 1.0);
        let p = Parabola::new(0.0, 0.0, -0.3);
        let m = inner_maxima(&p, &z, &d, &d, 0.3).unwrap();
        assert!(m.outside.is_empty());
        assert!((m.inside_under.value + 0.3).abs() < 1e-15);
        assert!(m.inside_eps.value.abs() < 1e-15);
        assert!(m.v_max <= 0.0);
    }

    #[test]
    fn inner_maxima_outside_matches_dense_grid() {
        let sin = UnivariateFunction::sin();
        let (b, c) = solve_bc(0.0, 0.0, PI, &sin, 0.1).unwrap();
        let p = Parabola::new(0.0, b, c);
        let m = inner_maxima(&p, &sin, &iv(0.0, 2.0 * PI), &iv(0.0, PI), 0.1).unwrap();
        let mut grid = f64::NEG_INFINITY;
        for i in 0..=1_000_000 {
            let x = PI + PI * i as f64 / 1e6;
            grid = grid.max(p.eval(x) - sin.value(x));
        }
        // -0.1 - sin(x) peaks at 3pi/2 with value 0.9.
        assert!((grid - 0.9).abs() < 1e-9);
        assert!((m.outside.value - grid).abs() < 1e-9);
        assert!(m.outside.value > 0.0);
    }

    #[test]
    fn inner_loop_examples() {
        let sin = UnivariateFunction::sin();
        let d = iv(0.0, PI);
        let r = inner_loop(&sin, &d, &d, 1.0, DEFAULT_MAX_INNER_ITER).unwrap();
        assert!(r.parabola().is_some());

        let z = UnivariateFunction::zero();
        let d = iv(-2.0, 3.0);
        let r = inner_loop(&z, &d, &d, 0.5, DEFAULT_MAX_INNER_ITER).unwrap();
        assert_eq!(r.parabola().unwrap(), Parabola::new(0.0, 0.0, -0.5));

        let d = iv(0.0, 2.0 * PI);
        let r = inner_loop(&sin, &d, &d, 0.01, DEFAULT_MAX_INNER_ITER).unwrap();
        match r.outcome {
            InnerOutcome::Infeasible(b) => assert!(b.lower > b.upper - 1e-12 * (1.0 + b.upper.abs())),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn inner_loop_a_is_non_increasing() {
        let exp = UnivariateFunction::exp();
        for (lo, hi) in [(-5.0, -3.0), (-2.0, 0.5), (2.0, 2.4), (-1.0, 1.0)] {
            let r = inner_loop(&exp, &iv(-5.0, 5.0), &iv(lo, hi), 0.01, DEFAULT_MAX_INNER_ITER).unwrap();
            for w in r.a_history.windows(2) {
                assert!(w[1] <= w[0], "{:?}", r.a_history);
            }
        }
    }

    #[test]
    fn outer_loop_small_cases() {
        let sin = UnivariateFunction::sin();
        let a = outer_loop(&sin, &iv(-PI / 2.0, PI / 2.0), 1e-2, DEFAULT_LAMBDA).unwrap();
        assert_eq!(a.len(), 7);
        assert!(verify(&a, &sin, 20_000).pass);
        let exp = UnivariateFunction::exp();
        let a = outer_loop(&exp, &iv(-5.0, -2.0), 1e-3, DEFAULT_LAMBDA).unwrap();
        assert_eq!(a.len(), 5);
        let z = UnivariateFunction::zero();
        for eps in [1.0, 1e-3] {
            assert_eq!(outer_loop(&z, &iv(-4.0, 9.0), eps, DEFAULT_LAMBDA).unwrap().len(), 1);
        }
    }

    #[test]
    fn outer_loop_coverage() {
        let cos = UnivariateFunction::cos();
        let d = iv(-1.0, 5.0);
        let a = outer_loop(&cos, &d, 0.05, DEFAULT_LAMBDA).unwrap();
        a.check_structure().unwrap();
        assert_eq!(a.pieces[0].domain.lo, d.lo);
        assert_eq!(a.pieces.last().unwrap().domain.hi, d.hi);
        for p in &a.pieces {
            assert!(p.domain.lo < p.domain.hi);
        }
    }

    #[test]
    fn over_side_is_negated_under_of_flipped() {
        let sin = UnivariateFunction::sin();
        let d = iv(0.0, PI);
        let over = approximate(&sin, &d, 1e-2, Side::Over, DEFAULT_LAMBDA).unwrap();
        let under_neg = outer_loop(&sin.flip_for_overestimation(), &d, 1e-2, DEFAULT_LAMBDA).unwrap();
        assert_eq!(over.len(), under_neg.len());
        assert_eq!(over.len(), 5);
        for (o, u) in over.pieces.iter().zip(&under_neg.pieces) {
            assert_eq!(o.parabola, u.parabola.negated());
        }
        assert!(verify(&over, &sin, 10_000).pass);
    }

    #[test]
    fn uniform_construct_zero_function() {
        let z = UnivariateFunction::zero();
        let a = uniform_construct(&z, &iv(0.0, 1.0), 3.0, 1.0).unwrap();
        assert_eq!(a.len(), 1);
        let p = a.pieces[0].parabola;
        assert_eq!((p.a, p.b, p.c), (-4.0, 4.0, -3.0));
        assert!((p.eval(0.5) + 2.0).abs() < 1e-15);
        assert!(verify(&a, &z, 1000).pass);
    }

    #[test]
    fn uniform_construct_sine() {
        let sin = UnivariateFunction::sin();
        let d = iv(0.0, PI);
        let a = uniform_construct(&sin, &d, 0.1, 1.0).unwrap();
        assert_eq!(a.len(), 95);
        assert!(verify(&a, &sin, 20_000).pass);
        let greedy = outer_loop(&sin, &d, 0.1, DEFAULT_LAMBDA).unwrap();
        assert!(a.len() >= greedy.len());
        assert!(matches!(uniform_construct(&sin, &iv(1.0, 1.0), 0.1, 1.0), Err(ParaError::DegenerateDomain(_))));
    }

    #[test]
    fn verify_detects_inflated_offset() {
        let sin = UnivariateFunction::sin();
        let mut a = outer_loop(&sin, &iv(0.0, PI), 0.1, DEFAULT_LAMBDA).unwrap();
        assert!(verify(&a, &sin, 1000).pass);
        a.pieces[0].parabola.c += 0.2;
        let r = verify(&a, &sin, 1000);
        assert!(!r.pass);
        assert!(r.per_piece_crossing[0] > 0.0);
    }

    #[test]
    fn json_record_shape() {
        let sin = UnivariateFunction::sin();
        let a = outer_loop(&sin, &iv(0.0, PI), 1.0, DEFAULT_LAMBDA).unwrap();
        let v = serde_json::to_value(&a).unwrap();
        for key in ["function", "domain", "epsilon", "side", "lambda", "pieces"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let piece = &v["pieces"][0];
        for key in ["a", "b", "c", "t_lo", "t_hi"] {
            assert!(piece.get(key).is_some(), "{key}");
        }
        let back: ParaApproximation = serde_json::from_value(v).unwrap();
        assert_eq!(back, a);
    }
}
