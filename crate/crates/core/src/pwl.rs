//! Piecewise-linear interpolation with greedy breakpoint placement, and the
//! downward shift that turns an `eps/2` approximation into an `eps`
//! relaxation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functions::{FunctionError, Interval, UnivariateFunction};
use crate::optim1d::{self, Objective, OptimError};

/// Breakpoint binary-search resolution, relative to `|D|`.
pub const SEARCH_RESOLUTION: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PwlError {
    #[error("x = {x} lies outside [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Function(#[from] FunctionError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Interpolant through `(breakpoints[k], values[k])`, shifted down by `shift`.
///
/// `epsilon` is the tolerance of the unshifted interpolant. A relaxation built
/// by [`relax_shift`] has `shift = epsilon`, so `f - 2 epsilon <= f̄ <= f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlApproximation {
    pub function: UnivariateFunction,
    pub domain: Interval,
    pub epsilon: f64,
    pub shift: f64,
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl PwlApproximation {
    /// Number of linear pieces `K`.
    pub fn pieces(&self) -> usize {
        self.breakpoints.len().saturating_sub(1)
    }

    /// Total tolerance of the shifted interpolant as a one-sided relaxation.
    pub fn relaxation_tolerance(&self) -> f64 {
        self.epsilon + self.shift
    }

    /// Values actually used by the shifted interpolant, `f(t_k) - shift`.
    pub fn shifted_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().map(move |v| v - self.shift)
    }

    pub fn check_structure(&self) -> Result<(), String> {
        if self.breakpoints.len() < 2 || self.breakpoints.len() != self.values.len() {
            return Err("need at least two breakpoints with one value each".into());
        }
        if self.breakpoints[0] != self.domain.lo || *self.breakpoints.last().unwrap() != self.domain.hi {
            return Err("breakpoints must start and end at the domain bounds".into());
        }
        if self.breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err("breakpoints must be strictly increasing".into());
        }
        if self.values.iter().any(|v| !v.is_finite()) || !(self.shift >= 0.0) {
            return Err("values must be finite and the shift non-negative".into());
        }
        Ok(())
    }

    /// Index `k` of the piece `[t_k, t_{k+1}]` containing `x`.
    fn piece_index(&self, x: f64) -> usize {
        let k = self.breakpoints.partition_point(|t| *t <= x);
        k.clamp(1, self.breakpoints.len() - 1) - 1
    }

    pub fn interpolate(&self, x: f64) -> Result<f64, PwlError> {
        if !self.domain.contains(x) {
            return Err(PwlError::OutOfDomain { x, lo: self.domain.lo, hi: self.domain.hi });
        }
        Ok(self.interpolate_unshifted(x) - self.shift)
    }

    fn interpolate_unshifted(&self, x: f64) -> f64 {
        let k = self.piece_index(x);
        let (t0, t1) = (self.breakpoints[k], self.breakpoints[k + 1]);
        let (f0, f1) = (self.values[k], self.values[k + 1]);
        let len = t1 - t0;
        f0 * ((t1 - x) / len) + f1 * ((x - t0) / len)
    }
}

/// `±(chord - f)` on one piece.
struct ChordError<'a> {
    f: &'a UnivariateFunction,
    t0: f64,
    f0: f64,
    slope: f64,
    sign: f64,
}

impl Objective for ChordError<'_> {
    fn value(&self, x: f64) -> f64 {
        self.sign * (self.f0 + self.slope * (x - self.t0) - self.f.value(x))
    }
    fn slope(&self, x: f64) -> f64 {
        self.sign * (self.slope - self.f.deriv(x, 1))
    }
    fn curvature(&self, x: f64) -> f64 {
        -self.sign * self.f.deriv(x, 2)
    }
}

/// `max |chord - f|` on `[t0, t1]`, certified by [`optim1d::global_max`].
pub fn chord_error(f: &UnivariateFunction, t0: f64, t1: f64) -> Result<f64, PwlError> {
    if t1 <= t0 {
        return Ok(0.0);
    }
    let (f0, f1) = (f.evaluate(t0)?, f.evaluate(t1)?);
    let slope = (f1 - f0) / (t1 - t0);
    let piece = Interval { lo: t0, hi: t1 };
    let n = optim1d::default_grid(&piece);
    let mut worst = 0.0f64;
    for sign in [1.0, -1.0] {
        let r = optim1d::global_max(&ChordError { f, t0, f0, slope, sign }, &piece, n)?;
        worst = worst.max(r.value);
    }
    Ok(worst)
}

/// Places breakpoints left to right. Inflection points of `f` are always
/// breakpoints; between them each `t_k` is the largest point (up to the
/// search resolution) keeping the chord error on `[t_{k-1}, t_k]` within
/// `eps`.
pub fn greedy_breakpoints(f: &UnivariateFunction, domain: &Interval, eps: f64) -> Result<PwlApproximation, PwlError> {
    if !(eps > 0.0) {
        return Err(PwlError::InvalidInput(format!("epsilon must be positive, got {eps}")));
    }
    if domain.is_degenerate() {
        return Err(PwlError::InvalidInput(format!("domain {domain} has zero length")));
    }
    f.check_interval(domain)?;
    let resolution = SEARCH_RESOLUTION * domain.len();
    let mut breakpoints = vec![domain.lo];
    let mut t_prev = domain.lo;
    let stops = f.inflection_points(domain).into_iter().filter(|&x| x - domain.lo > resolution && domain.hi - x > resolution);
    for end in stops.chain([domain.hi]) {
        while t_prev < end {
            let next = if chord_error(f, t_prev, end)? <= eps {
                end
            } else {
                let (mut good, mut bad) = (t_prev, end);
                while bad - good > resolution {
                    let mid = 0.5 * (good + bad);
                    if chord_error(f, t_prev, mid)? <= eps {
                        good = mid;
                    } else {
                        bad = mid;
                    }
                }
                if good <= t_prev {
                    // Only reachable when eps is below the chord error of a
                    // resolution-length piece.
                    (t_prev + resolution).min(end)
                } else {
                    good
                }
            };
            breakpoints.push(next);
            t_prev = next;
        }
    }
    let values = breakpoints.iter().map(|&t| f.value(t)).collect();
    Ok(PwlApproximation { function: *f, domain: *domain, epsilon: eps, shift: 0.0, breakpoints, values })
}

/// PWL relaxation with total tolerance `eps`: interpolation at `eps/2`,
/// shifted down by `eps/2`, so `f̄ <= f <= f̄ + eps` on the domain.
pub fn relax_shift(f: &UnivariateFunction, domain: &Interval, eps: f64) -> Result<PwlApproximation, PwlError> {
    let mut pwl = greedy_breakpoints(f, domain, 0.5 * eps)?;
    pwl.shift = 0.5 * eps;
    Ok(pwl)
}

/// `max |f̄ - f|` of the unshifted interpolant over its domain.
pub fn max_error(f: &UnivariateFunction, pwl: &PwlApproximation) -> Result<f64, PwlError> {
    let mut worst = 0.0f64;
    for w in pwl.breakpoints.windows(2) {
        worst = worst.max(chord_error(f, w[0], w[1])?);
    }
    Ok(worst)
}

/// Sampled check of `f̄ <= f <= f̄ + (epsilon + shift)` for the shifted
/// interpolant; returns the worst violation relative to `1 + |f|`.
pub fn sandwich_violation(f: &UnivariateFunction, pwl: &PwlApproximation, samples: usize) -> f64 {
    let tol = pwl.relaxation_tolerance();
    let mut worst = f64::NEG_INFINITY;
    for x in pwl.domain.samples(samples).chain(pwl.breakpoints.iter().copied()) {
        let fx = f.value(x);
        let g = pwl.interpolate_unshifted(x) - pwl.shift;
        let scale = 1.0 + fx.abs();
        worst = worst.max((g - fx) / scale).max((fx - g - tol) / scale);
    }
    worst
}
