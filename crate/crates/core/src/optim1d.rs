//! Deterministic global maximisation of smooth univariate objectives on
//! closed intervals.
//!
//! The objective is sampled on a uniform grid. Every grid cell whose slope
//! changes sign from positive to negative brackets a local maximum, which is
//! refined by Newton's method on the slope, safeguarded by bisection. The
//! result is the best of the endpoints, the grid samples and the refined
//! critical points.

use thiserror::Error;

use crate::functions::Interval;

/// Minimum number of grid samples per query.
pub const MIN_GRID: usize = 129;
/// Grid samples per unit length.
pub const GRID_DENSITY: f64 = 64.0;

const MAX_REFINE_STEPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("objective is not finite at x = {0}")]
    NonFiniteObjective(f64),
}

/// A twice differentiable scalar map. `slope` and `curvature` are the first
/// and second derivative of `value`.
pub trait Objective {
    fn value(&self, x: f64) -> f64;
    fn slope(&self, x: f64) -> f64;
    fn curvature(&self, x: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxResult {
    pub argmax: f64,
    pub value: f64,
    pub iterations: usize,
}

impl MaxResult {
    /// Sentinel for a maximum over an empty set.
    pub fn empty() -> Self {
        MaxResult { argmax: f64::NAN, value: f64::NEG_INFINITY, iterations: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.value == f64::NEG_INFINITY
    }

    fn consider(&mut self, x: f64, v: f64) {
        if v > self.value {
            self.value = v;
            self.argmax = x;
        }
    }
}

/// `max(129, ceil(64 |I|))`.
pub fn default_grid(interval: &Interval) -> usize {
    let n = (GRID_DENSITY * interval.len()).ceil();
    if n.is_finite() && n > MIN_GRID as f64 {
        n as usize
    } else {
        MIN_GRID
    }
}

/// Global maximum of `objective` over the closed interval.
pub fn global_max<O: Objective + ?Sized>(
    objective: &O,
    interval: &Interval,
    grid_n: usize,
) -> Result<MaxResult, OptimError> {
    search(objective, interval, grid_n, true)
}

/// Maximum over the open interval `(lo, hi)`: candidates within `1e-12` of an
/// endpoint are discarded. Returns [`MaxResult::empty`] when nothing remains.
pub fn global_max_open<O: Objective + ?Sized>(
    objective: &O,
    interval: &Interval,
    grid_n: usize,
) -> Result<MaxResult, OptimError> {
    search(objective, interval, grid_n, false)
}

fn search<O: Objective + ?Sized>(
    objective: &O,
    interval: &Interval,
    grid_n: usize,
    closed: bool,
) -> Result<MaxResult, OptimError> {
    let (lo, hi) = (interval.lo, interval.hi);
    let finite = |x: f64, v: f64| if v.is_finite() { Ok(v) } else { Err(OptimError::NonFiniteObjective(x)) };

    if interval.is_degenerate() {
        if !closed {
            return Ok(MaxResult::empty());
        }
        let v = finite(lo, objective.value(lo))?;
        return Ok(MaxResult { argmax: lo, value: v, iterations: 0 });
    }

    let edge = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    let admissible = |x: f64| closed || (x - lo > edge && hi - x > edge);

    let n = grid_n.max(3);
    let h = (hi - lo) / (n - 1) as f64;
    let at = |i: usize| if i + 1 == n { hi } else { lo + i as f64 * h };

    let mut best = MaxResult::empty();
    let mut prev_x = lo;
    let mut prev_slope = 0.0;
    for i in 0..n {
        let x = at(i);
        let v = finite(x, objective.value(x))?;
        let s = finite(x, objective.slope(x))?;
        if admissible(x) {
            best.consider(x, v);
        }
        if i > 0 && prev_slope > 0.0 && s < 0.0 {
            let (root, steps) = refine_critical(objective, prev_x, x);
            best.iterations += steps;
            let rv = finite(root, objective.value(root))?;
            if admissible(root) {
                best.consider(root, rv);
            }
        }
        prev_x = x;
        prev_slope = s;
    }
    Ok(best)
}

/// Root of the slope inside `[a, b]` given `slope(a) > 0 > slope(b)`.
fn refine_critical<O: Objective + ?Sized>(objective: &O, mut a: f64, mut b: f64) -> (f64, usize) {
    let tol = 1e-13 * (1.0 + (b - a).abs().max(a.abs().max(b.abs())));
    let mut x = 0.5 * (a + b);
    for step in 1..=MAX_REFINE_STEPS {
        let s = objective.slope(x);
        if s == 0.0 {
            return (x, step);
        }
        if s > 0.0 {
            a = x;
        } else {
            b = x;
        }
        let c = objective.curvature(x);
        let newton = if c != 0.0 && c.is_finite() { x - s / c } else { f64::NAN };
        let next = if newton > a && newton < b { newton } else { 0.5 * (a + b) };
        let moved = (next - x).abs();
        x = next;
        if moved < tol || b - a < tol {
            return (x, step);
        }
    }
    (x, MAX_REFINE_STEPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    struct Poly3Sin {
        c: [f64; 4],
        w: f64,
    }

    impl Objective for Poly3Sin {
        fn value(&self, x: f64) -> f64 {
            self.c[0] + x * (self.c[1] + x * (self.c[2] + x * self.c[3])) - (self.w * x).sin()
        }
        fn slope(&self, x: f64) -> f64 {
            self.c[1] + x * (2.0 * self.c[2] + 3.0 * x * self.c[3]) - self.w * (self.w * x).cos()
        }
        fn curvature(&self, x: f64) -> f64 {
            2.0 * self.c[2] + 6.0 * x * self.c[3] + self.w * self.w * (self.w * x).sin()
        }
    }

    struct Sine;
    impl Objective for Sine {
        fn value(&self, x: f64) -> f64 {
            x.sin()
        }
        fn slope(&self, x: f64) -> f64 {
            x.cos()
        }
        fn curvature(&self, x: f64) -> f64 {
            -x.sin()
        }
    }

    struct SineMinusLine;
    impl Objective for SineMinusLine {
        fn value(&self, x: f64) -> f64 {
            x.sin() - 2.0 * x / PI
        }
        fn slope(&self, x: f64) -> f64 {
            x.cos() - 2.0 / PI
        }
        fn curvature(&self, x: f64) -> f64 {
            -x.sin()
        }
    }

    fn dense_grid_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> (f64, f64) {
        let mut best = (lo, f(lo));
        for i in 0..=n {
            let x = lo + (hi - lo) * i as f64 / n as f64;
            let v = f(x);
            if v > best.1 {
                best = (x, v);
            }
        }
        best
    }

    #[test]
    fn sine_on_zero_pi() {
        let r = global_max(&Sine, &Interval::new(0.0, PI).unwrap(), 129).unwrap();
        assert!((r.argmax - PI / 2.0).abs() < 1e-12);
        assert!((r.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_objective() {
        struct Zero;
        impl Objective for Zero {
            fn value(&self, _: f64) -> f64 {
                0.0
            }
            fn slope(&self, _: f64) -> f64 {
                0.0
            }
            fn curvature(&self, _: f64) -> f64 {
                0.0
            }
        }
        let r = global_max(&Zero, &Interval::new(0.0, 1.0).unwrap(), 129).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.argmax >= 0.0 && r.argmax <= 1.0);
    }

    #[test]
    fn sine_minus_line_matches_dense_grid() {
        // argmax = arccos(2/pi); the closed form below is cross-checked against a 10^6-cell grid.
        let (gx, gv) = dense_grid_max(|x| x.sin() - 2.0 * x / PI, 0.0, PI, 1_000_000);
        let r = global_max(&SineMinusLine, &Interval::new(0.0, PI).unwrap(), 257).unwrap();
        assert!((r.argmax - (2.0 / PI).acos()).abs() < 1e-10);
        assert!((r.argmax - gx).abs() < 1e-5);
        assert!(r.value >= gv - 1e-12);
        assert!((r.value - gv).abs() < 1e-9);
        assert!((r.value - 0.210_513_662_353_018_7).abs() < 1e-12);
    }

    #[test]
    fn open_interval_discards_endpoints() {
        // sin on (0, pi/2): supremum at the endpoint, no interior maximum.
        let r = global_max_open(&Sine, &Interval::new(0.0, PI / 2.0).unwrap(), 129).unwrap();
        assert!(r.argmax < PI / 2.0);
        assert!(r.value < 1.0);
        let e = global_max_open(&Sine, &Interval::point(1.0), 129).unwrap();
        assert!(e.is_empty());
    }

    #[test]
    fn degenerate_interval() {
        let r = global_max(&Sine, &Interval::point(0.5), 129).unwrap();
        assert_eq!(r.argmax, 0.5);
        assert_eq!(r.value, 0.5f64.sin());
    }

    #[test]
    fn non_finite_reported() {
        struct Log;
        impl Objective for Log {
            fn value(&self, x: f64) -> f64 {
                x.ln()
            }
            fn slope(&self, x: f64) -> f64 {
                1.0 / x
            }
            fn curvature(&self, x: f64) -> f64 {
                -1.0 / (x * x)
            }
        }
        let r = global_max(&Log, &Interval::new(-1.0, 1.0).unwrap(), 129);
        assert!(matches!(r, Err(OptimError::NonFiniteObjective(_))));
    }

    #[test]
    fn default_grid_rule() {
        assert_eq!(default_grid(&Interval::new(0.0, 1.0).unwrap()), 129);
        assert_eq!(default_grid(&Interval::new(-5.0, 5.0).unwrap()), 640);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig { cases: 500, ..ProptestConfig::default() })]

            #[test]
            fn cubic_minus_sine_beats_dense_grid(
                c0 in -1.0..1.0f64, c1 in -2.0..2.0f64, c2 in -1.0..1.0f64, c3 in -0.3..0.3f64,
                w in 0.5..4.0f64, lo in -3.0..1.0f64, len in 0.1..4.0f64,
            ) {
                let obj = Poly3Sin { c: [c0, c1, c2, c3], w };
                let iv = Interval::new(lo, lo + len).unwrap();
                let r = global_max(&obj, &iv, default_grid(&iv)).unwrap();
                let (_, gv) = dense_grid_max(|x| obj.value(x), iv.lo, iv.hi, 1_000_000);
                prop_assert!(r.value >= gv - 1e-9 * (1.0 + gv.abs()));
                prop_assert!(iv.contains(r.argmax));
                prop_assert!((obj.value(r.argmax) - r.value).abs() <= 1e-12 * (1.0 + r.value.abs()));
                let r2 = global_max(&obj, &iv, 2 * default_grid(&iv)).unwrap();
                prop_assert!(r2.value >= r.value - 1e-9);
            }
        }
    }
}
