//! Global parabolic (PARA) and piecewise-linear (PWL) epsilon-relaxations of
//! univariate nonlinear constraint functions.
//!
//! The crate is organised bottom-up:
//!
//! * [`functions`]: the univariate elementary functions being relaxed.
//! * [`optim1d`]: deterministic global maximisation on closed intervals.
//! * [`para`]: parabolic underestimators (inner/outer loop, constructive fallback).
//! * [`pwl`]: greedy piecewise-linear interpolation and its downward shift.
//! * [`expr`]: factorable expression parsing, bound propagation, reformulation.
//! * [`lut`]: bound rounding and the look-up table of precomputed approximations.
//! * [`emit`]: relaxed model construction, text/JSON emission, brute-force checking.
//! * [`cli`]: the batch front-end used by the `pararelax` binary.

pub mod cli;
pub mod emit;
pub mod expr;
pub mod functions;
pub mod lut;
pub mod optim1d;
pub mod para;
pub mod pwl;

pub use functions::{FunctionKind, Interval, UnivariateFunction};
pub use para::{Parabola, ParaApproximation, ParaPiece, Side};
pub use pwl::PwlApproximation;
