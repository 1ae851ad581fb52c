//! Look-up table of precomputed PARA approximations.
//!
//! Raw variable bounds are rounded outward to a small set of canonical
//! intervals so that many constraints share one precomputed approximation.
//! An approximation valid on the rounded interval stays valid on every raw
//! interval it contains.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functions::{FunctionKind, Interval, UnivariateFunction};
use crate::para::{self, ParaApproximation, ParaError, ParaPiece, Parabola, Side};

const TWO_PI: f64 = 2.0 * PI;
/// Longest sin/cos domain rounded to multiples of 0.1.
pub const TRIG_GROUPING_LIMIT: f64 = 4.0 * PI;
/// Samples used when verifying a freshly computed entry.
pub const LUT_VERIFY_SAMPLES: usize = 10_000;

#[derive(Debug, Error)]
pub enum LutError {
    #[error("domain violation: {0}")]
    DomainViolation(String),
    #[error(transparent)]
    Para(#[from] ParaError),
    #[error("approximation of {function} on {domain} failed verification (worst relative violation {worst:e})")]
    VerificationFailed { function: String, domain: Interval, worst: f64 },
    #[error("cache file {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cache file {path}, line {line}: {source}")]
    Corrupt { path: PathBuf, line: usize, source: serde_json::Error },
}

/// Smallest `e` with `10^(e+1) > |x|`, for `x != 0`.
fn magnitude(x: f64) -> i32 {
    let a = x.abs();
    let mut e = a.log10().floor() as i32;
    while pow10(e) > a {
        e -= 1;
    }
    while pow10(e + 1) <= a {
        e += 1;
    }
    e
}

fn pow10(e: i32) -> f64 {
    10f64.powi(e)
}

/// `x` in units of `10^e`, computed with an exact power of ten.
fn scaled(x: f64, e: i32) -> f64 {
    if e >= 0 {
        x / pow10(e)
    } else {
        x * pow10(-e)
    }
}

fn unscaled(k: f64, e: i32) -> f64 {
    if e >= 0 {
        k * pow10(e)
    } else {
        k / pow10(-e)
    }
}

/// Largest multiple of `10^e` not above `x`. Values within rounding noise of
/// a multiple snap to it, which keeps the rounding idempotent.
fn floor_to(x: f64, e: i32) -> f64 {
    let s = scaled(x, e);
    let mut k = if (s - s.round()).abs() <= 1e-9 * (1.0 + s.abs()) { s.round() } else { s.floor() };
    if unscaled(k, e) > x {
        k -= 1.0;
    }
    unscaled(k, e) + 0.0
}

/// Smallest multiple of `10^e` not below `x`.
fn ceil_to(x: f64, e: i32) -> f64 {
    -floor_to(-x, e)
}

/// Largest multiple of `step` not above `x`, snapping like [`floor_to`].
fn floor_multiple(x: f64, step: f64) -> f64 {
    let s = x / step;
    let mut k = if (s - s.round()).abs() <= 1e-9 * (1.0 + s.abs()) { s.round() } else { s.floor() };
    if k * step > x {
        k -= 1.0;
    }
    k * step + 0.0
}

fn ceil_multiple(x: f64, step: f64) -> f64 {
    -floor_multiple(-x, step)
}

fn round_exp_lower(lo: f64) -> f64 {
    if lo < -1.0 {
        floor_to(lo, magnitude(lo))
    } else {
        floor_to(lo, -1)
    }
}

fn round_exp_upper(hi: f64) -> f64 {
    if hi < -1.0 {
        ceil_to(hi, magnitude(hi))
    } else if hi <= 0.0 {
        ceil_to(hi, -1)
    } else {
        ceil_to(hi, -2)
    }
}

fn round_ln_lower(lo: f64) -> f64 {
    floor_to(lo, magnitude(lo).min(2))
}

fn round_ln_upper(hi: f64) -> f64 {
    ceil_to(hi, magnitude(hi).max(-2))
}

/// Whether a rounded sin/cos interval is a tiling of whole periods.
fn is_tiled(kind: FunctionKind, rounded: &Interval) -> bool {
    kind.is_periodic() && rounded.len() > TRIG_GROUPING_LIMIT
}

/// Rounds raw bounds outward to the canonical key interval.
///
/// * exp: a lower bound below -1 goes down to its leading digit (-132 to
///   -200), otherwise down to a multiple of 0.1 (-0.456 to -0.5). An upper
///   bound goes up to its leading digit below -1, to a multiple of 0.1 up to
///   0 and to a multiple of 0.01 when positive.
/// * ln: a bound in `[10^(l-1), 10^l]` goes to a multiple of `10^(l-1)`, with
///   `l <= 3` for lower and `l >= -1` for upper bounds.
/// * sin, cos: multiples of 0.1 while the result is at most `4 pi` long;
///   longer domains become whole periods `[2 pi k, 2 pi m]`.
pub fn round_bounds(kind: FunctionKind, raw: &Interval) -> Result<Interval, LutError> {
    let rounded = match kind {
        FunctionKind::Exp => Interval { lo: round_exp_lower(raw.lo), hi: round_exp_upper(raw.hi) },
        FunctionKind::Ln => {
            if !(raw.lo > 0.0) {
                return Err(LutError::DomainViolation(format!("ln needs a positive lower bound, got {raw}")));
            }
            Interval { lo: round_ln_lower(raw.lo), hi: round_ln_upper(raw.hi) }
        }
        FunctionKind::Sin | FunctionKind::Cos => {
            let grouped = Interval { lo: floor_to(raw.lo, -1), hi: ceil_to(raw.hi, -1) };
            if grouped.len() <= TRIG_GROUPING_LIMIT {
                grouped
            } else {
                Interval { lo: floor_multiple(raw.lo, TWO_PI), hi: ceil_multiple(raw.hi, TWO_PI) }
            }
        }
    };
    Ok(rounded)
}

/// `p(x - shift)`.
fn shift_parabola(p: &Parabola, shift: f64) -> Parabola {
    Parabola { a: p.a, b: p.b - 2.0 * p.a * shift, c: p.a * shift * shift - p.b * shift + p.c }
}

/// Copies an approximation of the first period `[2 pi k, 2 pi (k + 1)]` of
/// `target = [2 pi k, 2 pi m]` over the whole target.
pub fn tile_period(period: &ParaApproximation, target: &Interval) -> ParaApproximation {
    let k0 = (target.lo / TWO_PI).round() as i64;
    let k1 = (target.hi / TWO_PI).round() as i64;
    let n = period.pieces.len();
    let mut pieces = Vec::with_capacity(n * (k1 - k0).max(0) as usize);
    for k in k0..k1 {
        let shift = (k - k0) as f64 * TWO_PI;
        let start = if k == k0 { target.lo } else { k as f64 * TWO_PI };
        let end = if k + 1 == k1 { target.hi } else { (k + 1) as f64 * TWO_PI };
        for (j, piece) in period.pieces.iter().enumerate() {
            let lo = if j == 0 { start } else { piece.domain.lo + shift };
            let hi = if j + 1 == n { end } else { piece.domain.hi + shift };
            pieces.push(ParaPiece { parabola: shift_parabola(&piece.parabola, shift), domain: Interval { lo, hi } });
        }
    }
    ParaApproximation { domain: *target, pieces, ..period.clone() }
}

/// One period of a tiled sin/cos entry. A copy shifted by `s` must stay on
/// its side of `f` on the target, so each parabola is kept valid on the union
/// of all targets shifted back by the tiling offsets.
fn period_for_tiling(
    f: &UnivariateFunction,
    target: &Interval,
    epsilon: f64,
    side: Side,
    lambda: f64,
) -> Result<ParaApproximation, ParaError> {
    let span = target.len() - TWO_PI;
    let global = Interval { lo: target.lo - span, hi: target.hi };
    let cover = Interval { lo: target.lo, hi: target.lo + TWO_PI };
    para::approximate_within(f, &global, &cover, epsilon, side, lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct KeyBits {
    kind: FunctionKind,
    lo: u64,
    hi: u64,
    epsilon: u64,
    side: Side,
}

/// One cache line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LutEntry {
    pub kind: FunctionKind,
    pub domain: Interval,
    pub epsilon: f64,
    pub side: Side,
    pub approximation: ParaApproximation,
}

impl LutEntry {
    fn key(&self) -> KeyBits {
        key_bits(self.kind, &self.domain, self.epsilon, self.side)
    }
}

fn key_bits(kind: FunctionKind, domain: &Interval, epsilon: f64, side: Side) -> KeyBits {
    KeyBits { kind, lo: domain.lo.to_bits(), hi: domain.hi.to_bits(), epsilon: epsilon.to_bits(), side }
}

/// Entries keyed by (function kind, rounded interval, epsilon, side),
/// optionally backed by a JSON-lines file that new entries are appended to.
#[derive(Debug, Default)]
pub struct LookupTable {
    entries: Vec<LutEntry>,
    index: HashMap<KeyBits, usize>,
    path: Option<PathBuf>,
    hits: usize,
    misses: usize,
}

impl LookupTable {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) a cache file. Existing lines are loaded.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LutError> {
        let path = path.as_ref().to_path_buf();
        let mut table = LookupTable { path: Some(path.clone()), ..Self::default() };
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(table),
            Err(source) => return Err(LutError::Io { path, source }),
        };
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| LutError::Io { path: path.clone(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: LutEntry = serde_json::from_str(&line)
                .map_err(|source| LutError::Corrupt { path: path.clone(), line: n + 1, source })?;
            table.insert_loaded(entry);
        }
        Ok(table)
    }

    fn insert_loaded(&mut self, entry: LutEntry) {
        let key = entry.key();
        match self.index.get(&key) {
            Some(&i) => self.entries[i] = entry,
            None => {
                self.index.insert(key, self.entries.len());
                self.entries.push(entry);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hits(&self) -> usize {
        self.hits
    }

    pub fn misses(&self) -> usize {
        self.misses
    }

    pub fn entries(&self) -> &[LutEntry] {
        &self.entries
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, kind: FunctionKind, domain: &Interval, epsilon: f64, side: Side) -> Option<&LutEntry> {
        self.index.get(&key_bits(kind, domain, epsilon, side)).map(|&i| &self.entries[i])
    }

    /// Returns the stored approximation for the rounded key of `raw`,
    /// computing, verifying and storing it on a miss.
    pub fn lookup_or_compute(
        &mut self,
        kind: FunctionKind,
        raw: &Interval,
        epsilon: f64,
        side: Side,
        lambda: f64,
    ) -> Result<ParaApproximation, LutError> {
        let domain = round_bounds(kind, raw)?;
        if let Some(&i) = self.index.get(&key_bits(kind, &domain, epsilon, side)) {
            self.hits += 1;
            return Ok(self.entries[i].approximation.clone());
        }
        self.misses += 1;
        let approximation = compute_entry(kind, &domain, epsilon, side, lambda)?;
        let entry = LutEntry { kind, domain, epsilon, side, approximation: approximation.clone() };
        if let Some(path) = &self.path {
            append_line(path, &entry)?;
        }
        self.insert_loaded(entry);
        Ok(approximation)
    }

    /// Rewrites the backing file with the current entries in insertion order.
    pub fn save(&self) -> Result<(), LutError> {
        let Some(path) = &self.path else { return Ok(()) };
        let io = |source| LutError::Io { path: path.clone(), source };
        let mut file = File::create(path).map_err(io)?;
        for e in &self.entries {
            writeln!(file, "{}", serde_json::to_string(e).expect("entries serialise")).map_err(io)?;
        }
        Ok(())
    }
}

fn append_line(path: &Path, entry: &LutEntry) -> Result<(), LutError> {
    let io = |source| LutError::Io { path: path.to_path_buf(), source };
    let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    writeln!(file, "{}", serde_json::to_string(entry).expect("entries serialise")).map_err(io)
}

/// Computes and verifies the approximation stored under a rounded key.
pub fn compute_entry(
    kind: FunctionKind,
    domain: &Interval,
    epsilon: f64,
    side: Side,
    lambda: f64,
) -> Result<ParaApproximation, LutError> {
    let f = UnivariateFunction::new(kind);
    let approximation = if is_tiled(kind, domain) {
        tile_period(&period_for_tiling(&f, domain, epsilon, side, lambda)?, domain)
    } else {
        para::approximate(&f, domain, epsilon, side, lambda)?
    };
    let report = para::verify(&approximation, &f, LUT_VERIFY_SAMPLES);
    if !report.pass {
        return Err(LutError::VerificationFailed {
            function: f.to_string(),
            domain: *domain,
            worst: report.worst_relative,
        });
    }
    Ok(approximation)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval::new(lo, hi).unwrap()
    }

    fn rounded(kind: FunctionKind, lo: f64, hi: f64) -> (f64, f64) {
        let r = round_bounds(kind, &iv(lo, hi)).unwrap();
        (r.lo, r.hi)
    }

    #[test]
    fn exp_lower_bound_examples() {
        assert_eq!(rounded(FunctionKind::Exp, -132.0, 1.0).0, -200.0);
        assert_eq!(rounded(FunctionKind::Exp, -0.456, 1.0).0, -0.5);
        assert_eq!(rounded(FunctionKind::Exp, -1.0, 1.0).0, -1.0);
        assert_eq!(rounded(FunctionKind::Exp, -7.3, 1.0).0, -8.0);
        assert_eq!(rounded(FunctionKind::Exp, 0.73, 1.0).0, 0.7);
    }

    #[test]
    fn exp_upper_bound_examples() {
        assert_eq!(rounded(FunctionKind::Exp, -300.0, -132.0).1, -100.0);
        assert_eq!(rounded(FunctionKind::Exp, -1.0, -0.456).1, -0.4);
        assert_eq!(rounded(FunctionKind::Exp, -1.0, 0.456).1, 0.46);
        assert_eq!(rounded(FunctionKind::Exp, -1.0, 2.001).1, 2.01);
        assert_eq!(rounded(FunctionKind::Exp, -1.0, -0.4).1, -0.4);
    }

    #[test]
    fn ln_examples() {
        assert_eq!(rounded(FunctionKind::Ln, 0.23, 1.0).0, 0.2);
        assert_eq!(rounded(FunctionKind::Ln, 0.0023, 1.0).0, 0.002);
        assert_eq!(rounded(FunctionKind::Ln, 12345.0, 20000.0).0, 12300.0);
        assert_eq!(rounded(FunctionKind::Ln, 0.1, 0.23).1, 0.3);
        assert_eq!(rounded(FunctionKind::Ln, 0.0001, 0.0001234).1, 0.01);
        assert_eq!(rounded(FunctionKind::Ln, 1.0, 4321.0).1, 5000.0);
        assert!(matches!(round_bounds(FunctionKind::Ln, &iv(0.0, 1.0)), Err(LutError::DomainViolation(_))));
    }

    #[test]
    fn trig_examples() {
        assert_eq!(rounded(FunctionKind::Sin, 0.07, 3.11), (0.0, 3.2));
        assert_eq!(rounded(FunctionKind::Cos, -0.05, 0.05), (-0.1, 0.1));
        let (lo, hi) = rounded(FunctionKind::Sin, 1.0, 20.0);
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 4.0 * TWO_PI);
        let (lo, _) = rounded(FunctionKind::Sin, -1.0, 20.0);
        assert_eq!(lo, -TWO_PI);
    }

    #[test]
    fn cache_hits_do_not_recompute() {
        let mut table = LookupTable::in_memory();
        let raw = iv(0.07, 3.11);
        let a = table.lookup_or_compute(FunctionKind::Sin, &raw, 0.1, Side::Under, 0.9).unwrap();
        assert_eq!((a.domain.lo, a.domain.hi), (0.0, 3.2));
        assert_eq!((table.hits(), table.misses()), (0, 1));
        let b = table.lookup_or_compute(FunctionKind::Sin, &iv(0.01, 3.2), 0.1, Side::Under, 0.9).unwrap();
        assert_eq!(a, b);
        assert_eq!((table.hits(), table.misses()), (1, 1));
        assert_eq!(table.len(), 1);
        assert!(para::verify_on(&a, &UnivariateFunction::sin(), &raw, 10_000).pass);
    }

    #[test]
    fn tiled_trig_domain_verifies() {
        for kind in [FunctionKind::Sin, FunctionKind::Cos] {
            for side in [Side::Under, Side::Over] {
                for eps in [1.0, 0.1, 0.01] {
                    let approx = compute_entry(kind, &iv(-TWO_PI, 2.0 * TWO_PI), eps, side, 0.9).unwrap();
                    approx.check_structure().unwrap();
                    let report = para::verify(&approx, &UnivariateFunction::new(kind), 100_000);
                    assert!(report.pass, "{kind:?} {side:?} {eps}: {report:?}");
                }
            }
        }
    }

    #[test]
    fn cache_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lut.jsonl");
        {
            let mut table = LookupTable::open(&path).unwrap();
            table.lookup_or_compute(FunctionKind::Exp, &iv(-0.456, 0.456), 0.1, Side::Under, 0.9).unwrap();
            table.lookup_or_compute(FunctionKind::Ln, &iv(0.23, 4.1), 0.1, Side::Over, 0.9).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let mut table = LookupTable::open(&path).unwrap();
        assert_eq!(table.len(), 2);
        table.lookup_or_compute(FunctionKind::Exp, &iv(-0.41, 0.455), 0.1, Side::Under, 0.9).unwrap();
        assert_eq!((table.hits(), table.misses()), (1, 0));
        table.save().unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn kind_strategy() -> impl Strategy<Value = (FunctionKind, f64, f64)> {
            prop_oneof![
                (-500.0..50.0f64, 0.0..100.0f64).prop_map(|(lo, w)| (FunctionKind::Exp, lo, lo + w)),
                (1e-4..1e4f64, 0.0..1e4f64).prop_map(|(lo, w)| (FunctionKind::Ln, lo, lo + w)),
                (-20.0..20.0f64, 0.0..30.0f64).prop_map(|(lo, w)| (FunctionKind::Sin, lo, lo + w)),
                (-20.0..20.0f64, 0.0..30.0f64).prop_map(|(lo, w)| (FunctionKind::Cos, lo, lo + w)),
            ]
        }

        proptest! {
            #![proptest_config(ProptestConfig { cases: 10_000, ..ProptestConfig::default() })]

            #[test]
            fn rounding_contains_and_is_idempotent((kind, lo, hi) in kind_strategy()) {
                let raw = iv(lo, hi);
                let r = round_bounds(kind, &raw).unwrap();
                prop_assert!(r.contains_interval(&raw), "{:?} {} -> {}", kind, raw, r);
                prop_assert_eq!(round_bounds(kind, &r).unwrap(), r);
            }
        }

        fn small_domains() -> impl Strategy<Value = (FunctionKind, f64, f64)> {
            prop_oneof![
                (-6.0..3.0f64, 0.01..4.0f64).prop_map(|(lo, w)| (FunctionKind::Exp, lo, lo + w)),
                (0.01..50.0f64, 0.01..50.0f64).prop_map(|(lo, w)| (FunctionKind::Ln, lo, lo + w)),
                (-10.0..10.0f64, 0.01..20.0f64).prop_map(|(lo, w)| (FunctionKind::Sin, lo, lo + w)),
                (-10.0..10.0f64, 0.01..20.0f64).prop_map(|(lo, w)| (FunctionKind::Cos, lo, lo + w)),
            ]
        }

        proptest! {
            #![proptest_config(ProptestConfig { cases: 40, ..ProptestConfig::default() })]

            #[test]
            fn entries_stay_valid_on_raw_domains(
                (kind, lo, hi) in small_domains(), over in any::<bool>(), eps_ix in 0..3usize,
            ) {
                let side = if over { Side::Over } else { Side::Under };
                let eps = [1.0, 0.1, 0.01][eps_ix];
                let raw = iv(lo, hi);
                let mut table = LookupTable::in_memory();
                let approx = table.lookup_or_compute(kind, &raw, eps, side, 0.9).unwrap();
                let report = para::verify_on(&approx, &UnivariateFunction::new(kind), &raw, 10_000);
                prop_assert!(report.pass, "{:?} {} {:?} {}: {:?}", kind, raw, side, eps, report);
            }
        }
    }
}
