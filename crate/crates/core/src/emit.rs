//! Relaxed models: PARA quadratic rows and PWL incremental-method blocks in
//! place of the univariate constraints of a [`FactoredProblem`], a text and
//! JSON serialisation, and a brute-force checker for small instances.
//!
//! The lp-text format is documented in `docs/lp-text.md`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{FactoredProblem, Row, Sense};
use crate::functions::{Interval, UnivariateFunction};
use crate::lut::{LookupTable, LutError};
use crate::para::{self, ParaApproximation, ParaError, Side};
use crate::pwl::{self, PwlApproximation, PwlError};

/// Largest number of continuous grid dimensions [`brute_force_check`] accepts.
pub const MAX_GRID_DIMENSIONS: usize = 2;
/// Largest number of values of an enumerated integer variable.
pub const MAX_INTEGER_VALUES: usize = 8;
const CHECK_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("constraint {constraint}: approximation domain {domain} does not cover the variable bounds {bounds}")]
    DomainMismatch { constraint: usize, domain: Interval, bounds: Interval },
    #[error("constraint {constraint}: approximation is for {found}, constraint uses {expected}")]
    FunctionMismatch { constraint: usize, expected: String, found: String },
    #[error("constraint {constraint}: missing {side} approximation")]
    MissingSide { constraint: usize, side: &'static str },
    #[error("expected {expected} approximations, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("{continuous} continuous grid dimensions exceed the limit of {MAX_GRID_DIMENSIONS}")]
    DimensionTooLarge { continuous: usize },
    #[error("integer variable {name} takes {values} values, more than {MAX_INTEGER_VALUES}")]
    TooManyIntegerValues { name: String, values: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Para(#[from] ParaError),
    #[error(transparent)]
    Pwl(#[from] PwlError),
    #[error(transparent)]
    Lut(#[from] LutError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Continuous,
    Integer,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVariable {
    pub name: String,
    pub lb: f64,
    pub ub: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    #[serde(flatten)]
    pub row: Row,
    /// Where the row comes from (Omega, which constraint, technique, piece).
    #[serde(default)]
    pub note: String,
}

/// One incremental-method block: `x = t_0 + sum_k (t_k - t_{k-1}) delta_k`
/// with binaries `u_1..u_{K-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalBlock {
    pub x: usize,
    pub breakpoints: Vec<f64>,
    pub binaries: Vec<usize>,
    pub deltas: Vec<usize>,
}

impl IncrementalBlock {
    /// Binary values selecting the piece containing `x`.
    pub fn binaries_at(&self, x: f64) -> Vec<f64> {
        self.breakpoints[1..self.breakpoints.len() - 1]
            .iter()
            .map(|t| if x >= *t { 1.0 } else { 0.0 })
            .collect()
    }
}

/// A minimisation model with linear and quadratic rows. The first
/// `base_variables` variables and `base_rows` rows are the unrelaxed part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedModel {
    pub variables: Vec<ModelVariable>,
    pub objective: Vec<(usize, f64)>,
    pub rows: Vec<ModelRow>,
    #[serde(default)]
    pub blocks: Vec<IncrementalBlock>,
    pub base_variables: usize,
    pub base_rows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub base_variables: usize,
    pub base_rows: usize,
    pub added_variables: usize,
    pub added_binaries: usize,
    pub added_rows: usize,
}

impl RelaxedModel {
    pub fn size_summary(&self) -> SizeSummary {
        SizeSummary {
            base_variables: self.base_variables,
            base_rows: self.base_rows,
            added_variables: self.variables.len() - self.base_variables,
            added_binaries: self.variables[self.base_variables..]
                .iter()
                .filter(|v| v.kind == VarKind::Binary)
                .count(),
            added_rows: self.rows.len() - self.base_rows,
        }
    }

    pub fn validate(&self) -> Result<(), EmitError> {
        let n = self.variables.len();
        let bad = |what: &str| Err(EmitError::InvalidModel(what.to_string()));
        if self.base_variables > n || self.base_rows > self.rows.len() {
            return bad("base counts exceed the model size");
        }
        let mut names = HashSet::new();
        for v in &self.variables {
            if !is_valid_name(&v.name) || !names.insert(v.name.as_str()) {
                return bad(&format!("variable name `{}` is invalid or repeated", v.name));
            }
            if !(v.lb.is_finite() && v.ub.is_finite() && v.lb <= v.ub) {
                return bad(&format!("variable {} needs finite bounds lb <= ub", v.name));
            }
        }
        let mut row_names = HashSet::new();
        for r in &self.rows {
            if !is_valid_name(&r.row.name) || !row_names.insert(r.row.name.as_str()) {
                return bad(&format!("row name `{}` is invalid or repeated", r.row.name));
            }
            if r.row.variables().any(|i| i >= n) || r.note.contains('\n') {
                return bad(&format!("row {} references an undeclared variable or has a multi-line note", r.row.name));
            }
        }
        if self.objective.iter().any(|(i, _)| *i >= n) {
            return bad("objective references an undeclared variable");
        }
        for b in &self.blocks {
            let k = b.breakpoints.len().saturating_sub(1);
            if k == 0 || b.deltas.len() != k || b.binaries.len() != k - 1 {
                return bad("incremental block needs K deltas and K - 1 binaries");
            }
            if b.x >= n || b.deltas.iter().chain(&b.binaries).any(|i| *i >= n) {
                return bad("incremental block references an undeclared variable");
            }
        }
        Ok(())
    }
}

fn is_valid_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

/// Hands out valid, unique names.
#[derive(Default)]
struct Names {
    used: HashSet<String>,
}

impl Names {
    fn claim(&mut self, wanted: &str) -> String {
        let mut base: String =
            wanted.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '_' }).collect();
        if !base.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_') {
            base.insert(0, '_');
        }
        let mut name = base.clone();
        let mut k = 1;
        while !self.used.insert(name.clone()) {
            k += 1;
            name = format!("{base}_{k}");
        }
        name
    }
}

struct Builder {
    model: RelaxedModel,
    var_names: Names,
    row_names: Names,
}

impl Builder {
    /// Copies variables, objective and Omega of the problem.
    fn from_problem(problem: &FactoredProblem) -> Self {
        let mut var_names = Names::default();
        let mut row_names = Names::default();
        let variables = problem
            .variables
            .iter()
            .map(|v| ModelVariable {
                name: var_names.claim(&v.name),
                lb: v.lb,
                ub: v.ub,
                kind: if v.integer { VarKind::Integer } else { VarKind::Continuous },
            })
            .collect::<Vec<_>>();
        let rows = problem
            .omega
            .iter()
            .map(|r| ModelRow { row: Row { name: row_names.claim(&r.name), ..r.clone() }, note: "omega".into() })
            .collect::<Vec<_>>();
        let model = RelaxedModel {
            base_variables: variables.len(),
            base_rows: rows.len(),
            variables,
            objective: problem.objective.clone(),
            rows,
            blocks: Vec::new(),
        };
        Builder { model, var_names, row_names }
    }

    fn add_var(&mut self, name: &str, lb: f64, ub: f64, kind: VarKind) -> usize {
        let name = self.var_names.claim(name);
        self.model.variables.push(ModelVariable { name, lb, ub, kind });
        self.model.variables.len() - 1
    }

    fn add_row(
        &mut self,
        name: &str,
        linear: Vec<(usize, f64)>,
        quadratic: Vec<(usize, usize, f64)>,
        sense: Sense,
        rhs: f64,
        note: String,
    ) {
        let name = self.row_names.claim(name);
        self.model.rows.push(ModelRow { row: Row { name, linear, quadratic, sense, rhs }, note });
    }
}

/// Approximations for one univariate constraint: `under` relaxes
/// `f(x) <= y`, `over` relaxes `f(x) >= y`; equalities need both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaRelaxation {
    pub under: Option<ParaApproximation>,
    pub over: Option<ParaApproximation>,
}

fn needs_under(sense: Sense) -> bool {
    matches!(sense, Sense::Le | Sense::Eq)
}

fn needs_over(sense: Sense) -> bool {
    matches!(sense, Sense::Ge | Sense::Eq)
}

fn check_cover(
    j: usize,
    expected: &UnivariateFunction,
    found: &UnivariateFunction,
    domain: &Interval,
    bounds: Interval,
) -> Result<(), EmitError> {
    if expected != found {
        return Err(EmitError::FunctionMismatch { constraint: j, expected: expected.to_string(), found: found.to_string() });
    }
    if !domain.contains_interval(&bounds) {
        return Err(EmitError::DomainMismatch { constraint: j, domain: *domain, bounds });
    }
    Ok(())
}

/// Computes the PARA approximations needed by every univariate constraint,
/// going through the look-up table for unscaled sin, cos, exp and ln.
pub fn para_relaxations(
    problem: &FactoredProblem,
    eps: f64,
    lambda: f64,
    mut table: Option<&mut LookupTable>,
) -> Result<Vec<ParaRelaxation>, EmitError> {
    let mut out = Vec::with_capacity(problem.univariate.len());
    for u in &problem.univariate {
        let bounds = problem.variables[u.x].bounds();
        let mut side = |side: Side| -> Result<ParaApproximation, EmitError> {
            let plain = UnivariateFunction::new(u.function.kind) == u.function;
            match table.as_deref_mut() {
                Some(t) if plain => Ok(t.lookup_or_compute(u.function.kind, &bounds, eps, side, lambda)?),
                _ => Ok(para::approximate(&u.function, &bounds, eps, side, lambda)?),
            }
        };
        let under = if needs_under(u.sense) { Some(side(Side::Under)?) } else { None };
        let over = if needs_over(u.sense) { Some(side(Side::Over)?) } else { None };
        out.push(ParaRelaxation { under, over });
    }
    Ok(out)
}

/// Computes the shifted PWL relaxation of every univariate constraint.
pub fn pwl_relaxations(problem: &FactoredProblem, eps: f64) -> Result<Vec<PwlApproximation>, EmitError> {
    problem
        .univariate
        .iter()
        .map(|u| Ok(pwl::relax_shift(&u.function, &problem.variables[u.x].bounds(), eps)?))
        .collect()
}

/// Replaces each univariate constraint by one row per parabola:
/// `p_k(x) <= y` from the under side and `y <= P_k(x)` from the over side.
pub fn emit_para(problem: &FactoredProblem, relaxations: &[ParaRelaxation]) -> Result<RelaxedModel, EmitError> {
    if relaxations.len() != problem.univariate.len() {
        return Err(EmitError::CountMismatch { expected: problem.univariate.len(), got: relaxations.len() });
    }
    let mut b = Builder::from_problem(problem);
    for (j, (u, rel)) in problem.univariate.iter().zip(relaxations).enumerate() {
        let bounds = problem.variables[u.x].bounds();
        for (side, approx, needed) in [
            (Side::Under, &rel.under, needs_under(u.sense)),
            (Side::Over, &rel.over, needs_over(u.sense)),
        ] {
            if !needed {
                continue;
            }
            let approx = approx.as_ref().ok_or(EmitError::MissingSide { constraint: j, side: side.name() })?;
            check_cover(j, &u.function, &approx.function_for(side), &approx.domain, bounds)?;
            let sense = if side == Side::Under { Sense::Le } else { Sense::Ge };
            let k_total = approx.len();
            for (k, piece) in approx.pieces.iter().enumerate() {
                let p = piece.parabola;
                b.add_row(
                    &format!("para_{}_{}{}", j + 1, side.name(), k + 1),
                    vec![(u.x, p.b), (u.y, -1.0)],
                    vec![(u.x, u.x, p.a)],
                    sense,
                    -p.c,
                    format!(
                        "{} {} y={}: para {} piece {} of {} on [{}, {}]",
                        u.function,
                        side_relation(side),
                        problem.variables[u.y].name,
                        side.name(),
                        k + 1,
                        k_total,
                        piece.domain.lo,
                        piece.domain.hi
                    ),
                );
            }
        }
    }
    Ok(b.model)
}

fn side_relation(side: Side) -> &'static str {
    match side {
        Side::Under => "<=",
        Side::Over => ">=",
    }
}

impl ParaApproximation {
    /// The function being approximated, independent of how the over side
    /// stores it.
    fn function_for(&self, _side: Side) -> UnivariateFunction {
        self.function
    }
}

/// Replaces each univariate constraint by an incremental-method block: `K`
/// fill variables `delta_k` in `[0, 1]`, `K - 1` binaries `u_k`, the chain
/// `delta_{k+1} <= u_k <= delta_k`, the equality linking `x`, and the
/// shifted interpolation value `w(delta)` bounding `y` from below
/// (`w <= y`), from above (`y <= w + eps`) or both.
pub fn emit_pwl(problem: &FactoredProblem, relaxations: &[PwlApproximation]) -> Result<RelaxedModel, EmitError> {
    if relaxations.len() != problem.univariate.len() {
        return Err(EmitError::CountMismatch { expected: problem.univariate.len(), got: relaxations.len() });
    }
    let mut b = Builder::from_problem(problem);
    for (j, (u, pwl)) in problem.univariate.iter().zip(relaxations).enumerate() {
        let bounds = problem.variables[u.x].bounds();
        check_cover(j, &u.function, &pwl.function, &pwl.domain, bounds)?;
        pwl.check_structure().map_err(EmitError::InvalidModel)?;
        let tag = format!("{} y={}", u.function, problem.variables[u.y].name);
        let id = j + 1;
        let k_total = pwl.pieces();
        let t = &pwl.breakpoints;
        let w: Vec<f64> = pwl.shifted_values().collect();

        let deltas: Vec<usize> =
            (1..=k_total).map(|k| b.add_var(&format!("d_{id}_{k}"), 0.0, 1.0, VarKind::Continuous)).collect();
        let binaries: Vec<usize> =
            (1..k_total).map(|k| b.add_var(&format!("u_{id}_{k}"), 0.0, 1.0, VarKind::Binary)).collect();

        for k in 0..binaries.len() {
            b.add_row(
                &format!("pwl_{id}_inc{}", k + 1),
                vec![(deltas[k + 1], 1.0), (binaries[k], -1.0)],
                vec![],
                Sense::Le,
                0.0,
                format!("{tag}: pwl delta_{} <= u_{}", k + 2, k + 1),
            );
            b.add_row(
                &format!("pwl_{id}_gate{}", k + 1),
                vec![(binaries[k], 1.0), (deltas[k], -1.0)],
                vec![],
                Sense::Le,
                0.0,
                format!("{tag}: pwl u_{} <= delta_{}", k + 1, k + 1),
            );
        }

        let mut link = vec![(u.x, 1.0)];
        link.extend(deltas.iter().enumerate().map(|(k, d)| (*d, -(t[k + 1] - t[k]))));
        b.add_row(&format!("pwl_{id}_x"), link, vec![], Sense::Eq, t[0], format!("{tag}: pwl x value"));

        // w(delta) = w_0 + sum_k (w_k - w_{k-1}) delta_k, used inline.
        let w_terms: Vec<(usize, f64)> = deltas.iter().enumerate().map(|(k, d)| (*d, w[k + 1] - w[k])).collect();
        let mut y_terms = w_terms.clone();
        y_terms.push((u.y, -1.0));
        if needs_under(u.sense) {
            b.add_row(
                &format!("pwl_{id}_w"),
                y_terms.clone(),
                vec![],
                Sense::Le,
                -w[0],
                format!("{tag}: pwl w <= y, {k_total} pieces"),
            );
        }
        if needs_over(u.sense) {
            b.add_row(
                &format!("pwl_{id}_w_up"),
                y_terms,
                vec![],
                Sense::Ge,
                -w[0] - pwl.relaxation_tolerance(),
                format!("{tag}: pwl y <= w + eps, {k_total} pieces"),
            );
        }
        b.model.blocks.push(IncrementalBlock { x: u.x, breakpoints: t.clone(), binaries, deltas });
    }
    Ok(b.model)
}

// ---------------------------------------------------------------------------
// Serialisation

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFormat {
    LpText,
    Json,
}

impl std::str::FromStr for ModelFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lp" | "lp-text" => Ok(ModelFormat::LpText),
            "json" => Ok(ModelFormat::Json),
            other => Err(format!("unknown model format `{other}` (use lp or json)")),
        }
    }
}

pub fn write_model(model: &RelaxedModel, format: ModelFormat) -> String {
    match format {
        ModelFormat::Json => serde_json::to_string_pretty(model).expect("models serialise") + "\n",
        ModelFormat::LpText => write_lp(model),
    }
}

pub fn read_model(text: &str, format: ModelFormat) -> Result<RelaxedModel, EmitError> {
    let model = match format {
        ModelFormat::Json => {
            serde_json::from_str(text).map_err(|e| EmitError::Parse { line: e.line(), msg: e.to_string() })?
        }
        ModelFormat::LpText => read_lp(text)?,
    };
    model.validate()?;
    Ok(model)
}

fn push_term(out: &mut String, coef: f64, body: &str) {
    let sign = if coef.is_sign_negative() { '-' } else { '+' };
    let _ = write!(out, " {sign} {} {body}", coef.abs());
}

fn write_terms(out: &mut String, m: &RelaxedModel, linear: &[(usize, f64)], quadratic: &[(usize, usize, f64)]) {
    if linear.is_empty() && quadratic.is_empty() {
        out.push_str(" 0");
        return;
    }
    let name = |i: usize| m.variables[i].name.as_str();
    for (i, c) in linear {
        push_term(out, *c, name(*i));
    }
    for (i, j, c) in quadratic {
        if i == j {
            push_term(out, *c, &format!("{}^2", name(*i)));
        } else {
            push_term(out, *c, &format!("{} * {}", name(*i), name(*j)));
        }
    }
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn write_lp(m: &RelaxedModel) -> String {
    let mut out = String::new();
    out.push_str("\\ relaxed model\n");
    let _ = writeln!(out, "\\ base variables={} rows={}", m.base_variables, m.base_rows);
    for b in &m.blocks {
        let names = |v: &[usize]| v.iter().map(|i| m.variables[*i].name.as_str()).collect::<Vec<_>>().join(",");
        let _ = writeln!(
            out,
            "\\ incremental x={} t={} u={} delta={}",
            m.variables[b.x].name,
            join_f64(&b.breakpoints),
            names(&b.binaries),
            names(&b.deltas)
        );
    }
    out.push_str("OBJECTIVE\n obj:");
    write_terms(&mut out, m, &m.objective, &[]);
    out.push_str("\nSUBJECT TO\n");
    for r in &m.rows {
        if !r.note.is_empty() {
            let _ = writeln!(out, " \\ {}", r.note);
        }
        let _ = write!(out, " {}:", r.row.name);
        write_terms(&mut out, m, &r.row.linear, &r.row.quadratic);
        let _ = writeln!(out, " {} {}", r.row.sense.symbol(), r.row.rhs);
    }
    out.push_str("BOUNDS\n");
    for v in &m.variables {
        let _ = writeln!(out, " {} <= {} <= {}", v.lb, v.name, v.ub);
    }
    for (section, kind) in [("GENERAL", VarKind::Integer), ("BINARY", VarKind::Binary)] {
        let names: Vec<&str> = m.variables.iter().filter(|v| v.kind == kind).map(|v| v.name.as_str()).collect();
        if !names.is_empty() {
            let _ = writeln!(out, "{section}");
            for n in names {
                let _ = writeln!(out, " {n}");
            }
        }
    }
    out.push_str("END\n");
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Header,
    Objective,
    Constraints,
    Bounds,
    General,
    Binary,
    End,
}

struct LpReader {
    line: usize,
}

impl LpReader {
    fn err(&self, msg: impl Into<String>) -> EmitError {
        EmitError::Parse { line: self.line, msg: msg.into() }
    }

    fn number(&self, tok: &str) -> Result<f64, EmitError> {
        tok.parse::<f64>().map_err(|_| self.err(format!("expected a number, found `{tok}`")))
    }

    fn var(&self, index: &HashMap<String, usize>, tok: &str) -> Result<usize, EmitError> {
        index.get(tok).copied().ok_or_else(|| self.err(format!("undeclared variable `{tok}`")))
    }

    /// Parses `(+|-) coef body ...` until a sense token or the end.
    #[allow(clippy::type_complexity)]
    fn terms<'t>(
        &self,
        toks: &[&'t str],
        index: &HashMap<String, usize>,
    ) -> Result<(Vec<(usize, f64)>, Vec<(usize, usize, f64)>, usize), EmitError> {
        let (mut linear, mut quadratic) = (Vec::new(), Vec::new());
        let mut i = 0;
        if toks.first() == Some(&"0") {
            return Ok((linear, quadratic, 1));
        }
        while i < toks.len() && (toks[i] == "+" || toks[i] == "-") {
            let negative = toks[i] == "-";
            let coef = self.number(toks.get(i + 1).ok_or_else(|| self.err("missing coefficient"))?)?;
            let coef = if negative { -coef } else { coef };
            let body = *toks.get(i + 2).ok_or_else(|| self.err("missing variable"))?;
            i += 3;
            if let Some(base) = body.strip_suffix("^2") {
                let v = self.var(index, base)?;
                quadratic.push((v, v, coef));
            } else if toks.get(i) == Some(&"*") {
                let other = *toks.get(i + 1).ok_or_else(|| self.err("missing second factor"))?;
                quadratic.push((self.var(index, body)?, self.var(index, other)?, coef));
                i += 2;
            } else {
                linear.push((self.var(index, body)?, coef));
            }
        }
        Ok((linear, quadratic, i))
    }
}

struct PendingBlock {
    line: usize,
    x: String,
    t: Vec<f64>,
    u: Vec<String>,
    delta: Vec<String>,
}

fn read_lp(text: &str) -> Result<RelaxedModel, EmitError> {
    let mut r = LpReader { line: 0 };
    let mut section = Section::Header;
    let mut base: Option<(usize, usize)> = None;
    let mut pending_blocks = Vec::new();
    let mut objective_line: Option<(usize, String)> = None;
    let mut row_lines: Vec<(usize, String, String)> = Vec::new();
    let mut note = String::new();
    let mut variables: Vec<ModelVariable> = Vec::new();

    for (n, raw) in text.lines().enumerate() {
        r.line = n + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if !raw.starts_with(' ') {
            section = match trimmed {
                "OBJECTIVE" => Section::Objective,
                "SUBJECT TO" => Section::Constraints,
                "BOUNDS" => Section::Bounds,
                "GENERAL" => Section::General,
                "BINARY" => Section::Binary,
                "END" => Section::End,
                _ if trimmed.starts_with('\\') && section == Section::Header => {
                    let body = trimmed[1..].trim();
                    if let Some(rest) = body.strip_prefix("base ") {
                        let kv = parse_kv(rest);
                        let get = |k: &str| kv.get(k).and_then(|v| v.parse::<usize>().ok());
                        base = Some((
                            get("variables").ok_or_else(|| r.err("bad base line"))?,
                            get("rows").ok_or_else(|| r.err("bad base line"))?,
                        ));
                    } else if let Some(rest) = body.strip_prefix("incremental ") {
                        let kv = parse_kv(rest);
                        let list = |k: &str| -> Vec<String> {
                            kv.get(k).map(|v| v.split(',').filter(|s| !s.is_empty()).map(String::from).collect()).unwrap_or_default()
                        };
                        let t = list("t").iter().map(|s| r.number(s)).collect::<Result<Vec<_>, _>>()?;
                        pending_blocks.push(PendingBlock {
                            line: r.line,
                            x: kv.get("x").cloned().ok_or_else(|| r.err("incremental block without x"))?,
                            t,
                            u: list("u"),
                            delta: list("delta"),
                        });
                    }
                    continue;
                }
                _ if trimmed.starts_with('\\') => continue,
                other => return Err(r.err(format!("unknown section `{other}`"))),
            };
            continue;
        }
        match section {
            Section::Header | Section::End => return Err(r.err("content outside a section")),
            Section::Objective => {
                let body = trimmed.strip_prefix("obj:").ok_or_else(|| r.err("expected `obj:`"))?;
                objective_line = Some((r.line, body.to_string()));
            }
            Section::Constraints => {
                if let Some(text) = trimmed.strip_prefix('\\') {
                    note = text.strip_prefix(' ').unwrap_or(text).to_string();
                    continue;
                }
                let (name, body) = trimmed.split_once(':').ok_or_else(|| r.err("expected `name:`"))?;
                row_lines.push((r.line, name.trim().to_string(), body.to_string()));
                row_lines.last_mut().unwrap().2.push('\u{0}');
                row_lines.last_mut().unwrap().2.push_str(&std::mem::take(&mut note));
            }
            Section::Bounds => {
                let toks: Vec<&str> = trimmed.split_whitespace().collect();
                if toks.len() != 5 || toks[1] != "<=" || toks[3] != "<=" {
                    return Err(r.err("expected `lb <= name <= ub`"));
                }
                variables.push(ModelVariable {
                    name: toks[2].to_string(),
                    lb: r.number(toks[0])?,
                    ub: r.number(toks[4])?,
                    kind: VarKind::Continuous,
                });
            }
            Section::General | Section::Binary => {
                let kind = if section == Section::General { VarKind::Integer } else { VarKind::Binary };
                let v = variables
                    .iter_mut()
                    .find(|v| v.name == trimmed)
                    .ok_or_else(|| r.err(format!("undeclared variable `{trimmed}`")))?;
                v.kind = kind;
            }
        }
    }
    if section != Section::End {
        return Err(EmitError::Parse { line: r.line, msg: "missing END".into() });
    }

    let index: HashMap<String, usize> = variables.iter().enumerate().map(|(i, v)| (v.name.clone(), i)).collect();
    let objective = match objective_line {
        Some((line, body)) => {
            r.line = line;
            let toks: Vec<&str> = body.split_whitespace().collect();
            let (lin, quad, used) = r.terms(&toks, &index)?;
            if !quad.is_empty() || used != toks.len() {
                return Err(r.err("objective must be linear"));
            }
            lin
        }
        None => return Err(EmitError::Parse { line: 0, msg: "missing OBJECTIVE".into() }),
    };
    let mut rows = Vec::new();
    for (line, name, body) in row_lines {
        r.line = line;
        let (body, note) = body.split_once('\u{0}').unwrap();
        let toks: Vec<&str> = body.split_whitespace().collect();
        let (linear, quadratic, used) = r.terms(&toks, &index)?;
        if toks.len() != used + 2 {
            return Err(r.err("expected `<sense> <rhs>` after the terms"));
        }
        let sense = match toks[used] {
            "<=" => Sense::Le,
            ">=" => Sense::Ge,
            "=" => Sense::Eq,
            other => return Err(r.err(format!("unknown sense `{other}`"))),
        };
        let rhs = r.number(toks[used + 1])?;
        rows.push(ModelRow { row: Row { name, linear, quadratic, sense, rhs }, note: note.to_string() });
    }
    let mut blocks = Vec::new();
    for p in pending_blocks {
        r.line = p.line;
        let lookup = |names: &[String]| names.iter().map(|s| r.var(&index, s)).collect::<Result<Vec<_>, _>>();
        blocks.push(IncrementalBlock {
            x: r.var(&index, &p.x)?,
            breakpoints: p.t,
            binaries: lookup(&p.u)?,
            deltas: lookup(&p.delta)?,
        });
    }
    let (base_variables, base_rows) = base.unwrap_or((variables.len(), rows.len()));
    Ok(RelaxedModel { variables, objective, rows, blocks, base_variables, base_rows })
}

fn parse_kv(text: &str) -> BTreeMap<String, String> {
    text.split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

// ---------------------------------------------------------------------------
// Brute-force checking

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub grid_points: usize,
    pub epsilon: f64,
    pub original_optimum: f64,
    pub relaxed_optimum: f64,
    pub original_argmin: Vec<f64>,
    pub relaxed_argmin: Vec<f64>,
    /// Grid points feasible for the original but not for the relaxation, or
    /// with a larger relaxed than original value.
    pub pointwise_violations: usize,
    /// `relaxed <= original`.
    pub relaxation_holds: bool,
    /// `original <= relaxed + epsilon`.
    pub gap_within_epsilon: bool,
    pub pass: bool,
}

/// Variable values that are fixed by the grid, and the rest solved as an LP.
struct GridSpec {
    /// (variable index, candidate values)
    axes: Vec<(usize, Vec<f64>)>,
    points: usize,
}

impl GridSpec {
    fn point(&self, mut k: usize) -> Vec<(usize, f64)> {
        self.axes
            .iter()
            .map(|(i, vals)| {
                let v = vals[k % vals.len()];
                k /= vals.len();
                (*i, v)
            })
            .collect()
    }
}

fn build_grid(
    original: &FactoredProblem,
    model: &RelaxedModel,
    grid: usize,
) -> Result<GridSpec, EmitError> {
    let n = original.variables.len();
    let mut continuous: Vec<usize> = Vec::new();
    let mark = |i: usize, list: &mut Vec<usize>| {
        if i < n && !original.variables[i].integer && !list.contains(&i) {
            list.push(i);
        }
    };
    for u in &original.univariate {
        mark(u.x, &mut continuous);
    }
    for r in &original.omega {
        for (i, j, _) in &r.quadratic {
            mark(*i, &mut continuous);
            mark(*j, &mut continuous);
        }
    }
    for r in &model.rows {
        for (i, j, _) in &r.row.quadratic {
            mark(*i, &mut continuous);
            mark(*j, &mut continuous);
        }
    }
    for b in &model.blocks {
        mark(b.x, &mut continuous);
    }
    continuous.sort_unstable();
    if continuous.len() > MAX_GRID_DIMENSIONS {
        return Err(EmitError::DimensionTooLarge { continuous: continuous.len() });
    }
    if model.rows.iter().any(|r| r.row.quadratic.iter().any(|(i, j, _)| *i >= n || *j >= n)) {
        return Err(EmitError::InvalidModel("quadratic terms on added variables are not supported by the checker".into()));
    }

    let mut axes: Vec<(usize, Vec<f64>)> = Vec::new();
    for (i, v) in original.variables.iter().enumerate() {
        if v.integer {
            let (lo, hi) = (v.lb.ceil(), v.ub.floor());
            let count = if hi >= lo { (hi - lo) as usize + 1 } else { 0 };
            if count > MAX_INTEGER_VALUES {
                return Err(EmitError::TooManyIntegerValues { name: v.name.clone(), values: count });
            }
            axes.push((i, (0..count).map(|k| lo + k as f64).collect()));
        }
    }
    let per_axis = match continuous.len() {
        0 => 1,
        1 => grid.max(2),
        _ => ((grid as f64).sqrt().floor() as usize).max(2),
    };
    for &i in &continuous {
        let b = original.variables[i].bounds();
        axes.push((i, b.samples(per_axis).collect()));
    }
    let points = axes.iter().map(|(_, v)| v.len()).product();
    Ok(GridSpec { axes, points })
}

/// Minimises the objective over the variables not fixed in `fixed`,
/// subject to `rows` and per-variable bounds.
fn restricted_lp<'r>(
    bounds: &[(f64, f64)],
    objective: &[(usize, f64)],
    rows: impl Iterator<Item = &'r Row>,
    fixed: &[Option<f64>],
) -> Option<f64> {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let mut obj = vec![0.0; bounds.len()];
    let mut constant = 0.0;
    for (i, c) in objective {
        match fixed[*i] {
            Some(v) => constant += c * v,
            None => obj[*i] += c,
        }
    }
    for (i, (lo, hi)) in bounds.iter().enumerate() {
        if fixed[i].is_none() && lo > hi {
            return None;
        }
    }
    let vars: Vec<Option<minilp::Variable>> = bounds
        .iter()
        .enumerate()
        .map(|(i, (lo, hi))| fixed[i].is_none().then(|| lp.add_var(obj[i], (*lo, *hi))))
        .collect();
    let has_free = vars.iter().any(Option::is_some);
    for r in rows {
        let mut coeffs: BTreeMap<usize, f64> = BTreeMap::new();
        let mut rhs = r.rhs;
        for (i, c) in &r.linear {
            match fixed[*i] {
                Some(v) => rhs -= c * v,
                None => *coeffs.entry(*i).or_insert(0.0) += c,
            }
        }
        for (i, j, c) in &r.quadratic {
            match (fixed[*i], fixed[*j]) {
                (Some(a), Some(b)) => rhs -= c * a * b,
                (Some(a), None) => *coeffs.entry(*j).or_insert(0.0) += c * a,
                (None, Some(b)) => *coeffs.entry(*i).or_insert(0.0) += c * b,
                (None, None) => unreachable!("quadratic terms are fixed by the grid"),
            }
        }
        coeffs.retain(|_, c| *c != 0.0);
        if coeffs.is_empty() {
            if !r.sense.holds(0.0, rhs, CHECK_TOL * (1.0 + rhs.abs())) {
                return None;
            }
            continue;
        }
        let op = match r.sense {
            Sense::Le => ComparisonOp::Le,
            Sense::Ge => ComparisonOp::Ge,
            Sense::Eq => ComparisonOp::Eq,
        };
        let expr: Vec<(minilp::Variable, f64)> = coeffs.iter().map(|(i, c)| (vars[*i].unwrap(), *c)).collect();
        lp.add_constraint(expr.as_slice(), op, rhs);
    }
    if !has_free {
        return Some(constant);
    }
    lp.solve().ok().map(|s| s.objective() + constant)
}

fn original_value(problem: &FactoredProblem, point: &[(usize, f64)]) -> Option<f64> {
    let n = problem.variables.len();
    let mut fixed = vec![None; n];
    for (i, v) in point {
        fixed[*i] = Some(*v);
    }
    let mut bounds: Vec<(f64, f64)> = problem.variables.iter().map(|v| (v.lb, v.ub)).collect();
    for u in &problem.univariate {
        let fx = u.function.value(fixed[u.x].expect("univariate arguments are on the grid"));
        match fixed[u.y] {
            Some(y) => {
                if !u.sense.holds(fx, y, CHECK_TOL * (1.0 + fx.abs())) {
                    return None;
                }
            }
            None => {
                let b = &mut bounds[u.y];
                if needs_under(u.sense) {
                    b.0 = b.0.max(fx);
                }
                if needs_over(u.sense) {
                    b.1 = b.1.min(fx);
                }
                if b.0 > b.1 && b.0 - b.1 <= CHECK_TOL * (1.0 + fx.abs()) {
                    b.1 = b.0;
                }
            }
        }
    }
    restricted_lp(&bounds, &problem.objective, problem.omega.iter(), &fixed)
}

fn relaxed_value(model: &RelaxedModel, point: &[(usize, f64)]) -> Option<f64> {
    let mut fixed = vec![None; model.variables.len()];
    for (i, v) in point {
        fixed[*i] = Some(*v);
    }
    for b in &model.blocks {
        let x = fixed[b.x].expect("block arguments are on the grid");
        for (u, v) in b.binaries.iter().zip(b.binaries_at(x)) {
            fixed[*u] = Some(v);
        }
    }
    let bounds: Vec<(f64, f64)> = model.variables.iter().map(|v| (v.lb, v.ub)).collect();
    restricted_lp(&bounds, &model.objective, model.rows.iter().map(|r| &r.row), &fixed)
}

/// Grid enumeration of the original problem and its relaxation.
///
/// Integer variables are enumerated, the (at most two) continuous variables
/// entering univariate or quadratic terms are sampled on a grid of about
/// `grid` points, binaries of incremental blocks follow from `x`, and the
/// remaining variables are optimised by an LP at every grid point. Passes
/// when `relaxed <= original <= relaxed + epsilon` up to `1e-9`.
pub fn brute_force_check(
    model: &RelaxedModel,
    original: &FactoredProblem,
    grid: usize,
    epsilon: f64,
) -> Result<CheckReport, EmitError> {
    model.validate()?;
    if model.base_variables != original.variables.len() {
        return Err(EmitError::InvalidModel("model was not built from this problem".into()));
    }
    let spec = build_grid(original, model, grid)?;
    let results: Vec<(Option<f64>, Option<f64>)> = (0..spec.points)
        .into_par_iter()
        .map(|k| {
            let p = spec.point(k);
            (original_value(original, &p), relaxed_value(model, &p))
        })
        .collect();

    let best = |pick: &dyn Fn(&(Option<f64>, Option<f64>)) -> Option<f64>| {
        let mut best: Option<(usize, f64)> = None;
        for (k, r) in results.iter().enumerate() {
            if let Some(v) = pick(r) {
                if best.map_or(true, |(_, b)| v < b) {
                    best = Some((k, v));
                }
            }
        }
        best
    };
    let point_values = |k: Option<(usize, f64)>| -> Vec<f64> {
        let mut v: Vec<(usize, f64)> = k.map(|(k, _)| spec.point(k)).unwrap_or_default();
        v.sort_by_key(|(i, _)| *i);
        v.into_iter().map(|(_, x)| x).collect()
    };
    let orig = best(&|r| r.0);
    let relax = best(&|r| r.1);
    let pointwise_violations = results
        .iter()
        .filter(|(o, r)| match (o, r) {
            (Some(o), Some(r)) => *r > o + CHECK_TOL * (1.0 + o.abs()),
            (Some(_), None) => true,
            _ => false,
        })
        .count();
    let original_optimum = orig.map_or(f64::INFINITY, |(_, v)| v);
    let relaxed_optimum = relax.map_or(f64::INFINITY, |(_, v)| v);
    let tol = CHECK_TOL * (1.0 + original_optimum.abs().min(1e300));
    let relaxation_holds = relaxed_optimum <= original_optimum + tol;
    let gap_within_epsilon = original_optimum <= relaxed_optimum + epsilon + tol;
    Ok(CheckReport {
        grid_points: spec.points,
        epsilon,
        original_optimum,
        relaxed_optimum,
        original_argmin: point_values(orig),
        relaxed_argmin: point_values(relax),
        pointwise_violations,
        relaxation_holds,
        gap_within_epsilon,
        pass: relaxation_holds && gap_within_epsilon && pointwise_violations == 0 && orig.is_some(),
    })
}
