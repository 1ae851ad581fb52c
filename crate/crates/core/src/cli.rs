//! Batch front-end: approximations, count tables, relaxed models, plot data
//! and look-up-table management.
//!
//! Exit codes: 0 success, 2 verification failure, 3 computation error,
//! 4 bad input (arguments, problem files, parse or reformulation errors).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emit::{self, EmitError, ModelFormat, RelaxedModel};
use crate::expr::{ExprError, FactoredProblem, ProblemEnvelope};
use crate::functions::{parse_function, parse_interval, parse_real, FunctionError, Interval, UnivariateFunction};
use crate::lut::{LookupTable, LutError};
use crate::para::{self, ParaApproximation, ParaError, Side, ViolationReport, DEFAULT_LAMBDA, VERIFY_SLACK};
use crate::pwl::{self, PwlApproximation, PwlError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 2;
pub const EXIT_COMPUTE: i32 = 3;
pub const EXIT_INPUT: i32 = 4;

pub const DEFAULT_VERIFY_SAMPLES: usize = 100_000;

/// Domains of the sin and exp count tables.
pub const SIN_TABLE_DOMAINS: [&str; 6] = ["-pi/2:pi/2", "pi/2:3pi/2", "-pi/2:3pi/2", "0:pi", "pi:2pi", "0:2pi"];
pub const EXP_TABLE_DOMAINS: [&str; 6] = ["-5:-2", "-2:2", "-5:2", "2:5", "-2:5", "-5:5"];
pub const TABLE_EPSILONS: [f64; 4] = [1.0, 0.1, 0.01, 0.001];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Function(#[from] FunctionError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Para(#[from] ParaError),
    #[error(transparent)]
    Pwl(#[from] PwlError),
    #[error(transparent)]
    Lut(#[from] LutError),
    #[error(transparent)]
    Emit(#[from] EmitError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => EXIT_VERIFY,
            CliError::Input(_) | CliError::Expr(_) | CliError::Function(_) | CliError::Io { .. } => EXIT_INPUT,
            CliError::Emit(EmitError::Parse { .. } | EmitError::InvalidModel(_)) => EXIT_INPUT,
            CliError::Lut(LutError::Io { .. } | LutError::Corrupt { .. } | LutError::DomainViolation(..)) => EXIT_INPUT,
            CliError::Para(ParaError::Function(_) | ParaError::InvalidInput(_) | ParaError::DegenerateDomain(_)) => EXIT_INPUT,
            CliError::Pwl(PwlError::Function(_) | PwlError::InvalidInput(_)) => EXIT_INPUT,
            _ => EXIT_COMPUTE,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn check_job(eps: f64, lambda: f64) -> Result<(), CliError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(CliError::Input(format!("eps must be positive, got {eps}")));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(CliError::Input(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Approximation artifacts

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlReport {
    pub samples: usize,
    /// Largest sandwich violation divided by `1 + |f|`.
    pub worst_relative: f64,
    pub pass: bool,
}

pub fn verify_pwl(pwl: &PwlApproximation, samples: usize) -> PwlReport {
    let worst_relative = pwl::sandwich_violation(&pwl.function, pwl, samples);
    PwlReport { samples, worst_relative, pass: worst_relative <= VERIFY_SLACK }
}

/// An approximation together with its verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "technique", rename_all = "lowercase")]
pub enum Artifact {
    Para { approximation: ParaApproximation, verification: ViolationReport },
    Pwl { approximation: PwlApproximation, verification: PwlReport },
}

impl Artifact {
    pub fn pieces(&self) -> usize {
        match self {
            Artifact::Para { approximation, .. } => approximation.len(),
            Artifact::Pwl { approximation, .. } => approximation.pieces(),
        }
    }

    pub fn passed(&self) -> bool {
        match self {
            Artifact::Para { verification, .. } => verification.pass,
            Artifact::Pwl { verification, .. } => verification.pass,
        }
    }

    pub fn function(&self) -> &UnivariateFunction {
        match self {
            Artifact::Para { approximation, .. } => &approximation.function,
            Artifact::Pwl { approximation, .. } => &approximation.function,
        }
    }

    pub fn domain(&self) -> Interval {
        match self {
            Artifact::Para { approximation, .. } => approximation.domain,
            Artifact::Pwl { approximation, .. } => approximation.domain,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("artifacts serialise") + "\n"
    }
}

pub fn approx_para(
    f: &UnivariateFunction,
    domain: &Interval,
    eps: f64,
    side: Side,
    lambda: f64,
    samples: usize,
) -> Result<Artifact, CliError> {
    check_job(eps, lambda)?;
    let approximation = para::approximate(f, domain, eps, side, lambda)?;
    let verification = para::verify(&approximation, f, samples);
    Ok(Artifact::Para { approximation, verification })
}

pub fn approx_pwl(f: &UnivariateFunction, domain: &Interval, eps: f64, samples: usize) -> Result<Artifact, CliError> {
    check_job(eps, DEFAULT_LAMBDA)?;
    let approximation = pwl::relax_shift(f, domain, eps)?;
    let verification = verify_pwl(&approximation, samples);
    Ok(Artifact::Pwl { approximation, verification })
}

// ---------------------------------------------------------------------------
// Count tables

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountCell {
    pub function: String,
    pub domain: String,
    pub epsilon: f64,
    pub side: Side,
    pub count: Option<usize>,
    pub pass: bool,
    pub worst_relative: Option<f64>,
    pub error: Option<String>,
}

/// One cell per domain, tolerance and side (over first, as "above"), with
/// per-cell errors recorded instead of aborting the run. `jobs = 0` uses all
/// cores.
pub fn count_table(
    function: &str,
    domains: &[&str],
    epsilons: &[f64],
    lambda: f64,
    samples: usize,
    jobs: usize,
) -> Result<Vec<CountCell>, CliError> {
    check_job(1.0, lambda)?;
    let f = parse_function(function)?;
    let mut specs = Vec::new();
    for d in domains {
        let interval = parse_interval(d).map_err(CliError::Input)?;
        for side in [Side::Over, Side::Under] {
            for &eps in epsilons {
                check_job(eps, lambda)?;
                specs.push((d.to_string(), interval, eps, side));
            }
        }
    }
    let run = |(label, interval, eps, side): &(String, Interval, f64, Side)| {
        let mut cell = CountCell {
            function: function.to_string(),
            domain: label.clone(),
            epsilon: *eps,
            side: *side,
            count: None,
            pass: false,
            worst_relative: None,
            error: None,
        };
        match approx_para(&f, interval, *eps, *side, lambda, samples) {
            Ok(Artifact::Para { approximation, verification }) => {
                cell.count = Some(approximation.len());
                cell.pass = verification.pass;
                cell.worst_relative = Some(verification.worst_relative);
            }
            Ok(Artifact::Pwl { .. }) => unreachable!(),
            Err(e) => cell.error = Some(e.to_string()),
        }
        cell
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Input(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(|| specs.par_iter().map(run).collect()))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn count_table_csv(cells: &[CountCell]) -> String {
    let mut out = String::from("function,domain,epsilon,side,count,pass,worst_relative,error\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            csv_field(&c.function),
            csv_field(&c.domain),
            c.epsilon,
            if c.side == Side::Over { "above" } else { "below" },
            c.count.map(|n| n.to_string()).unwrap_or_default(),
            if c.pass { "PASS" } else { "FAIL" },
            c.worst_relative.map(|w| format!("{w:e}")).unwrap_or_default(),
            csv_field(c.error.as_deref().unwrap_or("")),
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Relaxed models

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Technique {
    Para,
    Pwl,
}

pub fn relax_problem(
    problem: &FactoredProblem,
    technique: Technique,
    eps: f64,
    lambda: f64,
    table: Option<&mut LookupTable>,
) -> Result<RelaxedModel, CliError> {
    check_job(eps, lambda)?;
    Ok(match technique {
        Technique::Para => emit::emit_para(problem, &emit::para_relaxations(problem, eps, lambda, table)?)?,
        Technique::Pwl => emit::emit_pwl(problem, &emit::pwl_relaxations(problem, eps)?)?,
    })
}

// ---------------------------------------------------------------------------
// Plot data

/// CSV with a header and `samples + 1` equally spaced rows.
///
/// PARA: `x, f, envelope, p1..pK` (the envelope is the max of the piece
/// columns on the under side and their min on the over side).
/// PWL: `x, f, lower, upper` for the shifted interpolant and its
/// `+ eps` copy.
pub fn plot_data(artifact: &Artifact, samples: usize) -> String {
    let samples = samples.max(1);
    let f = artifact.function();
    let d = artifact.domain();
    let mut out = String::new();
    match artifact {
        Artifact::Para { approximation, .. } => {
            out.push_str("x,f,envelope");
            for k in 1..=approximation.len() {
                out.push_str(&format!(",p{k}"));
            }
            out.push('\n');
            for x in d.samples(samples + 1) {
                out.push_str(&format!("{x},{},{}", f.value(x), approximation.envelope(x)));
                for p in approximation.parabolas() {
                    out.push_str(&format!(",{}", p.eval(x)));
                }
                out.push('\n');
            }
        }
        Artifact::Pwl { approximation, .. } => {
            out.push_str("x,f,lower,upper\n");
            let tol = approximation.relaxation_tolerance();
            for x in d.samples(samples + 1) {
                let lower = approximation.interpolate(x).expect("samples lie in the domain");
                out.push_str(&format!("{x},{},{lower},{}\n", f.value(x), lower + tol));
            }
        }
    }
    out
}

/// Polyline rendering of every non-`x` column of [`plot_data`].
pub fn plot_svg(csv: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 20.0;
    const COLORS: [&str; 6] = ["#000000", "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"];
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let rows: Vec<Vec<f64>> =
        lines.map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect()).collect();
    let finite = |i: usize| rows.iter().map(move |r| r[i]).filter(|v| v.is_finite());
    let (x0, x1) = finite(0).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (y0, y1) = (1..header.len())
        .flat_map(finite)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0).max(f64::MIN_POSITIVE) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0).max(f64::MIN_POSITIVE) * (H - 2.0 * PAD);
    let mut out = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    );
    for (i, name) in header.iter().enumerate().skip(1) {
        let pts: Vec<String> = rows
            .iter()
            .filter(|r| r[i].is_finite())
            .map(|r| format!("{:.2},{:.2}", sx(r[0]), sy(r[i])))
            .collect();
        let width = if i <= 2 { 2 } else { 1 };
        out.push_str(&format!(
            "  <polyline id=\"{name}\" fill=\"none\" stroke=\"{}\" stroke-width=\"{width}\" points=\"{}\"/>\n",
            COLORS[(i - 1) % COLORS.len()],
            pts.join(" ")
        ));
    }
    out.push_str("</svg>\n");
    out
}

// ---------------------------------------------------------------------------
// Command line

#[derive(Debug, Parser)]
#[command(name = "pararelax", version, about = "Parabolic and piecewise-linear epsilon-relaxations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute and verify one approximation.
    Approx {
        #[arg(value_enum)]
        technique: Technique,
        #[command(flatten)]
        job: ApproxArgs,
    },
    /// Piece counts over the sin or exp domain tables as CSV.
    CountTable(CountTableArgs),
    /// Relax a JSON problem into lp-text and JSON models.
    Relax(RelaxArgs),
    /// Sample an approximation artifact into CSV (and optionally SVG).
    PlotData(PlotArgs),
    /// Manage the look-up table of PARA approximations.
    Lut {
        #[command(subcommand)]
        action: LutAction,
    },
}

#[derive(Debug, Args)]
pub struct ApproxArgs {
    /// sin, cos, exp, ln or const0; a leading `-` negates.
    #[arg(long = "fn")]
    pub function: String,
    /// `lo:hi`, literals may use pi and e (e.g. `e^-4:e^2`).
    #[arg(long, default_value = "0:1", allow_hyphen_values = true)]
    pub domain: String,
    #[arg(long)]
    pub eps: String,
    #[arg(long, default_value = "under")]
    pub side: Side,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = DEFAULT_VERIFY_SAMPLES)]
    pub samples: usize,
    /// Look-up table to consult for PARA (sin, cos, exp, ln only).
    #[arg(long)]
    pub lut: Option<PathBuf>,
    /// Artifact path; stdout when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CountTableArgs {
    /// sin or exp
    #[arg(long = "fn")]
    pub function: String,
    /// Comma-separated tolerances.
    #[arg(long, default_value = "1,0.1,0.01,0.001")]
    pub eps: String,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = DEFAULT_VERIFY_SAMPLES)]
    pub samples: usize,
    /// Worker threads, 0 for all cores.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RelaxArgs {
    /// Problem JSON with variables, objective and constraints.
    pub problem: PathBuf,
    #[arg(long, value_enum)]
    pub technique: Technique,
    #[arg(long)]
    pub eps: String,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long)]
    pub lut: Option<PathBuf>,
    /// Output prefix; writes `<prefix>.lp` and `<prefix>.json`.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Also run the brute-force checker on a grid of this many points.
    #[arg(long)]
    pub check: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Approximation artifact written by `approx`.
    pub artifact: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum LutAction {
    /// List cached entries.
    List {
        #[arg(long)]
        cache: PathBuf,
    },
    /// Compute (or reuse) entries for a function over one raw domain.
    Add {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long = "fn")]
        function: String,
        #[arg(long, allow_hyphen_values = true)]
        domain: String,
        /// Comma-separated tolerances.
        #[arg(long)]
        eps: String,
        /// under, over or both
        #[arg(long, default_value = "both")]
        side: String,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
    },
}

fn parse_eps_list(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',').map(|s| parse_real(s).map_err(CliError::Input)).collect()
}

fn parse_single_eps(text: &str) -> Result<f64, CliError> {
    parse_real(text).map_err(CliError::Input)
}

fn write_out(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(io_err(p)),
        None => stdout.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>"))),
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn cmd_approx(technique: Technique, job: &ApproxArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let f = parse_function(&job.function)?;
    let domain = parse_interval(&job.domain).map_err(CliError::Input)?;
    let eps = parse_single_eps(&job.eps)?;
    let artifact = match (technique, &job.lut) {
        (Technique::Para, Some(path)) if UnivariateFunction::new(f.kind) == f => {
            check_job(eps, job.lambda)?;
            let mut table = LookupTable::open(path)?;
            let approximation = table.lookup_or_compute(f.kind, &domain, eps, job.side, job.lambda)?;
            let verification = para::verify(&approximation, &f, job.samples);
            Artifact::Para { approximation, verification }
        }
        (Technique::Para, _) => approx_para(&f, &domain, eps, job.side, job.lambda, job.samples)?,
        (Technique::Pwl, _) => approx_pwl(&f, &domain, eps, job.samples)?,
    };
    let status = if artifact.passed() { "PASS" } else { "FAIL" };
    let _ = writeln!(stderr, "{} {} on {}: {} pieces, {status}", f, technique_name(technique), domain, artifact.pieces());
    if !artifact.passed() {
        return Err(CliError::Verification(format!("{f} on {domain}, artifact not written")));
    }
    write_out(job.out.as_deref(), &artifact.to_json(), stdout)
}

fn technique_name(t: Technique) -> &'static str {
    match t {
        Technique::Para => "para",
        Technique::Pwl => "pwl",
    }
}

fn cmd_count_table(args: &CountTableArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let domains: &[&str] = match args.function.as_str() {
        "sin" => &SIN_TABLE_DOMAINS,
        "exp" => &EXP_TABLE_DOMAINS,
        other => return Err(CliError::Input(format!("count tables exist for sin and exp, not `{other}`"))),
    };
    let eps = parse_eps_list(&args.eps)?;
    let cells = count_table(&args.function, domains, &eps, args.lambda, args.samples, args.jobs)?;
    write_out(args.out.as_deref(), &count_table_csv(&cells), stdout)?;
    let failed = cells.iter().filter(|c| !c.pass).count();
    let _ = writeln!(stderr, "{} cells, {failed} failed", cells.len());
    if failed > 0 {
        return Err(CliError::Verification(format!("{failed} cells failed")));
    }
    Ok(())
}

fn cmd_relax(args: &RelaxArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let eps = parse_single_eps(&args.eps)?;
    let problem = ProblemEnvelope::from_json(&read_file(&args.problem)?)?.reformulate()?;
    let mut table = args.lut.as_ref().map(LookupTable::open).transpose()?;
    let model = relax_problem(&problem, args.technique, eps, args.lambda, table.as_mut())?;
    let s = model.size_summary();
    let _ = writeln!(
        stderr,
        "variables {} + {} ({} binary), rows {} + {}",
        s.base_variables, s.added_variables, s.added_binaries, s.base_rows, s.added_rows
    );
    let lp = emit::write_model(&model, ModelFormat::LpText);
    match &args.out {
        Some(prefix) => {
            let with_ext = |ext: &str| {
                let mut p = prefix.clone().into_os_string();
                p.push(ext);
                PathBuf::from(p)
            };
            write_out(Some(&with_ext(".lp")), &lp, stdout)?;
            write_out(Some(&with_ext(".json")), &emit::write_model(&model, ModelFormat::Json), stdout)?;
        }
        None => write_out(None, &lp, stdout)?,
    }
    if let Some(grid) = args.check {
        let report = emit::brute_force_check(&model, &problem, grid, eps)?;
        let _ = writeln!(
            stderr,
            "check: original {} relaxed {} over {} points: {}",
            report.original_optimum,
            report.relaxed_optimum,
            report.grid_points,
            if report.pass { "PASS" } else { "FAIL" }
        );
        if !report.pass {
            return Err(CliError::Verification("brute-force check".into()));
        }
    }
    Ok(())
}

fn cmd_plot(args: &PlotArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let artifact: Artifact = serde_json::from_str(&read_file(&args.artifact)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.artifact.display())))?;
    let csv = plot_data(&artifact, args.samples);
    write_out(args.out.as_deref(), &csv, stdout)?;
    if let Some(svg) = &args.svg {
        fs::write(svg, plot_svg(&csv)).map_err(io_err(svg))?;
    }
    Ok(())
}

fn cmd_lut(action: &LutAction, stdout: &mut dyn Write) -> Result<(), CliError> {
    match action {
        LutAction::List { cache } => {
            let table = LookupTable::open(cache)?;
            let mut out = String::from("function,domain,epsilon,side,pieces\n");
            for e in table.entries() {
                out.push_str(&format!(
                    "{},{}:{},{},{},{}\n",
                    e.kind.name(),
                    e.domain.lo,
                    e.domain.hi,
                    e.epsilon,
                    e.side.name(),
                    e.approximation.len()
                ));
            }
            write_out(None, &out, stdout)
        }
        LutAction::Add { cache, function, domain, eps, side, lambda } => {
            let f = parse_function(function)?;
            if UnivariateFunction::new(f.kind) != f {
                return Err(CliError::Input(format!("the table holds plain sin, cos, exp and ln, not {f}")));
            }
            let domain = parse_interval(domain).map_err(CliError::Input)?;
            let sides = match side.as_str() {
                "both" => vec![Side::Under, Side::Over],
                s => vec![s.parse::<Side>().map_err(CliError::Input)?],
            };
            let mut table = LookupTable::open(cache)?;
            for eps in parse_eps_list(eps)? {
                check_job(eps, *lambda)?;
                for &s in &sides {
                    let a = table.lookup_or_compute(f.kind, &domain, eps, s, *lambda)?;
                    let _ = writeln!(stdout, "{} {} eps={eps} {}: {} pieces", f, a.domain, s.name(), a.len());
                }
            }
            let _ = writeln!(stdout, "hits {} misses {}", table.hits(), table.misses());
            Ok(())
        }
    }
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Approx { technique, job } => cmd_approx(*technique, job, stdout, stderr),
        Command::CountTable(args) => cmd_count_table(args, stdout, stderr),
        Command::Relax(args) => cmd_relax(args, stdout, stderr),
        Command::PlotData(args) => cmd_plot(args, stdout),
        Command::Lut { action } => cmd_lut(action, stdout),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(&cli, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("pararelax").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn approx_para_sin_one_piece() {
        let (code, out, err) = run_capture(&["approx", "para", "--fn", "sin", "--domain", "0:pi", "--eps", "1"]);
        assert_eq!(code, 0, "{err}");
        let a: Artifact = serde_json::from_str(&out).unwrap();
        assert_eq!(a.pieces(), 1);
        assert!(a.passed());
        assert!(err.contains("PASS"));
    }

    #[test]
    fn approx_const0() {
        let (code, out, _) = run_capture(&["approx", "para", "--fn", "const0", "--eps", "0.5"]);
        assert_eq!(code, 0);
        let a: Artifact = serde_json::from_str(&out).unwrap();
        assert_eq!(a.pieces(), 1);
    }

    #[test]
    fn approx_pwl_ln_ten_pieces() {
        let (code, out, _) = run_capture(&["approx", "pwl", "--fn", "ln", "--domain", "e^-4:e^2", "--eps", "0.1"]);
        assert_eq!(code, 0);
        let a: Artifact = serde_json::from_str(&out).unwrap();
        assert_eq!(a.pieces(), 10);
    }

    #[test]
    fn bad_input_exit_codes() {
        assert_eq!(run_capture(&["approx", "para", "--fn", "tan", "--eps", "1"]).0, EXIT_INPUT);
        assert_eq!(run_capture(&["approx", "para", "--fn", "sin", "--eps", "-1"]).0, EXIT_INPUT);
        assert_eq!(run_capture(&["approx", "para", "--fn", "ln", "--domain", "-1:1", "--eps", "1"]).0, EXIT_INPUT);
        assert_eq!(run_capture(&["frobnicate"]).0, EXIT_INPUT);
        assert_eq!(run_capture(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn plot_data_shape() {
        let single = approx_para(&UnivariateFunction::sin(), &Interval::new(0.0, PI).unwrap(), 0.1, Side::Under, 0.9, 1000)
            .unwrap();
        assert_eq!(plot_data(&single, 10).lines().next(), Some("x,f,envelope,p1"));
        let a = approx_para(&UnivariateFunction::sin(), &Interval::new(0.0, 2.0 * PI).unwrap(), 1.0, Side::Under, 0.9, 1000)
            .unwrap();
        assert_eq!(a.pieces(), 2);
        let csv = plot_data(&a, 50);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 52);
        assert_eq!(lines[0], "x,f,envelope,p1,p2");
        for l in &lines[1..] {
            let v: Vec<f64> = l.split(',').map(|s| s.parse().unwrap()).collect();
            assert_eq!(v[2], v[3].max(v[4]));
        }
        let svg = plot_svg(&csv);
        assert!(svg.starts_with("<?xml") && svg.matches("<polyline").count() == 4);
    }

    #[test]
    fn count_table_records_cells() {
        let cells = count_table("sin", &["0:pi"], &[1.0, 0.1], 0.9, 2000, 2).unwrap();
        assert_eq!(cells.len(), 4);
        let counts: Vec<_> = cells.iter().map(|c| (c.side, c.epsilon, c.count)).collect();
        assert_eq!(
            counts,
            vec![
                (Side::Over, 1.0, Some(1)),
                (Side::Over, 0.1, Some(2)),
                (Side::Under, 1.0, Some(1)),
                (Side::Under, 0.1, Some(1)),
            ]
        );
        assert!(cells.iter().all(|c| c.pass));
        let csv = count_table_csv(&cells);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().nth(1).unwrap().starts_with("sin,0:pi,1,above,1,PASS,"));
    }

    #[test]
    fn count_table_keeps_going_after_errors() {
        let cells = count_table("ln", &["-1:1", "1:2"], &[0.1], 0.9, 1000, 1).unwrap();
        assert_eq!(cells.len(), 4);
        assert!(cells[..2].iter().all(|c| c.error.is_some() && !c.pass));
        assert!(cells[2..].iter().all(|c| c.pass));
    }
}
