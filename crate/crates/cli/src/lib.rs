//! Command dispatch and reporting for the `quiver-hk` binary.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use quiver_hk::chambers::{
    cells_csv, chamber_arrangement, wall_set, walls_csv, BoundingBox, ChamberError,
};
use quiver_hk::endo::run_sweep;
use quiver_hk::geometry::{field_csv, make_sphere_grid};
use quiver_hk::problem::{format_rational, parse_rational, Problem, ProblemError};
use quiver_hk::solver::{
    continuity_solve, extract_destabilizer, verify_he, Outcome, ScalarSystem, SolveConfig,
    SolverError,
};
use quiver_hk::stability::{classify, deg_slope, Classification, SlopeReport, Subject};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const REPORT_SCHEMA: u32 = 1;
pub const OUT_DIR_ENV: &str = "QUIVER_HK_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_SWEEP_FAILED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "quiver-hk", version, about = "Quiver bundle stability and Hermitian-Einstein solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory for report.json, report.txt and CSV attachments.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    pub out: Option<PathBuf>,
    /// Suppress standard output.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[arg(long, global = true, value_enum, default_value_t = Format::Human)]
    pub format: Format,
    /// Include wall-clock timings (breaks byte-identical reports).
    #[arg(long, global = true)]
    pub timings: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate a problem file.
    Validate { problem: PathBuf },
    /// Classify the model and list destabilizing witnesses.
    Stability { problem: PathBuf },
    /// Walls and chambers in the tau-plane of a two-vertex model.
    Chambers {
        problem: PathBuf,
        /// Half-width of the square tau box, as a rational.
        #[arg(long, default_value = "3")]
        half_width: String,
    },
    /// Run the continuity method.
    Solve {
        problem: PathBuf,
        #[command(flatten)]
        flags: SolveFlags,
    },
    /// Seeded sweeps of the pointwise matrix inequalities.
    Props {
        #[arg(long, default_value_t = 10_000)]
        instances: usize,
        #[arg(long, default_value_t = 4)]
        max_rank: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Re-render a stored machine report.
    Report { report: PathBuf },
}

#[derive(Debug, Clone, Default, Args)]
pub struct SolveFlags {
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub eps_ratio: Option<f64>,
    #[arg(long)]
    pub eps_floor: Option<f64>,
    #[arg(long)]
    pub max_newton: Option<usize>,
    /// Grid as `NTHETAxNPHI`, e.g. 64x128.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<[usize; 2]>,
    #[arg(long)]
    pub blowup_threshold: Option<f64>,
    /// Write the final fields as `theta,phi,value` CSV files here.
    #[arg(long)]
    pub dump_fields: Option<PathBuf>,
}

pub fn parse_grid(s: &str) -> Result<[usize; 2], String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected NxM, got `{s}`"))?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    Ok([parse(a)?, parse(b)?])
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("i/o failure on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Io { .. } => EXIT_IO,
        }
    }
}

impl From<ProblemError> for CliError {
    fn from(e: ProblemError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub name: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_digest: Option<String>,
    pub seed: u64,
    pub outcome: String,
    pub payload: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<Attachment>,
}

pub struct Run {
    pub report: Report,
    pub exit_code: i32,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn load(path: &Path) -> Result<(Problem, String), CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Invalid(format!("{} is not UTF-8", path.display())))?;
    Ok((Problem::parse(&text)?, sha256_hex(&bytes)))
}

fn slope_json(r: &SlopeReport) -> Value {
    json!({
        "degree": format_rational(&r.degree),
        "sigma_rank": format_rational(&r.sigma_rank),
        "slope": format_rational(&r.slope),
    })
}

fn classification_json(c: &Classification, names: &[String]) -> Value {
    let witnesses: Vec<Value> = c
        .witnesses()
        .iter()
        .map(|w| {
            json!({
                "name": w.sub.name,
                "support": w.sub.support_label(names),
                "ranks": w.sub.parts.iter().map(|p| p.rank).collect::<Vec<_>>(),
                "slope": slope_json(&w.report),
            })
        })
        .collect();
    json!({ "classification": c.label(), "witnesses": witnesses })
}

fn support_label(support: &[usize], names: &[String]) -> String {
    let items: Vec<&str> = support.iter().map(|&i| names[i].as_str()).collect();
    format!("{{{}}}", items.join(","))
}

fn report(command: &str, digest: Option<String>, seed: u64, outcome: &str, payload: Value) -> Report {
    Report {
        schema: REPORT_SCHEMA,
        tool: "quiver-hk".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        input_digest: digest,
        seed,
        outcome: outcome.into(),
        payload,
        timings: None,
        attachments: Vec::new(),
    }
}

fn solver_invalid(e: SolverError) -> CliError {
    CliError::Invalid(e.to_string())
}

fn run_solve(cli: &Cli, path: &Path, flags: &SolveFlags) -> Result<Run, CliError> {
    let (problem, digest) = load(path)?;
    let o = &problem.solver;
    let defaults = SolveConfig::default();
    let config = SolveConfig {
        tol: flags.tol.or(o.tol).unwrap_or(defaults.tol),
        eps_ratio: flags.eps_ratio.or(o.eps_ratio).unwrap_or(defaults.eps_ratio),
        eps_floor: flags.eps_floor.or(o.eps_floor).unwrap_or(defaults.eps_floor),
        max_newton: flags.max_newton.or(o.max_newton).unwrap_or(defaults.max_newton),
        blowup_threshold: flags
            .blowup_threshold
            .or(o.blowup_threshold)
            .unwrap_or(defaults.blowup_threshold),
        ..defaults
    };
    if !(config.eps_ratio > 0.0 && config.eps_ratio < 1.0) || !(config.eps_floor > 0.0) {
        return Err(CliError::Invalid(
            "epsilon schedule needs 0 < ratio < 1 and a positive floor".into(),
        ));
    }
    let [nt, np] = flags.grid.unwrap_or(problem.grid);
    let grid = make_sphere_grid(nt, np, problem.volume).map_err(|e| CliError::Invalid(e.to_string()))?;
    let (model, params) = (&problem.model, &problem.params);
    let sys = ScalarSystem::new(model, params, &grid).map_err(solver_invalid)?;
    let (state, mut rep) = match continuity_solve(model, params, &grid, &config) {
        Ok(r) => r,
        Err(e @ SolverError::CalibrationAmbiguous(_)) => {
            let r = report("solve", Some(digest), cli.seed, "CalibrationAmbiguous", json!({"error": e.to_string()}));
            return Ok(Run {
                report: r,
                exit_code: EXIT_NOT_CONVERGED,
            });
        }
        Err(e) => return Err(solver_invalid(e)),
    };
    let names = model.quiver.vertices();
    let mut extra = serde_json::Map::new();
    let mut ok = rep.outcome == Outcome::Converged;
    match rep.outcome {
        Outcome::Converged => match verify_he(&grid, &sys, &state, &rep) {
            Ok(v) => rep.verification = Some(v),
            Err(e) => {
                ok = false;
                extra.insert("verification_error".into(), json!(e.to_string()));
            }
        },
        Outcome::BlowUp => match extract_destabilizer(model, params, &rep, config.collapse_gap) {
            Ok(theta) => {
                extra.insert("theta_support".into(), json!(support_label(&theta.support, names)));
                rep.destabilizer = Some(theta);
            }
            Err(e) => {
                extra.insert("destabilizer_error".into(), json!(e.to_string()));
            }
        },
        Outcome::Stalled => {}
    }
    if let Some(dir) = &flags.dump_fields {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (name, u) in names.iter().zip(&state.u) {
            let p = dir.join(format!("u_{name}.csv"));
            fs::write(&p, field_csv(&grid, u)).map_err(io_err(&p))?;
        }
    }
    let mut payload = serde_json::to_value(&rep).expect("serializable report");
    if let Value::Object(m) = &mut payload {
        m.insert("vertices".into(), json!(names));
        m.extend(extra);
    }
    let mut trace_csv = String::from("epsilon,newton_steps,residual_sup,envelope,envelope_ok");
    for n in names {
        write!(trace_csv, ",max_abs_u_{n}").unwrap();
    }
    trace_csv.push('\n');
    for e in &rep.trace {
        write!(
            trace_csv,
            "{:e},{},{:e},{:e},{}",
            e.epsilon, e.newton_steps, e.residual_sup, e.envelope, e.envelope_ok
        )
        .unwrap();
        for m in &e.max_abs_u {
            write!(trace_csv, ",{m:e}").unwrap();
        }
        trace_csv.push('\n');
    }
    let outcome = format!("{:?}", rep.outcome);
    let mut r = report("solve", Some(digest), cli.seed, &outcome, payload);
    r.attachments.push(Attachment {
        name: "trace.csv".into(),
        content: trace_csv,
    });
    Ok(Run {
        report: r,
        exit_code: if ok { EXIT_OK } else { EXIT_NOT_CONVERGED },
    })
}

fn dispatch(cli: &Cli) -> Result<Run, CliError> {
    let seed = cli.seed;
    match &cli.command {
        Command::Validate { problem } => {
            let (p, digest) = load(problem)?;
            let q = &p.model.quiver;
            let payload = json!({
                "name": p.name,
                "fixture": p.model.base.to_string(),
                "vertices": q.vertices(),
                "arrows": q.arrows().iter().map(|a| a.id.clone()).collect::<Vec<_>>(),
                "ranks": p.model.ranks(),
                "declared_subobjects": p.model.declared_subobjects.as_ref().map_or(0, Vec::len),
            });
            Ok(Run {
                report: report("validate", Some(digest), seed, "Valid", payload),
                exit_code: EXIT_OK,
            })
        }
        Command::Stability { problem } => {
            let (p, digest) = load(problem)?;
            let invalid = |e: quiver_hk::stability::StabilityError| CliError::Invalid(e.to_string());
            let c = classify(&p.model, &p.params).map_err(invalid)?;
            let total = deg_slope(&p.model, Subject::Full, &p.params).map_err(invalid)?;
            let mut payload = classification_json(&c, p.model.quiver.vertices());
            payload["total"] = slope_json(&total);
            Ok(Run {
                report: report("stability", Some(digest), seed, c.label(), payload),
                exit_code: EXIT_OK,
            })
        }
        Command::Chambers {
            problem,
            half_width,
        } => {
            let (p, digest) = load(problem)?;
            let h = parse_rational(half_width)?;
            let bbox = BoundingBox {
                lo: [-h.clone(), -h.clone()],
                hi: [h.clone(), h],
            };
            let invalid = |e: ChamberError| CliError::Invalid(e.to_string());
            let (alpha, sigma) = (p.params.alpha(), p.params.sigma());
            let arr = chamber_arrangement(&p.model, alpha, sigma, &bbox).map_err(invalid)?;
            let ws = wall_set(&p.model, alpha, sigma).map_err(invalid)?;
            let names = p.model.quiver.vertices();
            let walls: Vec<Value> = arr
                .walls
                .iter()
                .map(|w| {
                    json!({
                        "normal": w.normal.iter().map(format_rational).collect::<Vec<_>>(),
                        "offset": format_rational(&w.offset),
                        "sources": w.sources.iter().map(|s| s.support_label(names)).collect::<Vec<_>>(),
                    })
                })
                .collect();
            let cells: Vec<Value> = arr
                .cells
                .iter()
                .map(|c| {
                    json!({
                        "representative": c.representative.iter().map(format_rational).collect::<Vec<_>>(),
                        "signs": c.signs,
                        "classification": c.classification.as_ref().map(Classification::label),
                    })
                })
                .collect();
            let degenerate: Vec<Value> = ws
                .degenerate
                .iter()
                .map(|d| json!({"source": d.source.support_label(names), "everywhere": d.everywhere}))
                .collect();
            let payload = json!({
                "box": [format_rational(&bbox.lo[0]), format_rational(&bbox.hi[0])],
                "walls": walls,
                "degenerate": degenerate,
                "cells": cells,
            });
            let mut r = report("chambers", Some(digest), seed, "Arranged", payload);
            r.attachments = vec![
                Attachment {
                    name: "walls.csv".into(),
                    content: walls_csv(&arr.walls, names),
                },
                Attachment {
                    name: "cells.csv".into(),
                    content: cells_csv(&arr, names),
                },
            ];
            Ok(Run {
                report: r,
                exit_code: EXIT_OK,
            })
        }
        Command::Solve { problem, flags } => run_solve(cli, problem, flags),
        Command::Props {
            instances,
            max_rank,
            tol,
        } => {
            if *max_rank == 0 {
                return Err(CliError::Invalid("max-rank must be positive".into()));
            }
            let sweep = run_sweep(seed, *instances, *max_rank, *tol);
            let passed = sweep.passed();
            let payload = serde_json::to_value(&sweep).expect("serializable sweep");
            Ok(Run {
                report: report("props", None, seed, if passed { "Passed" } else { "Failed" }, payload),
                exit_code: if passed { EXIT_OK } else { EXIT_SWEEP_FAILED },
            })
        }
        Command::Report { report: path } => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let stored: Report = serde_json::from_str(&text)
                .map_err(|e| CliError::Invalid(format!("not a report: {e}")))?;
            if stored.schema != REPORT_SCHEMA {
                return Err(CliError::Invalid(format!("unsupported report schema {}", stored.schema)));
            }
            let exit_code = match (stored.command.as_str(), stored.outcome.as_str()) {
                ("solve", o) if o != "Converged" => EXIT_NOT_CONVERGED,
                ("props", "Failed") => EXIT_SWEEP_FAILED,
                _ => EXIT_OK,
            };
            Ok(Run {
                report: stored,
                exit_code,
            })
        }
    }
}

/// Executes one command. Reports carry timings only when asked for.
pub fn run(cli: &Cli) -> Result<Run, CliError> {
    let start = Instant::now();
    let mut run = dispatch(cli)?;
    if cli.timings && !matches!(cli.command, Command::Report { .. }) {
        run.report.timings = Some(json!({ "total_seconds": start.elapsed().as_secs_f64() }));
    }
    Ok(run)
}

pub fn to_json(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("serializable report");
    s.push('\n');
    s
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn render_human(report: &Report) -> String {
    let mut out = String::new();
    writeln!(out, "{} {}: {}", report.tool, report.command, report.outcome).unwrap();
    if let Some(d) = &report.input_digest {
        writeln!(out, "  input sha256: {d}").unwrap();
    }
    if let Value::Object(m) = &report.payload {
        for (k, v) in m {
            match v {
                Value::Array(items) if items.iter().any(|x| x.is_object() || x.is_array()) => {
                    writeln!(out, "  {k}: {} entries", items.len()).unwrap();
                    for item in items.iter().take(12) {
                        writeln!(out, "    {item}").unwrap();
                    }
                    if items.len() > 12 {
                        writeln!(out, "    ...").unwrap();
                    }
                }
                Value::Null => {}
                _ => writeln!(out, "  {k}: {}", scalar_text(v)).unwrap(),
            }
        }
    }
    if let Some(t) = &report.timings {
        writeln!(out, "  timings: {t}").unwrap();
    }
    out
}

fn render_csv(report: &Report) -> String {
    let mut out = String::new();
    for (k, a) in report.attachments.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        writeln!(out, "# {}", a.name).unwrap();
        out.push_str(&a.content);
    }
    out
}

/// Writes the report in `format` to `stdout` and, when `out_dir` is given,
/// `report.json`, `report.txt` and each CSV attachment into it.
pub fn emit_report(
    report: &Report,
    format: Format,
    out_dir: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let files = [
            ("report.json".to_string(), to_json(report)),
            ("report.txt".to_string(), render_human(report)),
        ];
        let attachments = report
            .attachments
            .iter()
            .map(|a| (a.name.clone(), a.content.clone()));
        for (name, content) in files.into_iter().chain(attachments) {
            let p = dir.join(name);
            fs::write(&p, content).map_err(io_err(&p))?;
        }
    }
    let text = match format {
        Format::Human => render_human(report),
        Format::Json => to_json(report),
        Format::Csv => render_csv(report),
    };
    stdout
        .write_all(text.as_bytes())
        .map_err(io_err(Path::new("<stdout>")))
}

/// Runs, emits and returns the process exit code.
pub fn main_with(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let result = run(cli).and_then(|run| {
        let mut sink = io::sink();
        let out: &mut dyn Write = if cli.quiet { &mut sink } else { stdout };
        emit_report(&run.report, cli.format, cli.out.as_deref(), out)?;
        Ok(run)
    });
    match result {
        Ok(run) => {
            if run.exit_code != EXIT_OK {
                let _ = writeln!(stderr, "{}: {}", run.report.command, run.report.outcome);
            }
            run.exit_code
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
