mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use emfg_core::discretization::{read_field, write_field, DiscreteField, FieldIoError, SpaceTimeGrid};
use emfg_core::solver::{continuation_solve, SolverError};
use emfg_core::verification::{certify, check_assumptions, self_convergence, VerificationError};
use serde::Serialize;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "emfg", version, about = "Elliptic reformulation solver for extended mean field games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dotted `section.key=value`, repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Continuation solve; writes u, m, trace and certificate.
    Solve,
    /// Sample the structural assumptions.
    CheckAssumptions,
    /// Certify stored u and m fields.
    Certify,
    /// Solves on nested grids and observed orders.
    Convergence,
}

/// Process outcome other than success.
#[derive(Debug)]
pub enum Failure {
    Check(String),
    Config(String),
    Invalid(String),
    Stall(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Config(_) => 2,
            Failure::Invalid(_) => 3,
            Failure::Stall(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Check(m) | Failure::Config(m) | Failure::Invalid(m) | Failure::Stall(m) => m,
        }
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Grid(_) | SolverError::Model(_) => Failure::Invalid(e.to_string()),
            SolverError::Config(_) => Failure::Config(e.to_string()),
            _ => Failure::Stall(e.to_string()),
        }
    }
}

impl From<VerificationError> for Failure {
    fn from(e: VerificationError) -> Self {
        match e {
            VerificationError::Solver(s) => s.into(),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

impl From<FieldIoError> for Failure {
    fn from(e: FieldIoError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config: &'a RunConfig,
    #[serde(flatten)]
    body: T,
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Invalid(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, cfg: &RunConfig, body: T) -> Result<(), Failure> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(&Envelope { config: cfg, body })
        .map_err(|e| Failure::Invalid(format!("serializing {name}: {e}")))?;
    fs::write(&path, text + "\n").map_err(|e| io_failure(&path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_field_file(dir: &Path, name: &str, grid: &SpaceTimeGrid, field: &DiscreteField) -> Result<(), Failure> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| io_failure(&path, e))?;
    let mut out = BufWriter::new(file);
    write_field(grid, field, &mut out)?;
    out.flush().map_err(|e| io_failure(&path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn read_field_file(path: &Path, grid: &SpaceTimeGrid) -> Result<DiscreteField, Failure> {
    let file = File::open(path).map_err(|e| io_failure(path, e))?;
    read_field(grid, BufReader::new(file)).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct StallInfo {
    theta_star: f64,
    dtheta: f64,
    cause: String,
}

fn solve(cfg: &RunConfig, dir: &Path) -> Result<(), Failure> {
    let model = cfg.model()?;
    let grid = cfg.grid()?;
    let result = match continuation_solve(&model, &grid, &cfg.continuation) {
        Ok(r) => r,
        Err(SolverError::Stall {
            theta_star,
            dtheta,
            cause,
            trace,
            ..
        }) => {
            #[derive(Serialize)]
            struct Body<'a> {
                stall: StallInfo,
                trace: &'a emfg_core::solver::ContinuationTrace,
            }
            let msg = format!("continuation stalled at theta = {theta_star}: {cause}");
            write_json(
                dir,
                "trace.json",
                cfg,
                Body {
                    stall: StallInfo {
                        theta_star,
                        dtheta,
                        cause: cause.to_string(),
                    },
                    trace: &trace,
                },
            )?;
            return Err(Failure::Stall(msg));
        }
        Err(e) => return Err(e.into()),
    };
    log::info!(
        "reached theta = 1 in {} steps; min ellipticity gap {:e}",
        result.trace.steps.len(),
        result.trace.min_gap()
    );
    write_field_file(dir, "u.txt", &grid, &result.u)?;
    write_field_file(dir, "m.txt", &grid, &result.density)?;
    #[derive(Serialize)]
    struct Trace<'a> {
        trace: &'a emfg_core::solver::ContinuationTrace,
    }
    write_json(dir, "trace.json", cfg, Trace { trace: &result.trace })?;
    let report = certify(model.as_ref(), &grid, &result.u, &result.density, &cfg.certify_options())?;
    let pass = report.all_pass;
    write_json(dir, "certificate.json", cfg, CertificateBody { certificate: &report })?;
    certificate_outcome(pass)
}

#[derive(Serialize)]
struct CertificateBody<'a> {
    certificate: &'a emfg_core::verification::CertificateReport,
}

fn certificate_outcome(pass: bool) -> Result<(), Failure> {
    if pass {
        log::info!("certificate: all pass");
        Ok(())
    } else {
        Err(Failure::Check("certificate: at least one check failed".into()))
    }
}

fn certify_stored(cfg: &RunConfig, dir: &Path) -> Result<(), Failure> {
    let model = cfg.model()?;
    let grid = cfg.grid()?;
    let u_path = cfg.certify.u_field.clone().unwrap_or_else(|| dir.join("u.txt"));
    let m_path = cfg.certify.m_field.clone().unwrap_or_else(|| dir.join("m.txt"));
    let u = read_field_file(&u_path, &grid)?;
    let m = read_field_file(&m_path, &grid)?;
    let report = certify(model.as_ref(), &grid, &u, &m, &cfg.certify_options())?;
    let pass = report.all_pass;
    write_json(dir, "certificate.json", cfg, CertificateBody { certificate: &report })?;
    certificate_outcome(pass)
}

fn assumptions(cfg: &RunConfig, dir: &Path) -> Result<(), Failure> {
    let model = cfg.model()?;
    let report = check_assumptions(model.as_ref(), &cfg.sample_box(), cfg.check.samples);
    #[derive(Serialize)]
    struct Body<'a> {
        assumptions: &'a emfg_core::verification::AssumptionReport,
    }
    write_json(dir, "assumptions.json", cfg, Body { assumptions: &report })?;
    if report.all_pass() {
        Ok(())
    } else {
        Err(Failure::Check(format!("assumptions flagged: {}", report.flagged().join(", "))))
    }
}

fn convergence(cfg: &RunConfig, dir: &Path) -> Result<(), Failure> {
    let model = cfg.model()?;
    let grids = cfg.convergence_grids()?;
    let report = match self_convergence(&model, &grids, &cfg.continuation) {
        Err(VerificationError::Input(msg)) => return Err(Failure::Config(msg)),
        other => other?,
    };
    #[derive(Serialize)]
    struct Body<'a> {
        convergence: &'a emfg_core::verification::ConvergenceReport,
    }
    write_json(dir, "convergence.json", cfg, Body { convergence: &report })?;
    let (lo, hi) = (cfg.convergence.order_min, cfg.convergence.order_max);
    let order = report.order_u();
    if order.within(lo, hi) {
        Ok(())
    } else {
        Err(Failure::Check(format!("order for u {order:?} outside [{lo}, {hi}]")))
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let mut cfg = config::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    match cli.command {
        Command::Solve => solve(&cfg, &dir),
        Command::CheckAssumptions => assumptions(&cfg, &dir),
        Command::Certify => certify_stored(&cfg, &dir),
        Command::Convergence => convergence(&cfg, &dir),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            log::error!("{}", f.message());
            ExitCode::from(f.code())
        }
    }
}
