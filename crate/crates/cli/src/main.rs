//! `nldiff`: solve, simulate and verify sublinear diffusion semigroups from
//! a JSON configuration.
//!
//! Exit codes: 0 success; 1 a verification check failed, or `check-spec`
//! found a declared condition violated; 2 configuration, parse or I/O error;
//! 3 numerical failure.

mod config;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nldiff_core::hjb::{
    extract_policy, solve_linearized, solve_nonlinear, GridSpec, Linearization,
};
use nldiff_core::model::{check_conditions_with, ControlSpec};
use nldiff_core::sde::{estimate, simulate, Policy, SimParams};
use nldiff_core::terminal::Terminal;
use nldiff_core::verify::Verifier;
use serde::Serialize;

use config::{check_request, Config, PolicyChoice};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Core(#[from] nldiff_core::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ConfigError",
            CliError::Io { .. } => "IoError",
            CliError::Core(e) => e.kind(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }

    fn offset(&self) -> Option<usize> {
        match self {
            CliError::Core(nldiff_core::Error::Parse(p)) => Some(p.offset()),
            _ => None,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Parser, Debug)]
#[command(name = "nldiff", version)]
#[command(about = "Sublinear diffusion semigroups: HJB solves, simulation and verification")]
struct Args {
    #[command(subcommand)]
    command: Command,

    /// JSON configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Primary output path; overrides the matching `output` entry. Prints to
    /// stdout if neither is given.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the Monte Carlo seed of the configuration
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Caps the number of worker threads
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Overrides the number of grid nodes
    #[arg(long, global = true, value_name = "NX")]
    resolution: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the declared structural conditions of the control model
    CheckSpec,
    /// Solve the HJB equation and write the value field
    Solve {
        /// Also solve the linear equation with the extremal coefficients
        #[arg(long, value_enum)]
        linear: Option<LinearKind>,
    },
    /// Simulate the controlled diffusion and estimate E ψ(X_T)
    Simulate,
    /// Run the numerical checks and write a report
    Verify,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum LinearKind {
    /// Zero drift, variance a*
    AStar,
    /// Drift b*, variance a*
    BStar,
}

enum Outcome {
    Success,
    ChecksFailed,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::ChecksFailed) => ExitCode::from(1),
        Err(e) => {
            let offset = e
                .offset()
                .map(|o| format!(" offset={o}"))
                .unwrap_or_default();
            eprintln!("error kind={}{offset} detail={:?}", e.kind(), e.to_string());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(args: &Args) -> Result<Outcome, CliError> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let cfg = Config::parse(&fs::read_to_string(path).map_err(io_err(path))?)?;
    let spec = cfg.spec()?;
    match &args.command {
        Command::CheckSpec => check_spec(args, &cfg, &spec),
        Command::Solve { linear } => solve(args, &cfg, &spec, *linear),
        Command::Simulate => simulate_cmd(args, &cfg, &spec),
        Command::Verify => verify(args, &cfg, &spec),
    }
}

/// Writes to `path`, or to stdout when there is none.
fn emit(
    path: Option<&Path>,
    write: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).map_err(io_err(p))?);
            write(&mut w).and_then(|_| w.flush()).map_err(io_err(p))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock).map_err(io_err(Path::new("<stdout>")))
        }
    }
}

fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), CliError> {
    emit(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(io::Error::from)?;
        writeln!(w)
    })
}

fn csv_io(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

#[derive(Serialize)]
struct ConditionReport<'a> {
    spec: serde_json::Value,
    samples: config::SampleBlock,
    all_declared_hold: bool,
    conditions: &'a [nldiff_core::model::ConditionRecord],
}

fn check_spec(args: &Args, cfg: &Config, spec: &ControlSpec) -> Result<Outcome, CliError> {
    let s = cfg.check_samples();
    let records = check_conditions_with(spec, s.x_min, s.x_max, s.n, &cfg.check_options())?;
    let ok = records.iter().all(|r| !r.declared || r.pass);
    let report = ConditionReport {
        spec: spec.describe(),
        samples: s,
        all_declared_hold: ok,
        conditions: &records,
    };
    emit_json(
        args.out.as_deref().or(cfg.output.report_json.as_deref()),
        &report,
    )?;
    Ok(if ok {
        Outcome::Success
    } else {
        Outcome::ChecksFailed
    })
}

#[derive(Serialize)]
struct SolveSummary {
    nx: usize,
    steps: usize,
    dt: f64,
    cfl_dt: f64,
    value_at_origin: Option<f64>,
    files: Vec<PathBuf>,
}

fn solve(
    args: &Args,
    cfg: &Config,
    spec: &ControlSpec,
    linear: Option<LinearKind>,
) -> Result<Outcome, CliError> {
    let grid = cfg.grid(args.resolution)?;
    let psi = cfg.terminal()?;
    let terminal = psi.sample(&grid.xs()).map_err(nldiff_core::Error::from)?;
    let field = solve_nonlinear(spec, &grid, &terminal)?;
    let mut files = Vec::new();

    let value_csv = args.out.as_deref().or(cfg.output.value_csv.as_deref());
    emit(value_csv, |w| field.write_csv(w).map_err(csv_io))?;
    files.extend(value_csv.map(Path::to_path_buf));

    if let Some(p) = &cfg.output.value_json {
        emit_json(Some(p), &field)?;
        files.push(p.clone());
    }
    if let Some(p) = &cfg.output.policy_csv {
        let policy = extract_policy(spec, &grid, &field)?;
        emit(Some(p), |w| policy.write_csv(w).map_err(csv_io))?;
        files.push(p.clone());
    }
    if let Some(kind) = linear {
        let kind = match kind {
            LinearKind::AStar => Linearization::AStar,
            LinearKind::BStar => Linearization::BStar,
        };
        let path = match (&cfg.output.linear_csv, value_csv) {
            (Some(p), _) => p.clone(),
            (None, Some(v)) => v.with_extension("linear.csv"),
            (None, None) => {
                return Err(CliError::Config(
                    "--linear needs `output.linear_csv` or a value CSV path".into(),
                ))
            }
        };
        let lin = solve_linearized(spec, &grid, &terminal, kind)?;
        emit(Some(&path), |w| lin.write_csv(w).map_err(csv_io))?;
        files.push(path);
    }

    if value_csv.is_some() {
        let origin = (grid.x_min..=grid.x_max)
            .contains(&0.0)
            .then(|| field.interpolate(0, 0.0));
        let summary = SolveSummary {
            nx: grid.nx,
            steps: field.times.len() - 1,
            dt: field.meta.dt,
            cfl_dt: field.meta.cfl_dt,
            value_at_origin: origin,
            files,
        };
        emit_json(None, &summary)?;
    }
    Ok(Outcome::Success)
}

/// Turns a configured policy into a simulation policy; feedback policies
/// come from solving the configured terminal on the configured grid.
fn resolve_policy(
    choice: &PolicyChoice,
    cfg: &Config,
    spec: &ControlSpec,
    grid: Option<&GridSpec>,
    psi: &Terminal,
) -> Result<Policy, CliError> {
    Ok(match choice {
        PolicyChoice::Constant(f) => Policy::Constant(*f),
        PolicyChoice::ExtremalAStar => Policy::ExtremalAStar,
        PolicyChoice::ExtremalBStar => Policy::ExtremalBStar,
        PolicyChoice::Feedback => {
            let grid = match grid {
                Some(g) => *g,
                None => cfg.grid(None)?,
            };
            let terminal = psi.sample(&grid.xs()).map_err(nldiff_core::Error::from)?;
            let field = solve_nonlinear(spec, &grid, &terminal)?;
            Policy::Feedback(extract_policy(spec, &grid, &field)?)
        }
    })
}

#[derive(Serialize)]
struct SimulationSummary {
    x0: f64,
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    terminal: String,
    mean: f64,
    stderr: f64,
}

fn simulate_cmd(args: &Args, cfg: &Config, spec: &ControlSpec) -> Result<Outcome, CliError> {
    let mc = cfg.mc()?;
    let psi = cfg.terminal()?;
    let grid = match &cfg.grid {
        Some(_) => Some(cfg.grid(args.resolution)?),
        None => None,
    };
    let horizon = match (mc.horizon, &grid) {
        (Some(h), _) => h,
        (None, Some(g)) => g.horizon,
        (None, None) => {
            return Err(CliError::Config(
                "mc: `horizon` is required without a grid".into(),
            ))
        }
    };
    if let Some(g) = &grid {
        if matches!(mc.policy, PolicyChoice::Feedback) && g.horizon != horizon {
            return Err(CliError::Config(
                "mc: a feedback policy needs the grid horizon".into(),
            ));
        }
    }
    let policy = resolve_policy(&mc.policy, cfg, spec, grid.as_ref(), &psi)?;
    let params = SimParams::new(
        mc.x0,
        horizon,
        mc.n_steps,
        mc.n_paths,
        args.seed.unwrap_or(mc.seed),
    );
    let ens = simulate(spec, &policy, &params)?;
    let est = estimate(&ens, |y| psi.eval(y))?;
    if let Some(p) = &cfg.output.ensemble_csv {
        emit(Some(p), |w| ens.write_csv(w).map_err(csv_io))?;
    }
    let summary = SimulationSummary {
        x0: params.x0,
        horizon,
        n_steps: params.n_steps,
        n_paths: params.n_paths,
        seed: params.seed,
        terminal: psi.to_string(),
        mean: est.mean,
        stderr: est.stderr,
    };
    emit_json(args.out.as_deref(), &summary)?;
    Ok(Outcome::Success)
}

fn verify(args: &Args, cfg: &Config, spec: &ControlSpec) -> Result<Outcome, CliError> {
    let grid = cfg.grid(args.resolution)?;
    let psi = cfg.terminal()?;
    let entries = cfg.check_entries();
    let needs_mc = entries.iter().any(|e| {
        matches!(
            e,
            config::CheckEntry::SelectionAttains | config::CheckEntry::MomentScaling { .. }
        )
    });
    let mc = match cfg.mc {
        Some(_) => cfg.mc_params(args.seed)?,
        None if needs_mc => return Err(CliError::Config("missing `mc` block".into())),
        None => nldiff_core::verify::McParams {
            x0: 0.0,
            n_steps: 0,
            n_paths: 0,
            seed: args.seed.unwrap_or(0),
        },
    };
    let requests = entries
        .iter()
        .map(|e| {
            check_request(e, &grid, |choice| {
                resolve_policy(choice, cfg, spec, Some(&grid), &psi)
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let report = Verifier::new(spec, cfg.tolerances()).run(&requests, &grid, &psi, &mc)?;
    emit_json(
        args.out.as_deref().or(cfg.output.report_json.as_deref()),
        &report,
    )?;
    Ok(if report.all_passed() {
        Outcome::Success
    } else {
        Outcome::ChecksFailed
    })
}
