//! Command-line front end: reads model files, runs the stationary,
//! transient, Monte Carlo and cross-validation paths, and writes CSV, JSON
//! and SVG artifacts plus a manifest describing each run.

pub mod model_file;
pub mod svg;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hybridgene::analysis::{cross_validate, AnalysisError, CrossValidateConfig, Thresholds};
use hybridgene::model::{Model, ModelError};
use hybridgene::pdmp::{InitialLaw, Mode, PdmpError, SimulationConfig, Simulator};
use hybridgene::stationary::{Method, StationaryError, StationaryOptions, StationarySolution};
use hybridgene::transient::{
    DensityField, DtPolicy, Grid, InitialProfile, Splitting, StepReport, TransientError,
    TransientSolver,
};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::svg::{line_chart, Series};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("invalid model: {0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Normalization(StationaryError),
    #[error("{0}")]
    Cfl(TransientError),
    #[error("{0}")]
    Io(String),
    #[error("verification failed")]
    VerifyFailed,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Model(_) => 2,
            CliError::Normalization(_) => 3,
            CliError::Cfl(_) => 4,
            CliError::Io(_) | CliError::VerifyFailed => 1,
        }
    }
}

impl From<StationaryError> for CliError {
    fn from(e: StationaryError) -> Self {
        match e {
            StationaryError::NormalizationFailure(_) => CliError::Normalization(e),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<TransientError> for CliError {
    fn from(e: TransientError) -> Self {
        match e {
            TransientError::CflViolation { .. } => CliError::Cfl(e),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<PdmpError> for CliError {
    fn from(e: PdmpError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Stationary(s) => s.into(),
            AnalysisError::Transient(t) => t.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "hybridgene",
    version,
    about = "Two-mode hybrid gene model toolkit"
)]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Exact stationary densities.
    Stationary(StationaryArgs),
    /// Time evolution of the density pair.
    Transient(TransientArgs),
    /// Monte Carlo simulation of the switching process.
    Simulate(SimulateArgs),
    /// Cross-validate the three paths; exit 0 iff every check passes.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Emit {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Args, Serialize)]
pub struct CommonArgs {
    /// Model file (`key = value` format).
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Number of grid cells.
    #[arg(long, default_value_t = 400, value_parser = clap::value_parser!(u64).range(1..))]
    pub cells: u64,
    /// Artifacts to write.
    #[arg(long, value_delimiter = ',', default_value = "csv,json")]
    pub emit: Vec<Emit>,
}

impl CommonArgs {
    fn wants(&self, e: Emit) -> bool {
        self.emit.contains(&e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Auto,
    Closed,
    Quadrature,
}

#[derive(Debug, Args, Serialize)]
pub struct StationaryArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Evaluation route for the exponent integral.
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    pub method: MethodArg,
}

/// Initial data for `transient`: `uniform`, `spike:MODE:X`,
/// `gaussian:CENTER:WIDTH` or `csv:PATH`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum InitialArg {
    Profile(InitialProfile),
    Csv { path: PathBuf },
}

fn parse_f64(s: &str, what: &str) -> Result<f64, String> {
    s.parse()
        .map_err(|_| format!("{what}: `{s}` is not a number"))
}

fn parse_mode(s: &str) -> Result<u8, String> {
    match s {
        "1" => Ok(1),
        "2" => Ok(2),
        _ => Err(format!("mode must be 1 or 2, got `{s}`")),
    }
}

impl FromStr for InitialArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.splitn(3, ':').collect();
        match parts.as_slice() {
            ["uniform"] => Ok(InitialArg::Profile(InitialProfile::Uniform)),
            ["spike", m, x] => Ok(InitialArg::Profile(InitialProfile::Spike {
                mode: parse_mode(m)?,
                x: parse_f64(x, "spike position")?,
            })),
            ["gaussian", c, w] => Ok(InitialArg::Profile(InitialProfile::Gaussian {
                center: parse_f64(c, "gaussian center")?,
                width: parse_f64(w, "gaussian width")?,
            })),
            ["csv", rest @ ..] if !rest.is_empty() => Ok(InitialArg::Csv {
                path: PathBuf::from(rest.join(":")),
            }),
            _ => Err(format!(
                "unknown initial data `{s}`; use uniform, spike:MODE:X, gaussian:C:W or csv:PATH"
            )),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TransientArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Final time.
    #[arg(long, default_value_t = 20.0)]
    pub t_final: f64,
    /// Fixed time step; by default 0.9 of the CFL limit.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Strang splitting instead of Lie-Trotter.
    #[arg(long)]
    pub strang: bool,
    /// Initial data.
    #[arg(long, default_value = "uniform")]
    pub initial: InitialArg,
    /// Number of equally spaced snapshots after the initial one.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub snapshots: u64,
}

/// Initial law for `simulate`: `uniform` or `point:MODE:X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitialLawArg(pub InitialLaw);

impl FromStr for InitialLawArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["uniform"] => Ok(InitialLawArg(InitialLaw::Uniform)),
            ["point", m, x] => {
                let mode = if parse_mode(m)? == 1 {
                    Mode::One
                } else {
                    Mode::Two
                };
                Ok(InitialLawArg(InitialLaw::PointMass {
                    mode,
                    x: parse_f64(x, "initial position")?,
                }))
            }
            _ => Err(format!(
                "unknown initial law `{s}`; use uniform or point:MODE:X"
            )),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Final time.
    #[arg(long, default_value_t = 20.0)]
    pub t_final: f64,
    /// Number of trajectories.
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub traj: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initial law.
    #[arg(long, default_value = "uniform")]
    pub initial: InitialLawArg,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 20.0)]
    pub t_final: f64,
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub traj: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Histogram bins for the Monte Carlo comparison; must divide `--cells`.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub bins: u64,
    #[arg(long)]
    pub strang: bool,
    /// Flux identity tolerance, relative to max h.
    #[arg(long, default_value_t = 1e-10)]
    pub tol_flux: f64,
    /// Mass conservation tolerance.
    #[arg(long, default_value_t = 1e-10)]
    pub tol_mass: f64,
    /// L1 tolerance between transient and stationary.
    #[arg(long, default_value_t = 0.05)]
    pub tol_transient: f64,
    /// L1 tolerance between Monte Carlo and stationary (mode-summed).
    #[arg(long, default_value_t = 0.05)]
    pub tol_empirical: f64,
    /// Allowed occupancy deviation in standard errors.
    #[arg(long, default_value_t = 3.0)]
    pub tol_occupancy: f64,
}

/// SHA-256 over a git-style blob header `blob <len>\0` and the content.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Debug, Serialize)]
struct InputRecord {
    path: String,
    sha256_blob: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a Command,
    model: &'a Model,
    warnings: &'a [String],
    inputs: Vec<InputRecord>,
    outputs: Vec<String>,
}

struct Run {
    out: PathBuf,
    inputs: Vec<InputRecord>,
    outputs: Vec<String>,
}

impl Run {
    fn new(out: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(out)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
        Ok(Self {
            out: out.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn read_input(&mut self, path: &Path) -> Result<String, CliError> {
        let bytes = fs::read(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256_blob: content_hash(&bytes),
        });
        String::from_utf8(bytes)
            .map_err(|_| CliError::Input(format!("{} is not UTF-8", path.display())))
    }

    fn write(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        let path = self.out.join(name);
        fs::write(&path, content)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, config: &Command, model: &Model) -> Result<(), CliError> {
        let manifest = Manifest {
            tool: "hybridgene",
            version: env!("CARGO_PKG_VERSION"),
            config,
            model,
            warnings: model.warnings(),
            inputs: std::mem::take(&mut self.inputs),
            outputs: std::mem::take(&mut self.outputs),
        };
        let text = to_json(&manifest)?;
        self.write("manifest.json", &text)
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| CliError::Io(e.to_string()))
}

fn load_model(run: &mut Run, path: &Path, lenient: bool) -> Result<Model, CliError> {
    let text = run.read_input(path)?;
    let params = model_file::parse(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let model = if lenient {
        params.validate_lenient()?
    } else {
        params.validate()?
    };
    Ok(model)
}

fn cells(n: u64) -> Result<usize, CliError> {
    usize::try_from(n).map_err(|_| CliError::Input(format!("--cells {n} is too large")))
}

fn check_time(t: f64) -> Result<f64, CliError> {
    if t.is_finite() && t >= 0.0 {
        Ok(t)
    } else {
        Err(CliError::Input(format!(
            "--t-final must be finite and non-negative, got {t}"
        )))
    }
}

const GREEN: &str = "green";
const BLUE: &str = "blue";
const RED: &str = "red";

fn three_curves<'a>(xs: &[f64], f1: &[f64], f2: &[f64], names: [&'a str; 3]) -> Vec<Series<'a>> {
    let zip = |v: &[f64]| {
        xs.iter()
            .copied()
            .zip(v.iter().copied())
            .collect::<Vec<_>>()
    };
    let sum: Vec<f64> = f1.iter().zip(f2).map(|(a, b)| a + b).collect();
    vec![
        Series {
            name: names[0],
            color: GREEN,
            points: zip(f1),
        },
        Series {
            name: names[1],
            color: BLUE,
            points: zip(f2),
        },
        Series {
            name: names[2],
            color: RED,
            points: zip(&sum),
        },
    ]
}

pub fn cmd_stationary(args: &StationaryArgs, config: &Command) -> Result<(), CliError> {
    let mut run = Run::new(&args.common.out)?;
    let model = load_model(&mut run, &args.common.model, true)?;
    let method = match args.method {
        MethodArg::Auto => None,
        MethodArg::Closed => Some(Method::ClosedForm),
        MethodArg::Quadrature => Some(Method::Quadrature),
    };
    let sol = StationarySolution::normalize(&model, StationaryOptions { method, x0: None })?;
    let grid = Grid::new(model.interval(), cells(args.common.cells)?)?;
    let xs = grid.centers();
    let samples = sol.sample(&xs)?;

    if args.common.wants(Emit::Csv) {
        let mut csv = String::from("x,psi1,psi2,sum\n");
        for s in &samples {
            let _ = writeln!(csv, "{},{},{},{}", s.x, s.psi1, s.psi2, s.sum);
        }
        run.write("stationary.csv", &csv)?;
    }
    if args.common.wants(Emit::Json) {
        run.write("stationary.json", &to_json(&sol.summary())?)?;
    }
    if args.common.wants(Emit::Svg) {
        let f1: Vec<f64> = samples.iter().map(|s| s.psi1).collect();
        let f2: Vec<f64> = samples.iter().map(|s| s.psi2).collect();
        let chart = line_chart(
            "stationary densities",
            "x",
            &three_curves(&xs, &f1, &f2, ["psi1", "psi2", "psi1 + psi2"]),
        );
        run.write("stationary.svg", &chart)?;
    }
    log::info!("normalization constant K = {}", sol.k());
    run.finish(config, &model)
}

/// Reads `x, f1, f2` rows (header optional) onto the grid of matching cell
/// centers.
fn read_initial_csv(
    text: &str,
    model: &Model,
    n_cells: Option<usize>,
) -> Result<DensityField, CliError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(CliError::Input(format!(
                "initial csv line {}: expected x,f1,f2",
                i + 1
            )));
        }
        match (
            cols[0].parse::<f64>(),
            cols[1].parse::<f64>(),
            cols[2].parse::<f64>(),
        ) {
            (Ok(x), Ok(a), Ok(b)) => rows.push((x, a, b)),
            _ if rows.is_empty() && i == 0 => continue,
            _ => {
                return Err(CliError::Input(format!(
                    "initial csv line {}: not numeric",
                    i + 1
                )))
            }
        }
    }
    let n = n_cells.unwrap_or(rows.len());
    if rows.len() != n {
        return Err(CliError::Input(format!(
            "initial csv has {} rows but the grid has {n} cells",
            rows.len()
        )));
    }
    let grid = Grid::new(model.interval(), n)?;
    for (i, r) in rows.iter().enumerate() {
        if (r.0 - grid.center(i)).abs() > 1e-9 * grid.interval.length() {
            return Err(CliError::Input(format!(
                "initial csv row {}: x = {} is not the cell center {}",
                i + 1,
                r.0,
                grid.center(i)
            )));
        }
    }
    let f1 = rows.iter().map(|r| r.1).collect();
    let f2 = rows.iter().map(|r| r.2).collect();
    Ok(DensityField::from_cell_averages(grid, f1, f2)?)
}

pub fn cmd_transient(
    args: &TransientArgs,
    config: &Command,
    cells_explicit: bool,
) -> Result<(), CliError> {
    let mut run = Run::new(&args.common.out)?;
    let model = load_model(&mut run, &args.common.model, false)?;
    let t_final = check_time(args.t_final)?;
    let n = cells(args.common.cells)?;
    let mut field = match &args.initial {
        InitialArg::Profile(p) => DensityField::from_profile(Grid::new(model.interval(), n)?, *p)?,
        InitialArg::Csv { path } => {
            let text = run.read_input(path)?;
            read_initial_csv(&text, &model, cells_explicit.then_some(n))?
        }
    };
    let splitting = if args.strang {
        Splitting::Strang
    } else {
        Splitting::LieTrotter
    };
    let solver = TransientSolver::new(&model, field.grid, splitting)?;
    let policy = match args.dt {
        Some(dt) => DtPolicy::Fixed { dt },
        None => DtPolicy::default(),
    };

    let mut csv = String::from("t,x,f1,f2\n");
    let xs = field.grid.centers();
    let snap = |csv: &mut String, f: &DensityField| {
        for (i, x) in xs.iter().enumerate() {
            let _ = writeln!(csv, "{},{},{},{}", f.time, x, f.f1[i], f.f2[i]);
        }
    };
    snap(&mut csv, &field);
    let mut reports: Vec<StepReport> = Vec::new();
    if t_final > 0.0 {
        let k = args.snapshots;
        for j in 1..=k {
            let target = t_final * j as f64 / k as f64;
            let span = target - field.time;
            reports.extend(solver.evolve(&mut field, span, policy)?);
            field.time = target;
            snap(&mut csv, &field);
        }
    }
    if args.common.wants(Emit::Csv) {
        run.write("transient.csv", &csv)?;
    }
    if args.common.wants(Emit::Json) {
        run.write("transient_log.json", &to_json(&reports)?)?;
    }
    if args.common.wants(Emit::Svg) {
        let chart = line_chart(
            &format!("densities at t = {}", field.time),
            "x",
            &three_curves(&xs, &field.f1, &field.f2, ["f1", "f2", "f1 + f2"]),
        );
        run.write("transient.svg", &chart)?;
    }
    log::info!("{} steps, final mass {}", reports.len(), field.mass());
    run.finish(config, &model)
}

#[derive(Debug, Serialize)]
struct SimulateSummary<'a> {
    n_traj: u64,
    seed: u64,
    t_final: f64,
    mode_occupancy: [f64; 2],
    mean_position: f64,
    switch_count_stats: &'a hybridgene::pdmp::SwitchCountStats,
    thinning_proposals: u64,
    thinning_rejections: u64,
}

pub fn cmd_simulate(args: &SimulateArgs, config: &Command) -> Result<(), CliError> {
    let mut run = Run::new(&args.common.out)?;
    let model = load_model(&mut run, &args.common.model, false)?;
    let t_final = check_time(args.t_final)?;
    let sim = Simulator::new(&model)?;
    let n_traj =
        usize::try_from(args.traj).map_err(|_| CliError::Input("--traj is too large".into()))?;
    let result = sim.simulate(&SimulationConfig {
        n_traj,
        t_final,
        seed: args.seed,
        initial: args.initial.0,
        n_bins: cells(args.common.cells)?,
    })?;
    let field = result.density.to_field();
    let xs = field.grid.centers();
    if args.common.wants(Emit::Csv) {
        let mut csv = String::from("x,emp_f1,emp_f2,emp_sum\n");
        for (i, x) in xs.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                x,
                field.f1[i],
                field.f2[i],
                field.f1[i] + field.f2[i]
            );
        }
        run.write("simulate.csv", &csv)?;
    }
    if args.common.wants(Emit::Json) {
        let summary = SimulateSummary {
            n_traj: args.traj,
            seed: args.seed,
            t_final,
            mode_occupancy: [result.mode1_occupancy, 1.0 - result.mode1_occupancy],
            mean_position: result.mean_position,
            switch_count_stats: &result.switch_counts,
            thinning_proposals: result.proposals,
            thinning_rejections: result.rejections,
        };
        run.write("simulate.json", &to_json(&summary)?)?;
    }
    if args.common.wants(Emit::Svg) {
        let chart = line_chart(
            &format!("empirical densities, N = {}", args.traj),
            "x",
            &three_curves(&xs, &field.f1, &field.f2, ["f1", "f2", "f1 + f2"]),
        );
        run.write("simulate.svg", &chart)?;
    }
    run.finish(config, &model)
}

pub fn cmd_verify(args: &VerifyArgs, config: &Command) -> Result<(), CliError> {
    let mut run = Run::new(&args.common.out)?;
    let model = load_model(&mut run, &args.common.model, false)?;
    let cfg = CrossValidateConfig {
        n_cells: cells(args.common.cells)?,
        t_final: check_time(args.t_final)?,
        splitting: if args.strang {
            Splitting::Strang
        } else {
            Splitting::LieTrotter
        },
        n_traj: usize::try_from(args.traj)
            .map_err(|_| CliError::Input("--traj is too large".into()))?,
        seed: args.seed,
        mc_bins: cells(args.bins)?,
        thresholds: Thresholds {
            flux_identity: args.tol_flux,
            mass: args.tol_mass,
            transient_vs_stationary: args.tol_transient,
            empirical_vs_stationary: args.tol_empirical,
            occupancy_sigmas: args.tol_occupancy,
        },
    };
    let report = cross_validate(&model, &cfg)?;
    for c in &report.criteria {
        println!(
            "[{}] {}: {:.3e} (threshold {:.3e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.threshold
        );
    }
    if args.common.wants(Emit::Json) {
        run.write("verify.json", &to_json(&report)?)?;
    }
    run.finish(config, &model)?;
    if report.passed {
        Ok(())
    } else {
        Err(CliError::VerifyFailed)
    }
}

/// Runs a parsed command line. `cells_explicit` tells whether `--cells`
/// was given, which matters when the grid comes from an initial CSV.
pub fn run(cli: &Cli, cells_explicit: bool) -> Result<(), CliError> {
    match &cli.command {
        Command::Stationary(a) => cmd_stationary(a, &cli.command),
        Command::Transient(a) => cmd_transient(a, &cli.command, cells_explicit),
        Command::Simulate(a) => cmd_simulate(a, &cli.command),
        Command::Verify(a) => cmd_verify(a, &cli.command),
    }
}
