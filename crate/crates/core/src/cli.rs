//! `fieldcal` command-line interface.
//!
//! Exit codes: 0 success, 2 malformed input files, 3 solver failure,
//! 4 invalid flag values.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::CalibrationError;
use crate::io::{
    self, read_field, read_sensors, snap_sensors, write_field, write_heatmap, FieldFile, IoError,
    SnappedSensor,
};
use crate::pipeline::{calibrate, evaluate, sweep, CalibrationResult, EvaluationReport, SweepAxis};
use crate::problem::{CalibrationParams, CalibrationProblem, RowSumMode, Sensor, SolverKind};
use crate::synth::make_case;

pub const EXIT_OK: i32 = 0;
pub const EXIT_MALFORMED: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_FLAG: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn flag(message: impl Into<String>) -> Self {
        CliError { code: EXIT_FLAG, message: message.into() }
    }

    fn solver(err: CalibrationError) -> Self {
        let code = match err {
            CalibrationError::Domain(_) => EXIT_FLAG,
            _ => EXIT_SOLVER,
        };
        CliError { code, message: err.to_string() }
    }
}

impl From<IoError> for CliError {
    fn from(err: IoError) -> Self {
        CliError { code: EXIT_MALFORMED, message: err.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "fieldcal", version, about = "Calibrate a simulated scalar field against sparse sensor observations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate a field and write the corrected field, error estimate and report.
    Calibrate(CalibrateArgs),
    /// Repeat a calibration over values of one parameter.
    Sweep(SweepArgs),
    /// Generate a seeded synthetic case.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub sensors: PathBuf,
    #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long = "sigma-m", default_value_t = 1000.0, allow_negative_numbers = true)]
    pub sigma_m: f64,
    #[arg(long = "sigma-d", default_value_t = 1.0, allow_negative_numbers = true)]
    pub sigma_d: f64,
    /// dense | lowrank
    #[arg(long, default_value = "lowrank")]
    pub solver: String,
    /// Number of sampled columns for the low-rank solver [default: min(100, N)].
    #[arg(long, allow_negative_numbers = true)]
    pub rank: Option<i64>,
    /// exact | lowrank
    #[arg(long, default_value = "lowrank")]
    pub rowsum: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    /// Also write PGM heatmaps of the calibrated field and the error estimate.
    #[arg(long)]
    pub heatmap: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub base: CalibrateArgs,
    /// alpha | sigma-m | sigma-d
    #[arg(long)]
    pub axis: String,
    /// Comma-separated parameter values, in output order.
    #[arg(long, allow_hyphen_values = true)]
    pub values: String,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 80, allow_negative_numbers = true)]
    pub nx: i64,
    #[arg(long, default_value_t = 40, allow_negative_numbers = true)]
    pub ny: i64,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    pub spacing: f64,
    #[arg(long, default_value_t = 4, allow_negative_numbers = true)]
    pub calib: i64,
    #[arg(long = "holdout", default_value_t = 4, allow_negative_numbers = true)]
    pub n_holdout: i64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FLAG } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn params_from(args: &CalibrateArgs) -> CliResult<CalibrationParams> {
    let solver: SolverKind = args.solver.parse().map_err(|e: CalibrationError| CliError::flag(format!("--solver: {e}")))?;
    let rowsum_mode: RowSumMode = args.rowsum.parse().map_err(|e: CalibrationError| CliError::flag(format!("--rowsum: {e}")))?;
    let n_samples = match args.rank {
        None => None,
        Some(r) if r >= 1 => Some(r as usize),
        Some(r) => return Err(CliError::flag(format!("--rank must be at least 1, got {r}"))),
    };
    let params = CalibrationParams {
        sigma_m: args.sigma_m,
        sigma_d: args.sigma_d,
        alpha: args.alpha,
        n_samples,
        rowsum_mode,
        solver,
        ..Default::default()
    };
    params.validate().map_err(|e| CliError::flag(e.to_string()))?;
    Ok(params)
}

struct Loaded {
    field: FieldFile,
    problem: CalibrationProblem,
    sensors: Vec<SnappedSensor>,
    holdout: Option<Vec<SnappedSensor>>,
}

fn load(args: &CalibrateArgs, params: &CalibrationParams) -> CliResult<Loaded> {
    let field = read_field(&args.field)?;
    let records = read_sensors(&args.sensors)?;
    let sensors = snap_sensors(&args.sensors, &field.grid, &records)?;
    let holdout = match &args.holdout {
        Some(path) => Some(snap_sensors(path, &field.grid, &read_sensors(path)?)?),
        None => None,
    };
    let problem = CalibrationProblem::on_grid(
        field.grid,
        &field.values,
        sensors.iter().map(SnappedSensor::sensor).collect(),
    )
    .map_err(|e| CliError { code: EXIT_MALFORMED, message: format!("{}: {e}", args.sensors.display()) })?;
    if let Some(n) = params.n_samples {
        if n > problem.len() {
            return Err(CliError::flag(format!("--rank {n} exceeds the {} mesh points", problem.len())));
        }
    }
    Ok(Loaded { field, problem, sensors, holdout })
}

fn create_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError {
        code: EXIT_MALFORMED,
        message: format!("{}: {e}", dir.display()),
    })
}

#[derive(Serialize)]
struct Timings {
    load_s: f64,
    solve_s: f64,
    total_s: f64,
}

#[derive(Serialize)]
struct Report<'a> {
    params: &'a CalibrationParams,
    lambda: f64,
    solver: SolverKind,
    n_points: usize,
    n_samples: Option<usize>,
    sensors: &'a [SnappedSensor],
    holdout: Option<&'a [SnappedSensor]>,
    max_abs_v: f64,
    evaluation: Option<EvaluationReport>,
    timings: Timings,
}

fn holdout_sensors(h: &[SnappedSensor]) -> Vec<Sensor> {
    h.iter().map(SnappedSensor::sensor).collect()
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> CliResult<()> {
    let start = Instant::now();
    let params = params_from(args)?;
    let loaded = load(args, &params)?;
    let loaded_at = start.elapsed().as_secs_f64();
    let result: CalibrationResult = calibrate(&loaded.problem, &params).map_err(CliError::solver)?;
    let solved_at = start.elapsed().as_secs_f64();
    let evaluation = match &loaded.holdout {
        Some(h) => Some(evaluate(&loaded.problem, &result, &holdout_sensors(h)).map_err(CliError::solver)?),
        None => None,
    };

    create_out(&args.out)?;
    let grid = loaded.field.grid;
    let calibrated = FieldFile::new(grid, result.f_hat.clone());
    let error = FieldFile::new(grid, result.v_hat.v_hat.clone());
    write_field(&args.out.join("calibrated.csv"), &calibrated)?;
    write_field(&args.out.join("error.csv"), &error)?;
    if args.heatmap {
        write_heatmap(&loaded.field, &args.out.join("field.pgm"))?;
        write_heatmap(&calibrated, &args.out.join("calibrated.pgm"))?;
        write_heatmap(&error, &args.out.join("error.pgm"))?;
    }
    let n_samples = match params.solver {
        SolverKind::Lowrank => params.samples_for(loaded.problem.len()).ok(),
        SolverKind::Dense => None,
    };
    let report = Report {
        params: &params,
        lambda: result.lambda,
        solver: result.solver_used,
        n_points: loaded.problem.len(),
        n_samples,
        sensors: &loaded.sensors,
        holdout: loaded.holdout.as_deref(),
        max_abs_v: result.v_hat.max_abs(),
        evaluation,
        timings: Timings { load_s: loaded_at, solve_s: solved_at - loaded_at, total_s: start.elapsed().as_secs_f64() },
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    let path = args.out.join("report.json");
    fs::write(&path, json + "\n").map_err(|e| CliError::from(IoError::Io { path, source: e }))
}

pub const SWEEP_HEADER: &str = "value,rmse_before,rmse_after,improvement,max_abs_v,support_area_fraction";

pub fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let axis: SweepAxis = args.axis.parse().map_err(|e: CalibrationError| CliError::flag(format!("--axis: {e}")))?;
    let values = args
        .values
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::flag(format!("--values: '{}' is not a number", t.trim())))
        })
        .collect::<CliResult<Vec<f64>>>()?;
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(CliError::flag(format!("--values: {v} must be positive")));
    }
    if axis == SweepAxis::Alpha {
        if let Some(v) = values.iter().find(|v| **v > 1.0) {
            return Err(CliError::flag(format!("--values: alpha {v} exceeds 1")));
        }
    }
    let params = params_from(&args.base)?;
    if args.base.holdout.is_none() {
        return Err(CliError::flag("sweep requires --holdout"));
    }
    let loaded = load(&args.base, &params)?;
    let holdout = holdout_sensors(loaded.holdout.as_deref().unwrap_or_default());
    let entries = sweep(&loaded.problem, &params, axis, &values, &holdout).map_err(CliError::solver)?;

    create_out(&args.base.out)?;
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for e in &entries {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            io::fmt_real(e.value),
            io::fmt_real(e.report.rmse_before),
            io::fmt_real(e.report.rmse_after),
            io::fmt_real(e.report.improvement),
            io::fmt_real(e.max_abs_v),
            io::fmt_real(e.support_area_fraction)
        ));
    }
    let path = args.base.out.join("sweep.csv");
    fs::write(&path, out).map_err(|e| CliError::from(IoError::Io { path, source: e }))
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let positive = |v: i64, name: &str| -> CliResult<usize> {
        if v < 0 {
            Err(CliError::flag(format!("--{name} must not be negative, got {v}")))
        } else {
            Ok(v as usize)
        }
    };
    let nx = positive(args.nx, "nx")?;
    let ny = positive(args.ny, "ny")?;
    let calib = positive(args.calib, "calib")?;
    let holdout = positive(args.n_holdout, "holdout")?;
    if !(args.spacing.is_finite() && args.spacing > 0.0) {
        return Err(CliError::flag(format!("--spacing must be positive, got {}", args.spacing)));
    }
    let case = make_case(args.seed, nx, ny, args.spacing, calib, holdout)
        .map_err(|e| CliError::flag(e.to_string()))?;
    io::write_case(&args.out, &case)?;
    Ok(())
}
