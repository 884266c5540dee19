//! Calibration of a simulated scalar field (for example a CFD thermal map)
//! from a handful of trusted point observations.
//!
//! The simulation error `v` is estimated by minimizing an affinity-weighted
//! quadratic: a data term pulling `v` towards each sensor residual near that
//! sensor, plus a smoothness term coupling points with similar position and
//! simulated value. The corrected field is `f_c - v`.
//!
//! Two solvers are provided: [`dense`] builds and factors the full system,
//! [`lowrank`] samples columns of the affinity matrix and solves through the
//! Woodbury identity in `O(N n)` memory.

pub mod cli;
pub mod dense;
pub mod error;
pub mod io;
pub mod kernel;
pub mod lowrank;
pub mod pipeline;
pub mod problem;
pub mod synth;

pub use dense::{assemble_dense, solve_dense, DenseSystem};
pub use error::{CalibrationError, Result};
pub use kernel::{affinity, lambda_from_alpha, row_sums_exact, sensor_affinity_columns, sensor_residuals, Affinity};
pub use lowrank::{build_factors, row_sums_lowrank, select_samples, solve_lowrank, LowRankFactors};
pub use pipeline::{calibrate, evaluate, improvement, sweep, CalibrationResult, EvaluationReport, SweepAxis, SweepEntry};
pub use problem::{
    CalibrationParams, CalibrationProblem, ErrorEstimate, GridLayout, MeshPoint, RowSumMode, Sensor, SolverKind,
};
pub use synth::{make_case, rmse, SyntheticCase};
