//! End-to-end calibration, held-out scoring and parameter sweeps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dense::{assemble_dense, solve_dense};
use crate::error::{CalibrationError, Result};
use crate::kernel::lambda_from_alpha;
use crate::lowrank::solve_lowrank;
use crate::problem::{CalibrationParams, CalibrationProblem, ErrorEstimate, Sensor, SolverKind};
use crate::synth::rmse;

/// Fraction of `max |v|` above which a point counts as adjusted.
pub const SUPPORT_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub v_hat: ErrorEstimate,
    /// `f_c - v_hat`.
    pub f_hat: Vec<f64>,
    pub params_used: CalibrationParams,
    pub lambda: f64,
    pub solver_used: SolverKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorError {
    pub sensor: usize,
    pub mesh_index: usize,
    pub error_before: f64,
    pub error_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rmse_before: f64,
    pub rmse_after: f64,
    /// Relative RMSE reduction as a fraction; 0.39 means 39 %.
    pub improvement: f64,
    pub per_sensor: Vec<SensorError>,
}

/// `(before - after) / before`; zero when there was nothing to improve.
pub fn improvement(rmse_before: f64, rmse_after: f64) -> f64 {
    if rmse_before > 0.0 {
        (rmse_before - rmse_after) / rmse_before
    } else {
        0.0
    }
}

pub fn calibrate(problem: &CalibrationProblem, params: &CalibrationParams) -> Result<CalibrationResult> {
    params.validate()?;
    let lambda = lambda_from_alpha(params.alpha, problem.n_sensors(), problem.len())?;
    let v_hat = match params.solver {
        SolverKind::Dense => solve_dense(&assemble_dense(problem, params)?)?,
        SolverKind::Lowrank => solve_lowrank(problem, params)?,
    };
    let f_hat = problem
        .points()
        .iter()
        .zip(v_hat.as_slice())
        .map(|(p, v)| p.value - v)
        .collect();
    Ok(CalibrationResult { v_hat, f_hat, params_used: *params, lambda, solver_used: params.solver })
}

/// Scores a calibration against sensors that were not used to compute it.
pub fn evaluate(
    problem: &CalibrationProblem,
    result: &CalibrationResult,
    holdout: &[Sensor],
) -> Result<EvaluationReport> {
    if holdout.is_empty() {
        return Err(CalibrationError::domain("holdout set is empty"));
    }
    let n = problem.len();
    if result.f_hat.len() != n {
        return Err(CalibrationError::domain("result does not match the problem mesh"));
    }
    if let Some(s) = holdout.iter().find(|s| s.index >= n) {
        return Err(CalibrationError::domain(format!(
            "holdout mesh index {} out of range [0, {n})",
            s.index
        )));
    }
    let simulated = problem.values();
    // observations laid out on the mesh so rmse can index them
    let mut observed = vec![0.0; n];
    for s in holdout {
        observed[s.index] = s.observed;
    }
    let at: Vec<usize> = holdout.iter().map(|s| s.index).collect();
    let rmse_before = rmse(&simulated, &observed, &at)?;
    let rmse_after = rmse(&result.f_hat, &observed, &at)?;
    let per_sensor = holdout
        .iter()
        .enumerate()
        .map(|(k, s)| SensorError {
            sensor: k,
            mesh_index: s.index,
            error_before: simulated[s.index] - s.observed,
            error_after: result.f_hat[s.index] - s.observed,
        })
        .collect();
    Ok(EvaluationReport {
        rmse_before,
        rmse_after,
        improvement: improvement(rmse_before, rmse_after),
        per_sensor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    Alpha,
    SigmaM,
    SigmaD,
}

impl FromStr for SweepAxis {
    type Err = CalibrationError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepAxis::Alpha),
            "sigma-m" | "sigma_m" => Ok(SweepAxis::SigmaM),
            "sigma-d" | "sigma_d" => Ok(SweepAxis::SigmaD),
            other => Err(CalibrationError::domain(format!("unknown sweep axis '{other}'"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Alpha => "alpha",
            SweepAxis::SigmaM => "sigma-m",
            SweepAxis::SigmaD => "sigma-d",
        })
    }
}

impl SweepAxis {
    pub fn apply(&self, base: &CalibrationParams, value: f64) -> CalibrationParams {
        let mut p = *base;
        match self {
            SweepAxis::Alpha => p.alpha = value,
            SweepAxis::SigmaM => p.sigma_m = value,
            SweepAxis::SigmaD => p.sigma_d = value,
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: f64,
    pub report: EvaluationReport,
    pub max_abs_v: f64,
    pub support_area_fraction: f64,
}

/// Fraction of points with `|v_i| > 0.05 max |v|`.
pub fn support_area_fraction(v: &ErrorEstimate) -> f64 {
    let max = v.max_abs();
    if max == 0.0 || v.is_empty() {
        return 0.0;
    }
    let cut = SUPPORT_THRESHOLD * max;
    v.as_slice().iter().filter(|x| x.abs() > cut).count() as f64 / v.len() as f64
}

pub fn sweep(
    problem: &CalibrationProblem,
    base: &CalibrationParams,
    axis: SweepAxis,
    values: &[f64],
    holdout: &[Sensor],
) -> Result<Vec<SweepEntry>> {
    if values.is_empty() {
        return Err(CalibrationError::domain("sweep needs at least one value"));
    }
    for &v in values {
        if !(v.is_finite() && v > 0.0) {
            return Err(CalibrationError::domain(format!("sweep value {v} must be positive")));
        }
        if axis == SweepAxis::Alpha && v > 1.0 {
            return Err(CalibrationError::domain(format!("alpha value {v} exceeds 1")));
        }
    }
    values
        .iter()
        .map(|&value| {
            let params = axis.apply(base, value);
            let result = calibrate(problem, &params)?;
            let report = evaluate(problem, &result, holdout)?;
            Ok(SweepEntry {
                value,
                report,
                max_abs_v: result.v_hat.max_abs(),
                support_area_fraction: support_area_fraction(&result.v_hat),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{GridLayout, MeshPoint};
    use approx::assert_relative_eq;

    #[test]
    fn improvement_formula() {
        assert_relative_eq!(improvement(1.1197, 0.6794), 0.393230329552559, epsilon = 1e-12);
        assert_eq!(improvement(2.0, 0.0), 1.0);
        assert_eq!(improvement(2.0, 2.0), 0.0);
        assert_eq!(improvement(0.0, 0.0), 0.0);
    }

    #[test]
    fn single_point_calibration() {
        let p = CalibrationProblem::new(vec![MeshPoint::new_2d(0.0, 0.0, 26.0)], vec![Sensor::new(0, 25.6)]).unwrap();
        let r = calibrate(&p, &CalibrationParams::new(1.0, 1.0, 0.01).dense()).unwrap();
        assert_relative_eq!(r.v_hat.v_hat[0], 0.4, epsilon = 1e-12);
        assert_relative_eq!(r.f_hat[0], 25.6, epsilon = 1e-12);
        assert_eq!(r.solver_used, SolverKind::Dense);
    }

    fn small_grid(offsets: &[(usize, f64)]) -> CalibrationProblem {
        let grid = GridLayout::new(8, 6, 0.25, 0.25, 0.0, 0.0).unwrap();
        let values: Vec<f64> = (0..48).map(|k| 22.0 + (k as f64 * 0.37).cos()).collect();
        let sensors = offsets.iter().map(|&(i, c)| Sensor::new(i, values[i] - c)).collect();
        CalibrationProblem::on_grid(grid, &values, sensors).unwrap()
    }

    #[test]
    fn zero_and_constant_residuals() {
        let p = small_grid(&[(3, 0.0), (20, 0.0), (41, 0.0)]);
        for params in [
            CalibrationParams::new(1.0, 0.5, 0.1).dense(),
            CalibrationParams::new(1.0, 0.5, 0.1).lowrank(10, crate::problem::RowSumMode::Lowrank),
        ] {
            let r = calibrate(&p, &params).unwrap();
            assert!(r.v_hat.as_slice().iter().all(|&v| v == 0.0));
            assert_eq!(r.f_hat, p.values());
        }
        let p = small_grid(&[(3, 0.8), (20, 0.8), (41, 0.8)]);
        let r = calibrate(&p, &CalibrationParams::new(1.0, 0.5, 0.1).dense()).unwrap();
        for (f, c) in r.f_hat.iter().zip(p.values()) {
            assert!((f - (c - 0.8)).abs() < 1e-10);
        }
    }

    #[test]
    fn evaluation_edge_cases() {
        let p = small_grid(&[(3, 0.5)]);
        let r = calibrate(&p, &CalibrationParams::new(1.0, 0.5, 0.1).dense()).unwrap();
        assert!(evaluate(&p, &r, &[]).is_err());
        assert!(evaluate(&p, &r, &[Sensor::new(48, 0.0)]).is_err());

        let perfect: Vec<Sensor> = [10, 30].iter().map(|&i| Sensor::new(i, r.f_hat[i])).collect();
        let rep = evaluate(&p, &r, &perfect).unwrap();
        assert_eq!(rep.rmse_after, 0.0);
        assert_eq!(rep.improvement, 1.0);

        let mut untouched = r.clone();
        untouched.f_hat = p.values();
        let hold = vec![Sensor::new(10, 21.0), Sensor::new(30, 23.5)];
        let rep = evaluate(&p, &untouched, &hold).unwrap();
        assert_eq!(rep.improvement, 0.0);
        assert_eq!(rep, evaluate(&p, &untouched, &hold).unwrap());
    }

    #[test]
    fn sweep_shape_and_domain() {
        let p = small_grid(&[(3, 0.5), (44, -0.25)]);
        let hold = vec![Sensor::new(10, 22.0), Sensor::new(30, 22.5)];
        let base = CalibrationParams::new(1.0, 0.5, 0.1).dense();
        let out = sweep(&p, &base, SweepAxis::Alpha, &[1.0, 0.5, 0.1, 0.01], &hold).unwrap();
        let order: Vec<f64> = out.iter().map(|e| e.value).collect();
        assert_eq!(order, vec![1.0, 0.5, 0.1, 0.01]);
        assert!(sweep(&p, &base, SweepAxis::Alpha, &[-1.0], &hold).is_err());
        assert!(sweep(&p, &base, SweepAxis::Alpha, &[2.0], &hold).is_err());
        assert!(sweep(&p, &base, SweepAxis::SigmaD, &[], &hold).is_err());
        assert!(sweep(&p, &base, SweepAxis::SigmaD, &[2.0], &hold).is_ok());
    }

    #[test]
    fn support_fraction_threshold() {
        let v = ErrorEstimate::new(vec![1.0, 0.06, 0.05, 0.0, -0.5]);
        assert_relative_eq!(support_area_fraction(&v), 0.6);
        assert_eq!(support_area_fraction(&ErrorEstimate::new(vec![0.0; 3])), 0.0);
    }
}
