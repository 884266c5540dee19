//! Problem data: mesh points carrying simulated values, sensor observations
//! pinned to mesh points, and the tuning parameters of the calibration.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CalibrationError, Result};

/// A mesh point with its simulated field value.
///
/// Positions are stored as three components; two-dimensional meshes keep `z = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshPoint {
    pub position: [f64; 3],
    pub value: f64,
}

impl MeshPoint {
    pub fn new_2d(x: f64, y: f64, value: f64) -> Self {
        MeshPoint { position: [x, y, 0.0], value }
    }

    pub fn new_3d(x: f64, y: f64, z: f64, value: f64) -> Self {
        MeshPoint { position: [x, y, z], value }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.position.iter().all(|c| c.is_finite())
    }

    #[inline]
    pub fn distance_squared(&self, other: &MeshPoint) -> f64 {
        let dx = self.position[0] - other.position[0];
        let dy = self.position[1] - other.position[1];
        let dz = self.position[2] - other.position[2];
        dx * dx + dy * dy + dz * dz
    }
}

/// Geometry of a regular 2D grid stored row-major, row 0 at `y0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub x0: f64,
    pub y0: f64,
}

impl GridLayout {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64, x0: f64, y0: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(CalibrationError::domain(format!(
                "grid dimensions must be positive (nx={nx}, ny={ny})"
            )));
        }
        if !(dx.is_finite() && dx > 0.0 && dy.is_finite() && dy > 0.0) {
            return Err(CalibrationError::domain(format!(
                "grid spacing must be positive and finite (dx={dx}, dy={dy})"
            )));
        }
        if !(x0.is_finite() && y0.is_finite()) {
            return Err(CalibrationError::domain("grid origin must be finite"));
        }
        Ok(GridLayout { nx, ny, dx, dy, x0, y0 })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.nx + col
    }

    pub fn position(&self, k: usize) -> (f64, f64) {
        let col = k % self.nx;
        let row = k / self.nx;
        (self.x0 + col as f64 * self.dx, self.y0 + row as f64 * self.dy)
    }

    /// Upper corner of the bounding box.
    pub fn extent(&self) -> (f64, f64) {
        (
            self.x0 + (self.nx - 1) as f64 * self.dx,
            self.y0 + (self.ny - 1) as f64 * self.dy,
        )
    }
}

/// An observation attached to mesh point `index`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sensor {
    pub index: usize,
    pub observed: f64,
}

impl Sensor {
    pub fn new(index: usize, observed: f64) -> Self {
        Sensor { index, observed }
    }
}

/// Simulated field plus the sensors used to correct it.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProblem {
    points: Vec<MeshPoint>,
    sensors: Vec<Sensor>,
    grid: Option<GridLayout>,
}

impl CalibrationProblem {
    pub fn new(points: Vec<MeshPoint>, sensors: Vec<Sensor>) -> Result<Self> {
        let problem = CalibrationProblem { points, sensors, grid: None };
        problem.validate()?;
        Ok(problem)
    }

    /// Builds a problem on a regular grid from row-major field values.
    pub fn on_grid(grid: GridLayout, values: &[f64], sensors: Vec<Sensor>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(CalibrationError::domain(format!(
                "grid expects {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        let points = values
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let (x, y) = grid.position(k);
                MeshPoint::new_2d(x, y, v)
            })
            .collect();
        let problem = CalibrationProblem { points, sensors, grid: Some(grid) };
        problem.validate()?;
        Ok(problem)
    }

    fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if n == 0 {
            return Err(CalibrationError::domain("problem needs at least one mesh point"));
        }
        if let Some((i, _)) = self.points.iter().enumerate().find(|(_, p)| !p.is_finite()) {
            return Err(CalibrationError::domain(format!("mesh point {i} is not finite")));
        }
        if self.sensors.is_empty() {
            return Err(CalibrationError::domain("problem needs at least one sensor"));
        }
        if self.sensors.len() > n {
            return Err(CalibrationError::domain(format!(
                "{} sensors exceed {} mesh points",
                self.sensors.len(),
                n
            )));
        }
        let mut seen = HashSet::with_capacity(self.sensors.len());
        for (k, s) in self.sensors.iter().enumerate() {
            if s.index >= n {
                return Err(CalibrationError::domain(format!(
                    "sensor {k} mesh index {} out of range [0, {n})",
                    s.index
                )));
            }
            if !s.observed.is_finite() {
                return Err(CalibrationError::domain(format!("sensor {k} observation is not finite")));
            }
            if !seen.insert(s.index) {
                return Err(CalibrationError::domain(format!(
                    "duplicate sensor mesh index {}",
                    s.index
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_sensors(&self) -> usize {
        self.sensors.len()
    }

    pub fn points(&self) -> &[MeshPoint] {
        &self.points
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }

    pub fn grid(&self) -> Option<&GridLayout> {
        self.grid.as_ref()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    pub fn sensor_indices(&self) -> Vec<usize> {
        self.sensors.iter().map(|s| s.index).collect()
    }

    /// Same mesh with a different sensor set.
    pub fn with_sensors(&self, sensors: Vec<Sensor>) -> Result<Self> {
        let problem = CalibrationProblem {
            points: self.points.clone(),
            sensors,
            grid: self.grid,
        };
        problem.validate()?;
        Ok(problem)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowSumMode {
    Exact,
    Lowrank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Dense,
    Lowrank,
}

impl FromStr for RowSumMode {
    type Err = CalibrationError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(RowSumMode::Exact),
            "lowrank" => Ok(RowSumMode::Lowrank),
            other => Err(CalibrationError::domain(format!("unknown row-sum mode '{other}'"))),
        }
    }
}

impl FromStr for SolverKind {
    type Err = CalibrationError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(SolverKind::Dense),
            "lowrank" => Ok(SolverKind::Lowrank),
            other => Err(CalibrationError::domain(format!("unknown solver '{other}'"))),
        }
    }
}

impl fmt::Display for RowSumMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RowSumMode::Exact => "exact",
            RowSumMode::Lowrank => "lowrank",
        })
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverKind::Dense => "dense",
            SolverKind::Lowrank => "lowrank",
        })
    }
}

pub const DEFAULT_DENSE_CAP: usize = 5000;
pub const DEFAULT_SAMPLES: usize = 100;

/// Tuning of the calibration.
///
/// `sigma_m` is in squared field units, `sigma_d` in squared meters. The
/// balance factor is derived from `alpha` and the problem size, see
/// [`crate::kernel::lambda_from_alpha`]. `n_samples = None` means
/// `min(100, N)` columns for the low-rank solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub sigma_m: f64,
    pub sigma_d: f64,
    pub alpha: f64,
    pub n_samples: Option<usize>,
    pub rowsum_mode: RowSumMode,
    pub solver: SolverKind,
    pub dense_cap: usize,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        CalibrationParams {
            sigma_m: 1000.0,
            sigma_d: 1.0,
            alpha: 0.01,
            n_samples: None,
            rowsum_mode: RowSumMode::Lowrank,
            solver: SolverKind::Lowrank,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}

impl CalibrationParams {
    pub fn new(sigma_m: f64, sigma_d: f64, alpha: f64) -> Self {
        CalibrationParams { sigma_m, sigma_d, alpha, ..Default::default() }
    }

    pub fn dense(mut self) -> Self {
        self.solver = SolverKind::Dense;
        self
    }

    pub fn lowrank(mut self, n_samples: usize, rowsum_mode: RowSumMode) -> Self {
        self.solver = SolverKind::Lowrank;
        self.n_samples = Some(n_samples);
        self.rowsum_mode = rowsum_mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_m.is_finite() && self.sigma_m > 0.0) {
            return Err(CalibrationError::domain(format!(
                "sigma_m must be positive, got {}",
                self.sigma_m
            )));
        }
        if !(self.sigma_d.is_finite() && self.sigma_d > 0.0) {
            return Err(CalibrationError::domain(format!(
                "sigma_d must be positive, got {}",
                self.sigma_d
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(CalibrationError::domain(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.n_samples == Some(0) {
            return Err(CalibrationError::domain("n_samples must be at least 1"));
        }
        Ok(())
    }

    /// Number of sampled columns for a problem of `n_points` points.
    pub fn samples_for(&self, n_points: usize) -> Result<usize> {
        match self.n_samples {
            None => Ok(DEFAULT_SAMPLES.min(n_points)),
            Some(n) if n >= 1 && n <= n_points => Ok(n),
            Some(n) => Err(CalibrationError::domain(format!(
                "n_samples={n} must lie in [1, {n_points}]"
            ))),
        }
    }
}

/// Estimated simulation error at every mesh point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub v_hat: Vec<f64>,
}

impl ErrorEstimate {
    pub fn new(v_hat: Vec<f64>) -> Self {
        ErrorEstimate { v_hat }
    }

    pub fn len(&self) -> usize {
        self.v_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_hat.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.v_hat
    }

    pub fn max_abs(&self) -> f64 {
        self.v_hat.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
