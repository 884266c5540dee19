//! Seeded synthetic calibration cases: a plume-like ground truth, a smooth
//! injected simulation error, and disjoint calibration / holdout sensors.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CalibrationError, Result};
use crate::problem::{CalibrationProblem, GridLayout, Sensor};

/// Shape of the generated fields. Ranges are inclusive `(low, high)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub base: f64,
    pub truth_bumps: (usize, usize),
    pub truth_amplitude: (f64, f64),
    pub truth_width: (f64, f64),
    pub error_bumps: (usize, usize),
    pub error_amplitude: (f64, f64),
    pub error_width: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            base: 24.0,
            truth_bumps: (3, 6),
            truth_amplitude: (1.0, 4.0),
            truth_width: (0.3, 1.5),
            error_bumps: (2, 4),
            error_amplitude: (0.5, 2.0),
            error_width: (2.0, 4.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub ground_truth: Vec<f64>,
    /// Simulated field `truth + error` with the calibration sensors attached.
    pub problem: CalibrationProblem,
    pub injected_error: Vec<f64>,
    pub calib_sensors: Vec<usize>,
    pub holdout_sensors: Vec<usize>,
    pub seed: u64,
}

impl SyntheticCase {
    pub fn grid(&self) -> &GridLayout {
        self.problem.grid().expect("synthetic cases are always gridded")
    }

    /// Holdout observations, equal to the ground truth.
    pub fn holdout(&self) -> Vec<Sensor> {
        self.holdout_sensors
            .iter()
            .map(|&i| Sensor::new(i, self.ground_truth[i]))
            .collect()
    }

    pub fn calibration(&self) -> Vec<Sensor> {
        self.problem.sensors().to_vec()
    }
}

struct Bump {
    cx: f64,
    cy: f64,
    amplitude: f64,
    width: f64,
}

impl Bump {
    fn at(&self, x: f64, y: f64) -> f64 {
        let r2 = (x - self.cx).powi(2) + (y - self.cy).powi(2);
        self.amplitude * (-r2 / (2.0 * self.width * self.width)).exp()
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

fn count(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.gen_range(lo..=hi.max(lo))
}

pub fn make_case(
    seed: u64,
    nx: usize,
    ny: usize,
    spacing: f64,
    n_calib: usize,
    n_holdout: usize,
) -> Result<SyntheticCase> {
    make_case_with(&SynthConfig::default(), seed, nx, ny, spacing, n_calib, n_holdout)
}

pub fn make_case_with(
    config: &SynthConfig,
    seed: u64,
    nx: usize,
    ny: usize,
    spacing: f64,
    n_calib: usize,
    n_holdout: usize,
) -> Result<SyntheticCase> {
    if nx < 4 || ny < 4 {
        return Err(CalibrationError::domain(format!("grid must be at least 4x4, got {nx}x{ny}")));
    }
    if n_calib == 0 {
        return Err(CalibrationError::domain("at least one calibration sensor is required"));
    }
    if n_calib + n_holdout > nx * ny {
        return Err(CalibrationError::domain(format!(
            "{n_calib} calibration + {n_holdout} holdout sensors exceed {} mesh points",
            nx * ny
        )));
    }
    let grid = GridLayout::new(nx, ny, spacing, spacing, 0.0, 0.0)?;
    let (width, height) = grid.extent();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let truth_bumps: Vec<Bump> = (0..count(&mut rng, config.truth_bumps))
        .map(|_| Bump {
            cx: uniform(&mut rng, (0.0, width)),
            cy: uniform(&mut rng, (0.0, height)),
            amplitude: uniform(&mut rng, config.truth_amplitude),
            width: uniform(&mut rng, config.truth_width),
        })
        .collect();

    // one error bump per calibration sensor where the range allows; each gets
    // its own x-stratum so they stay distinct
    let (lo, hi) = config.error_bumps;
    let n_err = count(&mut rng, (lo.max(n_calib.min(hi)), hi));
    let error_bumps: Vec<Bump> = (0..n_err)
        .map(|j| {
            let lo = width * j as f64 / n_err as f64;
            let hi = width * (j + 1) as f64 / n_err as f64;
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            Bump {
                cx: uniform(&mut rng, (lo, hi)),
                cy: uniform(&mut rng, (0.0, height)),
                amplitude: sign * uniform(&mut rng, config.error_amplitude),
                width: uniform(&mut rng, config.error_width),
            }
        })
        .collect();

    let n = grid.len();
    let mut ground_truth = Vec::with_capacity(n);
    let mut injected_error = Vec::with_capacity(n);
    for k in 0..n {
        let (x, y) = grid.position(k);
        ground_truth.push(config.base + truth_bumps.iter().map(|b| b.at(x, y)).sum::<f64>());
        injected_error.push(error_bumps.iter().map(|b| b.at(x, y)).sum::<f64>());
    }
    let simulated: Vec<f64> = ground_truth.iter().zip(&injected_error).map(|(t, e)| t + e).collect();

    let mut taken = HashSet::new();
    let mut calib_sensors = Vec::with_capacity(n_calib);
    for bump in error_bumps.iter().take(n_calib) {
        let jitter = 0.25 * bump.width;
        let x = (bump.cx + uniform(&mut rng, (-jitter, jitter))).clamp(0.0, width);
        let y = (bump.cy + uniform(&mut rng, (-jitter, jitter))).clamp(0.0, height);
        let idx = nearest_free(&grid, x, y, &taken);
        taken.insert(idx);
        calib_sensors.push(idx);
    }
    let extra = n_calib - calib_sensors.len();
    calib_sensors.extend(stratified_draws(&mut rng, &grid, extra, &mut taken));
    let holdout_sensors = stratified_draws(&mut rng, &grid, n_holdout, &mut taken);

    let sensors = calib_sensors.iter().map(|&i| Sensor::new(i, ground_truth[i])).collect();
    let problem = CalibrationProblem::on_grid(grid, &simulated, sensors)?;
    Ok(SyntheticCase { ground_truth, problem, injected_error, calib_sensors, holdout_sensors, seed })
}

/// Closest grid point to `(x, y)` not already taken; ties go to the lowest index.
fn nearest_free(grid: &GridLayout, x: f64, y: f64, taken: &HashSet<usize>) -> usize {
    (0..grid.len())
        .filter(|i| !taken.contains(i))
        .map(|i| {
            let (px, py) = grid.position(i);
            (i, (px - x).powi(2) + (py - y).powi(2))
        })
        .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
            Some((_, bd)) if bd <= d => best,
            _ => Some((i, d)),
        })
        .map(|(i, _)| i)
        .expect("sensor counts were checked against the mesh size")
}

/// One random point per vertical strip of the grid, skipping taken points.
fn stratified_draws(
    rng: &mut ChaCha8Rng,
    grid: &GridLayout,
    k: usize,
    taken: &mut HashSet<usize>,
) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    for t in 0..k {
        let lo = t * grid.nx / k;
        let hi = ((t + 1) * grid.nx / k).max(lo + 1).min(grid.nx);
        let mut pick = None;
        for _ in 0..64 {
            let col = rng.gen_range(lo..hi);
            let row = rng.gen_range(0..grid.ny);
            let idx = grid.index(col, row);
            if !taken.contains(&idx) {
                pick = Some(idx);
                break;
            }
        }
        let idx = pick.unwrap_or_else(|| {
            let free: Vec<usize> = (0..grid.len()).filter(|i| !taken.contains(i)).collect();
            free[rng.gen_range(0..free.len())]
        });
        taken.insert(idx);
        out.push(idx);
    }
    out
}

/// Root mean square of `a_i - b_i` over the listed indexes.
pub fn rmse(a: &[f64], b: &[f64], at: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CalibrationError::domain(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if at.is_empty() {
        return Err(CalibrationError::domain("rmse needs at least one index"));
    }
    let mut acc = 0.0;
    for &i in at {
        if i >= a.len() {
            return Err(CalibrationError::domain(format!("index {i} out of range")));
        }
        acc += (a[i] - b[i]).powi(2);
    }
    Ok((acc / at.len() as f64).sqrt())
}
