//! The affinity kernel and the quantities every solver shares: sensor
//! residuals, the balance factor, sensor columns and kernel row sums.

use nalgebra::DMatrix;

use crate::error::{CalibrationError, Result};
use crate::problem::{CalibrationParams, CalibrationProblem, MeshPoint};

/// Gaussian affinity in field value and position,
/// `w(p, q) = exp(-(f_p - f_q)^2 / sigma_m) * exp(-|x_p - x_q|^2 / sigma_d)`.
#[derive(Debug, Clone, Copy)]
pub struct Affinity {
    inv_sigma_m: f64,
    inv_sigma_d: f64,
}

impl Affinity {
    pub fn new(sigma_m: f64, sigma_d: f64) -> Self {
        Affinity { inv_sigma_m: 1.0 / sigma_m, inv_sigma_d: 1.0 / sigma_d }
    }

    pub fn from_params(params: &CalibrationParams) -> Self {
        Affinity::new(params.sigma_m, params.sigma_d)
    }

    #[inline]
    pub fn weight(&self, p: &MeshPoint, q: &MeshPoint) -> f64 {
        let dv = p.value - q.value;
        (-(dv * dv * self.inv_sigma_m + p.distance_squared(q) * self.inv_sigma_d)).exp()
    }
}

pub fn affinity(p: &MeshPoint, q: &MeshPoint, params: &CalibrationParams) -> f64 {
    Affinity::from_params(params).weight(p, q)
}

/// `e_k = f_c(x_k) - s_k`, in sensor order.
pub fn sensor_residuals(problem: &CalibrationProblem) -> Vec<f64> {
    let points = problem.points();
    problem
        .sensors()
        .iter()
        .map(|s| points[s.index].value - s.observed)
        .collect()
}

/// Balance factor `lambda = alpha * m / N`.
pub fn lambda_from_alpha(alpha: f64, m: usize, n: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(CalibrationError::domain(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if m == 0 || m > n {
        return Err(CalibrationError::domain(format!(
            "sensor count m={m} must lie in [1, N={n}]"
        )));
    }
    Ok(alpha * m as f64 / n as f64)
}

/// N x m matrix whose column k holds `w(y_i, y_{l_k})`.
pub fn sensor_affinity_columns(problem: &CalibrationProblem, params: &CalibrationParams) -> DMatrix<f64> {
    let kernel = Affinity::from_params(params);
    let points = problem.points();
    let sensors = problem.sensors();
    DMatrix::from_fn(points.len(), sensors.len(), |i, k| {
        kernel.weight(&points[i], &points[sensors[k].index])
    })
}

/// `r_i = sum_j w_ij`, self term included. O(N^2) kernel evaluations; the
/// summation order is fixed (j ascending) so results are reproducible.
pub fn row_sums_exact(problem: &CalibrationProblem, params: &CalibrationParams) -> Vec<f64> {
    let kernel = Affinity::from_params(params);
    let points = problem.points();
    points
        .iter()
        .map(|p| points.iter().map(|q| kernel.weight(p, q)).sum())
        .collect()
}
