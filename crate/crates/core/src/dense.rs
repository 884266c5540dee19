//! Exact assembly and solve of `H v = b` with `H = D - W_s`.
//!
//! Materializes the full N x N system, so it is limited to problems below a
//! configurable size cap. It is the reference the low-rank path is checked
//! against.

use faer::linalg::solvers::Solve;
use faer::{MatRef, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{CalibrationError, Result};
use crate::kernel::{lambda_from_alpha, sensor_residuals, Affinity};
use crate::problem::{CalibrationParams, CalibrationProblem, ErrorEstimate};

/// `H`, the diagonal `D` and the right-hand side `b` of the stationarity system.
///
/// `H = D - 2W`, `D_i = (1/lambda) sum_k w_{i,l_k} + 2 sum_j w_ij` and
/// `b_i = (1/lambda) sum_k e_k w_{i,l_k}`. The constant term of the objective
/// is not kept.
#[derive(Debug, Clone)]
pub struct DenseSystem {
    pub h: DMatrix<f64>,
    pub d: DVector<f64>,
    pub b: DVector<f64>,
    pub lambda: f64,
}

pub fn assemble_dense(problem: &CalibrationProblem, params: &CalibrationParams) -> Result<DenseSystem> {
    params.validate()?;
    let n = problem.len();
    if n > params.dense_cap {
        return Err(CalibrationError::DenseTooLarge { n, cap: params.dense_cap });
    }
    let lambda = lambda_from_alpha(params.alpha, problem.n_sensors(), n)?;
    let inv_lambda = 1.0 / lambda;
    let kernel = Affinity::from_params(params);
    let points = problem.points();

    // off-diagonal entries are -2 w_ij; row sums accumulate in j order
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut row_sums = vec![0.0; n];
    for j in 0..n {
        for i in 0..n {
            let w = kernel.weight(&points[i], &points[j]);
            h[(i, j)] = -2.0 * w;
            row_sums[i] += w;
        }
    }

    let residuals = sensor_residuals(problem);
    let mut d = DVector::<f64>::zeros(n);
    let mut b = DVector::<f64>::zeros(n);
    for i in 0..n {
        let mut sensor_weight = 0.0;
        let mut rhs = 0.0;
        for (s, e) in problem.sensors().iter().zip(&residuals) {
            let w = kernel.weight(&points[i], &points[s.index]);
            sensor_weight += w;
            rhs += e * w;
        }
        d[i] = inv_lambda * sensor_weight + 2.0 * row_sums[i];
        b[i] = inv_lambda * rhs;
    }
    for i in 0..n {
        h[(i, i)] += d[i];
    }
    if !(h.iter().all(|x| x.is_finite()) && b.iter().all(|x| x.is_finite())) {
        return Err(CalibrationError::Assembly(
            "kernel produced non-finite entries".to_string(),
        ));
    }
    Ok(DenseSystem { h, d, b, lambda })
}

/// Lower Cholesky factor of a dense system matrix.
pub struct DenseFactor {
    llt: faer::linalg::solvers::Llt<f64>,
}

impl DenseFactor {
    /// Diagonal of `L`; all strictly positive for a successful factorization.
    pub fn pivots(&self) -> Vec<f64> {
        let l = self.llt.L();
        (0..l.nrows()).map(|i| l[(i, i)]).collect()
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let rhs = MatRef::from_column_major_slice(rhs.as_slice(), rhs.len(), 1);
        let x = self.llt.solve(rhs);
        DVector::from_iterator(x.nrows(), (0..x.nrows()).map(|i| x[(i, 0)]))
    }
}

impl DenseSystem {
    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    pub fn factor(&self) -> Result<DenseFactor> {
        let n = self.len();
        let view = MatRef::from_column_major_slice(self.h.as_slice(), n, n);
        let llt = view.llt(Side::Lower).map_err(|e| match e {
            faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index } => {
                CalibrationError::NotPositiveDefinite { pivot: index }
            }
        })?;
        Ok(DenseFactor { llt })
    }

    /// Value of `v^T H v - 2 b^T v`, the objective without its constant.
    pub fn objective(&self, v: &[f64]) -> f64 {
        let v = DVector::from_column_slice(v);
        v.dot(&(&self.h * &v)) - 2.0 * self.b.dot(&v)
    }

    /// `|H v - b| / |b|`, or the absolute residual when `b = 0`.
    pub fn relative_residual(&self, v: &[f64]) -> f64 {
        let v = DVector::from_column_slice(v);
        let r = (&self.h * v - &self.b).norm();
        let nb = self.b.norm();
        if nb > 0.0 {
            r / nb
        } else {
            r
        }
    }
}

pub fn solve_dense(system: &DenseSystem) -> Result<ErrorEstimate> {
    let factor = system.factor()?;
    let v = factor.solve(&system.b);
    Ok(ErrorEstimate::new(v.as_slice().to_vec()))
}
