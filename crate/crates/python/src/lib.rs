//! Python bindings for `fieldcal`.
//!
//! Fields and values cross the boundary as plain Python lists; sensors as
//! `(mesh_index, observed)` tuples.
//!
//! ```python
//! import fieldcal_py as fc
//! case = fc.make_case(seed=3, nx=80, ny=40)
//! params = fc.CalibrationParams(sigma_m=1000.0, sigma_d=1.0, alpha=0.01, solver="dense")
//! result = fc.calibrate(case.problem, params)
//! report = fc.evaluate(case.problem, result, case.holdout)
//! ```

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use fieldcal::{
    CalibrationError, CalibrationParams as CoreParams, CalibrationProblem as CoreProblem, GridLayout, MeshPoint,
    RowSumMode, Sensor, SolverKind, SweepAxis,
};

fn to_py(err: CalibrationError) -> PyErr {
    match err {
        CalibrationError::Domain(_) | CalibrationError::DenseTooLarge { .. } => PyValueError::new_err(err.to_string()),
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

fn sensors_from(pairs: Vec<(usize, f64)>) -> Vec<Sensor> {
    pairs.into_iter().map(|(i, v)| Sensor::new(i, v)).collect()
}

fn sensors_to(sensors: &[Sensor]) -> Vec<(usize, f64)> {
    sensors.iter().map(|s| (s.index, s.observed)).collect()
}

#[pyclass(name = "CalibrationParams", from_py_object)]
#[derive(Clone)]
struct PyParams {
    inner: CoreParams,
}

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (sigma_m=1000.0, sigma_d=1.0, alpha=0.01, solver="lowrank", n_samples=None, rowsum="lowrank", dense_cap=5000))]
    fn new(
        sigma_m: f64,
        sigma_d: f64,
        alpha: f64,
        solver: &str,
        n_samples: Option<usize>,
        rowsum: &str,
        dense_cap: usize,
    ) -> PyResult<Self> {
        let inner = CoreParams {
            sigma_m,
            sigma_d,
            alpha,
            n_samples,
            rowsum_mode: rowsum.parse::<RowSumMode>().map_err(to_py)?,
            solver: solver.parse::<SolverKind>().map_err(to_py)?,
            dense_cap,
        };
        inner.validate().map_err(to_py)?;
        Ok(PyParams { inner })
    }

    #[getter]
    fn sigma_m(&self) -> f64 {
        self.inner.sigma_m
    }

    #[getter]
    fn sigma_d(&self) -> f64 {
        self.inner.sigma_d
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn solver(&self) -> String {
        self.inner.solver.to_string()
    }

    #[getter]
    fn rowsum(&self) -> String {
        self.inner.rowsum_mode.to_string()
    }

    #[getter]
    fn n_samples(&self) -> Option<usize> {
        self.inner.n_samples
    }

    fn __repr__(&self) -> String {
        format!(
            "CalibrationParams(sigma_m={}, sigma_d={}, alpha={}, solver='{}', n_samples={:?}, rowsum='{}')",
            self.inner.sigma_m,
            self.inner.sigma_d,
            self.inner.alpha,
            self.inner.solver,
            self.inner.n_samples,
            self.inner.rowsum_mode
        )
    }
}

#[pyclass(name = "CalibrationProblem", from_py_object)]
#[derive(Clone)]
struct PyProblem {
    inner: CoreProblem,
}

#[pymethods]
impl PyProblem {
    /// Problem on a row-major regular grid.
    #[staticmethod]
    #[pyo3(signature = (values, nx, ny, dx, dy, sensors, x0=0.0, y0=0.0))]
    #[allow(clippy::too_many_arguments)]
    fn on_grid(
        values: Vec<f64>,
        nx: usize,
        ny: usize,
        dx: f64,
        dy: f64,
        sensors: Vec<(usize, f64)>,
        x0: f64,
        y0: f64,
    ) -> PyResult<Self> {
        let grid = GridLayout::new(nx, ny, dx, dy, x0, y0).map_err(to_py)?;
        let inner = CoreProblem::on_grid(grid, &values, sensors_from(sensors)).map_err(to_py)?;
        Ok(PyProblem { inner })
    }

    /// Problem on scattered points given as `(x, y, value)` or `(x, y, z, value)`.
    #[staticmethod]
    fn from_points(points: Vec<Vec<f64>>, sensors: Vec<(usize, f64)>) -> PyResult<Self> {
        let pts = points
            .iter()
            .map(|p| match p.as_slice() {
                [x, y, v] => Ok(MeshPoint::new_2d(*x, *y, *v)),
                [x, y, z, v] => Ok(MeshPoint::new_3d(*x, *y, *z, *v)),
                _ => Err(PyValueError::new_err("points must be (x, y, value) or (x, y, z, value)")),
            })
            .collect::<PyResult<Vec<_>>>()?;
        let inner = CoreProblem::new(pts, sensors_from(sensors)).map_err(to_py)?;
        Ok(PyProblem { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values()
    }

    #[getter]
    fn sensors(&self) -> Vec<(usize, f64)> {
        sensors_to(self.inner.sensors())
    }

    fn with_sensors(&self, sensors: Vec<(usize, f64)>) -> PyResult<Self> {
        let inner = self.inner.with_sensors(sensors_from(sensors)).map_err(to_py)?;
        Ok(PyProblem { inner })
    }

    fn residuals(&self) -> Vec<f64> {
        fieldcal::sensor_residuals(&self.inner)
    }
}

#[pyclass(name = "CalibrationResult", from_py_object)]
#[derive(Clone)]
struct PyResult_ {
    inner: fieldcal::CalibrationResult,
}

#[pymethods]
impl PyResult_ {
    #[getter]
    fn v_hat(&self) -> Vec<f64> {
        self.inner.v_hat.v_hat.clone()
    }

    #[getter]
    fn f_hat(&self) -> Vec<f64> {
        self.inner.f_hat.clone()
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn solver(&self) -> String {
        self.inner.solver_used.to_string()
    }
}

#[pyclass(name = "EvaluationReport", skip_from_py_object)]
struct PyReport {
    #[pyo3(get)]
    rmse_before: f64,
    #[pyo3(get)]
    rmse_after: f64,
    #[pyo3(get)]
    improvement: f64,
    /// `(mesh_index, error_before, error_after)` per holdout sensor.
    #[pyo3(get)]
    per_sensor: Vec<(usize, f64, f64)>,
}

impl From<fieldcal::EvaluationReport> for PyReport {
    fn from(r: fieldcal::EvaluationReport) -> Self {
        PyReport {
            rmse_before: r.rmse_before,
            rmse_after: r.rmse_after,
            improvement: r.improvement,
            per_sensor: r.per_sensor.iter().map(|s| (s.mesh_index, s.error_before, s.error_after)).collect(),
        }
    }
}

#[pyclass(name = "SyntheticCase", skip_from_py_object)]
struct PyCase {
    #[pyo3(get)]
    ground_truth: Vec<f64>,
    #[pyo3(get)]
    injected_error: Vec<f64>,
    #[pyo3(get)]
    calib_sensors: Vec<usize>,
    #[pyo3(get)]
    holdout_sensors: Vec<usize>,
    #[pyo3(get)]
    seed: u64,
    problem: CoreProblem,
    holdout: Vec<Sensor>,
}

#[pymethods]
impl PyCase {
    #[getter]
    fn problem(&self) -> PyProblem {
        PyProblem { inner: self.problem.clone() }
    }

    #[getter]
    fn holdout(&self) -> Vec<(usize, f64)> {
        sensors_to(&self.holdout)
    }
}

#[pyfunction]
fn lambda_from_alpha(alpha: f64, m: usize, n: usize) -> PyResult<f64> {
    fieldcal::lambda_from_alpha(alpha, m, n).map_err(to_py)
}

#[pyfunction]
fn improvement(rmse_before: f64, rmse_after: f64) -> f64 {
    fieldcal::improvement(rmse_before, rmse_after)
}

#[pyfunction]
fn rmse(a: Vec<f64>, b: Vec<f64>, at: Vec<usize>) -> PyResult<f64> {
    fieldcal::rmse(&a, &b, &at).map_err(to_py)
}

#[pyfunction]
fn row_sums_exact(problem: &PyProblem, params: &PyParams) -> Vec<f64> {
    fieldcal::row_sums_exact(&problem.inner, &params.inner)
}

#[pyfunction]
fn calibrate(py: Python<'_>, problem: &PyProblem, params: &PyParams) -> PyResult<PyResult_> {
    let (prob, p) = (problem.inner.clone(), params.inner);
    let inner = py.detach(move || fieldcal::calibrate(&prob, &p)).map_err(to_py)?;
    Ok(PyResult_ { inner })
}

#[pyfunction]
fn evaluate(problem: &PyProblem, result: &PyResult_, holdout: Vec<(usize, f64)>) -> PyResult<PyReport> {
    fieldcal::evaluate(&problem.inner, &result.inner, &sensors_from(holdout))
        .map(PyReport::from)
        .map_err(to_py)
}

/// Returns `(value, report, max_abs_v, support_area_fraction)` per value.
#[pyfunction]
fn sweep(
    py: Python<'_>,
    problem: &PyProblem,
    base: &PyParams,
    axis: &str,
    values: Vec<f64>,
    holdout: Vec<(usize, f64)>,
) -> PyResult<Vec<(f64, PyReport, f64, f64)>> {
    let axis: SweepAxis = axis.parse().map_err(to_py)?;
    let (prob, p, hold) = (problem.inner.clone(), base.inner, sensors_from(holdout));
    let entries = py
        .detach(move || fieldcal::sweep(&prob, &p, axis, &values, &hold))
        .map_err(to_py)?;
    Ok(entries
        .into_iter()
        .map(|e| (e.value, PyReport::from(e.report), e.max_abs_v, e.support_area_fraction))
        .collect())
}

#[pyfunction]
#[pyo3(signature = (seed, nx=80, ny=40, spacing=0.1, n_calib=4, n_holdout=4))]
fn make_case(seed: u64, nx: usize, ny: usize, spacing: f64, n_calib: usize, n_holdout: usize) -> PyResult<PyCase> {
    let case = fieldcal::make_case(seed, nx, ny, spacing, n_calib, n_holdout).map_err(to_py)?;
    let holdout = case.holdout();
    Ok(PyCase {
        ground_truth: case.ground_truth,
        injected_error: case.injected_error,
        calib_sensors: case.calib_sensors,
        holdout_sensors: case.holdout_sensors,
        seed: case.seed,
        problem: case.problem,
        holdout,
    })
}

#[pymodule]
fn fieldcal_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyResult_>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyCase>()?;
    m.add_function(wrap_pyfunction!(lambda_from_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(improvement, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(row_sums_exact, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(make_case, m)?)?;
    Ok(())
}
