//! Column-sampled low-rank solve.
//!
//! `W_s = 2W` is approximated by `Z A^-1 Z^T`, where `Z` holds the sampled
//! columns of `W_s` and `A` is `Z` restricted to the sampled rows. The system
//! `(D - Z A^-1 Z^T) v = b` is then solved with the Woodbury identity
//!
//! ```text
//! v = D^-1 b - D^-1 Z (Z^T D^-1 Z - A)^-1 Z^T D^-1 b
//! ```
//!
//! Only N x n and n x n blocks are ever allocated.

use std::collections::BTreeSet;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{CalibrationError, Result};
use crate::kernel::{lambda_from_alpha, row_sums_exact, sensor_affinity_columns, sensor_residuals, Affinity};
use crate::problem::{CalibrationParams, CalibrationProblem, ErrorEstimate, GridLayout, RowSumMode};

/// First nonzero ridge on `A`, relative to its mean diagonal.
pub const RIDGE_START: f64 = 1e-8;
/// Largest relative ridge tried before giving up on factoring `A`.
pub const RIDGE_MAX: f64 = 1e-2;
/// Floor applied to approximated row sums.
pub const ROW_SUM_FLOOR: f64 = 1e-12;
/// Exact row sums cost O(N^2) kernel evaluations; refused above this size.
pub const EXACT_ROW_SUM_CAP: usize = 20_000;

pub struct LowRankFactors {
    pub samples: Vec<usize>,
    /// N x n, `Z[i, c] = 2 w(y_i, y_samples[c])`.
    pub z: DMatrix<f64>,
    /// n x n, the rows of `Z` at the sampled indexes.
    pub a: DMatrix<f64>,
    /// Added to the diagonal of `a` wherever `A` is factored or inverted.
    pub ridge: f64,
    a_factor: Option<Cholesky<f64, Dyn>>,
}

impl std::fmt::Debug for LowRankFactors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LowRankFactors")
            .field("samples", &self.samples)
            .field("ridge", &self.ridge)
            .field("factored", &self.a_factor.is_some())
            .finish()
    }
}

fn ridged(a: &DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    let mut a = a.clone();
    for d in 0..a.nrows() {
        a[(d, d)] += ridge;
    }
    a
}

impl LowRankFactors {
    /// `A + ridge * I`, the pivot block actually used by the solves.
    pub fn regularized_pivot(&self) -> DMatrix<f64> {
        ridged(&self.a, self.ridge)
    }

    pub fn rank(&self) -> usize {
        self.samples.len()
    }

    fn a_factor(&self) -> Result<&Cholesky<f64, Dyn>> {
        self.a_factor
            .as_ref()
            .ok_or_else(|| CalibrationError::RankDeficient { samples: self.samples.clone() })
    }
}

/// Chooses `n` distinct, spatially spread columns.
///
/// Sensor indexes are always included when `n >= m`. The rest come from
/// cell centres of a coarse sub-grid (grid problems) or uniform strides over
/// the point list. Output is sorted ascending.
pub fn select_samples(problem: &CalibrationProblem, n: usize) -> Result<Vec<usize>> {
    let total = problem.len();
    if n == 0 || n > total {
        return Err(CalibrationError::domain(format!(
            "sample count {n} must lie in [1, {total}]"
        )));
    }
    if n == total {
        return Ok((0..total).collect());
    }
    let forced = if n >= problem.n_sensors() { problem.sensor_indices() } else { Vec::new() };
    Ok(stratified_samples(total, problem.grid(), n, &forced))
}

fn stratified_samples(total: usize, grid: Option<&GridLayout>, n: usize, forced: &[usize]) -> Vec<usize> {
    let mut chosen: BTreeSet<usize> = forced.iter().copied().collect();
    let need = n.saturating_sub(chosen.len());
    let candidates = match grid {
        Some(g) => grid_cell_centres(g, need),
        None => strides(total, need),
    };
    for c in candidates {
        if chosen.len() >= n {
            break;
        }
        chosen.insert(c);
    }
    // collisions with forced indexes leave gaps; fill them from what is left
    if chosen.len() < n {
        let rest: Vec<usize> = (0..total).filter(|i| !chosen.contains(i)).collect();
        let k = n - chosen.len();
        for t in strides(rest.len(), k) {
            chosen.insert(rest[t]);
        }
    }
    chosen.into_iter().collect()
}

/// `k` evenly spread positions in `0..len`, midpoint rule.
fn strides(len: usize, k: usize) -> Vec<usize> {
    (0..k).map(|t| (2 * t + 1) * len / (2 * k)).collect()
}

fn grid_cell_centres(grid: &GridLayout, need: usize) -> Vec<usize> {
    if need == 0 {
        return Vec::new();
    }
    let (nx, ny) = (grid.nx, grid.ny);
    let kx = ((need as f64 * nx as f64 / ny as f64).sqrt().round() as usize).clamp(1, nx);
    let mut ky = need.div_ceil(kx).clamp(1, ny);
    let mut kx = kx;
    if kx * ky < need {
        kx = need.div_ceil(ky).min(nx);
        ky = need.div_ceil(kx).min(ny);
    }
    let cells: Vec<usize> = (0..ky)
        .flat_map(|cy| {
            (0..kx).map(move |cx| {
                let col = (2 * cx + 1) * nx / (2 * kx);
                let row = (2 * cy + 1) * ny / (2 * ky);
                grid.index(col, row)
            })
        })
        .collect();
    if cells.len() <= need {
        cells
    } else {
        strides(cells.len(), need).into_iter().map(|t| cells[t]).collect()
    }
}

/// Samples the columns of `W_s` and factors the pivot block.
///
/// `A` is factored as is when possible. Otherwise a ridge starting at
/// `1e-8 * trace(A) / n` grows tenfold until `A` factors or
/// `1e-2 * trace(A) / n` is exceeded, in which case the factors are returned
/// unfactored and later solves report rank deficiency.
pub fn build_factors(
    problem: &CalibrationProblem,
    samples: &[usize],
    params: &CalibrationParams,
) -> Result<LowRankFactors> {
    let total = problem.len();
    let mut seen = BTreeSet::new();
    for &s in samples {
        if s >= total || !seen.insert(s) {
            return Err(CalibrationError::domain(format!(
                "sample index {s} is out of range or repeated"
            )));
        }
    }
    if samples.is_empty() {
        return Err(CalibrationError::domain("at least one sample is required"));
    }
    let kernel = Affinity::from_params(params);
    let points = problem.points();
    let n = samples.len();
    let z = DMatrix::from_fn(total, n, |i, c| 2.0 * kernel.weight(&points[i], &points[samples[c]]));
    let a = DMatrix::from_fn(n, n, |r, c| z[(samples[r], c)]);
    let scale = a.trace() / n as f64;

    // plain factorization first, then the ridge schedule
    let schedule = std::iter::once(0.0).chain(
        std::iter::successors(Some(RIDGE_START), |r| Some(r * 10.0)).take_while(|r| *r <= RIDGE_MAX * (1.0 + 1e-9)),
    );
    let mut ridge = 0.0;
    let mut a_factor = None;
    for rel in schedule {
        ridge = rel * scale;
        if let Some(chol) = Cholesky::new(ridged(&a, ridge)) {
            a_factor = Some(chol);
            break;
        }
    }
    Ok(LowRankFactors { samples: samples.to_vec(), z, a, ridge, a_factor })
}

/// Row sums of `Z A^-1 Z^T`, floored at [`ROW_SUM_FLOOR`].
pub fn row_sums_lowrank(factors: &LowRankFactors) -> Result<Vec<f64>> {
    let chol = factors.a_factor()?;
    let ones = DVector::from_element(factors.z.nrows(), 1.0);
    let t = factors.z.tr_mul(&ones);
    let u = chol.solve(&t);
    let r = &factors.z * u;
    Ok(r.iter().map(|&x| x.max(ROW_SUM_FLOOR)).collect())
}

pub fn solve_lowrank(problem: &CalibrationProblem, params: &CalibrationParams) -> Result<ErrorEstimate> {
    params.validate()?;
    let n = params.samples_for(problem.len())?;
    let samples = select_samples(problem, n)?;
    let factors = build_factors(problem, &samples, params)?;
    solve_with_factors(problem, params, &factors)
}

/// Woodbury solve against prebuilt factors.
pub fn solve_with_factors(
    problem: &CalibrationProblem,
    params: &CalibrationParams,
    factors: &LowRankFactors,
) -> Result<ErrorEstimate> {
    params.validate()?;
    let total = problem.len();
    if factors.z.nrows() != total {
        return Err(CalibrationError::domain("factors were built for a different mesh"));
    }
    let lambda = lambda_from_alpha(params.alpha, problem.n_sensors(), total)?;
    let inv_lambda = 1.0 / lambda;

    let columns = sensor_affinity_columns(problem, params);
    let residuals = DVector::from_vec(sensor_residuals(problem));
    let b = (&columns * &residuals) * inv_lambda;

    let coupling = match params.rowsum_mode {
        RowSumMode::Lowrank => row_sums_lowrank(factors)?,
        RowSumMode::Exact => {
            if total > EXACT_ROW_SUM_CAP {
                return Err(CalibrationError::domain(format!(
                    "exact row sums are limited to {EXACT_ROW_SUM_CAP} points (got {total})"
                )));
            }
            row_sums_exact(problem, params).into_iter().map(|r| 2.0 * r).collect()
        }
    };
    let d = DVector::from_fn(total, |i, _| inv_lambda * columns.row(i).sum() + coupling[i]);
    if let Some(i) = d.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(CalibrationError::Invariant(format!("D[{i}] = {} is not positive", d[i])));
    }

    let dinv_b = b.component_div(&d);
    let mut dinv_z = factors.z.clone();
    for (i, mut row) in dinv_z.row_iter_mut().enumerate() {
        row /= d[i];
    }
    let inner = factors.z.tr_mul(&dinv_z) - factors.regularized_pivot();
    let rhs = factors.z.tr_mul(&dinv_b);
    let y = inner
        .lu()
        .solve(&rhs)
        .ok_or_else(|| CalibrationError::RankDeficient { samples: factors.samples.clone() })?;
    let v = dinv_b - dinv_z * y;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CalibrationError::RankDeficient { samples: factors.samples.clone() });
    }
    Ok(ErrorEstimate::new(v.as_slice().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{MeshPoint, Sensor};
    use approx::assert_relative_eq;

    fn grid_problem(nx: usize, ny: usize, sensors: Vec<Sensor>) -> CalibrationProblem {
        let grid = GridLayout::new(nx, ny, 0.1, 0.1, 0.0, 0.0).unwrap();
        let values: Vec<f64> = (0..nx * ny).map(|k| 20.0 + (k as f64 * 0.01).sin()).collect();
        CalibrationProblem::on_grid(grid, &values, sensors).unwrap()
    }

    #[test]
    fn full_rank_selects_everything() {
        let p = grid_problem(5, 4, vec![Sensor::new(7, 0.0)]);
        assert_eq!(select_samples(&p, 20).unwrap(), (0..20).collect::<Vec<_>>());
        assert!(select_samples(&p, 21).is_err());
        assert!(select_samples(&p, 0).is_err());
    }

    #[test]
    fn quadrant_centres_on_ten_by_ten() {
        // five sensors exceed n = 4, so nothing is forced
        let sensors = (0..5).map(|k| Sensor::new(90 + k, 0.0)).collect();
        let p = grid_problem(10, 10, sensors);
        assert_eq!(select_samples(&p, 4).unwrap(), vec![22, 27, 72, 77]);
    }

    #[test]
    fn sensors_forced_in() {
        let sensors = vec![Sensor::new(3, 0.0), Sensor::new(55, 0.0), Sensor::new(98, 0.0)];
        let p = grid_problem(10, 10, sensors);
        assert_eq!(select_samples(&p, 3).unwrap(), vec![3, 55, 98]);
        let s = select_samples(&p, 12).unwrap();
        assert_eq!(s.len(), 12);
        assert!([3, 55, 98].iter().all(|i| s.contains(i)));
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s, select_samples(&p, 12).unwrap());
    }

    #[test]
    fn non_grid_strides() {
        let pts: Vec<_> = (0..10).map(|i| MeshPoint::new_2d(i as f64, 0.0, 1.0)).collect();
        let sensors = (0..4).map(|i| Sensor::new(i, 0.0)).collect();
        let p = CalibrationProblem::new(pts, sensors).unwrap();
        assert_eq!(select_samples(&p, 2).unwrap(), vec![2, 7]);
        assert_eq!(stratified_samples(10, None, 5, &[]), vec![1, 3, 5, 7, 9]);
    }

    #[test]
    fn single_sample_factor() {
        let p = grid_problem(4, 3, vec![Sensor::new(5, 0.0)]);
        let params = CalibrationParams::new(3.0, 0.5, 0.5);
        let f = build_factors(&p, &[0], &params).unwrap();
        for i in 0..p.len() {
            let w = crate::kernel::affinity(&p.points()[i], &p.points()[0], &params);
            assert_eq!(f.z[(i, 0)], 2.0 * w);
        }
        assert_eq!(f.ridge, 0.0);
        assert_eq!(f.a[(0, 0)], 2.0);
    }

    #[test]
    fn three_point_hand_factors() {
        let params = CalibrationParams::new(1000.0, 0.25, 0.5);
        let pts = (0..3).map(|i| MeshPoint::new_2d(0.5 * i as f64, 0.0, 21.0)).collect();
        let p = CalibrationProblem::new(pts, vec![Sensor::new(1, 20.0)]).unwrap();
        let f = build_factors(&p, &[0, 2], &params).unwrap();
        let (e1, e4) = ((-1.0f64).exp(), (-4.0f64).exp());
        let expected_z = [[2.0, 2.0 * e4], [2.0 * e1, 2.0 * e1], [2.0 * e4, 2.0]];
        for i in 0..3 {
            for c in 0..2 {
                assert_relative_eq!(f.z[(i, c)], expected_z[i][c], max_relative = 1e-15);
            }
        }
        assert_eq!(f.a[(0, 1)], f.z[(0, 1)]);
        assert_eq!(f.a[(1, 0)], f.z[(2, 0)]);
        assert_eq!(f.a[(0, 0)], 2.0);
    }

    #[test]
    fn pivot_block_matches_sampled_rows() {
        let p = grid_problem(9, 7, vec![Sensor::new(10, 0.0), Sensor::new(40, 1.0)]);
        let params = CalibrationParams::new(0.7, 0.3, 0.2);
        let s = select_samples(&p, 9).unwrap();
        let f = build_factors(&p, &s, &params).unwrap();
        for r in 0..s.len() {
            for c in 0..s.len() {
                assert_eq!(f.z[(s[r], c)], f.a[(r, c)]);
                assert_eq!(f.a[(r, c)], f.a[(c, r)]);
            }
            assert_eq!(f.a[(r, r)], 2.0);
            assert_eq!(f.regularized_pivot()[(r, r)], 2.0 + f.ridge);
        }
    }

    #[test]
    fn twin_points_row_sums() {
        let pts = vec![MeshPoint::new_2d(0.0, 0.0, 5.0); 2];
        let p = CalibrationProblem::new(pts, vec![Sensor::new(0, 4.0)]).unwrap();
        let f = build_factors(&p, &[0], &CalibrationParams::new(1.0, 1.0, 1.0)).unwrap();
        let r = row_sums_lowrank(&f).unwrap();
        assert_relative_eq!(r[0], 4.0, max_relative = 1e-7);
        assert_relative_eq!(r[1], 4.0, max_relative = 1e-7);
        let again = row_sums_lowrank(&f).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn full_rank_row_sums_recover_exact() {
        let p = grid_problem(6, 5, vec![Sensor::new(4, 0.0)]);
        let params = CalibrationParams::new(0.5, 0.05, 0.5);
        let s = select_samples(&p, p.len()).unwrap();
        let f = build_factors(&p, &s, &params).unwrap();
        let approx = row_sums_lowrank(&f).unwrap();
        let exact = row_sums_exact(&p, &params);
        for (a, e) in approx.iter().zip(&exact) {
            assert_relative_eq!(*a, 2.0 * e, max_relative = 1e-10);
        }
    }

    #[test]
    fn single_point_solve() {
        let p = CalibrationProblem::new(vec![MeshPoint::new_2d(0.0, 0.0, 26.0)], vec![Sensor::new(0, 24.0)]).unwrap();
        let params = CalibrationParams::new(1.0, 1.0, 0.3).lowrank(1, RowSumMode::Lowrank);
        let v = solve_lowrank(&p, &params).unwrap();
        assert_relative_eq!(v.v_hat[0], 2.0, max_relative = 1e-7);
        let params = params.lowrank(1, RowSumMode::Exact);
        let v = solve_lowrank(&p, &params).unwrap();
        assert_relative_eq!(v.v_hat[0], 2.0, max_relative = 1e-7);
    }
}
