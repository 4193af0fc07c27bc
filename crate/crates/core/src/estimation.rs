//! Mean-function estimation from averaged curves.
//!
//! With a synchronous design, every linear estimator only sees the column
//! means `Ybar_j`, so estimates are computed from the cached mean curve.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{EvalGrid, Grid};
use crate::kernel::Kernel;
use crate::weights::{MultiIndexBasis, WeightMatrix};

/// `n` curves observed on the design points of a grid. Missing observations
/// are stored as `NaN`; the mean curve averages the available rows per column.
#[derive(Debug, Clone)]
pub struct CurveDataset {
    grid: Grid,
    n: usize,
    values: Vec<f64>,
    available: Vec<usize>,
    mean: Vec<f64>,
}

impl CurveDataset {
    /// `values` is `n x p1` row-major; `NaN` marks a missing cell.
    pub fn new(grid: Grid, n: usize, values: Vec<f64>) -> Result<Self> {
        let p1 = grid.total_points();
        if n == 0 {
            return Err(invalid("dataset needs at least one curve"));
        }
        if values.len() != n * p1 {
            return Err(invalid(format!(
                "expected {n} x {p1} = {} values, got {}",
                n * p1,
                values.len()
            )));
        }
        if values.iter().any(|v| v.is_infinite()) {
            return Err(Error::InvalidData("infinite observation".into()));
        }
        let mut available = vec![0usize; p1];
        let mut sums = vec![0.0; p1];
        for row in values.chunks_exact(p1) {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_nan() {
                    available[j] += 1;
                    sums[j] += v;
                }
            }
        }
        if let Some(j) = available.iter().position(|&c| c == 0) {
            return Err(Error::InvalidData(format!(
                "design point {j} has no observed value"
            )));
        }
        let mean = sums
            .iter()
            .zip(&available)
            .map(|(s, &c)| s / c as f64)
            .collect();
        Ok(Self {
            grid,
            n,
            values,
            available,
            mean,
        })
    }

    pub fn from_rows(grid: Grid, rows: &[Vec<f64>]) -> Result<Self> {
        let p1 = grid.total_points();
        if let Some(bad) = rows.iter().position(|r| r.len() != p1) {
            return Err(invalid(format!("row {bad} has {} cells, expected {p1}", rows[bad].len())));
        }
        Self::new(grid, rows.len(), rows.concat())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn design_len(&self) -> usize {
        self.grid.total_points()
    }

    /// Raw `n x p1` values with `NaN` for missing cells.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p1 = self.design_len();
        &self.values[i * p1..(i + 1) * p1]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let v = self.values[i * self.design_len() + j];
        (!v.is_nan()).then_some(v)
    }

    /// Number of curves observed at each design point.
    pub fn available_counts(&self) -> &[usize] {
        &self.available
    }

    pub fn has_missing(&self) -> bool {
        self.available.iter().any(|&c| c != self.n)
    }

    /// Cached `Ybar_j`.
    pub fn mean_curve(&self) -> &[f64] {
        &self.mean
    }
}

/// Column means over the available rows, recomputed from the raw values.
pub fn average_curves(dataset: &CurveDataset) -> Vec<f64> {
    let p1 = dataset.design_len();
    (0..p1)
        .map(|j| {
            let (sum, count) = (0..dataset.n())
                .filter_map(|i| dataset.get(i, j))
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            sum / count as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    LocalPolynomial,
    Interpolation,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::LocalPolynomial => "local_polynomial",
            Self::Interpolation => "interpolation",
        }
    }
}

/// Estimator settings: kind, polynomial degree, kernel name and bandwidth.
/// Degree, kernel and bandwidth are ignored for interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub degree: usize,
    pub kernel: String,
    pub h: f64,
}

impl EstimatorConfig {
    pub fn local_polynomial(degree: usize, h: f64) -> Self {
        Self {
            kind: EstimatorKind::LocalPolynomial,
            degree,
            kernel: "epanechnikov".into(),
            h,
        }
    }

    pub fn interpolation() -> Self {
        Self {
            kind: EstimatorKind::Interpolation,
            degree: 1,
            kernel: "none".into(),
            h: 0.0,
        }
    }

    pub fn with_kernel(mut self, kernel: impl Into<String>) -> Self {
        self.kernel = kernel.into();
        self
    }

    pub fn with_h(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    /// Weight fields of this estimator over `eval`.
    pub fn weights(&self, grid: &Grid, eval: &EvalGrid) -> Result<WeightMatrix> {
        if eval.dim() != grid.dim() {
            return Err(invalid(format!(
                "evaluation grid has dimension {}, design has {}",
                eval.dim(),
                grid.dim()
            )));
        }
        match self.kind {
            EstimatorKind::LocalPolynomial => {
                let kernel = Kernel::by_name(&self.kernel, grid.dim())?;
                let basis = MultiIndexBasis::new(self.degree, grid.dim());
                WeightMatrix::local_polynomial(grid, &kernel, &basis, eval, self.h)
            }
            EstimatorKind::Interpolation => Ok(WeightMatrix::interpolation(grid, eval)),
        }
    }

    fn meta(&self) -> EstimateMeta {
        let lp = self.kind == EstimatorKind::LocalPolynomial;
        EstimateMeta {
            kind: self.kind,
            h: lp.then_some(self.h),
            degree: lp.then_some(self.degree),
            kernel: lp.then(|| self.kernel.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateMeta {
    pub kind: EstimatorKind,
    pub h: Option<f64>,
    pub degree: Option<usize>,
    pub kernel: Option<String>,
}

/// Estimated mean function on an evaluation grid.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateCurve {
    pub eval_grid: EvalGrid,
    pub values: Vec<f64>,
    pub meta: EstimateMeta,
}

/// `mu_hat(x) = sum_j w_j(x; h) Ybar_j` at every point of `eval`.
pub fn estimate_on_grid(
    dataset: &CurveDataset,
    config: &EstimatorConfig,
    eval: &EvalGrid,
) -> Result<EstimateCurve> {
    estimate_from_mean(dataset.grid(), dataset.mean_curve(), config, eval)
}

/// Same as [`estimate_on_grid`] but starting from an already averaged curve.
pub fn estimate_from_mean(
    grid: &Grid,
    mean: &[f64],
    config: &EstimatorConfig,
    eval: &EvalGrid,
) -> Result<EstimateCurve> {
    if mean.len() != grid.total_points() {
        return Err(invalid("mean curve length does not match the design"));
    }
    let weights = config.weights(grid, eval)?;
    let values = weights.apply(mean);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite estimate".into()));
    }
    Ok(EstimateCurve {
        eval_grid: eval.clone(),
        values,
        meta: config.meta(),
    })
}

/// `max` over the evaluation grid of `|estimate - truth|`. This is a grid
/// approximation of the sup-norm on `[0,1]^d`.
pub fn sup_norm_error<F: Fn(&[f64]) -> f64>(estimate: &EstimateCurve, truth: F) -> f64 {
    estimate
        .eval_grid
        .iter()
        .zip(&estimate.values)
        .map(|(x, v)| (v - truth(x)).abs())
        .fold(0.0, f64::max)
}

/// The three error curves `I1` (bias), `I2` (observation noise) and `I3`
/// (process) whose sum is `mu_hat - mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDecomposition {
    pub bias: Vec<f64>,
    pub noise: Vec<f64>,
    pub process: Vec<f64>,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()))
}

impl ErrorDecomposition {
    pub fn total(&self) -> Vec<f64> {
        self.bias
            .iter()
            .zip(&self.noise)
            .zip(&self.process)
            .map(|((a, b), c)| a + b + c)
            .collect()
    }

    pub fn sup_bias(&self) -> f64 {
        sup(&self.bias)
    }

    pub fn sup_noise(&self) -> f64 {
        sup(&self.noise)
    }

    pub fn sup_process(&self) -> f64 {
        sup(&self.process)
    }

    pub fn sup_total(&self) -> f64 {
        sup(&self.total())
    }
}

/// Splits `mu_hat - mu` on `eval` into
/// `I1(x) = sum_j w_j (mu(x_j) - mu(x))`, `I2(x) = sum_j w_j epsbar_j` and
/// `I3(x) = sum_j w_j Zbar(x_j)`.
pub fn decompose_error<F: Fn(&[f64]) -> f64>(
    weights: &WeightMatrix,
    grid: &Grid,
    truth: F,
    eps_bar: &[f64],
    z_bar: &[f64],
) -> Result<ErrorDecomposition> {
    let p1 = grid.total_points();
    if eps_bar.len() != p1 || z_bar.len() != p1 || weights.design_len() != p1 {
        return Err(invalid("decomposition inputs must share the design grid"));
    }
    let mut xj = vec![0.0; grid.dim()];
    let mu_design: Vec<f64> = (0..p1)
        .map(|j| {
            grid.point_into(j, &mut xj);
            truth(&xj)
        })
        .collect();
    let bias = weights
        .fields()
        .iter()
        .map(|f| {
            let mu_x = truth(&f.x);
            f.entries.iter().map(|&(j, w)| w * (mu_design[j] - mu_x)).sum()
        })
        .collect();
    Ok(ErrorDecomposition {
        bias,
        noise: weights.apply(eps_bar),
        process: weights.apply(z_bar),
    })
}
