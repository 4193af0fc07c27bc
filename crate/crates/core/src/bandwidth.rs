//! Bandwidth selection: Monte-Carlo sup-norm grid search (truth known) and
//! leave-one-curve-out cross-validation (real data).

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::estimation::{CurveDataset, EstimatorConfig, EstimatorKind};
use crate::grid::{EvalGrid, Grid};
use crate::simulation::{is_better, monte_carlo, Candidate, ErrorSummary, SimulationModel};
use crate::weights::WeightMatrix;

/// Strictly increasing candidate bandwidths in `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthGrid {
    values: Vec<f64>,
    rule: String,
}

impl BandwidthGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("bandwidth grid is empty"));
        }
        if values.iter().any(|&h| !(h > 0.0 && h < 1.0)) {
            return Err(invalid("bandwidths must lie in (0, 1)"));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("bandwidths must be strictly increasing"));
        }
        Ok(Self {
            values,
            rule: "custom".into(),
        })
    }

    /// `start, start + step, ...` up to and including `end`.
    pub fn from_rule(start: f64, step: f64, end: f64) -> Result<Self> {
        if !(step > 0.0) || !start.is_finite() || !end.is_finite() {
            return Err(invalid("bandwidth rule needs finite start/end and a positive step"));
        }
        let count = ((end - start) / step + 1e-9).floor();
        if count < 0.0 {
            return Err(invalid(format!(
                "bandwidth rule is empty: start {start} exceeds end {end}"
            )));
        }
        let values = (0..=count as usize).map(|k| start + k as f64 * step).collect();
        let mut grid = Self::new(values)?;
        grid.rule = format!("start={start}, step={step}, end={end}");
        Ok(grid)
    }

    /// `3/p_min` in steps of `0.005` up to `0.25`.
    pub fn default_for(grid: &Grid) -> Result<Self> {
        Self::from_rule(3.0 / grid.p_min() as f64, 0.005, 0.25)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rule(&self) -> &str {
        &self.rule
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn require_local_polynomial(config: &EstimatorConfig) -> Result<()> {
    if config.kind != EstimatorKind::LocalPolynomial {
        return Err(invalid("bandwidth selection needs a local polynomial estimator"));
    }
    Ok(())
}

fn weights_or_skip(config: &EstimatorConfig, grid: &Grid, eval: &EvalGrid, h: f64) -> Result<Option<WeightMatrix>> {
    match config.clone().with_h(h).weights(grid, eval) {
        Ok(w) => Ok(Some(w)),
        Err(Error::IllConditionedWindow { .. }) | Err(Error::DegenerateWindow { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupNormPoint {
    pub h: f64,
    /// `None` when the weights are ill-conditioned at this bandwidth.
    pub summary: Option<ErrorSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupNormSearch {
    pub best_h: f64,
    pub curve: Vec<SupNormPoint>,
}

/// Mean Monte-Carlo sup-norm error over `hs` (common random numbers across
/// bandwidths); the minimizer is returned, ties toward the smaller `h`.
#[allow(clippy::too_many_arguments)]
pub fn grid_search_supnorm(
    model: &SimulationModel,
    n: usize,
    grid: &Grid,
    config: &EstimatorConfig,
    hs: &BandwidthGrid,
    eval: &EvalGrid,
    replications: usize,
    seed: u64,
) -> Result<SupNormSearch> {
    require_local_polynomial(config)?;
    if replications == 0 || n == 0 {
        return Err(invalid("need n >= 1 and at least one replication"));
    }
    let mut candidates = Vec::new();
    let mut slots = Vec::with_capacity(hs.len());
    for &h in hs.values() {
        match weights_or_skip(config, grid, eval, h)? {
            Some(w) => {
                slots.push(Some(candidates.len()));
                candidates.push(Candidate::new(w, grid, &model.mean));
            }
            None => slots.push(None),
        }
    }
    if candidates.is_empty() {
        return Err(Error::NoValidBandwidth(hs.len()));
    }
    let errors = monte_carlo(model, n, grid, &candidates, replications, seed, 0)?;
    let mut best: Option<(f64, f64)> = None;
    let curve = hs
        .values()
        .iter()
        .zip(&slots)
        .map(|(&h, slot)| {
            let summary = slot.map(|c| ErrorSummary::from_errors(errors.iter().map(|rep| &rep[c])));
            if let Some(s) = summary {
                if best.map_or(true, |(_, e)| is_better(s.mean_total, e)) {
                    best = Some((h, s.mean_total));
                }
            }
            SupNormPoint { h, summary }
        })
        .collect();
    Ok(SupNormSearch {
        best_h: best.map(|b| b.0).expect("at least one valid candidate"),
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvScore {
    pub h: f64,
    /// `None` when the weights are ill-conditioned at this bandwidth.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoocvReport {
    pub best_h: f64,
    pub scores: Vec<CvScore>,
    /// Weight matrices computed; one per candidate bandwidth.
    pub weight_builds: usize,
}

/// Leave-one-curve-out cross-validation at the design points,
/// `CV(h) = sum_i sum_j (Y_ij - muhat_h^(-i)(x_j))^2`.
///
/// The estimator is linear in the column means, so `muhat^(-i)` uses
/// `Ybar_j^(-i) = (c_j Ybar_j - Y_ij)/(c_j - 1)` with `c_j` the number of
/// observed values in column `j`; one weight matrix per bandwidth serves all
/// curves. Missing `Y_ij` are skipped both in the residual sum and in the
/// leave-one-out mean.
pub fn loocv(dataset: &CurveDataset, config: &EstimatorConfig, hs: &BandwidthGrid) -> Result<LoocvReport> {
    require_local_polynomial(config)?;
    let n = dataset.n();
    if n < 2 {
        return Err(invalid("cross-validation needs at least two curves"));
    }
    if let Some(j) = dataset.available_counts().iter().position(|&c| c < 2) {
        return Err(Error::InvalidData(format!(
            "design column {j} has fewer than two observed curves"
        )));
    }
    let grid = dataset.grid();
    let eval = EvalGrid::design(grid);
    let scores: Vec<CvScore> = hs
        .values()
        .par_iter()
        .map(|&h| {
            let score = weights_or_skip(config, grid, &eval, h)?.map(|w| cv_score(dataset, &w));
            Ok(CvScore { h, score })
        })
        .collect::<Result<_>>()?;

    let mut best: Option<(f64, f64)> = None;
    for s in &scores {
        if let Some(v) = s.score {
            if best.map_or(true, |(_, b)| is_better(v, b)) {
                best = Some((s.h, v));
            }
        }
    }
    let (best_h, _) = best.ok_or(Error::NoValidBandwidth(hs.len()))?;
    Ok(LoocvReport {
        best_h,
        scores,
        weight_builds: hs.len(),
    })
}

fn cv_score(dataset: &CurveDataset, weights: &WeightMatrix) -> f64 {
    let mean = dataset.mean_curve();
    let counts = dataset.available_counts();
    let full = weights.apply(mean);
    let p1 = dataset.design_len();
    let mut shift = vec![0.0; p1];
    let mut total = 0.0;
    for i in 0..dataset.n() {
        let row = dataset.row(i);
        // Ybar^(-i) - Ybar = (Ybar_j - Y_ij)/(c_j - 1) where Y_ij is observed
        for j in 0..p1 {
            shift[j] = if row[j].is_nan() {
                0.0
            } else {
                (mean[j] - row[j]) / (counts[j] - 1) as f64
            };
        }
        for (k, field) in weights.fields().iter().enumerate() {
            if row[k].is_nan() {
                continue;
            }
            let loo = full[k] + field.apply(&shift);
            total += (row[k] - loo).powi(2);
        }
    }
    total
}
