//! Simultaneous confidence bands `muhat +- q / sqrt(n)` from the Gaussian
//! limit of `sqrt(n) (muhat - mu)`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimation::{CurveDataset, EstimateCurve};
use crate::grid::{EvalGrid, Grid};
use crate::kernel::Kernel;
use crate::simulation::{cholesky_with_jitter, substream};
use crate::weights::interpolation_weight_field;

/// `R_ij = Y_ij - muhat(x_j)` as an `n x p1` matrix; missing observations
/// stay `NaN`.
pub fn residual_curves(dataset: &CurveDataset, fitted: &[f64]) -> Result<DMatrix<f64>> {
    if fitted.len() != dataset.design_len() {
        return Err(invalid(format!(
            "estimate has {} values but the design has {} points",
            fitted.len(),
            dataset.design_len()
        )));
    }
    let p1 = dataset.design_len();
    Ok(DMatrix::from_fn(dataset.n(), p1, |i, j| dataset.row(i)[j] - fitted[j]))
}

/// Row means of a residual matrix, ignoring missing values.
pub fn residual_row_means(residuals: &DMatrix<f64>) -> Vec<f64> {
    residuals
        .row_iter()
        .map(|r| {
            let (s, c) = r
                .iter()
                .filter(|v| !v.is_nan())
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            if c == 0 {
                f64::NAN
            } else {
                s / c as f64
            }
        })
        .collect()
}

/// `Gammahat` on an evaluation grid.
#[derive(Debug, Clone, Serialize)]
pub struct CovarianceEstimate {
    pub eval_grid: EvalGrid,
    #[serde(serialize_with = "serialize_matrix")]
    pub gamma: DMatrix<f64>,
    pub n_used: usize,
}

fn serialize_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in 0..m.nrows() {
        seq.serialize_element(&m.row(r).iter().copied().collect::<Vec<f64>>())?;
    }
    seq.end()
}

impl CovarianceEstimate {
    pub fn len(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.nrows() == 0
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.gamma[(i, i)]
    }
}

/// Estimates the process covariance from residual curves.
///
/// The raw covariance `(1/(n-1)) sum_i R_ij R_ik` carries the noise variance
/// on its diagonal, so each diagonal entry is replaced by the average of its
/// off-diagonal neighbours (adjacent design points along each axis). With
/// `h_gamma`, the matrix is additionally kernel-smoothed using off-diagonal
/// pairs only. The result is interpolated multilinearly to `eval` and
/// projected onto the PSD cone by clipping negative eigenvalues.
///
/// Missing residuals are handled pairwise: entry `(j, k)` uses the curves
/// observed at both points.
pub fn estimate_covariance(
    residuals: &DMatrix<f64>,
    grid: &Grid,
    eval: &EvalGrid,
    h_gamma: Option<f64>,
) -> Result<CovarianceEstimate> {
    let n = residuals.nrows();
    let p1 = grid.total_points();
    if n < 2 {
        return Err(invalid("covariance estimation needs at least two curves"));
    }
    if residuals.ncols() != p1 {
        return Err(invalid("residual matrix does not match the design"));
    }
    if eval.dim() != grid.dim() {
        return Err(invalid("evaluation grid dimension does not match the design"));
    }
    let raw = raw_covariance(residuals)?;
    let mut design = fill_diagonal(&raw, grid);
    if let Some(hg) = h_gamma {
        if !(hg > 0.0 && hg.is_finite()) {
            return Err(invalid("covariance smoothing bandwidth must be positive"));
        }
        design = smooth_off_diagonal(&design, grid, hg);
    }

    let interp = DMatrix::from_fn(eval.len(), p1, |_, _| 0.0);
    let interp = eval.iter().enumerate().fold(interp, |mut a, (i, x)| {
        for (j, w) in interpolation_weight_field(grid, x).entries {
            a[(i, j)] = w;
        }
        a
    });
    let gamma = &interp * &design * interp.transpose();
    Ok(CovarianceEstimate {
        eval_grid: eval.clone(),
        gamma: psd_projection(gamma),
        n_used: n,
    })
}

fn raw_covariance(residuals: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = residuals.nrows();
    if !residuals.iter().any(|v| v.is_nan()) {
        return Ok(residuals.transpose() * residuals / (n - 1) as f64);
    }
    let observed = residuals.map(|v| if v.is_nan() { 0.0 } else { 1.0 });
    let zeroed = residuals.map(|v| if v.is_nan() { 0.0 } else { v });
    let counts = observed.transpose() * &observed;
    let sums = zeroed.transpose() * &zeroed;
    let mut out = sums;
    for (v, &c) in out.iter_mut().zip(counts.iter()) {
        if c < 2.0 {
            return Err(Error::InvalidData(
                "a pair of design points is jointly observed in fewer than two curves".into(),
            ));
        }
        *v /= c - 1.0;
    }
    Ok(out)
}

fn fill_diagonal(raw: &DMatrix<f64>, grid: &Grid) -> DMatrix<f64> {
    let p1 = grid.total_points();
    let d = grid.dim();
    let mut out = raw.clone();
    let mut idx = vec![0usize; d];
    for j in 0..p1 {
        grid.unflatten(j, &mut idx);
        let (mut sum, mut count) = (0.0, 0usize);
        for k in 0..d {
            let here = idx[k];
            for nb in [here.checked_sub(1), Some(here + 1)].into_iter().flatten() {
                if nb < grid.axis(k).len() {
                    idx[k] = nb;
                    sum += raw[(j, grid.flatten(&idx))];
                    count += 1;
                }
            }
            idx[k] = here;
        }
        if count > 0 {
            out[(j, j)] = sum / count as f64;
        }
    }
    out
}

/// `sum_{a != b} K_ja K_kb G_ab / sum_{a != b} K_ja K_kb`.
fn smooth_off_diagonal(g: &DMatrix<f64>, grid: &Grid, h: f64) -> DMatrix<f64> {
    let p1 = grid.total_points();
    let d = grid.dim();
    let kernel = Kernel::epanechnikov_product(d);
    let pts = grid.points();
    let mut u = vec![0.0; d];
    let k = DMatrix::from_fn(p1, p1, |a, b| {
        for t in 0..d {
            u[t] = (pts[b * d + t] - pts[a * d + t]) / h;
        }
        kernel.evaluate(&u)
    });
    let mut off = g.clone();
    off.fill_diagonal(0.0);
    let num = &k * off * k.transpose();
    let row_sums: Vec<f64> = k.row_iter().map(|r| r.sum()).collect();
    let kk = &k * k.transpose();
    let mut out = num;
    for a in 0..p1 {
        for b in 0..p1 {
            let den = row_sums[a] * row_sums[b] - kk[(a, b)];
            out[(a, b)] = if den > 0.0 { out[(a, b)] / den } else { g[(a, b)] };
        }
    }
    out
}

fn psd_projection(m: DMatrix<f64>) -> DMatrix<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    let p = out.nrows();
    for a in 0..p {
        for b in (a + 1)..p {
            let v = 0.5 * (out[(a, b)] + out[(b, a)]);
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}

/// Constant-`q` bands (`halfwidth = q / sqrt(n)`) or bands scaled by the
/// pointwise standard deviation (`halfwidth = q sqrt(Gamma(x,x)) / sqrt(n)`,
/// `q` from the standardized process).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandMode {
    #[default]
    Unstudentized,
    Studentized,
}

const DRAW_BLOCK: usize = 256;

/// Empirical `level`-quantile (type 7) of `max_x |G(x)|` over `draws`
/// samples of the centered Gaussian vector with covariance `Gammahat`.
pub fn gaussian_sup_quantile(cov: &CovarianceEstimate, level: f64, draws: usize, seed: u64) -> Result<f64> {
    sup_quantile(cov, level, draws, seed, BandMode::Unstudentized)
}

fn sup_quantile(cov: &CovarianceEstimate, level: f64, draws: usize, seed: u64, mode: BandMode) -> Result<f64> {
    if !(0.0..1.0).contains(&level) {
        return Err(invalid(format!("level must lie in [0, 1), got {level}")));
    }
    if draws < 100 {
        return Err(invalid("at least 100 Gaussian draws are required"));
    }
    let scale = cov.gamma.diagonal().iter().fold(0.0f64, |a, &b| a.max(b));
    if level == 0.0 || scale <= 0.0 || cov.is_empty() {
        return Ok(0.0);
    }
    let target = match mode {
        BandMode::Unstudentized => cov.gamma.clone(),
        BandMode::Studentized => {
            // points with no variance drop out of the standardized process
            let sd: Vec<f64> = cov
                .gamma
                .diagonal()
                .iter()
                .map(|&v| if v > 1e-14 * scale { 1.0 / v.sqrt() } else { 0.0 })
                .collect();
            DMatrix::from_fn(cov.len(), cov.len(), |a, b| cov.gamma[(a, b)] * sd[a] * sd[b])
        }
    };
    let l = cholesky_with_jitter(&target)?;
    let p = l.nrows();
    let blocks = draws.div_ceil(DRAW_BLOCK);
    let mut maxima: Vec<f64> = (0..blocks)
        .into_par_iter()
        .flat_map_iter(|b| {
            let m = DRAW_BLOCK.min(draws - b * DRAW_BLOCK);
            let mut rng = substream(seed, b as u64);
            let z = DMatrix::from_fn(p, m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let paths = &l * z;
            (0..m)
                .map(|c| paths.column(c).iter().fold(0.0f64, |a, v| a.max(v.abs())))
                .collect::<Vec<_>>()
        })
        .collect();
    maxima.sort_by(f64::total_cmp);
    Ok(type7_quantile(&maxima, level))
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn type7_quantile(sorted: &[f64], level: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * level;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Serialize)]
pub struct SimultaneousBand {
    pub center: EstimateCurve,
    pub halfwidth: Vec<f64>,
    pub level: f64,
    pub quantile: f64,
    pub mode: BandMode,
    pub n: usize,
}

impl SimultaneousBand {
    pub fn lower(&self) -> Vec<f64> {
        self.center.values.iter().zip(&self.halfwidth).map(|(c, w)| c - w).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.center.values.iter().zip(&self.halfwidth).map(|(c, w)| c + w).collect()
    }

    /// Index of the first evaluation point where `values` leaves the band.
    pub fn first_violation(&self, values: &[f64]) -> Option<usize> {
        self.center
            .values
            .iter()
            .zip(&self.halfwidth)
            .zip(values)
            .position(|((c, w), v)| (v - c).abs() > *w)
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        values.len() == self.halfwidth.len() && self.first_violation(values).is_none()
    }
}

/// Band around `estimate` at nominal simultaneous coverage `level`.
pub fn simultaneous_band(
    estimate: &EstimateCurve,
    cov: &CovarianceEstimate,
    n: usize,
    level: f64,
    draws: usize,
    seed: u64,
    mode: BandMode,
) -> Result<SimultaneousBand> {
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    if estimate.values.len() != cov.len() {
        return Err(invalid(
            "estimate and covariance must share the evaluation grid",
        ));
    }
    let q = sup_quantile(cov, level, draws, seed, mode)?;
    let root_n = (n as f64).sqrt();
    let halfwidth = (0..cov.len())
        .map(|i| match mode {
            BandMode::Unstudentized => q / root_n,
            BandMode::Studentized => q * cov.variance(i).max(0.0).sqrt() / root_n,
        })
        .collect();
    Ok(SimultaneousBand {
        center: estimate.clone(),
        halfwidth,
        level,
        quantile: q,
        mode,
        n,
    })
}

/// The inequalities defining the undersmoothing bandwidth set, evaluated
/// numerically. Advisory only: the constants `c` and `h0` are not known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HSetCheck {
    pub h: f64,
    /// `h > c / p_min`
    pub above_floor: bool,
    /// `h <= h0`
    pub below_h0: bool,
    /// `h^alpha <= n^{-1/2}`
    pub undersmoothing: bool,
    /// `log(1/h) / h^d <= p1`
    pub enough_points: bool,
    pub h_alpha: f64,
    pub n_inv_sqrt: f64,
    pub log_ratio: f64,
    pub p1: f64,
    pub pass: bool,
}

pub fn h_set_check(h: f64, n: usize, p: &[usize], alpha: f64, c: f64, h0: f64) -> Result<HSetCheck> {
    if !(h > 0.0 && h < 1.0) || n == 0 || p.is_empty() || p.contains(&0) {
        return Err(invalid("need h in (0,1), n >= 1 and nonempty positive p"));
    }
    let d = p.len() as i32;
    let p_min = *p.iter().min().unwrap() as f64;
    let p1: f64 = p.iter().map(|&v| v as f64).product();
    let h_alpha = h.powf(alpha);
    let n_inv_sqrt = 1.0 / (n as f64).sqrt();
    let log_ratio = (1.0 / h).ln() / h.powi(d);
    let above_floor = h > c / p_min;
    let below_h0 = h <= h0;
    let undersmoothing = h_alpha <= n_inv_sqrt;
    let enough_points = log_ratio <= p1;
    Ok(HSetCheck {
        h,
        above_floor,
        below_h0,
        undersmoothing,
        enough_points,
        h_alpha,
        n_inv_sqrt,
        log_ratio,
        p1,
        pass: above_floor && below_h0 && undersmoothing && enough_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{EstimateMeta, EstimatorKind};
    use crate::grid::uniform_grid;
    use approx::assert_abs_diff_eq;

    fn cov_from(gamma: DMatrix<f64>) -> CovarianceEstimate {
        let k = gamma.nrows();
        CovarianceEstimate {
            eval_grid: EvalGrid::uniform(&[k]).unwrap(),
            gamma,
            n_used: 10,
        }
    }

    #[test]
    fn residuals_vanish_for_exact_fit() {
        let grid = uniform_grid(&[4]).unwrap();
        let row = vec![1.0, 2.0, 3.0, 5.0];
        let ds = CurveDataset::from_rows(grid, std::slice::from_ref(&row)).unwrap();
        let r = residual_curves(&ds, &row).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
        assert!(residual_curves(&ds, &row[..3]).is_err());
    }

    #[test]
    fn type7_matches_definition() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(type7_quantile(&s, 0.0), 1.0);
        assert_eq!(type7_quantile(&s, 0.5), 2.5);
        assert_abs_diff_eq!(type7_quantile(&s, 0.9), 3.7, epsilon = 1e-12);
    }

    #[test]
    fn single_point_quantile_is_normal() {
        let q = gaussian_sup_quantile(&cov_from(DMatrix::identity(1, 1)), 0.95, 100_000, 3).unwrap();
        assert_abs_diff_eq!(q, 1.959964, epsilon = 0.05);
    }

    #[test]
    fn zero_covariance_and_zero_level() {
        assert_eq!(gaussian_sup_quantile(&cov_from(DMatrix::zeros(3, 3)), 0.95, 200, 1).unwrap(), 0.0);
        assert_eq!(gaussian_sup_quantile(&cov_from(DMatrix::identity(3, 3)), 0.0, 200, 1).unwrap(), 0.0);
        assert!(gaussian_sup_quantile(&cov_from(DMatrix::identity(3, 3)), 0.95, 50, 1).is_err());
        assert!(gaussian_sup_quantile(&cov_from(DMatrix::identity(3, 3)), 1.0, 500, 1).is_err());
    }

    #[test]
    fn quantile_monotone_in_level() {
        let cov = cov_from(DMatrix::from_fn(20, 20, |a, b| ((a.min(b) + 1) as f64) / 20.0));
        let q50 = gaussian_sup_quantile(&cov, 0.5, 4000, 8).unwrap();
        let q95 = gaussian_sup_quantile(&cov, 0.95, 4000, 8).unwrap();
        let q99 = gaussian_sup_quantile(&cov, 0.99, 4000, 8).unwrap();
        assert!(q50 <= q95 && q95 <= q99);
    }

    #[test]
    fn band_contains_center() {
        let cov = cov_from(DMatrix::from_fn(5, 5, |a, b| if a == b { 1.0 + a as f64 } else { 0.2 }));
        let center = EstimateCurve {
            eval_grid: cov.eval_grid.clone(),
            values: vec![0.0, 1.0, -1.0, 2.0, 0.5],
            meta: EstimateMeta {
                kind: EstimatorKind::Interpolation,
                h: None,
                degree: None,
                kernel: None,
            },
        };
        for mode in [BandMode::Unstudentized, BandMode::Studentized] {
            let band = simultaneous_band(&center, &cov, 100, 0.95, 500, 2, mode).unwrap();
            assert!(band.contains(&center.values));
            assert!(band.halfwidth.iter().all(|&w| w >= 0.0));
            let mut off = center.values.clone();
            off[3] += 10.0;
            assert_eq!(band.first_violation(&off), Some(3));
        }
        let zero = simultaneous_band(&center, &cov, 100, 0.0, 500, 2, BandMode::Unstudentized).unwrap();
        assert!(zero.halfwidth.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn diagonal_fill_uses_neighbours() {
        let grid = uniform_grid(&[3]).unwrap();
        let raw = DMatrix::from_row_slice(3, 3, &[9.0, 1.0, 0.5, 1.0, 9.0, 2.0, 0.5, 2.0, 9.0]);
        let filled = fill_diagonal(&raw, &grid);
        assert_eq!(filled[(0, 0)], 1.0);
        assert_eq!(filled[(1, 1)], 1.5);
        assert_eq!(filled[(2, 2)], 2.0);
    }

    #[test]
    fn h_set_inequalities() {
        let c = h_set_check(0.05, 2000, &[200], 2.0, 3.0, 0.25).unwrap();
        assert!(c.pass, "{c:?}");
        let too_wide = h_set_check(0.2, 2000, &[200], 2.0, 3.0, 0.25).unwrap();
        assert!(!too_wide.undersmoothing && !too_wide.pass);
        let too_narrow = h_set_check(0.016, 2000, &[200], 2.0, 3.0, 0.25).unwrap();
        assert!(too_narrow.above_floor && !too_narrow.enough_points);
    }
}
