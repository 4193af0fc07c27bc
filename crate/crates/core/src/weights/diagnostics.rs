use serde::Serialize;

use super::{MultiIndexBasis, WeightField};
use crate::grid::{Grid, BOX_SLACK};

/// Empirical counterparts of the weight conditions for one field.
#[derive(Debug, Clone, Serialize)]
pub struct WeightDiagnostics {
    /// `|sum_j w_j - 1|`.
    pub sum_residual: f64,
    /// `max_{1 <= |r| <= m} |sum_j (x_j - x)^r w_j|`.
    pub max_moment_residual: f64,
    /// Nonzero weights with `|x_j - x|_inf > h`.
    pub locality_violations: usize,
    /// `max_j |w_j| * p1 h^d`.
    pub c1: f64,
    /// `sum_j |w_j|`.
    pub c4: f64,
}

/// Measures polynomial reproduction up to the basis degree, locality, and
/// the sup and absolute-sum bounds of a weight field at bandwidth `h`.
pub fn weight_diagnostics(
    field: &WeightField,
    basis: &MultiIndexBasis,
    grid: &Grid,
    h: f64,
) -> WeightDiagnostics {
    let d = grid.dim();
    let mut moments = vec![0.0; basis.len()];
    let mut xj = vec![0.0; d];
    let mut locality_violations = 0;
    let mut max_abs: f64 = 0.0;
    for &(j, w) in &field.entries {
        grid.point_into(j, &mut xj);
        let mut dist: f64 = 0.0;
        for k in 0..d {
            xj[k] -= field.x[k];
            dist = dist.max(xj[k].abs());
        }
        if w != 0.0 && dist > h + BOX_SLACK {
            locality_violations += 1;
        }
        max_abs = max_abs.max(w.abs());
        for (m, r) in moments.iter_mut().zip(basis.indices()) {
            let mono: f64 = r
                .iter()
                .zip(&xj)
                .map(|(&p, &u)| u.powi(p as i32))
                .product();
            *m += mono * w;
        }
    }
    let max_moment_residual = moments[1..].iter().fold(0.0f64, |acc, m| acc.max(m.abs()));
    WeightDiagnostics {
        sum_residual: (moments[0] - 1.0).abs(),
        max_moment_residual,
        locality_violations,
        c1: max_abs * grid.total_points() as f64 * h.powi(d as i32),
        c4: field.abs_sum(),
    }
}

/// `max_j |w_j(x) - w_j(y)| p1 h^d / min(|x - y|_inf / h, 1)`, the empirical
/// Lipschitz constant of the weights between two evaluation points.
pub fn weight_lipschitz_ratio(fx: &WeightField, fy: &WeightField, grid: &Grid, h: f64) -> f64 {
    let dist = fx
        .x
        .iter()
        .zip(&fy.x)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if dist == 0.0 {
        return 0.0;
    }
    let (mut i, mut k) = (0, 0);
    let (a, b) = (&fx.entries, &fy.entries);
    let mut max_diff: f64 = 0.0;
    while i < a.len() || k < b.len() {
        let diff = match (a.get(i), b.get(k)) {
            (Some(&(ja, wa)), Some(&(jb, wb))) if ja == jb => {
                i += 1;
                k += 1;
                wa - wb
            }
            (Some(&(ja, wa)), Some(&(jb, _))) if ja < jb => {
                i += 1;
                wa
            }
            (Some(_), Some(&(_, wb))) => {
                k += 1;
                wb
            }
            (Some(&(_, wa)), None) => {
                i += 1;
                wa
            }
            (None, Some(&(_, wb))) => {
                k += 1;
                wb
            }
            (None, None) => unreachable!(),
        };
        max_diff = max_diff.max(diff.abs());
    }
    let scale = grid.total_points() as f64 * h.powi(grid.dim() as i32);
    max_diff * scale / (dist / h).min(1.0)
}
