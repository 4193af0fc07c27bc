//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use supmean::grid::Grid;

/// `prod_k max(1 - u_k^2, 0)`, written out again rather than borrowed from
/// the library.
pub fn epanechnikov(u: &[f64]) -> f64 {
    u.iter().map(|&v| (1.0 - v * v).max(0.0)).product()
}

/// All exponent vectors with total degree at most `m` in `d` variables.
pub fn exponents(m: usize, d: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; d];
    fn rec(k: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if k == cur.len() {
            out.push(cur.clone());
            return;
        }
        for e in 0..=left {
            cur[k] = e;
            rec(k + 1, left - e, cur, out);
        }
        cur[k] = 0;
    }
    rec(0, m as u32, &mut cur, &mut out);
    out
}

/// Local polynomial fit at `x` by weighted least squares on raw monomials
/// `(x_j - x)^r`, solved through a QR factorization of the row-scaled design.
/// Returns the intercept, or `None` when the fit is rank deficient.
pub fn wls_intercept(grid: &Grid, values: &[f64], x: &[f64], h: f64, degree: usize) -> Option<f64> {
    let d = grid.dim();
    let exps = exponents(degree, d);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs = Vec::new();
    for j in 0..grid.total_points() {
        let xj = grid.point(j);
        let u: Vec<f64> = xj.iter().zip(x).map(|(a, b)| (a - b) / h).collect();
        let k = epanechnikov(&u);
        if k <= 0.0 {
            continue;
        }
        let s = k.sqrt();
        // monomials in the scaled offsets keep the column norms comparable
        rows.push(
            exps.iter()
                .map(|e| s * e.iter().zip(&u).map(|(&p, &v)| v.powi(p as i32)).product::<f64>())
                .collect(),
        );
        rhs.push(s * values[j]);
    }
    if rows.len() < exps.len() {
        return None;
    }
    let a = DMatrix::from_fn(rows.len(), exps.len(), |i, c| rows[i][c]);
    let b = DVector::from_vec(rhs);
    let qr = a.qr();
    let r = qr.r();
    let diag_max = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if r.diagonal().iter().any(|v| v.abs() < 1e-10 * diag_max) {
        return None;
    }
    let qtb = qr.q().transpose() * b;
    let coef = r.solve_upper_triangular(&qtb)?;
    Some(coef[0])
}

/// Design points inside the closed box `center +- h`, by scanning all of them.
pub fn brute_force_count(grid: &Grid, center: &[f64], h: f64) -> usize {
    (0..grid.total_points())
        .filter(|&j| {
            grid.point(j)
                .iter()
                .zip(center)
                .all(|(a, c)| (a - c).abs() <= h)
        })
        .count()
}

/// Sample variance with the `n - 1` divisor.
pub fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

pub fn sample_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
