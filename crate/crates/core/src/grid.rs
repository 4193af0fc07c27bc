//! Fixed Cartesian product designs on `[0,1]^d`.
//!
//! A [`Grid`] stores one strictly increasing coordinate list per axis and never
//! materializes the product, so memory stays `O(sum p_k)`. Design points are
//! addressed by a flat row-major index (last axis varies fastest).
//!
//! Quantile designs place the `l`-th point of axis `k` where the cumulative
//! design density reaches `(l - 0.5) / p_k`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Absolute slack used for closed-box membership, so that points lying
/// exactly on a box face survive rounding in `center +- h`.
pub(crate) const BOX_SLACK: f64 = 1e-12;

/// Quadrature tolerance used for the quantile equation.
pub const QUADRATURE_TOL: f64 = 1e-10;

const DENSITY_SAMPLES: usize = 1001;
const MAX_QUAD_DEPTH: u32 = 40;
const MAX_BISECTIONS: usize = 200;

type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A Lipschitz design density on `[0,1]` bounded away from zero.
#[derive(Clone)]
pub struct AxisDensity {
    density: DensityFn,
    f_min: f64,
    f_max: f64,
    lipschitz_const: f64,
}

impl fmt::Debug for AxisDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AxisDensity")
            .field("f_min", &self.f_min)
            .field("f_max", &self.f_max)
            .field("lipschitz_const", &self.lipschitz_const)
            .finish_non_exhaustive()
    }
}

impl AxisDensity {
    /// Wraps `density` after checking the declared bounds on a dense sample
    /// and that it integrates to one within `1e-8`.
    pub fn new<F>(density: F, f_min: f64, f_max: f64, lipschitz_const: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(f_min > 0.0 && f_max >= f_min && f_max.is_finite()) {
            return Err(invalid(format!(
                "density bounds must satisfy 0 < f_min <= f_max < inf, got [{f_min}, {f_max}]"
            )));
        }
        if !(lipschitz_const >= 0.0) {
            return Err(invalid("Lipschitz constant must be nonnegative"));
        }
        for i in 0..DENSITY_SAMPLES {
            let t = i as f64 / (DENSITY_SAMPLES - 1) as f64;
            let v = density(t);
            // small relative slack for rounding in the caller's closed form
            let slack = 1e-12 * f_max;
            if !v.is_finite() || v < f_min - slack || v > f_max + slack {
                return Err(invalid(format!(
                    "density value {v} at t = {t} outside declared bounds [{f_min}, {f_max}]"
                )));
            }
        }
        let total = integrate(&density, 0.0, 1.0, QUADRATURE_TOL);
        if (total - 1.0).abs() > 1e-8 {
            return Err(invalid(format!(
                "density is not normalized: integral over [0,1] is {total}"
            )));
        }
        Ok(Self {
            density: Arc::new(density),
            f_min,
            f_max,
            lipschitz_const,
        })
    }

    pub fn uniform() -> Self {
        Self {
            density: Arc::new(|_| 1.0),
            f_min: 1.0,
            f_max: 1.0,
            lipschitz_const: 0.0,
        }
    }

    /// The affine density `a + b t`; normalization forces `a = 1 - b/2`,
    /// and positivity on `[0,1]` needs `|b| < 2`.
    pub fn linear(slope: f64) -> Result<Self> {
        if !(slope.abs() < 2.0) {
            return Err(invalid(format!(
                "affine density needs |slope| < 2 to stay positive, got {slope}"
            )));
        }
        let intercept = 1.0 - slope / 2.0;
        let ends = [intercept, intercept + slope];
        let f_min = ends[0].min(ends[1]);
        let f_max = ends[0].max(ends[1]);
        Self::new(
            move |t| intercept + slope * t,
            f_min,
            f_max,
            slope.abs(),
        )
    }

    pub fn eval(&self, t: f64) -> f64 {
        (self.density)(t)
    }

    pub fn f_min(&self) -> f64 {
        self.f_min
    }

    pub fn f_max(&self) -> f64 {
        self.f_max
    }

    pub fn lipschitz_const(&self) -> f64 {
        self.lipschitz_const
    }

    /// `int_a^b f(t) dt` by adaptive composite trapezoid.
    pub fn integral(&self, a: f64, b: f64, tol: f64) -> f64 {
        integrate(&*self.density, a, b, tol)
    }
}

fn integrate<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    adaptive_trapezoid(f, a, b, fa, fb, tol, 0)
}

fn adaptive_trapezoid<F: Fn(f64) -> f64 + ?Sized>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let fm = f(m);
    let coarse = 0.5 * (b - a) * (fa + fb);
    let fine = 0.25 * (b - a) * (fa + 2.0 * fm + fb);
    if (fine - coarse).abs() <= tol || depth >= MAX_QUAD_DEPTH {
        return fine;
    }
    adaptive_trapezoid(f, a, m, fa, fm, 0.5 * tol, depth + 1)
        + adaptive_trapezoid(f, m, b, fm, fb, 0.5 * tol, depth + 1)
}

/// A Cartesian product design on `[0,1]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Vec<f64>>,
}

impl Grid {
    /// Builds a grid from per-axis coordinates, checking that every axis is
    /// nonempty, strictly increasing and inside `[0,1]`.
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(invalid("grid needs at least one axis"));
        }
        for (k, axis) in axes.iter().enumerate() {
            if axis.is_empty() {
                return Err(invalid(format!("axis {k} has no points")));
            }
            if axis.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(invalid(format!("axis {k} has coordinates outside [0,1]")));
            }
            if axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid(format!("axis {k} is not strictly increasing")));
            }
        }
        Ok(Self { axes })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> &[f64] {
        &self.axes[k]
    }

    /// Per-axis point counts `(p_1, ..., p_d)`.
    pub fn counts(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    /// Total number of design points `p_1 * ... * p_d`.
    pub fn total_points(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn p_min(&self) -> usize {
        self.axes.iter().map(Vec::len).min().unwrap_or(0)
    }

    /// Per-axis indices of the flat index `j` (row-major, last axis fastest).
    pub fn unflatten(&self, mut j: usize, out: &mut [usize]) {
        for k in (0..self.dim()).rev() {
            let pk = self.axes[k].len();
            out[k] = j % pk;
            j /= pk;
        }
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, axis)| acc * axis.len() + i)
    }

    /// Writes the coordinates of design point `j` into `out`.
    pub fn point_into(&self, j: usize, out: &mut [f64]) {
        let mut j = j;
        for k in (0..self.dim()).rev() {
            let pk = self.axes[k].len();
            out[k] = self.axes[k][j % pk];
            j /= pk;
        }
    }

    pub fn point(&self, j: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.point_into(j, &mut out);
        out
    }

    /// All design points, flattened as `p1 x d` row-major.
    pub fn points(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; self.total_points() * d];
        for (j, chunk) in out.chunks_exact_mut(d).enumerate() {
            self.point_into(j, chunk);
        }
        out
    }

    /// Index range on axis `k` of the coordinates inside the closed interval
    /// `[lo, hi]` (with rounding slack).
    pub fn axis_range(&self, k: usize, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let axis = &self.axes[k];
        let start = axis.partition_point(|&x| x < lo - BOX_SLACK);
        let end = axis.partition_point(|&x| x <= hi + BOX_SLACK);
        start..end.max(start)
    }

    /// Per-axis index ranges of the closed sup-norm ball of radius `h` around `center`.
    pub fn window(&self, center: &[f64], h: f64) -> Vec<std::ops::Range<usize>> {
        (0..self.dim())
            .map(|k| self.axis_range(k, center[k] - h, center[k] + h))
            .collect()
    }
}

/// An ordered list of evaluation points in `[0,1]^d`, used for sup-norm
/// approximations and for exporting estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalGrid {
    dim: usize,
    coords: Vec<f64>,
    /// Per-axis sizes when the points form a product grid.
    shape: Option<Vec<usize>>,
}

impl EvalGrid {
    /// Product grid with `k` equispaced points `i/(k-1)` per axis (endpoints
    /// included); a single point sits at `0.5`.
    pub fn uniform(per_axis: &[usize]) -> Result<Self> {
        if per_axis.is_empty() || per_axis.contains(&0) {
            return Err(invalid("evaluation grid needs a positive size per axis"));
        }
        let axes: Vec<Vec<f64>> = per_axis
            .iter()
            .map(|&k| {
                if k == 1 {
                    vec![0.5]
                } else {
                    (0..k).map(|i| i as f64 / (k - 1) as f64).collect()
                }
            })
            .collect();
        let product = Grid { axes };
        Ok(Self {
            dim: per_axis.len(),
            coords: product.points(),
            shape: Some(per_axis.to_vec()),
        })
    }

    /// The design points themselves, in flat design order.
    pub fn design(grid: &Grid) -> Self {
        Self {
            dim: grid.dim(),
            coords: grid.points(),
            shape: Some(grid.counts()),
        }
    }

    /// Arbitrary points, flattened `len x dim` row-major.
    pub fn from_points(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.is_empty() || coords.len() % dim != 0 {
            return Err(invalid("point list length must be a positive multiple of the dimension"));
        }
        if coords.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(invalid("evaluation points must lie in [0,1]^d"));
        }
        Ok(Self {
            dim,
            coords,
            shape: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn shape(&self) -> Option<&[usize]> {
        self.shape.as_deref()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// Uniform design: axis `k` holds `(l - 0.5) / p_k`, `l = 1..p_k`.
pub fn uniform_grid(counts: &[usize]) -> Result<Grid> {
    if counts.is_empty() {
        return Err(invalid("need at least one axis"));
    }
    if counts.contains(&0) {
        return Err(invalid("per-axis counts must be positive"));
    }
    let axes = counts
        .iter()
        .map(|&p| (1..=p).map(|l| (l as f64 - 0.5) / p as f64).collect())
        .collect();
    Grid::new(axes)
}

/// Quantile design: solves `int_0^x f_k = (l - 0.5)/p_k` for every point by
/// bisection on the cumulative integral, to within `tol` on the equation.
pub fn quantile_grid(densities: &[AxisDensity], counts: &[usize], tol: f64) -> Result<Grid> {
    if densities.len() != counts.len() {
        return Err(invalid(format!(
            "{} densities for {} axes",
            densities.len(),
            counts.len()
        )));
    }
    if !(tol > 0.0) {
        return Err(invalid("quantile tolerance must be positive"));
    }
    if counts.contains(&0) {
        return Err(invalid("per-axis counts must be positive"));
    }
    let quad_tol = QUADRATURE_TOL.min(0.1 * tol);
    let mut axes = Vec::with_capacity(counts.len());
    for (density, &p) in densities.iter().zip(counts) {
        let total = density.integral(0.0, 1.0, quad_tol);
        if !total.is_finite() || (total - 1.0).abs() > 1e-8 {
            return Err(invalid(format!(
                "density is not normalizable on [0,1] (integral {total})"
            )));
        }
        let mut axis = Vec::with_capacity(p);
        // running bracket start and the cumulative mass up to it
        let mut lo = 0.0;
        let mut mass_lo = 0.0;
        for l in 1..=p {
            let target = (l as f64 - 0.5) / p as f64;
            let (x, mass) = solve_quantile(density, lo, mass_lo, target, tol, quad_tol)?;
            axis.push(x);
            lo = x;
            mass_lo = mass;
        }
        axes.push(axis);
    }
    Grid::new(axes)
}

fn solve_quantile(
    density: &AxisDensity,
    lo: f64,
    mass_lo: f64,
    target: f64,
    tol: f64,
    quad_tol: f64,
) -> Result<(f64, f64)> {
    let (mut a, mut fa) = (lo, mass_lo);
    let mut b = 1.0;
    for _ in 0..MAX_BISECTIONS {
        let m = 0.5 * (a + b);
        let fm = fa + density.integral(a, m, quad_tol);
        if (fm - target).abs() <= tol {
            return Ok((m, fm));
        }
        if fm < target {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
        if b - a <= f64::EPSILON * b.max(1e-300) {
            break;
        }
    }
    Err(Error::NumericalFailure(format!(
        "quantile search for level {target} did not reach tolerance {tol}"
    )))
}

/// Exact number of design points in the closed box `center +- h` (per axis,
/// then multiplied).
pub fn count_in_box(grid: &Grid, center: &[f64], h: f64) -> usize {
    grid.window(center, h).iter().map(|r| r.len()).product()
}

/// Upper bound `2^d prod_k f_max,k prod_k max(p_k |I_k|, 1)` on the number of
/// design points of a density design inside the box `center +- h`, where
/// `I_k` is the box side clipped to `[0,1]`.
pub fn box_count_bound(f_max: &[f64], counts: &[usize], center: &[f64], h: f64) -> f64 {
    let mut bound = 1.0;
    for k in 0..counts.len() {
        let lo = (center[k] - h).max(0.0);
        let hi = (center[k] + h).min(1.0);
        let len = (hi - lo).max(0.0);
        bound *= 2.0 * f_max[k] * (counts[k] as f64 * len).max(1.0);
    }
    bound
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_axes() {
        let g = uniform_grid(&[4]).unwrap();
        assert_eq!(g.axis(0), &[0.125, 0.375, 0.625, 0.875]);
        let g = uniform_grid(&[1]).unwrap();
        assert_eq!(g.axis(0), &[0.5]);
        let g = uniform_grid(&[2, 3]).unwrap();
        assert_eq!(g.total_points(), 6);
        assert_eq!(g.axis(0), &[0.25, 0.75]);
        assert_abs_diff_eq!(g.axis(1)[0], 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.axis(1)[2], 5.0 / 6.0, epsilon = 1e-15);
        // row-major: second point moves along the last axis
        assert_eq!(g.point(1), vec![0.25, 0.5]);
        assert_eq!(g.point(3), vec![0.75, 1.0 / 6.0]);
    }

    #[test]
    fn zero_count_rejected() {
        assert!(matches!(uniform_grid(&[3, 0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn flatten_roundtrip() {
        let g = uniform_grid(&[3, 4, 2]).unwrap();
        let mut idx = [0usize; 3];
        for j in 0..g.total_points() {
            g.unflatten(j, &mut idx);
            assert_eq!(g.flatten(&idx), j);
        }
    }

    #[test]
    fn quantile_matches_uniform_for_flat_density() {
        let q = quantile_grid(&[AxisDensity::uniform()], &[4], 1e-12).unwrap();
        let u = uniform_grid(&[4]).unwrap();
        for (a, b) in q.axis(0).iter().zip(u.axis(0)) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-11);
        }
    }

    #[test]
    fn quantile_affine_density_closed_form() {
        // f(t) = 0.5 + t, F(x) = 0.5 x + x^2 / 2
        let f = AxisDensity::linear(1.0).unwrap();
        let g = quantile_grid(&[f], &[2], 1e-12).unwrap();
        let x1 = -0.5 + 0.75f64.sqrt();
        let x2 = -0.5 + 1.75f64.sqrt();
        assert_abs_diff_eq!(g.axis(0)[0], x1, epsilon = 1e-10);
        assert_abs_diff_eq!(g.axis(0)[1], x2, epsilon = 1e-10);
        assert_abs_diff_eq!(g.axis(0)[0], 0.3660, epsilon = 1e-4);
        assert_abs_diff_eq!(g.axis(0)[1], 0.8229, epsilon = 1e-4);
    }

    #[test]
    fn unnormalized_density_rejected() {
        let err = AxisDensity::new(|t| 1.0 + t, 1.0, 2.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn declared_bounds_checked() {
        assert!(AxisDensity::new(|t| 0.5 + t, 0.6, 1.5, 1.0).is_err());
        assert!(AxisDensity::linear(2.0).is_err());
    }

    #[test]
    fn curved_density_quantiles() {
        // f(t) = 1 + 0.5 cos(2 pi t), F(x) = x + sin(2 pi x) / (4 pi)
        let f = AxisDensity::new(
            |t| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * t).cos(),
            0.5,
            1.5,
            std::f64::consts::PI,
        )
        .unwrap();
        let g = quantile_grid(&[f], &[25], 1e-10).unwrap();
        for (l, &x) in g.axis(0).iter().enumerate() {
            let cdf = x + (2.0 * std::f64::consts::PI * x).sin() / (4.0 * std::f64::consts::PI);
            assert_abs_diff_eq!(cdf, (l as f64 + 0.5) / 25.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn count_matches_enumeration() {
        let g = uniform_grid(&[10]).unwrap();
        // points 0.05, 0.15, ..., 0.95; closed box [0.35, 0.65]
        assert_eq!(count_in_box(&g, &[0.5], 0.15), 4);
        assert_eq!(count_in_box(&g, &[0.3], 1.0), 10);
        let g2 = uniform_grid(&[7, 5]).unwrap();
        assert_eq!(count_in_box(&g2, &[0.2, 0.9], 1.5), 35);
    }

    #[test]
    fn eval_grid_uniform() {
        let e = EvalGrid::uniform(&[5]).unwrap();
        assert_eq!(e.coords(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let e2 = EvalGrid::uniform(&[3, 2]).unwrap();
        assert_eq!(e2.len(), 6);
        assert_eq!(e2.point(1), &[0.0, 1.0]);
        assert!(EvalGrid::from_points(2, vec![0.1, 0.2, 0.3]).is_err());
    }

    #[test]
    fn invalid_axes_rejected() {
        assert!(Grid::new(vec![vec![0.2, 0.1]]).is_err());
        assert!(Grid::new(vec![vec![0.2, 1.1]]).is_err());
        assert!(Grid::new(vec![vec![]]).is_err());
        assert!(Grid::new(vec![]).is_err());
    }
}
