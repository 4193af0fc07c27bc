use super::{Provenance, WeightField};
use crate::grid::Grid;

/// Bracketing indices and the weight on the upper neighbour along one axis.
/// Points outside the design hull are clamped to the nearest design point.
fn bracket(axis: &[f64], x: f64) -> (usize, usize, f64) {
    let last = axis.len() - 1;
    if x <= axis[0] {
        return (0, 0, 0.0);
    }
    if x >= axis[last] {
        return (last, last, 0.0);
    }
    // first index with axis[i] > x; x lies in [axis[i-1], axis[i])
    let upper = axis.partition_point(|&a| a <= x);
    let lower = upper - 1;
    let t = (x - axis[lower]) / (axis[upper] - axis[lower]);
    (lower, upper, t)
}

/// Tensor-product linear interpolation weights of `x` among its `2^d`
/// surrounding design points. At a design point the field is a unit vector.
pub fn interpolation_weight_field(grid: &Grid, x: &[f64]) -> WeightField {
    let d = grid.dim();
    let brackets: Vec<_> = (0..d).map(|k| bracket(grid.axis(k), x[k])).collect();
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(1 << d);
    let mut idx = vec![0usize; d];
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        for (k, &(lo, hi, t)) in brackets.iter().enumerate() {
            if corner >> k & 1 == 1 {
                idx[k] = hi;
                w *= t;
            } else {
                idx[k] = lo;
                w *= 1.0 - t;
            }
        }
        if w != 0.0 {
            entries.push((grid.flatten(&idx), w));
        }
    }
    entries.sort_by_key(|&(j, _)| j);
    entries.dedup_by(|b, a| {
        if a.0 == b.0 {
            a.1 += b.1;
            true
        } else {
            false
        }
    });
    WeightField {
        x: x.to_vec(),
        h: None,
        entries,
        provenance: Provenance::Interpolation,
    }
}
