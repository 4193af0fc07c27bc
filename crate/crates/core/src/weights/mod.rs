//! Linear-estimator weights.
//!
//! Every estimator in this crate is linear in the averaged curve:
//! `mu_hat(x) = sum_j w_j(x; h) Ybar_j`. A [`WeightField`] holds the sparse
//! weights for one evaluation point; a [`WeightMatrix`] stacks them over an
//! evaluation grid so that they can be reused across replications and curves.

mod basis;
mod diagnostics;
mod interp;
mod locpol;

pub use basis::{binomial, MultiIndexBasis};
pub use diagnostics::{weight_diagnostics, weight_lipschitz_ratio, WeightDiagnostics};
pub use interp::interpolation_weight_field;
pub use locpol::{b_matrix, locpol_weight_field, BMatrix, LAMBDA_FLOOR};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::grid::{EvalGrid, Grid};
use crate::kernel::Kernel;

/// Which construction produced a weight field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    LocalPolynomial { degree: usize },
    Interpolation,
}

/// Sparse weights `w_j(x; h)` for a single evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightField {
    pub x: Vec<f64>,
    /// Bandwidth; `None` for interpolation.
    pub h: Option<f64>,
    /// `(design index, weight)` pairs, ascending by index.
    pub entries: Vec<(usize, f64)>,
    pub provenance: Provenance,
}

impl WeightField {
    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w).sum()
    }

    pub fn abs_sum(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w.abs()).sum()
    }

    /// `sum_j w_j values[j]`.
    #[inline]
    pub fn apply(&self, values: &[f64]) -> f64 {
        self.entries.iter().map(|&(j, w)| w * values[j]).sum()
    }

    /// Weight on design point `j` (zero when absent).
    pub fn weight(&self, j: usize) -> f64 {
        self.entries
            .binary_search_by_key(&j, |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }
}

/// Weight fields for every point of an evaluation grid.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    fields: Vec<WeightField>,
    design_len: usize,
}

impl WeightMatrix {
    /// Local polynomial weights at every evaluation point, computed in parallel.
    pub fn local_polynomial(
        grid: &Grid,
        kernel: &Kernel,
        basis: &MultiIndexBasis,
        eval: &EvalGrid,
        h: f64,
    ) -> Result<Self> {
        let fields = eval
            .iter()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|x| locpol_weight_field(grid, kernel, basis, x, h))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            fields,
            design_len: grid.total_points(),
        })
    }

    pub fn interpolation(grid: &Grid, eval: &EvalGrid) -> Self {
        let fields = eval
            .iter()
            .map(|x| interpolation_weight_field(grid, x))
            .collect();
        Self {
            fields,
            design_len: grid.total_points(),
        }
    }

    pub fn from_fields(fields: Vec<WeightField>, design_len: usize) -> Self {
        Self { fields, design_len }
    }

    pub fn fields(&self) -> &[WeightField] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn design_len(&self) -> usize {
        self.design_len
    }

    /// Applies the weights to a vector indexed by design point.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        debug_assert_eq!(values.len(), self.design_len);
        self.fields.iter().map(|f| f.apply(values)).collect()
    }

    pub fn apply_into(&self, values: &[f64], out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.fields) {
            *o = f.apply(values);
        }
    }

    /// `max_x |sum_j w_j(x) values[j]|` without allocating.
    pub fn sup_abs(&self, values: &[f64]) -> f64 {
        self.fields
            .iter()
            .map(|f| f.apply(values).abs())
            .fold(0.0, f64::max)
    }
}
