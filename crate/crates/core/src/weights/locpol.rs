use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use super::{MultiIndexBasis, Provenance, WeightField};
use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::kernel::Kernel;

/// Smallest admissible eigenvalue of the normalized moment matrix. Below it
/// the window is reported as ill-conditioned instead of regularized, since a
/// ridge term would break the polynomial-reproduction identities.
pub const LAMBDA_FLOOR: f64 = 1e-8;

/// The normalized local moment matrix
/// `B(x) = 1/(p1 h^d) sum_j U_h(x_j - x) U_h(x_j - x)^T K_h(x_j - x)`.
#[derive(Debug, Clone, Serialize)]
pub struct BMatrix {
    pub x: Vec<f64>,
    pub h: f64,
    #[serde(serialize_with = "serialize_matrix")]
    pub matrix: DMatrix<f64>,
    pub min_eigenvalue: f64,
}

fn serialize_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in 0..m.nrows() {
        let row: Vec<f64> = m.row(r).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

/// In-window design points with nonzero kernel mass, their kernel values and
/// basis vectors (flattened), plus the assembled moment matrix.
struct LocalSystem {
    index: Vec<usize>,
    kernel: Vec<f64>,
    basis: Vec<f64>,
    b: DMatrix<f64>,
}

fn local_system(
    grid: &Grid,
    kernel: &Kernel,
    basis: &MultiIndexBasis,
    x: &[f64],
    h: f64,
) -> Result<LocalSystem> {
    let d = grid.dim();
    if x.len() != d || basis.dim() != d || kernel.dim() != d {
        return Err(invalid(format!(
            "dimension mismatch: grid {d}, point {}, basis {}, kernel {}",
            x.len(),
            basis.dim(),
            kernel.dim()
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid(format!("bandwidth must be positive, got {h}")));
    }
    let n_basis = basis.len();
    let ranges = grid.window(x, h);
    let mut system = LocalSystem {
        index: Vec::new(),
        kernel: Vec::new(),
        basis: Vec::new(),
        b: DMatrix::zeros(n_basis, n_basis),
    };
    if ranges.iter().any(|r| r.is_empty()) {
        return Err(Error::DegenerateWindow { x: x.to_vec(), h });
    }

    let mut idx: Vec<usize> = ranges.iter().map(|r| r.start).collect();
    let mut u = vec![0.0; d];
    let mut scaled = vec![0.0; d];
    let mut ub = vec![0.0; n_basis];
    'window: loop {
        for k in 0..d {
            u[k] = grid.axis(k)[idx[k]] - x[k];
            scaled[k] = u[k] / h;
        }
        let kv = kernel.evaluate(&scaled);
        if kv > 0.0 {
            basis.eval_into(&u, h, &mut ub);
            for a in 0..n_basis {
                let ka = kv * ub[a];
                for c in a..n_basis {
                    system.b[(a, c)] += ka * ub[c];
                }
            }
            system.index.push(grid.flatten(&idx));
            system.kernel.push(kv);
            system.basis.extend_from_slice(&ub);
        }
        // odometer over the per-axis ranges, last axis fastest
        let mut k = d;
        loop {
            if k == 0 {
                break 'window;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < ranges[k].end {
                break;
            }
            idx[k] = ranges[k].start;
        }
    }

    if system.index.is_empty() {
        return Err(Error::DegenerateWindow { x: x.to_vec(), h });
    }
    let scale = 1.0 / (grid.total_points() as f64 * h.powi(d as i32));
    for a in 0..n_basis {
        for c in a..n_basis {
            let v = system.b[(a, c)] * scale;
            system.b[(a, c)] = v;
            system.b[(c, a)] = v;
        }
    }
    Ok(system)
}

fn min_eigenvalue(b: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(b.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Assembles `B(x)` from the design points inside the window of `x`.
pub fn b_matrix(
    grid: &Grid,
    kernel: &Kernel,
    basis: &MultiIndexBasis,
    x: &[f64],
    h: f64,
) -> Result<BMatrix> {
    let system = local_system(grid, kernel, basis, x, h)?;
    let min_eigenvalue = min_eigenvalue(&system.b);
    Ok(BMatrix {
        x: x.to_vec(),
        h,
        matrix: system.b,
        min_eigenvalue,
    })
}

/// Local polynomial weights
/// `w_j = 1/(p1 h^d) e_1^T B^{-1} U_h(x_j - x) K_h(x_j - x)`,
/// obtained by solving `B v = e_1` rather than inverting `B`.
pub fn locpol_weight_field(
    grid: &Grid,
    kernel: &Kernel,
    basis: &MultiIndexBasis,
    x: &[f64],
    h: f64,
) -> Result<WeightField> {
    let system = local_system(grid, kernel, basis, x, h)?;
    let n_basis = basis.len();

    let eigen = SymmetricEigen::new(system.b.clone());
    let lambda_min = eigen.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(lambda_min > LAMBDA_FLOOR) {
        return Err(Error::IllConditionedWindow {
            x: x.to_vec(),
            h,
            min_eigenvalue: lambda_min,
        });
    }

    let mut e1 = DVector::zeros(n_basis);
    e1[0] = 1.0;
    let v = match system.b.clone().cholesky() {
        Some(chol) => chol.solve(&e1),
        None => {
            // B = Q diag(lambda) Q^T, so v = Q diag(1/lambda) Q^T e_1
            let q = &eigen.eigenvectors;
            let mut coeff = q.row(0).transpose();
            for (c, l) in coeff.iter_mut().zip(eigen.eigenvalues.iter()) {
                *c /= l;
            }
            q * coeff
        }
    };

    let scale = 1.0 / (grid.total_points() as f64 * h.powi(grid.dim() as i32));
    let entries = system
        .index
        .iter()
        .zip(&system.kernel)
        .zip(system.basis.chunks_exact(n_basis))
        .map(|((&j, &kv), ub)| {
            let dot: f64 = ub.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            (j, scale * dot * kv)
        })
        .collect();

    Ok(WeightField {
        x: x.to_vec(),
        h: Some(h),
        entries,
        provenance: Provenance::LocalPolynomial {
            degree: basis.degree(),
        },
    })
}
