//! C ABI for the `supmean` estimators.
//!
//! Grids and datasets are opaque handles created and freed through this
//! interface. Every function returns a [`SupmeanStatus`]; on failure a
//! message is kept per thread and can be read with [`supmean_last_error`].
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use supmean::bandwidth::{loocv, BandwidthGrid};
use supmean::estimation::{estimate_from_mean, CurveDataset, EstimatorConfig};
use supmean::grid::{uniform_grid, EvalGrid, Grid};
use supmean::io::{read_dataset, write_dataset};
use supmean::rates::{bandwidth_floor_binds, classify_regime, optimal_bandwidth, optimal_rate, Branch, RateInputs, Regime};
use supmean::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupmeanStatus {
    Ok = 0,
    InvalidArgument = 1,
    NumericalFailure = 2,
    IllConditionedWindow = 3,
    DegenerateWindow = 4,
    NoValidBandwidth = 5,
    ParseError = 6,
    InvalidData = 7,
    IoError = 8,
    NullPointer = 9,
    Panic = 10,
}

/// Opaque design grid.
pub struct SupmeanGrid {
    inner: Grid,
}

/// Opaque curve dataset.
pub struct SupmeanDataset {
    inner: CurveDataset,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupmeanEstimatorKind {
    LocalPolynomial = 0,
    Interpolation = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupmeanKernel {
    Epanechnikov = 0,
    Triangular = 1,
}

impl SupmeanKernel {
    fn name(self) -> &'static str {
        match self {
            Self::Epanechnikov => "epanechnikov",
            Self::Triangular => "triangular",
        }
    }
}

/// Estimator settings; `degree`, `kernel` and `h` are ignored for interpolation.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SupmeanEstimator {
    pub kind: SupmeanEstimatorKind,
    pub degree: u32,
    pub kernel: SupmeanKernel,
    pub h: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupmeanBranch {
    Discretization = 0,
    Intermediate = 1,
    Parametric = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupmeanRegime {
    Sparse = 0,
    Intermediate = 1,
    Dense = 2,
}

/// Optimal bandwidth, optimal rate with its binding term, and regime.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SupmeanRates {
    pub h_star: f64,
    pub floor_binds: bool,
    pub rate: f64,
    pub rate_terms: [f64; 3],
    pub binding: SupmeanBranch,
    pub regime: SupmeanRegime,
    pub sparse_threshold: f64,
    pub dense_threshold: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SupmeanStatus {
    match e {
        Error::InvalidArgument(_) => SupmeanStatus::InvalidArgument,
        Error::NumericalFailure(_) => SupmeanStatus::NumericalFailure,
        Error::DegenerateWindow { .. } => SupmeanStatus::DegenerateWindow,
        Error::IllConditionedWindow { .. } => SupmeanStatus::IllConditionedWindow,
        Error::NoValidBandwidth(_) => SupmeanStatus::NoValidBandwidth,
        Error::Parse { .. } => SupmeanStatus::ParseError,
        Error::InvalidData(_) => SupmeanStatus::InvalidData,
        Error::Io(_) => SupmeanStatus::IoError,
    }
}

struct Failure(SupmeanStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SupmeanStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SupmeanStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            SupmeanStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            SupmeanStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn path_in(p: *const c_char) -> Result<String, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure(SupmeanStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

/// Message of the last failed call on this thread (empty after success).
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn supmean_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Uniform grid with `counts[k]` points `(i - 0.5)/p_k` on axis `k`.
///
/// # Safety
/// `counts` must point to `d` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn supmean_grid_uniform(counts: *const usize, d: usize, out: *mut *mut SupmeanGrid) -> SupmeanStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let counts = slice_in(counts, d, "counts")?;
        let grid = uniform_grid(counts)?;
        *out = Box::into_raw(Box::new(SupmeanGrid { inner: grid }));
        Ok(())
    })
}

/// Grid from per-axis coordinates concatenated axis after axis.
///
/// # Safety
/// `counts` must point to `d` values, `coords` to their sum, and `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn supmean_grid_from_axes(
    counts: *const usize,
    d: usize,
    coords: *const f64,
    out: *mut *mut SupmeanGrid,
) -> SupmeanStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let counts = slice_in(counts, d, "counts")?;
        let total: usize = counts.iter().sum();
        let coords = slice_in(coords, total, "coords")?;
        let mut axes = Vec::with_capacity(d);
        let mut offset = 0;
        for &c in counts {
            axes.push(coords[offset..offset + c].to_vec());
            offset += c;
        }
        *out = Box::into_raw(Box::new(SupmeanGrid { inner: Grid::new(axes)? }));
        Ok(())
    })
}

/// # Safety
/// `grid` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn supmean_grid_free(grid: *mut SupmeanGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Number of design points, or 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn supmean_grid_total_points(grid: *const SupmeanGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.inner.total_points())
}

/// Dataset of `n` curves on a copy of `grid`; `values` is `n x p1`
/// row-major with NaN for missing observations.
///
/// # Safety
/// `grid` must be a live handle, `values` must hold `n * p1` values and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn supmean_dataset_new(
    grid: *const SupmeanGrid,
    n: usize,
    values: *const f64,
    out: *mut *mut SupmeanDataset,
) -> SupmeanStatus {
    guard(|| {
        let grid = grid.as_ref().ok_or_else(|| null("grid"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let values = slice_in(values, n * grid.inner.total_points(), "values")?;
        let ds = CurveDataset::new(grid.inner.clone(), n, values.to_vec())?;
        *out = Box::into_raw(Box::new(SupmeanDataset { inner: ds }));
        Ok(())
    })
}

/// Reads a CSV dataset file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn supmean_dataset_read(path: *const c_char, out: *mut *mut SupmeanDataset) -> SupmeanStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ds = read_dataset(path_in(path)?)?;
        *out = Box::into_raw(Box::new(SupmeanDataset { inner: ds }));
        Ok(())
    })
}

/// Writes a dataset as CSV with full precision.
///
/// # Safety
/// `dataset` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn supmean_dataset_write(dataset: *const SupmeanDataset, path: *const c_char) -> SupmeanStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        write_dataset(path_in(path)?, &ds.inner)?;
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn supmean_dataset_free(dataset: *mut SupmeanDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of curves, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn supmean_dataset_n(dataset: *const SupmeanDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.n())
}

/// Number of design points, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn supmean_dataset_design_len(dataset: *const SupmeanDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.design_len())
}

/// Copies the per-column mean curve into `out` (length `p1`).
///
/// # Safety
/// `dataset` must be a live handle and `out` must hold `p1` values.
#[no_mangle]
pub unsafe extern "C" fn supmean_dataset_mean(dataset: *const SupmeanDataset, out: *mut f64) -> SupmeanStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let mean = ds.inner.mean_curve();
        slice_out(out, mean.len(), "out")?.copy_from_slice(mean);
        Ok(())
    })
}

fn estimator_config(e: &SupmeanEstimator) -> EstimatorConfig {
    match e.kind {
        SupmeanEstimatorKind::Interpolation => EstimatorConfig::interpolation(),
        SupmeanEstimatorKind::LocalPolynomial => {
            EstimatorConfig::local_polynomial(e.degree as usize, e.h).with_kernel(e.kernel.name())
        }
    }
}

/// Evaluates the mean estimate at `n_eval` points (`n_eval x d` row-major
/// coordinates) and writes the values to `values_out`.
///
/// # Safety
/// `dataset` must be a live handle, `estimator` readable, `eval_points`
/// must hold `n_eval * d` values and `values_out` `n_eval` values.
#[no_mangle]
pub unsafe extern "C" fn supmean_estimate(
    dataset: *const SupmeanDataset,
    estimator: *const SupmeanEstimator,
    eval_points: *const f64,
    n_eval: usize,
    values_out: *mut f64,
) -> SupmeanStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let est = estimator.as_ref().ok_or_else(|| null("estimator"))?;
        let d = ds.inner.grid().dim();
        let coords = slice_in(eval_points, n_eval * d, "eval_points")?;
        let out = slice_out(values_out, n_eval, "values_out")?;
        let eval = EvalGrid::from_points(d, coords.to_vec())?;
        let curve = estimate_from_mean(ds.inner.grid(), ds.inner.mean_curve(), &estimator_config(est), &eval)?;
        out.copy_from_slice(&curve.values);
        Ok(())
    })
}

/// Optimal bandwidth, rate and regime for `n` curves on `p[0] x .. x p[d-1]`
/// points with smoothness `alpha` and bandwidth-floor constant `c`.
///
/// # Safety
/// `p` must point to `d` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn supmean_rates(
    n: usize,
    p: *const usize,
    d: usize,
    alpha: f64,
    c: f64,
    out: *mut SupmeanRates,
) -> SupmeanStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let p = slice_in(p, d, "p")?;
        let inputs = RateInputs::new(n, p.to_vec(), alpha, c)?;
        let rate = optimal_rate(&inputs);
        let regime = classify_regime(&inputs);
        *out = SupmeanRates {
            h_star: optimal_bandwidth(&inputs),
            floor_binds: bandwidth_floor_binds(&inputs),
            rate: rate.value,
            rate_terms: rate.terms,
            binding: match rate.binding {
                Branch::Discretization => SupmeanBranch::Discretization,
                Branch::Intermediate => SupmeanBranch::Intermediate,
                Branch::Parametric => SupmeanBranch::Parametric,
            },
            regime: match regime.regime {
                Regime::Sparse => SupmeanRegime::Sparse,
                Regime::Intermediate => SupmeanRegime::Intermediate,
                Regime::Dense => SupmeanRegime::Dense,
            },
            sparse_threshold: regime.sparse_threshold,
            dense_threshold: regime.dense_threshold,
        };
        Ok(())
    })
}

/// Leave-one-curve-out cross-validation over `n_h` increasing bandwidths.
/// `scores_out[k]` receives the score of `hs[k]` (NaN when the weights are
/// ill-conditioned) and `best_h_out` the selected bandwidth.
///
/// # Safety
/// `dataset` must be a live handle, `hs` and `scores_out` must hold `n_h`
/// values and `best_h_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn supmean_loocv(
    dataset: *const SupmeanDataset,
    degree: u32,
    kernel: SupmeanKernel,
    hs: *const f64,
    n_h: usize,
    scores_out: *mut f64,
    best_h_out: *mut f64,
) -> SupmeanStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let hs = slice_in(hs, n_h, "hs")?;
        let scores = slice_out(scores_out, n_h, "scores_out")?;
        let best = best_h_out.as_mut().ok_or_else(|| null("best_h_out"))?;
        let grid = BandwidthGrid::new(hs.to_vec())?;
        let config = EstimatorConfig::local_polynomial(degree as usize, hs[0]).with_kernel(kernel.name());
        let report = loocv(&ds.inner, &config, &grid)?;
        for (slot, s) in scores.iter_mut().zip(&report.scores) {
            *slot = s.score.unwrap_or(f64::NAN);
        }
        *best = report.best_h;
        Ok(())
    })
}
