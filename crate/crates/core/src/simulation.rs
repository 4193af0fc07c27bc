//! Synthetic data from `Y_ij = mu(x_j) + Z_i(x_j) + eps_ij` and replicated
//! sup-norm experiments.
//!
//! All randomness comes from ChaCha8 substreams of one seed: replication `r`
//! of configuration `c` reads stream `(c << 32) | r`, so results do not depend
//! on how replications are scheduled across threads.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::bandwidth::BandwidthGrid;
use crate::error::{invalid, Error, Result};
use crate::estimation::{CurveDataset, EstimatorConfig, EstimatorKind};
use crate::grid::{uniform_grid, EvalGrid, Grid};
use crate::weights::WeightMatrix;

/// Deterministic generator for stream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn stream_id(config: usize, rep: usize) -> u64 {
    ((config as u64) << 32) | rep as u64
}

/// `mu_0(x) = sin(3 pi (2x - 1)) exp(-2 |2x - 1|)`.
pub fn mean_mu0(x: f64) -> f64 {
    let t = 2.0 * x - 1.0;
    (3.0 * std::f64::consts::PI * t).sin() * (-2.0 * t.abs()).exp()
}

type FieldFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type CovFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
type NoiseFn = Arc<dyn Fn(&mut dyn RngCore) -> f64 + Send + Sync>;

/// A mean function together with its declared Holder smoothness.
#[derive(Clone)]
pub struct MeanFunction {
    name: String,
    f: FieldFn,
    alpha: f64,
}

impl fmt::Debug for MeanFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MeanFunction")
            .field("name", &self.name)
            .field("alpha", &self.alpha)
            .finish()
    }
}

impl MeanFunction {
    pub fn new<F>(name: impl Into<String>, alpha: f64, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            f: Arc::new(f),
            alpha,
        }
    }

    /// `mu_0` applied to the first coordinate. Its second derivative jumps
    /// at `x = 0.5`, so it is declared with `alpha = 2`.
    pub fn mu0() -> Self {
        Self::new("mu0", 2.0, |x| mean_mu0(x[0]))
    }

    /// `prod_k sin(2 pi frequency x_k)`.
    pub fn sine(frequency: f64) -> Self {
        Self::new("sine", f64::INFINITY, move |x| {
            x.iter()
                .map(|&t| (2.0 * std::f64::consts::PI * frequency * t).sin())
                .product()
        })
    }

    /// `sum_i c_i x_1^i`.
    pub fn polynomial(coefficients: Vec<f64>) -> Self {
        Self::new("polynomial", f64::INFINITY, move |x| {
            coefficients.iter().rev().fold(0.0, |acc, c| acc * x[0] + c)
        })
    }

    pub fn zero() -> Self {
        Self::new("zero", f64::INFINITY, |_| 0.0)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// Curve-level random process `Z`.
#[derive(Clone)]
pub enum Process {
    None,
    /// Standard Brownian motion on `[0,1]` (`d = 1` only), path-Holder `beta < 1/2`.
    BrownianMotion,
    /// Centered Gaussian field with covariance `gamma`, sampled through a
    /// Cholesky factor on the design points.
    Gaussian { name: String, covariance: CovFn },
}

impl fmt::Debug for Process {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Process {
    pub fn gaussian<F>(name: impl Into<String>, covariance: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::Gaussian {
            name: name.into(),
            covariance: Arc::new(covariance),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Self::None => "none",
            Self::BrownianMotion => "brownian_motion",
            Self::Gaussian { name, .. } => name,
        }
    }

    /// `Gamma(x, y)` of the process, if it has one.
    pub fn covariance(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Self::None => 0.0,
            Self::BrownianMotion => x[0].min(y[0]),
            Self::Gaussian { covariance, .. } => covariance(x, y),
        }
    }
}

/// Observation noise law.
#[derive(Clone, Default)]
pub enum NoiseLaw {
    #[default]
    Gaussian,
    /// Unit-variance draws, scaled by `sigma`. Averages are formed from
    /// explicit draws since no closed-form law is assumed.
    Custom(NoiseFn),
}

impl fmt::Debug for NoiseLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gaussian => f.write_str("Gaussian"),
            Self::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// Mean, process and noise of the data-generating model.
#[derive(Debug, Clone)]
pub struct SimulationModel {
    pub mean: MeanFunction,
    pub process: Process,
    pub sigma: f64,
    pub noise: NoiseLaw,
    /// Path-Holder exponent of the process (metadata).
    pub beta: f64,
}

impl SimulationModel {
    pub fn new(mean: MeanFunction, process: Process, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(invalid("noise level sigma must be nonnegative"));
        }
        let beta = match process {
            Process::BrownianMotion => 0.45,
            _ => 1.0,
        };
        Ok(Self {
            mean,
            process,
            sigma,
            noise: NoiseLaw::Gaussian,
            beta,
        })
    }

    /// The setting of the sup-norm study: `mu_0`, Brownian motion, `sigma = 1`.
    pub fn mu0_brownian(sigma: f64) -> Result<Self> {
        Self::new(MeanFunction::mu0(), Process::BrownianMotion, sigma)
    }

    pub fn with_noise(mut self, noise: NoiseLaw) -> Self {
        self.noise = noise;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.mean.alpha()
    }
}

/// Brownian motion at sorted coordinates in `[0,1]`, built from independent
/// Gaussian increments starting at `B(0) = 0` (exact at the coordinates).
pub fn sample_brownian<R: Rng + ?Sized>(coords: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if coords.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
        return Err(invalid("Brownian coordinates must lie in [0,1]"));
    }
    if coords.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid("Brownian coordinates must be sorted"));
    }
    let mut out = Vec::with_capacity(coords.len());
    brownian_into(coords, rng, 1.0, &mut out);
    Ok(out)
}

fn brownian_into<R: Rng + ?Sized>(coords: &[f64], rng: &mut R, scale: f64, out: &mut Vec<f64>) {
    out.clear();
    let (mut t_prev, mut b) = (0.0, 0.0);
    for &t in coords {
        let z: f64 = rng.sample(StandardNormal);
        b += (t - t_prev).sqrt() * z;
        t_prev = t;
        out.push(scale * b);
    }
}

/// Process sampler bound to one design.
enum PathSampler {
    None,
    Brownian(Vec<f64>),
    Cholesky(DMatrix<f64>),
}

impl PathSampler {
    fn new(process: &Process, grid: &Grid) -> Result<Self> {
        match process {
            Process::None => Ok(Self::None),
            Process::BrownianMotion => {
                if grid.dim() != 1 {
                    return Err(invalid(
                        "Brownian motion is only available for d = 1; use a Gaussian covariance",
                    ));
                }
                Ok(Self::Brownian(grid.axis(0).to_vec()))
            }
            Process::Gaussian { covariance, .. } => {
                let p1 = grid.total_points();
                let pts = grid.points();
                let d = grid.dim();
                let gamma = DMatrix::from_fn(p1, p1, |a, b| {
                    covariance(&pts[a * d..(a + 1) * d], &pts[b * d..(b + 1) * d])
                });
                let factor = cholesky_with_jitter(&gamma)?;
                Ok(Self::Cholesky(factor))
            }
        }
    }

    /// One path at the design points, multiplied by `scale`.
    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, scale: f64, out: &mut Vec<f64>, p1: usize) {
        match self {
            Self::None => {
                out.clear();
                out.resize(p1, 0.0);
            }
            Self::Brownian(coords) => brownian_into(coords, rng, scale, out),
            Self::Cholesky(l) => {
                let z: Vec<f64> = (0..p1).map(|_| rng.sample(StandardNormal)).collect();
                out.clear();
                out.extend((0..p1).map(|a| {
                    scale * (0..=a).map(|b| l[(a, b)] * z[b]).sum::<f64>()
                }));
            }
        }
    }
}

/// Lower Cholesky factor of a PSD matrix, adding diagonal jitter starting at
/// `1e-10` (relative to the largest diagonal entry) until it factorizes.
pub(crate) fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = m.diagonal().iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-300);
    let mut jitter = 1e-10;
    while jitter <= 1e-4 {
        let mut shifted = m.clone();
        for i in 0..m.nrows() {
            shifted[(i, i)] += jitter * scale;
        }
        if let Some(chol) = shifted.cholesky() {
            return Ok(chol.l());
        }
        jitter *= 10.0;
    }
    Err(Error::NumericalFailure(
        "covariance matrix is not positive semidefinite, even after jitter".into(),
    ))
}

/// Averaged noise and averaged process at the design points for one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedDraw {
    pub eps_bar: Vec<f64>,
    pub z_bar: Vec<f64>,
}

/// A model bound to a design: truth at the design points and a path sampler.
struct BoundModel<'a> {
    model: &'a SimulationModel,
    sampler: PathSampler,
    p1: usize,
}

impl<'a> BoundModel<'a> {
    fn new(model: &'a SimulationModel, grid: &Grid) -> Result<Self> {
        Ok(Self {
            model,
            sampler: PathSampler::new(&model.process, grid)?,
            p1: grid.total_points(),
        })
    }

    fn draw_averaged<R: Rng>(&self, n: usize, rng: &mut R, draw: &mut AveragedDraw) {
        let root_n = (n as f64).sqrt();
        let sd = self.model.sigma / root_n;
        draw.eps_bar.clear();
        match &self.model.noise {
            NoiseLaw::Gaussian => draw
                .eps_bar
                .extend((0..self.p1).map(|_| sd * rng.sample::<f64, _>(StandardNormal))),
            NoiseLaw::Custom(f) => {
                for _ in 0..self.p1 {
                    let s: f64 = (0..n).map(|_| f(rng)).sum();
                    draw.eps_bar.push(self.model.sigma * s / n as f64);
                }
            }
        }
        // the mean of n iid Gaussian paths has the law of one path over sqrt(n)
        self.sampler
            .sample_into(rng, 1.0 / root_n, &mut draw.z_bar, self.p1);
    }
}

/// Draws `(epsbar, Zbar)` directly: `epsbar_j ~ N(0, sigma^2/n)` independent,
/// `Zbar = n^-1/2 Z` for a single process path `Z`.
pub fn sample_averaged<R: Rng>(
    model: &SimulationModel,
    n: usize,
    grid: &Grid,
    rng: &mut R,
) -> Result<AveragedDraw> {
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    let bound = BoundModel::new(model, grid)?;
    let mut draw = AveragedDraw {
        eps_bar: Vec::new(),
        z_bar: Vec::new(),
    };
    bound.draw_averaged(n, rng, &mut draw);
    Ok(draw)
}

/// Draws `n` explicit curves `Y_i(x_j) = mu(x_j) + Z_i(x_j) + eps_ij`.
pub fn sample_dataset<R: Rng>(
    model: &SimulationModel,
    n: usize,
    grid: &Grid,
    rng: &mut R,
) -> Result<CurveDataset> {
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    let bound = BoundModel::new(model, grid)?;
    let p1 = grid.total_points();
    let mu = truth_at_design(&model.mean, grid);
    let mut values = Vec::with_capacity(n * p1);
    let mut path = Vec::with_capacity(p1);
    for _ in 0..n {
        bound.sampler.sample_into(rng, 1.0, &mut path, p1);
        for j in 0..p1 {
            let eps = match &model.noise {
                NoiseLaw::Gaussian => rng.sample::<f64, _>(StandardNormal),
                NoiseLaw::Custom(f) => f(rng),
            };
            values.push(mu[j] + path[j] + model.sigma * eps);
        }
    }
    CurveDataset::new(grid.clone(), n, values)
}

pub(crate) fn truth_at_design(mean: &MeanFunction, grid: &Grid) -> Vec<f64> {
    let mut x = vec![0.0; grid.dim()];
    (0..grid.total_points())
        .map(|j| {
            grid.point_into(j, &mut x);
            mean.eval(&x)
        })
        .collect()
}

/// Sup-norms of the total error and of its three components for one draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupErrors {
    pub total: f64,
    pub bias: f64,
    pub noise: f64,
    pub process: f64,
}

/// Precomputed weights plus the deterministic bias curve of one estimator.
pub(crate) struct Candidate {
    weights: WeightMatrix,
    bias: Vec<f64>,
    sup_bias: f64,
}

impl Candidate {
    pub(crate) fn new(weights: WeightMatrix, grid: &Grid, mean: &MeanFunction) -> Self {
        let mu = truth_at_design(&mean.clone(), grid);
        let bias: Vec<f64> = weights
            .fields()
            .iter()
            .map(|f| {
                let mu_x = mean.eval(&f.x);
                f.entries.iter().map(|&(j, w)| w * (mu[j] - mu_x)).sum()
            })
            .collect();
        let sup_bias = bias.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        Self {
            weights,
            bias,
            sup_bias,
        }
    }

    fn errors(&self, draw: &AveragedDraw) -> SupErrors {
        let (mut total, mut noise, mut process) = (0.0f64, 0.0f64, 0.0f64);
        for (f, b) in self.weights.fields().iter().zip(&self.bias) {
            let (mut e, mut z) = (0.0, 0.0);
            for &(j, w) in &f.entries {
                e += w * draw.eps_bar[j];
                z += w * draw.z_bar[j];
            }
            total = total.max((b + e + z).abs());
            noise = noise.max(e.abs());
            process = process.max(z.abs());
        }
        SupErrors {
            total,
            bias: self.sup_bias,
            noise,
            process,
        }
    }
}

/// Monte-Carlo sup-norm errors of several estimators under common random
/// numbers: `result[rep][candidate]`.
pub(crate) fn monte_carlo(
    model: &SimulationModel,
    n: usize,
    grid: &Grid,
    candidates: &[Candidate],
    replications: usize,
    seed: u64,
    config_index: usize,
) -> Result<Vec<Vec<SupErrors>>> {
    let bound = BoundModel::new(model, grid)?;
    Ok((0..replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream(seed, stream_id(config_index, rep));
            let mut draw = AveragedDraw {
                eps_bar: Vec::with_capacity(bound.p1),
                z_bar: Vec::with_capacity(bound.p1),
            };
            bound.draw_averaged(n, &mut rng, &mut draw);
            candidates.iter().map(|c| c.errors(&draw)).collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationConfig {
    pub mean: String,
    pub process: String,
    pub sigma: f64,
    pub n: usize,
    pub p: Vec<usize>,
    pub estimator: EstimatorConfig,
    pub eval_points: usize,
    pub replications: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub total: f64,
    pub bias: f64,
    pub noise: f64,
    pub process: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorSummary {
    pub mean_total: f64,
    pub sd_total: f64,
    /// Standard error of `mean_total`.
    pub se_total: f64,
    pub mean_bias: f64,
    pub mean_noise: f64,
    pub mean_process: f64,
}

impl ErrorSummary {
    pub fn from_errors<'a, I: IntoIterator<Item = &'a SupErrors>>(errors: I) -> Self {
        let v: Vec<&SupErrors> = errors.into_iter().collect();
        let n = v.len() as f64;
        let mean = |f: fn(&SupErrors) -> f64| v.iter().map(|e| f(e)).sum::<f64>() / n;
        let mean_total = mean(|e| e.total);
        let var = if v.len() > 1 {
            v.iter().map(|e| (e.total - mean_total).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean_total,
            sd_total: var.sqrt(),
            se_total: (var / n).sqrt(),
            mean_bias: mean(|e| e.bias),
            mean_noise: mean(|e| e.noise),
            mean_process: mean(|e| e.process),
        }
    }
}

/// Per-replication sup-norm errors of one estimator, with a summary.
/// Everything except `runtime_secs` is a deterministic function of the seed.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicationReport {
    pub config: ReplicationConfig,
    pub records: Vec<ReplicationRecord>,
    pub summary: ErrorSummary,
    pub runtime_secs: f64,
}

/// Runs `replications` independent draws of `Ybar = mu + Zbar + epsbar` and
/// records the sup-norm error of the estimator and of each error term.
pub fn run_replications(
    model: &SimulationModel,
    n: usize,
    grid: &Grid,
    estimator: &EstimatorConfig,
    eval: &EvalGrid,
    replications: usize,
    seed: u64,
) -> Result<ReplicationReport> {
    if replications == 0 {
        return Err(invalid("need at least one replication"));
    }
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    let start = Instant::now();
    let candidate = Candidate::new(estimator.weights(grid, eval)?, grid, &model.mean);
    let errors = monte_carlo(model, n, grid, std::slice::from_ref(&candidate), replications, seed, 0)?;
    let flat: Vec<SupErrors> = errors.into_iter().map(|mut v| v.remove(0)).collect();
    let records = flat
        .iter()
        .enumerate()
        .map(|(rep, e)| ReplicationRecord {
            rep,
            total: e.total,
            bias: e.bias,
            noise: e.noise,
            process: e.process,
        })
        .collect();
    Ok(ReplicationReport {
        config: ReplicationConfig {
            mean: model.mean.name().to_string(),
            process: model.process.name().to_string(),
            sigma: model.sigma,
            n,
            p: grid.counts(),
            estimator: estimator.clone(),
            eval_points: eval.len(),
            replications,
            seed,
        },
        summary: ErrorSummary::from_errors(&flat),
        records,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// How candidate bandwidths are chosen for each `(n, p)` configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthRule {
    /// Start at `c / p_min`, fixed step, up to `end` (inclusive).
    Grid { c: f64, step: f64, end: f64 },
    Fixed(f64),
    /// `h*` from the rate formula with smoothness `alpha`.
    Optimal { alpha: f64, c: f64 },
}

impl Default for BandwidthRule {
    fn default() -> Self {
        Self::Grid {
            c: 3.0,
            step: 0.005,
            end: 0.25,
        }
    }
}

impl BandwidthRule {
    pub fn candidates(&self, n: usize, grid: &Grid) -> Result<Vec<f64>> {
        match *self {
            Self::Grid { c, step, end } => {
                Ok(BandwidthGrid::from_rule(c / grid.p_min() as f64, step, end)?.values().to_vec())
            }
            Self::Fixed(h) => Ok(vec![h]),
            Self::Optimal { alpha, c } => {
                let inputs = crate::rates::RateInputs::new(n, grid.counts(), alpha, c)?;
                Ok(vec![crate::rates::optimal_bandwidth(&inputs)])
            }
        }
    }
}

/// One line of a rate experiment: an estimator at one bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub n: usize,
    pub p: usize,
    pub estimator: EstimatorKind,
    /// `None` for interpolation.
    pub h: Option<f64>,
    /// False when the weights could not be built at this bandwidth.
    pub valid: bool,
    pub summary: Option<ErrorSummary>,
}

/// The minimizing bandwidth of one `(n, p)` configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestRow {
    pub n: usize,
    pub p: usize,
    pub best_h: f64,
    pub summary: ErrorSummary,
    pub interpolation: Option<ErrorSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    pub best: Vec<BestRow>,
}

/// Settings of a rate experiment besides the model and configurations.
#[derive(Debug, Clone)]
pub struct RateExperiment {
    pub rule: BandwidthRule,
    /// Local polynomial degree and kernel name.
    pub degree: usize,
    pub kernel: String,
    /// Evaluation points per axis.
    pub eval_points: usize,
    pub replications: usize,
    pub seed: u64,
    /// Also run the interpolation estimator on the same draws.
    pub interpolation: bool,
    pub dim: usize,
}

impl RateExperiment {
    pub fn new(replications: usize, seed: u64) -> Self {
        Self {
            rule: BandwidthRule::default(),
            degree: 2,
            kernel: "epanechnikov".into(),
            eval_points: 1001,
            replications,
            seed,
            interpolation: true,
            dim: 1,
        }
    }
}

/// Mean sup-norm errors over a bandwidth set for each `(n, p)` on a uniform
/// design, with the minimizing bandwidth (ties toward the smaller `h`).
pub fn rate_experiment(
    model: &SimulationModel,
    configs: &[(usize, usize)],
    settings: &RateExperiment,
) -> Result<RateTable> {
    if configs.is_empty() {
        return Err(invalid("rate experiment needs at least one (n, p) configuration"));
    }
    if settings.replications == 0 {
        return Err(invalid("need at least one replication"));
    }
    let eval = EvalGrid::uniform(&vec![settings.eval_points; settings.dim])?;
    let mut table = RateTable {
        rows: Vec::new(),
        best: Vec::new(),
    };
    for (ci, &(n, p)) in configs.iter().enumerate() {
        let grid = uniform_grid(&vec![p; settings.dim])?;
        let hs = settings.rule.candidates(n, &grid)?;
        let mut candidates = Vec::new();
        let mut slots = Vec::new();
        for &h in &hs {
            let cfg = EstimatorConfig::local_polynomial(settings.degree, h)
                .with_kernel(settings.kernel.clone());
            match cfg.weights(&grid, &eval) {
                Ok(w) => {
                    slots.push(Some(candidates.len()));
                    candidates.push(Candidate::new(w, &grid, &model.mean));
                }
                Err(Error::IllConditionedWindow { .. }) | Err(Error::DegenerateWindow { .. }) => {
                    slots.push(None)
                }
                Err(e) => return Err(e),
            }
        }
        if settings.interpolation {
            candidates.push(Candidate::new(
                WeightMatrix::interpolation(&grid, &eval),
                &grid,
                &model.mean,
            ));
        }
        let errors = monte_carlo(model, n, &grid, &candidates, settings.replications, settings.seed, ci)?;
        let summary_of = |c: usize| ErrorSummary::from_errors(errors.iter().map(|rep| &rep[c]));

        let mut best: Option<(f64, ErrorSummary)> = None;
        for (&h, slot) in hs.iter().zip(&slots) {
            let summary = slot.map(summary_of);
            if let Some(s) = summary {
                if best.map_or(true, |(_, b)| is_better(s.mean_total, b.mean_total)) {
                    best = Some((h, s));
                }
            }
            table.rows.push(RateRow {
                n,
                p,
                estimator: EstimatorKind::LocalPolynomial,
                h: Some(h),
                valid: summary.is_some(),
                summary,
            });
        }
        let interpolation = settings.interpolation.then(|| summary_of(candidates.len() - 1));
        if let Some(s) = interpolation {
            table.rows.push(RateRow {
                n,
                p,
                estimator: EstimatorKind::Interpolation,
                h: None,
                valid: true,
                summary: Some(s),
            });
        }
        let (best_h, summary) = best.ok_or(Error::NoValidBandwidth(hs.len()))?;
        table.best.push(BestRow {
            n,
            p,
            best_h,
            summary,
            interpolation,
        });
    }
    Ok(table)
}

/// Strict improvement beyond rounding noise; candidates are scanned in
/// increasing `h`, so ties keep the smaller bandwidth.
pub(crate) fn is_better(candidate: f64, incumbent: f64) -> bool {
    candidate < incumbent - 1e-12 - 1e-9 * incumbent.abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mu0_values() {
        assert_eq!(mean_mu0(0.5), 0.0);
        assert_abs_diff_eq!(mean_mu0(0.75), -(-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(mean_mu0(0.75), -0.367879, epsilon = 1e-6);
        for i in 0..=50 {
            let t = i as f64 / 100.0;
            assert_abs_diff_eq!(mean_mu0(0.5 + t), -mean_mu0(0.5 - t), epsilon = 1e-14);
        }
    }

    #[test]
    fn brownian_starts_at_zero_and_rejects_unsorted() {
        let mut rng = substream(1, 0);
        let path = sample_brownian(&[0.0, 0.3, 1.0], &mut rng).unwrap();
        assert_eq!(path[0], 0.0);
        assert!(sample_brownian(&[0.3, 0.2], &mut rng).is_err());
        assert!(sample_brownian(&[0.3, 1.2], &mut rng).is_err());
    }

    #[test]
    fn brownian_needs_one_dimension() {
        let model = SimulationModel::mu0_brownian(1.0).unwrap();
        let grid = uniform_grid(&[4, 4]).unwrap();
        assert!(sample_averaged(&model, 10, &grid, &mut substream(0, 0)).is_err());
    }

    #[test]
    fn averaged_with_single_curve_matches_explicit_law() {
        // n = 1: eps_bar has variance sigma^2 and Zbar is one full path
        let model = SimulationModel::new(MeanFunction::zero(), Process::None, 2.0).unwrap();
        let grid = uniform_grid(&[3]).unwrap();
        let mut rng = substream(9, 0);
        let m = 40_000;
        let mut sum_sq = 0.0;
        for _ in 0..m {
            let d = sample_averaged(&model, 1, &grid, &mut rng).unwrap();
            assert!(d.z_bar.iter().all(|&z| z == 0.0));
            sum_sq += d.eps_bar[1] * d.eps_bar[1];
        }
        assert_abs_diff_eq!(sum_sq / m as f64, 4.0, epsilon = 0.15);
    }

    #[test]
    fn zbar_variance_at_one() {
        let model = SimulationModel::new(MeanFunction::zero(), Process::BrownianMotion, 0.0).unwrap();
        let grid = Grid::new(vec![vec![0.5, 1.0]]).unwrap();
        let mut rng = substream(4, 0);
        let m = 50_000;
        let n = 25;
        let var = (0..m)
            .map(|_| sample_averaged(&model, n, &grid, &mut rng).unwrap().z_bar[1].powi(2))
            .sum::<f64>()
            / m as f64;
        assert_abs_diff_eq!(var, 1.0 / n as f64, epsilon = 0.05 / n as f64);
    }

    #[test]
    fn gaussian_field_in_two_dimensions() {
        let process = Process::gaussian("exp", |x: &[f64], y: &[f64]| {
            let d = (x[0] - y[0]).abs().max((x[1] - y[1]).abs());
            (-d).exp()
        });
        let model = SimulationModel::new(MeanFunction::zero(), process, 0.0).unwrap();
        let grid = uniform_grid(&[3, 3]).unwrap();
        let mut rng = substream(5, 0);
        let m = 20_000;
        let mut acc = 0.0;
        for _ in 0..m {
            let d = sample_averaged(&model, 1, &grid, &mut rng).unwrap();
            acc += d.z_bar[0] * d.z_bar[8];
        }
        let expected = (-(grid.axis(0)[2] - grid.axis(0)[0])).exp();
        assert_abs_diff_eq!(acc / m as f64, expected, epsilon = 0.04);
    }

    #[test]
    fn dataset_rows_have_model_structure() {
        let model = SimulationModel::new(MeanFunction::polynomial(vec![1.0, 2.0]), Process::None, 0.0)
            .unwrap();
        let grid = uniform_grid(&[5]).unwrap();
        let ds = sample_dataset(&model, 3, &grid, &mut substream(1, 1)).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                assert_abs_diff_eq!(ds.get(i, j).unwrap(), 1.0 + 2.0 * grid.axis(0)[j], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn replications_are_reproducible() {
        let model = SimulationModel::mu0_brownian(1.0).unwrap();
        let grid = uniform_grid(&[50]).unwrap();
        let eval = EvalGrid::uniform(&[101]).unwrap();
        let cfg = EstimatorConfig::local_polynomial(2, 0.15);
        let a = run_replications(&model, 100, &grid, &cfg, &eval, 20, 77).unwrap();
        let b = run_replications(&model, 100, &grid, &cfg, &eval, 20, 77).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.summary, b.summary);
        let c = run_replications(&model, 100, &grid, &cfg, &eval, 20, 78).unwrap();
        assert_ne!(a.records, c.records);
        for r in &a.records {
            assert!(r.total <= r.bias + r.noise + r.process + 1e-12);
        }
    }

    #[test]
    fn noiseless_polynomial_is_exact() {
        let model = SimulationModel::new(
            MeanFunction::polynomial(vec![0.2, -1.0, 3.0]),
            Process::None,
            0.0,
        )
        .unwrap();
        let grid = uniform_grid(&[40]).unwrap();
        let eval = EvalGrid::uniform(&[201]).unwrap();
        let cfg = EstimatorConfig::local_polynomial(2, 0.2);
        let rep = run_replications(&model, 10, &grid, &cfg, &eval, 5, 1).unwrap();
        for r in &rep.records {
            assert!(r.total < 1e-8, "{r:?}");
        }
    }

    #[test]
    fn tie_breaking_keeps_smaller() {
        assert!(!is_better(1e-15, 2e-15));
        assert!(is_better(0.5, 0.6));
        assert!(!is_better(0.6, 0.6));
    }
}
