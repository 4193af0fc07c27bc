//! Command-line front end.
//!
//! Exit codes: `0` success, `1` numerical or data failure, `2` usage error
//! (unknown flags, invalid arguments).

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::bands::{
    estimate_covariance, h_set_check, residual_curves, simultaneous_band, BandMode, HSetCheck, SimultaneousBand,
};
use crate::bandwidth::{loocv, BandwidthGrid};
use crate::error::{invalid, Error, Result};
use crate::estimation::{estimate_on_grid, CurveDataset, EstimateCurve, EstimatorConfig};
use crate::grid::{uniform_grid, EvalGrid};
use crate::io::{
    read_dataset, subsample_columns, write_band_csv, write_estimate_csv, write_rate_table_csv,
    write_replications_csv, ColumnSelection, ExperimentConfig,
};
use crate::rates::{bandwidth_floor_binds, classify_regime, optimal_bandwidth, optimal_rate, rate_bound, RateInputs};
use crate::simulation::{rate_experiment, run_replications, RateExperiment};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "SUPMEAN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "supmean", version, about = "Sup-norm mean estimation for functional data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a Monte-Carlo experiment described by a TOML or JSON config.
    Simulate(SimulateArgs),
    /// Estimate the mean function of a dataset.
    Estimate(EstimateArgs),
    /// Theoretical rate, optimal bandwidth and regime (JSON).
    Rates(RatesArgs),
    /// Leave-one-curve-out bandwidth selection.
    Cv(CvArgs),
    /// Simultaneous confidence band around the estimate.
    Bands(BandsArgs),
    /// Check whether the estimate on a coarsened design stays inside the band.
    CoarsenCheck(CoarsenArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output (default: the config's output path, else stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    LocalPolynomial,
    Interpolation,
}

#[derive(Debug, Args)]
struct SmootherArgs {
    #[arg(long, value_enum, default_value = "local-polynomial")]
    kind: KindArg,
    #[arg(long, default_value_t = 2)]
    degree: usize,
    #[arg(long, default_value = "epanechnikov")]
    kernel: String,
}

impl SmootherArgs {
    fn config(&self, h: Option<f64>) -> Result<EstimatorConfig> {
        match self.kind {
            KindArg::Interpolation => Ok(EstimatorConfig::interpolation()),
            KindArg::LocalPolynomial => {
                let h = h.ok_or_else(|| invalid("--h is required for the local polynomial estimator"))?;
                Ok(EstimatorConfig::local_polynomial(self.degree, h).with_kernel(self.kernel.clone()))
            }
        }
    }
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    smoother: SmootherArgs,
    #[arg(long)]
    h: Option<f64>,
    /// Evaluation points per axis.
    #[arg(long, default_value_t = 1001)]
    eval_points: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RatesArgs {
    #[arg(long)]
    n: usize,
    /// Per-axis counts, or one count shared by all `d` axes.
    #[arg(long, value_delimiter = ',', required = true)]
    p: Vec<usize>,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, default_value_t = 3.0)]
    c: f64,
    /// Also evaluate the rate bound at this bandwidth.
    #[arg(long)]
    h: Option<f64>,
}

#[derive(Debug, Args)]
struct CvArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 2)]
    degree: usize,
    #[arg(long, default_value = "epanechnikov")]
    kernel: String,
    /// `start:step:end`; default starts at 3/p_min in steps of 0.005 up to 0.25.
    #[arg(long, conflicts_with = "h_list")]
    h_grid: Option<String>,
    #[arg(long, value_delimiter = ',')]
    h_list: Option<Vec<f64>>,
    /// CSV of `h,score`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BandArgs {
    #[arg(long)]
    h: f64,
    #[arg(long, default_value_t = 2)]
    degree: usize,
    #[arg(long, default_value = "epanechnikov")]
    kernel: String,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Gaussian draws for the sup quantile.
    #[arg(long, default_value_t = 2000)]
    draws: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 201)]
    eval_points: usize,
    /// Scale the band by the pointwise standard deviation.
    #[arg(long)]
    studentized: bool,
    /// Bandwidth for smoothing the covariance estimate.
    #[arg(long)]
    h_gamma: Option<f64>,
    /// Smoothness used in the undersmoothing check.
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 3.0)]
    c: f64,
    #[arg(long, default_value_t = 0.25)]
    h0: f64,
}

#[derive(Debug, Args)]
struct BandsArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    band: BandArgs,
    /// CSV of `x,center,lower,upper`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CoarsenArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    band: BandArgs,
    /// Keep every k-th design point on each axis.
    #[arg(long)]
    keep_every: usize,
    /// Bandwidth on the coarse design (default: max(h, c / p_min of the coarse design)).
    #[arg(long)]
    h_coarse: Option<f64>,
    /// CSV of `x,center,lower,upper,coarse`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Applies the thread count from `SUPMEAN_THREADS`, if set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let threads: usize = v
            .trim()
            .parse()
            .map_err(|_| invalid(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        // a pool that is already initialized keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Machine-readable results go to `out` unless an output
/// file is given; summaries and diagnostics go to `err`.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{rendered}")
            } else {
                write!(err, "{rendered}")
            };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(a, out, err),
        Command::Estimate(a) => estimate(a, out, err),
        Command::Rates(a) => rates(a, out),
        Command::Cv(a) => cv(a, out, err),
        Command::Bands(a) => bands(a, out, err),
        Command::CoarsenCheck(a) => coarsen_check(a, out, err),
    }
}

fn with_output(path: Option<&Path>, out: &mut dyn Write, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            f(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => f(out),
    }
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidData(e.to_string()))?;
    writeln!(out, "{text}")?;
    Ok(())
}

fn simulate(a: SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let model = cfg.model.build()?;
    let csv_path = a.out.or_else(|| cfg.output.csv.clone());
    let fixed_h = cfg.estimator.h.or(match cfg.estimator.kind {
        crate::estimation::EstimatorKind::Interpolation => Some(f64::NAN),
        _ => None,
    });

    let summary = if let Some(h) = fixed_h {
        let eval = EvalGrid::uniform(&vec![cfg.eval_points; cfg.d])?;
        let estimator = cfg.estimator_config(h);
        let mut reports = Vec::new();
        for &p in &cfg.p {
            let grid = uniform_grid(&vec![p; cfg.d])?;
            let report = run_replications(&model, cfg.n, &grid, &estimator, &eval, cfg.replications, cfg.seed)?;
            writeln!(
                err,
                "n={} p={p}: mean sup error {:.6} (se {:.6}) in {:.2}s",
                cfg.n, report.summary.mean_total, report.summary.se_total, report.runtime_secs
            )?;
            reports.push(report);
        }
        with_output(csv_path.as_deref(), out, |w| write_replications_csv(w, &reports))?;
        json!(reports
            .iter()
            .map(|r| json!({ "config": r.config, "summary": r.summary }))
            .collect::<Vec<_>>())
    } else {
        let mut settings = RateExperiment::new(cfg.replications, cfg.seed);
        settings.rule = cfg.estimator.h_rule.rule();
        settings.degree = cfg.estimator.degree;
        settings.kernel = cfg.estimator.kernel.clone();
        settings.eval_points = cfg.eval_points;
        settings.dim = cfg.d;
        let configs: Vec<(usize, usize)> = cfg.p.iter().map(|&p| (cfg.n, p)).collect();
        let table = rate_experiment(&model, &configs, &settings)?;
        for b in &table.best {
            writeln!(
                err,
                "n={} p={}: best h {:.4}, mean sup error {:.6}",
                b.n, b.p, b.best_h, b.summary.mean_total
            )?;
        }
        with_output(csv_path.as_deref(), out, |w| write_rate_table_csv(w, &table))?;
        json!(table.best)
    };
    if let Some(path) = &cfg.output.json {
        with_output(Some(path), out, |w| print_json(w, &summary))?;
    }
    Ok(())
}

fn estimate(a: EstimateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let config = a.smoother.config(a.h)?;
    let eval = EvalGrid::uniform(&vec![a.eval_points; data.grid().dim()])?;
    let est = estimate_on_grid(&data, &config, &eval)?;
    writeln!(
        err,
        "estimated {} curves on {} design points at {} evaluation points",
        data.n(),
        data.design_len(),
        eval.len()
    )?;
    with_output(a.out.as_deref(), out, |w| write_estimate_csv(w, &est))
}

fn rates(a: RatesArgs, out: &mut dyn Write) -> Result<()> {
    let p = match (a.d, a.p.len()) {
        (Some(d), 1) => vec![a.p[0]; d],
        (Some(d), k) if d != k => return Err(invalid(format!("--d {d} does not match {k} counts in --p"))),
        _ => a.p.clone(),
    };
    let inputs = RateInputs::new(a.n, p, a.alpha, a.c)?;
    let h_star = optimal_bandwidth(&inputs);
    let mut report = json!({
        "n": inputs.n,
        "p": inputs.p,
        "d": inputs.dim(),
        "alpha": inputs.alpha,
        "c": inputs.c,
        "h_star": h_star,
        "floor_binds": bandwidth_floor_binds(&inputs),
        "optimal_rate": optimal_rate(&inputs),
        "regime": classify_regime(&inputs),
    });
    if h_star < 1.0 {
        report["rate_at_h_star"] = json!(rate_bound(&inputs, h_star)?);
    }
    if let Some(h) = a.h {
        report["rate_at_h"] = json!(rate_bound(&inputs, h)?);
    }
    print_json(out, &report)
}

fn parse_h_grid(spec: &str) -> Result<BandwidthGrid> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| invalid(format!("--h-grid must be start:step:end, got {spec:?}")))?;
    match parts.as_slice() {
        [start, step, end] => BandwidthGrid::from_rule(*start, *step, *end),
        _ => Err(invalid(format!("--h-grid must be start:step:end, got {spec:?}"))),
    }
}

fn cv(a: CvArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let hs = match (&a.h_grid, &a.h_list) {
        (Some(spec), _) => parse_h_grid(spec)?,
        (None, Some(list)) => BandwidthGrid::new(list.clone())?,
        (None, None) => BandwidthGrid::default_for(data.grid())?,
    };
    let config = EstimatorConfig::local_polynomial(a.degree, hs.values()[0]).with_kernel(a.kernel.clone());
    let report = loocv(&data, &config, &hs)?;
    writeln!(err, "best h {} over {} candidates", report.best_h, hs.len())?;
    if let Some(path) = &a.out {
        with_output(Some(path), out, |w| {
            let mut csv = csv::Writer::from_writer(w);
            let wrap = |e: csv::Error| Error::InvalidData(e.to_string());
            csv.write_record(["h", "score"]).map_err(wrap)?;
            for s in &report.scores {
                csv.write_record([
                    crate::io::format_f64(s.h),
                    s.score.map(crate::io::format_f64).unwrap_or_default(),
                ])
                .map_err(wrap)?;
            }
            csv.flush()?;
            Ok(())
        })?;
    }
    print_json(
        out,
        &json!({
            "best_h": report.best_h,
            "rule": hs.rule(),
            "weight_builds": report.weight_builds,
            "scores": report.scores,
        }),
    )
}

struct BandRun {
    data: CurveDataset,
    band: SimultaneousBand,
    check: HSetCheck,
}

fn build_band(data: CurveDataset, a: &BandArgs, err: &mut dyn Write) -> Result<BandRun> {
    let grid = data.grid().clone();
    let config = EstimatorConfig::local_polynomial(a.degree, a.h).with_kernel(a.kernel.clone());
    let check = h_set_check(a.h, data.n(), &grid.counts(), a.alpha, a.c, a.h0)?;
    if !check.pass {
        writeln!(
            err,
            "warning: h = {} fails the undersmoothing checks (h > c/p_min: {}, h <= h0: {}, h^alpha <= n^-1/2: {}, log(1/h)/h^d <= p1: {})",
            a.h, check.above_floor, check.below_h0, check.undersmoothing, check.enough_points
        )?;
    }
    let fitted = estimate_on_grid(&data, &config, &EvalGrid::design(&grid))?;
    let residuals = residual_curves(&data, &fitted.values)?;
    let eval = EvalGrid::uniform(&vec![a.eval_points; grid.dim()])?;
    let cov = estimate_covariance(&residuals, &grid, &eval, a.h_gamma)?;
    let center = estimate_on_grid(&data, &config, &eval)?;
    let mode = if a.studentized {
        BandMode::Studentized
    } else {
        BandMode::Unstudentized
    };
    let band = simultaneous_band(&center, &cov, data.n(), a.level, a.draws, a.seed, mode)?;
    Ok(BandRun { data, band, check })
}

fn bands(a: BandsArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let run = build_band(read_dataset(&a.data)?, &a.band, err)?;
    if let Some(path) = &a.out {
        with_output(Some(path), out, |w| write_band_csv(w, &run.band))?;
    }
    writeln!(
        err,
        "{}% band from {} curves: q = {:.4}, halfwidth at first point {:.6}",
        100.0 * run.band.level,
        run.data.n(),
        run.band.quantile,
        run.band.halfwidth.first().copied().unwrap_or(0.0)
    )?;
    print_json(
        out,
        &json!({
            "quantile": run.band.quantile,
            "level": run.band.level,
            "mode": run.band.mode,
            "n": run.band.n,
            "h_set": run.check,
        }),
    )
}

fn coarsen_check(a: CoarsenArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let run = build_band(read_dataset(&a.data)?, &a.band, err)?;
    let coarse = subsample_columns(&run.data, &ColumnSelection::KeepEvery(a.keep_every))?;
    let h_coarse = a
        .h_coarse
        .unwrap_or_else(|| a.band.h.max(a.band.c / coarse.grid().p_min() as f64));
    let config = EstimatorConfig::local_polynomial(a.band.degree, h_coarse).with_kernel(a.band.kernel.clone());
    let coarse_est: EstimateCurve = estimate_on_grid(&coarse, &config, &run.band.center.eval_grid)?;

    let violation = run.band.first_violation(&coarse_est.values);
    let max_excess = run
        .band
        .center
        .values
        .iter()
        .zip(&run.band.halfwidth)
        .zip(&coarse_est.values)
        .map(|((c, w), v)| (v - c).abs() - w)
        .fold(f64::NEG_INFINITY, f64::max);
    let first_violation = violation.map(|i| {
        json!({
            "index": i,
            "x": run.band.center.eval_grid.point(i),
            "coarse": coarse_est.values[i],
            "lower": run.band.center.values[i] - run.band.halfwidth[i],
            "upper": run.band.center.values[i] + run.band.halfwidth[i],
        })
    });
    match violation {
        None => writeln!(err, "inside band: coarse estimate (p = {:?}) stays within the band", coarse.grid().counts())?,
        Some(i) => writeln!(
            err,
            "outside band: coarse estimate (p = {:?}) leaves the band first at x = {:?}",
            coarse.grid().counts(),
            run.band.center.eval_grid.point(i)
        )?,
    }
    if let Some(path) = &a.out {
        with_output(Some(path), out, |w| {
            let mut csv = csv::Writer::from_writer(w);
            let wrap = |e: csv::Error| Error::InvalidData(e.to_string());
            let d = run.band.center.eval_grid.dim();
            let mut header: Vec<String> = if d == 1 {
                vec!["x".into()]
            } else {
                (1..=d).map(|k| format!("x{k}")).collect()
            };
            header.extend(["center", "lower", "upper", "coarse"].map(String::from));
            csv.write_record(&header).map_err(wrap)?;
            for (i, x) in run.band.center.eval_grid.iter().enumerate() {
                let c = run.band.center.values[i];
                let w = run.band.halfwidth[i];
                let mut rec: Vec<String> = x.iter().map(|&v| crate::io::format_f64(v)).collect();
                rec.extend([c, c - w, c + w, coarse_est.values[i]].map(crate::io::format_f64));
                csv.write_record(&rec).map_err(wrap)?;
            }
            csv.flush()?;
            Ok(())
        })?;
    }
    print_json(
        out,
        &json!({
            "inside": violation.is_none(),
            "first_violation": first_violation,
            "max_excess": max_excess,
            "p_full": run.data.grid().counts(),
            "p_coarse": coarse.grid().counts(),
            "h": a.band.h,
            "h_coarse": h_coarse,
            "quantile": run.band.quantile,
            "level": run.band.level,
            "h_set": run.check,
        }),
    )
}
