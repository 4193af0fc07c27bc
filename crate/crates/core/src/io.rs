//! Dataset files, experiment configuration and result tables.
//!
//! A dataset file is CSV. Optional leading comment lines `# d=2` and
//! `# p=12,10` declare the dimension and per-axis counts (otherwise a
//! sidecar `<file>.meta.json` with `{"d": .., "p": [..]}` is consulted, and
//! failing that `d = 1`). The header lists the design points in row-major
//! order (last axis fastest); for `d > 1` the coordinates of a point are
//! joined with `:`. Each further row is one curve; an empty cell is missing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bands::SimultaneousBand;
use crate::error::{invalid, Error, Result};
use crate::estimation::{CurveDataset, EstimateCurve, EstimatorConfig, EstimatorKind};
use crate::grid::{EvalGrid, Grid};
use crate::simulation::{BandwidthRule, MeanFunction, Process, RateTable, ReplicationReport, SimulationModel};

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn format_cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format_f64(v)
    }
}

/// Dimension and per-axis counts of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub d: usize,
    pub p: Vec<usize>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Reads a dataset file, consulting a sidecar when the file has no `# d=`
/// or `# p=` lines.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<CurveDataset> {
    let path = path.as_ref();
    let sidecar = sidecar_path(path);
    let meta = if sidecar.exists() {
        let text = std::fs::read_to_string(&sidecar)?;
        Some(
            serde_json::from_str(&text)
                .map_err(|e| Error::InvalidData(format!("{}: {e}", sidecar.display())))?,
        )
    } else {
        None
    };
    read_dataset_from(BufReader::new(File::open(path)?), meta)
}

/// Parses a dataset; `meta` is used only when the text declares neither
/// `d` nor `p`.
pub fn read_dataset_from<R: Read>(mut reader: R, meta: Option<DatasetMeta>) -> Result<CurveDataset> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;

    let (mut d, mut p): (Option<usize>, Option<Vec<usize>>) = (None, None);
    for (i, line) in text.lines().enumerate() {
        let Some(comment) = line.trim_start().strip_prefix('#') else {
            break;
        };
        let parse_count = |s: &str| {
            s.trim().parse::<usize>().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("bad count {s:?} in comment"),
            })
        };
        let comment = comment.trim();
        if let Some(v) = comment.strip_prefix("d=") {
            d = Some(parse_count(v)?);
        } else if let Some(v) = comment.strip_prefix("p=") {
            p = Some(v.split(',').map(parse_count).collect::<Result<_>>()?);
        }
    }
    if d.is_none() && p.is_none() {
        if let Some(m) = meta {
            d = Some(m.d);
            p = Some(m.p);
        }
    }

    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut records = csv.records();
    let header = match records.next() {
        Some(r) => r.map_err(csv_error)?,
        None => return Err(Error::Parse { line: 1, message: "missing header row".into() }),
    };
    let header_line = line_of(&header);
    let d = d.unwrap_or_else(|| p.as_ref().map_or(1, Vec::len));
    if d == 0 {
        return Err(Error::Parse { line: 1, message: "dimension must be positive".into() });
    }
    let p1 = header.len();
    let mut coords = Vec::with_capacity(p1 * d);
    for cell in header.iter() {
        let parts: Vec<&str> = cell.split(':').collect();
        if parts.len() != d {
            return Err(Error::Parse {
                line: header_line,
                message: format!("header cell {cell:?} does not have {d} coordinates"),
            });
        }
        for part in parts {
            coords.push(parse_number(part, header_line)?);
        }
    }
    let counts = match p {
        Some(p) => p,
        None if d == 1 => vec![p1],
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "per-axis counts are required when d > 1 (add a '# p=' line)".into(),
            })
        }
    };
    if counts.len() != d || counts.iter().product::<usize>() != p1 {
        return Err(Error::Parse {
            line: header_line,
            message: format!("header has {p1} points, inconsistent with d={d}, p={counts:?}"),
        });
    }
    let grid = grid_from_points(&coords, &counts)?;

    let mut values = Vec::new();
    let mut n = 0;
    for record in records {
        let record = record.map_err(csv_error)?;
        let line = line_of(&record);
        if record.len() != p1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {p1} cells, found {}", record.len()),
            });
        }
        for cell in record.iter() {
            let cell = cell.trim();
            values.push(if cell.is_empty() || cell == "NA" { f64::NAN } else { parse_number(cell, line)? });
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidData("dataset has no curves".into()));
    }
    CurveDataset::new(grid, n, values)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse { line, message: e.to_string() }
}

fn line_of(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

fn parse_number(s: &str, line: usize) -> Result<f64> {
    let s = s.trim();
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse { line, message: format!("not a finite number: {s:?}") }),
    }
}

/// Recovers per-axis coordinates from flattened points and checks that the
/// points form the product grid.
fn grid_from_points(coords: &[f64], counts: &[usize]) -> Result<Grid> {
    let d = counts.len();
    let mut axes = Vec::with_capacity(d);
    for k in 0..d {
        let stride: usize = counts[k + 1..].iter().product();
        let axis: Vec<f64> = (0..counts[k]).map(|i| coords[i * stride * d + k]).collect();
        if axis.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidData(format!("axis {k} coordinates are not strictly increasing")));
        }
        if axis.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidData(format!("axis {k} has coordinates outside [0,1]")));
        }
        axes.push(axis);
    }
    let grid = Grid::new(axes).map_err(|e| Error::InvalidData(e.to_string()))?;
    let mut x = vec![0.0; d];
    for (j, point) in coords.chunks_exact(d).enumerate() {
        grid.point_into(j, &mut x);
        if point != x.as_slice() {
            return Err(Error::InvalidData(format!(
                "design point {j} is {point:?}, but the product grid gives {x:?}"
            )));
        }
    }
    Ok(grid)
}

fn point_label(grid: &Grid, j: usize) -> String {
    grid.point(j).into_iter().map(format_f64).collect::<Vec<_>>().join(":")
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &CurveDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset_to(&mut w, dataset)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset_to<W: Write>(mut writer: W, dataset: &CurveDataset) -> Result<()> {
    let grid = dataset.grid();
    let counts: Vec<String> = grid.counts().iter().map(usize::to_string).collect();
    writeln!(writer, "# d={}", grid.dim())?;
    writeln!(writer, "# p={}", counts.join(","))?;
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record((0..grid.total_points()).map(|j| point_label(grid, j)))
        .map_err(csv_write_error)?;
    for i in 0..dataset.n() {
        csv.write_record(dataset.row(i).iter().map(|&v| format_cell(v)))
            .map_err(csv_write_error)?;
    }
    csv.flush()?;
    Ok(())
}

fn csv_write_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidData(format!("{other:?}")),
    }
}

/// Which design columns to keep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnSelection {
    /// Indices `0, k, 2k, ...` on every axis; the first point is always kept.
    KeepEvery(usize),
    /// Explicit strictly increasing indices, one list per axis.
    Indices(Vec<Vec<usize>>),
}

/// Restricts a dataset to a sub-grid of its design.
pub fn subsample_columns(dataset: &CurveDataset, selection: &ColumnSelection) -> Result<CurveDataset> {
    let grid = dataset.grid();
    let d = grid.dim();
    let keep: Vec<Vec<usize>> = match selection {
        ColumnSelection::KeepEvery(0) => return Err(invalid("keep-every step must be at least 1")),
        ColumnSelection::KeepEvery(k) => grid.counts().iter().map(|&pk| (0..pk).step_by(*k).collect()).collect(),
        ColumnSelection::Indices(idx) => {
            if idx.len() != d {
                return Err(invalid(format!("need {d} index lists, got {}", idx.len())));
            }
            for (k, list) in idx.iter().enumerate() {
                if list.is_empty() {
                    return Err(invalid(format!("empty selection on axis {k}")));
                }
                if list.windows(2).any(|w| w[0] >= w[1]) || list[list.len() - 1] >= grid.axis(k).len() {
                    return Err(invalid(format!("axis {k} indices must be increasing and in range")));
                }
            }
            idx.clone()
        }
    };
    let axes = keep
        .iter()
        .enumerate()
        .map(|(k, list)| list.iter().map(|&i| grid.axis(k)[i]).collect())
        .collect();
    let sub = Grid::new(axes)?;
    let sub_p1 = sub.total_points();
    let mut columns = Vec::with_capacity(sub_p1);
    let mut sub_idx = vec![0usize; d];
    let mut idx = vec![0usize; d];
    for j in 0..sub_p1 {
        sub.unflatten(j, &mut sub_idx);
        for k in 0..d {
            idx[k] = keep[k][sub_idx[k]];
        }
        columns.push(grid.flatten(&idx));
    }
    let mut values = Vec::with_capacity(dataset.n() * sub_p1);
    for i in 0..dataset.n() {
        let row = dataset.row(i);
        values.extend(columns.iter().map(|&c| row[c]));
    }
    CurveDataset::new(sub, dataset.n(), values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// `mu0`, `sine`, `polynomial` or `zero`.
    pub mean: String,
    #[serde(default)]
    pub coefficients: Vec<f64>,
    #[serde(default = "default_frequency")]
    pub frequency: f64,
    /// `brownian_motion` or `none`.
    #[serde(default = "default_process")]
    pub process: String,
    pub sigma: f64,
}

fn default_frequency() -> f64 {
    1.0
}

fn default_process() -> String {
    "none".into()
}

impl ModelSpec {
    pub fn build(&self) -> Result<SimulationModel> {
        let mean = match self.mean.as_str() {
            "mu0" => MeanFunction::mu0(),
            "sine" => MeanFunction::sine(self.frequency),
            "polynomial" => MeanFunction::polynomial(self.coefficients.clone()),
            "zero" => MeanFunction::zero(),
            other => return Err(invalid(format!("unknown mean function {other:?}"))),
        };
        let process = match self.process.as_str() {
            "brownian_motion" | "brownian" => Process::BrownianMotion,
            "none" => Process::None,
            other => return Err(invalid(format!("unknown process {other:?}"))),
        };
        SimulationModel::new(mean, process, self.sigma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    #[serde(default = "default_kind")]
    pub kind: EstimatorKind,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_kernel")]
    pub kernel: String,
    /// Fixed bandwidth; without it the bandwidth rule is used.
    pub h: Option<f64>,
    #[serde(default)]
    pub h_rule: HRuleSpec,
}

fn default_kind() -> EstimatorKind {
    EstimatorKind::LocalPolynomial
}

fn default_degree() -> usize {
    2
}

fn default_kernel() -> String {
    "epanechnikov".into()
}

/// Candidate bandwidths: a grid from `c / p_min` or the rate-optimal `h*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum HRuleSpec {
    Grid {
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default = "default_step")]
        step: f64,
        #[serde(default = "default_end")]
        end: f64,
    },
    Optimal {
        alpha: f64,
        #[serde(default = "default_c")]
        c: f64,
    },
}

fn default_c() -> f64 {
    3.0
}

fn default_step() -> f64 {
    0.005
}

fn default_end() -> f64 {
    0.25
}

impl Default for HRuleSpec {
    fn default() -> Self {
        Self::Grid {
            c: default_c(),
            step: default_step(),
            end: default_end(),
        }
    }
}

impl HRuleSpec {
    pub fn rule(&self) -> BandwidthRule {
        match *self {
            Self::Grid { c, step, end } => BandwidthRule::Grid { c, step, end },
            Self::Optimal { alpha, c } => BandwidthRule::Optimal { alpha, c },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

/// A simulation experiment. `seed` is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n: usize,
    pub p: Vec<usize>,
    #[serde(default = "default_dim")]
    pub d: usize,
    pub replications: usize,
    #[serde(default = "default_eval_points")]
    pub eval_points: usize,
    pub model: ModelSpec,
    pub estimator: EstimatorSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_dim() -> usize {
    1
}

fn default_eval_points() -> usize {
    1001
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads TOML, or JSON when the extension is `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.replications == 0 || self.eval_points == 0 || self.d == 0 {
            return Err(invalid("n, replications, eval_points and d must be positive"));
        }
        if self.p.is_empty() || self.p.contains(&0) {
            return Err(invalid("p must be a nonempty list of positive counts"));
        }
        self.model.build()?;
        crate::kernel::Kernel::by_name(&self.estimator.kernel, self.d)?;
        Ok(())
    }

    pub fn estimator_config(&self, h: f64) -> EstimatorConfig {
        match self.estimator.kind {
            EstimatorKind::Interpolation => EstimatorConfig::interpolation(),
            EstimatorKind::LocalPolynomial => {
                EstimatorConfig::local_polynomial(self.estimator.degree, h).with_kernel(self.estimator.kernel.clone())
            }
        }
    }
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::Writer::from_writer(w)
}

/// One row per replication: `n,p,rep,total,bias,noise,process`.
pub fn write_replications_csv<W: Write>(writer: W, reports: &[ReplicationReport]) -> Result<()> {
    let mut csv = csv_writer(writer);
    csv.write_record(["n", "p", "rep", "total", "bias", "noise", "process"])
        .map_err(csv_write_error)?;
    for report in reports {
        let p = report.config.p.iter().map(usize::to_string).collect::<Vec<_>>().join(":");
        for r in &report.records {
            csv.write_record([
                report.config.n.to_string(),
                p.clone(),
                r.rep.to_string(),
                format_f64(r.total),
                format_f64(r.bias),
                format_f64(r.noise),
                format_f64(r.process),
            ])
            .map_err(csv_write_error)?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// Mean errors per `(n, p, estimator, h)`; `best` marks the minimizing bandwidth.
pub fn write_rate_table_csv<W: Write>(writer: W, table: &RateTable) -> Result<()> {
    let mut csv = csv_writer(writer);
    csv.write_record([
        "n", "p", "estimator", "h", "valid", "best", "mean_total", "sd_total", "se_total", "mean_bias",
        "mean_noise", "mean_process",
    ])
    .map_err(csv_write_error)?;
    for row in &table.rows {
        let best = row.h.is_some()
            && table
                .best
                .iter()
                .any(|b| b.n == row.n && b.p == row.p && Some(b.best_h) == row.h);
        let mut rec = vec![
            row.n.to_string(),
            row.p.to_string(),
            row.estimator.name().to_string(),
            row.h.map(format_f64).unwrap_or_default(),
            row.valid.to_string(),
            best.to_string(),
        ];
        match &row.summary {
            Some(s) => rec.extend(
                [s.mean_total, s.sd_total, s.se_total, s.mean_bias, s.mean_noise, s.mean_process].map(format_f64),
            ),
            None => rec.extend(std::iter::repeat(String::new()).take(6)),
        }
        csv.write_record(rec).map_err(csv_write_error)?;
    }
    csv.flush()?;
    Ok(())
}

fn coordinate_headers(eval: &EvalGrid) -> Vec<String> {
    if eval.dim() == 1 {
        vec!["x".into()]
    } else {
        (1..=eval.dim()).map(|k| format!("x{k}")).collect()
    }
}

/// `x,value` (or `x1,..,xd,value`).
pub fn write_estimate_csv<W: Write>(writer: W, estimate: &EstimateCurve) -> Result<()> {
    let mut csv = csv_writer(writer);
    let mut header = coordinate_headers(&estimate.eval_grid);
    header.push("value".into());
    csv.write_record(&header).map_err(csv_write_error)?;
    for (x, v) in estimate.eval_grid.iter().zip(&estimate.values) {
        let mut rec: Vec<String> = x.iter().map(|&c| format_f64(c)).collect();
        rec.push(format_f64(*v));
        csv.write_record(&rec).map_err(csv_write_error)?;
    }
    csv.flush()?;
    Ok(())
}

/// `x,center,lower,upper` (or `x1,..,xd,...`).
pub fn write_band_csv<W: Write>(writer: W, band: &SimultaneousBand) -> Result<()> {
    let mut csv = csv_writer(writer);
    let mut header = coordinate_headers(&band.center.eval_grid);
    header.extend(["center", "lower", "upper"].map(String::from));
    csv.write_record(&header).map_err(csv_write_error)?;
    let (lower, upper) = (band.lower(), band.upper());
    for (i, x) in band.center.eval_grid.iter().enumerate() {
        let mut rec: Vec<String> = x.iter().map(|&c| format_f64(c)).collect();
        rec.extend([band.center.values[i], lower[i], upper[i]].map(format_f64));
        csv.write_record(&rec).map_err(csv_write_error)?;
    }
    csv.flush()?;
    Ok(())
}
