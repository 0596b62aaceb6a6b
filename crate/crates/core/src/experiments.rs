//! Monte Carlo campaigns comparing the estimator's error with the optimized
//! bound, and presets reproducing the `n`-sweep and `p`-sweep figures.
//!
//! Trial `k` at every grid point draws from stream `(master_seed, k)`. Trials
//! run in parallel; results are gathered in `(grid value, trial)` order so the
//! output does not depend on the number of worker threads.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bounds::{optimize_bound, BoundError, BoundQuery};
use crate::estimator::{scm_from_rows, tyler_iterate, SolverConfig};
use crate::io::{fmt_f64, read_matrix_file, CsvError};
use crate::sampling::{draw_raw, InverseChiSquareTexture, SampleSet, SeededStream, TextureSampler};
use crate::shape::{frobenius_distance_of_inverses, sphericity, ShapeError, ShapeMatrix};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape matrix: {0}")]
    Shape(#[from] ShapeError),

    #[error("reading shape file: {0}")]
    Csv(#[from] CsvError),

    #[error(transparent)]
    Bound(#[from] BoundError),
}

fn config_err(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Acg,
    CompoundGaussian,
}

impl FromStr for Model {
    type Err = ExperimentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "acg" => Ok(Model::Acg),
            "compound-gaussian" => Ok(Model::CompoundGaussian),
            other => Err(config_err(format!(
                "unknown model {other:?} (expected acg or compound-gaussian)"
            ))),
        }
    }
}

impl Model {
    pub fn as_str(&self) -> &'static str {
        match self {
            Model::Acg => "acg",
            Model::CompoundGaussian => "compound-gaussian",
        }
    }
}

/// `identity`, `diag:v1,v2,...` or `file:<path>`.
#[derive(Debug, Clone, PartialEq)]
pub enum ShapeSpec {
    Identity,
    Diag(Vec<f64>),
    File(PathBuf),
}

impl FromStr for ShapeSpec {
    type Err = ExperimentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "identity" {
            return Ok(ShapeSpec::Identity);
        }
        if let Some(rest) = s.strip_prefix("diag:") {
            let values = rest
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| config_err(format!("bad diagonal entry {v:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(ShapeSpec::Diag(values));
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(ShapeSpec::File(PathBuf::from(path)));
        }
        Err(config_err(format!("unknown shape spec {s:?}")))
    }
}

impl ShapeSpec {
    /// Builds the `p x p` shape matrix; fixed-size specs must match `p`.
    pub fn resolve(&self, p: usize) -> Result<ShapeMatrix, ExperimentError> {
        let shape = match self {
            ShapeSpec::Identity => ShapeMatrix::identity(p),
            ShapeSpec::Diag(d) => ShapeMatrix::from_diagonal(d)?,
            ShapeSpec::File(path) => ShapeMatrix::new(read_matrix_file(path)?)?,
        };
        if shape.dim() != p {
            return Err(config_err(format!(
                "shape has dimension {}, grid point needs {p}",
                shape.dim()
            )));
        }
        Ok(shape)
    }

    pub fn describe(&self) -> String {
        match self {
            ShapeSpec::Identity => "identity".into(),
            ShapeSpec::Diag(d) => format!("diag:{}", d.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")),
            ShapeSpec::File(p) => format!("file:{}", p.display()),
        }
    }
}

/// Parses `start:stop:step` into the inclusive arithmetic sequence.
pub fn parse_grid(s: &str) -> Result<Vec<usize>, ExperimentError> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums = parts
        .iter()
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| config_err(format!("bad grid {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (start, stop, step) = match nums.as_slice() {
        [single] => (*single, *single, 1),
        [start, stop, step] => (*start, *stop, *step),
        _ => return Err(config_err(format!("grid must be start:stop:step, got {s:?}"))),
    };
    if step == 0 || stop < start {
        return Err(config_err(format!("empty grid {s:?}")));
    }
    Ok((start..=stop).step_by(step).collect())
}

/// Which of `n` or `p` varies across grid points.
#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    SampleSize { p: usize, ns: Vec<usize> },
    Dimension { n: usize, ps: Vec<usize> },
}

impl Sweep {
    /// `(x, n, p)` for every grid point.
    pub fn points(&self) -> Vec<(usize, usize, usize)> {
        match self {
            Sweep::SampleSize { p, ns } => ns.iter().map(|&n| (n, n, *p)).collect(),
            Sweep::Dimension { n, ps } => ps.iter().map(|&p| (p, *n, p)).collect(),
        }
    }

    fn axis(&self) -> &'static str {
        match self {
            Sweep::SampleSize { .. } => "n",
            Sweep::Dimension { .. } => "p",
        }
    }
}

/// Degrees of freedom of the default heavy-tailed texture (multivariate Cauchy).
pub const DEFAULT_TEXTURE_DOF: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: Model,
    pub shape: ShapeSpec,
    pub sweep: Sweep,
    pub trials: usize,
    pub master_seed: u64,
    pub confidences: Vec<f64>,
    pub solver: SolverConfig,
    pub texture_dof: f64,
}

impl ExperimentConfig {
    pub fn new(sweep: Sweep) -> Self {
        Self {
            model: Model::Acg,
            shape: ShapeSpec::Identity,
            sweep,
            trials: 200,
            master_seed: 0,
            confidences: vec![0.95, 0.5],
            solver: SolverConfig::default(),
            texture_dof: DEFAULT_TEXTURE_DOF,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let points = self.sweep.points();
        if points.is_empty() {
            return Err(config_err("grid is empty"));
        }
        if self.trials == 0 {
            return Err(config_err("trials must be at least 1"));
        }
        for &(_, n, p) in &points {
            if p == 0 || n <= p {
                return Err(config_err(format!("grid point n = {n}, p = {p} violates n > p >= 1")));
            }
        }
        for &c in &self.confidences {
            if !(c > 0.0 && c < 1.0) {
                return Err(config_err(format!("confidence {c} outside (0, 1)")));
            }
        }
        if !(self.texture_dof > 0.0) {
            return Err(config_err("texture dof must be positive"));
        }
        if self.solver.trace_target.is_some() {
            return Err(config_err(
                "campaigns fix Tr(T^-1) = Tr(Theta0^-1); trace_target cannot be overridden",
            ));
        }
        Ok(())
    }
}

/// One Monte Carlo trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub x: usize,
    pub n: usize,
    pub p: usize,
    pub trial: usize,
    pub master_seed: u64,
    pub stream_index: u64,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    /// `||T^-1 - Theta0^-1||_F`; NaN when the iteration produced no estimate.
    pub error: f64,
    /// Same metric for the trace-normalized SCM of the raw draws.
    pub scm_error: f64,
}

/// Everything a single trial needs besides its indices.
pub struct TrialSetup<'a> {
    pub model: Model,
    pub theta0: &'a ShapeMatrix,
    pub texture: &'a dyn TextureSampler,
    pub solver: SolverConfig,
}

impl TrialSetup<'_> {
    fn draw(&self, n: usize, stream: &SeededStream) -> nalgebra::DMatrix<f64> {
        let texture = match self.model {
            Model::Acg => None,
            Model::CompoundGaussian => Some(self.texture),
        };
        draw_raw(self.theta0, texture, n, stream).expect("n >= 1 and textures are positive")
    }

    /// Runs trial `trial` at sample size `n`. Reproducible from
    /// `(master_seed, trial, n, setup)` alone.
    pub fn run(&self, x: usize, n: usize, trial: usize, master_seed: u64) -> TrialRecord {
        let p = self.theta0.dim();
        let stream = SeededStream::new(master_seed, trial as u64);
        let raw = self.draw(n, &stream);
        let target = self.theta0.trace_of_inverse();
        let samples: SampleSet = crate::sampling::normalize_rows(&raw).expect("Gaussian rows are nonzero");
        let solver = self.solver.with_trace_target(target);
        let (converged, iterations, residual, error) = match tyler_iterate(&samples, &solver) {
            Ok(r) => (
                r.converged,
                r.iterations,
                r.residual,
                frobenius_distance_of_inverses(&r.shape, self.theta0).expect("same dimension"),
            ),
            Err(_) => (false, 0, f64::NAN, f64::NAN),
        };
        let scm_error = scm_from_rows(&raw, target)
            .ok()
            .and_then(|s| frobenius_distance_of_inverses(&s, self.theta0).ok())
            .unwrap_or(f64::NAN);
        TrialRecord {
            x,
            n,
            p,
            trial,
            master_seed,
            stream_index: trial as u64,
            converged,
            iterations,
            residual,
            error,
            scm_error,
        }
    }
}

/// Nearest-rank quantile of sorted data: the value at 1-based rank
/// `ceil(q * len)`, clamped to `[1, len]`.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let len = sorted.len();
    let rank = ((q * len as f64).ceil() as usize).clamp(1, len);
    sorted[rank - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub x: usize,
    pub n: usize,
    pub p: usize,
    pub trials: usize,
    pub converged: usize,
    /// Median error of converged trials.
    pub median: f64,
    /// Nearest-rank quantile of converged errors at each configured confidence.
    pub quantiles: Vec<f64>,
    /// Optimized radius at each configured confidence; `None` if infeasible.
    pub bounds: Vec<Option<f64>>,
    pub scm_median: f64,
}

#[derive(Debug, Clone)]
pub struct Campaign {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialRecord>,
    pub summary: Vec<SummaryRow>,
    /// Free-form lines written as `# ` comments at the top of each CSV.
    pub notes: Vec<String>,
}

pub fn run_campaign(config: &ExperimentConfig) -> Result<Campaign, ExperimentError> {
    config.validate()?;
    let points = config.sweep.points();
    let texture = InverseChiSquareTexture::new(config.texture_dof);

    let mut shapes: BTreeMap<usize, ShapeMatrix> = BTreeMap::new();
    for &(_, _, p) in &points {
        if let std::collections::btree_map::Entry::Vacant(slot) = shapes.entry(p) {
            slot.insert(config.shape.resolve(p)?);
        }
    }

    let jobs: Vec<(usize, usize, usize, usize)> = points
        .iter()
        .flat_map(|&(x, n, p)| (0..config.trials).map(move |k| (x, n, p, k)))
        .collect();
    let mut trials: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|&(x, n, p, k)| {
            let setup = TrialSetup {
                model: config.model,
                theta0: &shapes[&p],
                texture: &texture,
                solver: config.solver,
            };
            setup.run(x, n, k, config.master_seed)
        })
        .collect();
    trials.sort_by_key(|r| (r.x, r.trial));

    let mut summary = Vec::with_capacity(points.len());
    for &(x, n, p) in &points {
        let stats = sphericity(&shapes[&p]);
        let rows: Vec<&TrialRecord> = trials.iter().filter(|r| r.x == x).collect();
        summary.push(summarize(
            x,
            n,
            p,
            &rows,
            &config.confidences,
            stats.cos_phi0,
            stats.lambda_min,
        )?);
    }

    let notes = vec![
        format!(
            "model={} shape={} trials={} seed={}",
            config.model.as_str(),
            config.shape.describe(),
            config.trials,
            config.master_seed
        ),
        format!(
            "solver tol={} max_iter={}; Tr(T^-1) fixed to Tr(Theta0^-1)",
            fmt_f64(config.solver.tol),
            config.solver.max_iter
        ),
        "error = ||T^-1 - Theta0^-1||_F; quantiles by nearest rank over converged trials".into(),
    ];
    Ok(Campaign {
        config: config.clone(),
        trials,
        summary,
        notes,
    })
}

fn summarize(
    x: usize,
    n: usize,
    p: usize,
    rows: &[&TrialRecord],
    confidences: &[f64],
    cos_phi0: f64,
    lambda_min: f64,
) -> Result<SummaryRow, ExperimentError> {
    let mut errors: Vec<f64> = rows.iter().filter(|r| r.converged).map(|r| r.error).collect();
    errors.sort_by(f64::total_cmp);
    let mut scm: Vec<f64> = rows.iter().map(|r| r.scm_error).filter(|e| e.is_finite()).collect();
    scm.sort_by(f64::total_cmp);

    let quantile = |data: &[f64], q: f64| {
        if data.is_empty() {
            f64::NAN
        } else {
            nearest_rank(data, q)
        }
    };
    let mut bounds = Vec::with_capacity(confidences.len());
    for &confidence in confidences {
        let q = BoundQuery {
            n,
            p,
            cos_phi0,
            lambda_min,
            confidence,
        };
        bounds.push(optimize_bound(&q)?.radius);
    }
    Ok(SummaryRow {
        x,
        n,
        p,
        trials: rows.len(),
        converged: errors.len(),
        median: quantile(&errors, 0.5),
        quantiles: confidences.iter().map(|&c| quantile(&errors, c)).collect(),
        bounds,
        scm_median: quantile(&scm, 0.5),
    })
}

fn header_comments(out: &mut String, notes: &[String]) {
    for note in notes {
        let _ = writeln!(out, "# {note}");
    }
}

fn conf_label(c: f64) -> String {
    format!("{c}")
}

pub fn trials_csv(campaign: &Campaign) -> String {
    let mut out = String::new();
    header_comments(&mut out, &campaign.notes);
    let axis = campaign.config.sweep.axis();
    let _ = writeln!(
        out,
        "x_{axis},n,p,trial,master_seed,stream_index,converged,iterations,residual,error,scm_error"
    );
    for r in &campaign.trials {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.x,
            r.n,
            r.p,
            r.trial,
            r.master_seed,
            r.stream_index,
            r.converged,
            r.iterations,
            fmt_f64(r.residual),
            fmt_f64(r.error),
            fmt_f64(r.scm_error)
        );
    }
    out
}

/// Plot-ready summary: `x, median, q_<c>..., bound_<c>...` then bookkeeping.
pub fn summary_csv(campaign: &Campaign) -> String {
    let mut out = String::new();
    header_comments(&mut out, &campaign.notes);
    let confs = &campaign.config.confidences;
    let axis = campaign.config.sweep.axis();
    let mut cols = vec![format!("x_{axis}"), "median".to_string()];
    cols.extend(confs.iter().map(|&c| format!("q_{}", conf_label(c))));
    cols.extend(confs.iter().map(|&c| format!("bound_{}", conf_label(c))));
    cols.extend(["n", "p", "trials", "converged", "scm_median"].map(String::from));
    let _ = writeln!(out, "{}", cols.join(","));
    for row in &campaign.summary {
        let mut fields = vec![row.x.to_string(), fmt_f64(row.median)];
        fields.extend(row.quantiles.iter().map(|&q| fmt_f64(q)));
        fields.extend(row.bounds.iter().map(|b| b.map(fmt_f64).unwrap_or_default()));
        fields.extend([
            row.n.to_string(),
            row.p.to_string(),
            row.trials.to_string(),
            row.converged.to_string(),
            fmt_f64(row.scm_median),
        ]);
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

/// Result of scanning `n` upward until the bound becomes feasible.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityScan {
    pub p: usize,
    pub confidence: f64,
    pub start: usize,
    pub step: usize,
    pub first_feasible: usize,
}

/// Smallest `n = start + k * step` at which the identity-shape bound at
/// `confidence` is feasible.
pub fn scan_first_feasible(
    p: usize,
    confidence: f64,
    start: usize,
    step: usize,
) -> Result<FeasibilityScan, ExperimentError> {
    let mut n = start.max(p + 1);
    loop {
        if optimize_bound(&BoundQuery::identity(n, p, confidence))?.feasible {
            return Ok(FeasibilityScan {
                p,
                confidence,
                start,
                step,
                first_feasible: n,
            });
        }
        n += step;
        if n > 100_000_000 {
            return Err(config_err("bound never becomes feasible"));
        }
    }
}

pub const FIG1_P: usize = 50;
pub const FIG1_N_MAX: usize = 30_000;
pub const FIG1_POINTS: usize = 5;
pub const FIG2_N: usize = 2500;
pub const DEFAULT_TRIALS: usize = 200;

/// The `n`-sweep preset at `p = 50`, identity shape. The grid starts at the
/// first `n` (multiple of 100) where the 0.95 bound is feasible and runs to
/// 30000 in `FIG1_POINTS` log-spaced steps rounded to multiples of 100.
pub fn fig1_config(trials: usize, master_seed: u64) -> Result<(ExperimentConfig, FeasibilityScan), ExperimentError> {
    let scan = scan_first_feasible(FIG1_P, 0.95, 1000, 100)?;
    let (lo, hi) = ((scan.first_feasible as f64).ln(), (FIG1_N_MAX as f64).ln());
    let mut ns: Vec<usize> = (0..FIG1_POINTS)
        .map(|k| {
            let v = (lo + (hi - lo) * k as f64 / (FIG1_POINTS - 1) as f64).exp();
            ((v / 100.0).round() * 100.0) as usize
        })
        .collect();
    ns[0] = scan.first_feasible;
    ns[FIG1_POINTS - 1] = FIG1_N_MAX;
    ns.dedup();
    let mut config = ExperimentConfig::new(Sweep::SampleSize { p: FIG1_P, ns });
    config.trials = trials;
    config.master_seed = master_seed;
    Ok((config, scan))
}

/// The `p`-sweep preset at `n = 2500`, identity shape, `p = 5, 10, ..., 50`.
pub fn fig2_config(trials: usize, master_seed: u64) -> ExperimentConfig {
    let mut config = ExperimentConfig::new(Sweep::Dimension {
        n: FIG2_N,
        ps: (5..=50).step_by(5).collect(),
    });
    config.trials = trials;
    config.master_seed = master_seed;
    config
}

pub fn run_fig1(trials: usize, master_seed: u64) -> Result<Campaign, ExperimentError> {
    let (config, scan) = fig1_config(trials, master_seed)?;
    let mut campaign = run_campaign(&config)?;
    campaign.notes.insert(
        0,
        format!(
            "n-sweep preset p={}: scanned n from {} in steps of {}; 0.95 bound first feasible at n={}",
            scan.p, scan.start, scan.step, scan.first_feasible
        ),
    );
    Ok(campaign)
}

pub fn run_fig2(trials: usize, master_seed: u64) -> Result<Campaign, ExperimentError> {
    let mut campaign = run_campaign(&fig2_config(trials, master_seed))?;
    campaign.notes.insert(
        0,
        format!("p-sweep preset n={FIG2_N}: bound columns blank where infeasible"),
    );
    Ok(campaign)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
