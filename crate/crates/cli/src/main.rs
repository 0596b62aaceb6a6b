//! `tyler`: command-line front end for estimation, bounds and Monte Carlo
//! campaigns.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
//! failure (for example a fixed-point iteration that did not converge).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tyler_shape::bounds::{optimize_bound, BoundQuery};
use tyler_shape::estimator::{tyler_iterate, EstimatorError, SolverConfig};
use tyler_shape::experiments::{
    parse_grid, run_campaign, run_fig1, run_fig2, summary_csv, trials_csv, Campaign, ExperimentConfig, Model,
    ShapeSpec, Sweep, DEFAULT_TRIALS,
};
use tyler_shape::io::{read_matrix_file, write_matrix_file};
use tyler_shape::sampling::{normalize_rows, SampleError};
use tyler_shape::shape::sphericity;

#[derive(Parser, Debug)]
#[command(
    name = "tyler",
    version,
    about = "Tyler's shape estimator, its error bounds and Monte Carlo checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the shape matrix of the rows of a CSV file.
    #[command(args_override_self = true)]
    Estimate(EstimateArgs),
    /// Optimized high-probability error radius.
    #[command(args_override_self = true)]
    Bound(BoundArgs),
    /// Monte Carlo campaign over an n-grid or a p-grid.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// The n-sweep at p = 50 with identity shape.
    #[command(name = "replicate-fig1", args_override_self = true)]
    ReplicateFig1(PresetArgs),
    /// The p-sweep at n = 2500 with identity shape.
    #[command(name = "replicate-fig2", args_override_self = true)]
    ReplicateFig2(PresetArgs),
}

#[derive(Args, Debug)]
struct SolverArgs {
    /// Relative fixed-point residual at which the iteration stops.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        let mut c = SolverConfig::default();
        if let Some(tol) = self.tol {
            c.tol = tol;
        }
        if let Some(m) = self.max_iter {
            c.max_iter = m;
        }
        c
    }
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Key=value file whose entries act as defaults for the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV with one sample per row.
    #[arg(long)]
    input: PathBuf,
    /// Where to write the estimate as a dense CSV matrix.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Value of Tr(T^-1); defaults to p.
    #[arg(long)]
    trace_target: Option<f64>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct BoundArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    /// Sphericity of the true shape; ignored when --shape is given.
    #[arg(long, default_value_t = 1.0)]
    cos_phi0: f64,
    /// Smallest eigenvalue of the true shape; ignored when --shape is given.
    #[arg(long, default_value_t = 1.0)]
    lambda_min: f64,
    /// identity, diag:v1,v2,... or file:path; overrides --cos-phi0 and --lambda-min.
    #[arg(long)]
    shape: Option<String>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for trials.csv and summary.csv.
    #[arg(long)]
    output: PathBuf,
    /// Dimension for an n-sweep.
    #[arg(long)]
    p: Option<usize>,
    /// Sample size for a p-sweep.
    #[arg(long)]
    n: Option<usize>,
    /// start:stop:step
    #[arg(long, conflicts_with = "p_grid")]
    n_grid: Option<String>,
    /// start:stop:step
    #[arg(long)]
    p_grid: Option<String>,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    /// acg or compound-gaussian
    #[arg(long, default_value = "acg")]
    model: String,
    /// identity, diag:v1,v2,... or file:path
    #[arg(long, default_value = "identity")]
    shape: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated confidence levels for the quantile and bound columns.
    #[arg(long, value_delimiter = ',', default_values_t = [0.95, 0.5])]
    confidence: Vec<f64>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct PresetArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for trials.csv and summary.csv.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure classes, each with its own exit code.
#[derive(Debug)]
enum Failure {
    Validation(anyhow::Error),
    Numerical(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

fn validation(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Validation(e.into())
}

fn main() -> ExitCode {
    let argv = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let code = f.code();
            let (Failure::Validation(e) | Failure::Numerical(e)) = f;
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

/// Reads `--config <file>` (if present) and splices its `key = value` lines
/// in as `--key value` right after the subcommand, so explicit flags, which
/// come later, take precedence.
fn expand_config(argv: Vec<String>) -> anyhow::Result<Vec<String>> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        if a == "--config" {
            path = Some(argv.get(i + 1).ok_or_else(|| anyhow!("--config needs a path"))?.clone());
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config file {path}"))?;
    let mut extra = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{path}:{}: expected key=value", k + 1))?;
        let key = key.trim().replace('_', "-");
        if key == "config" {
            return Err(anyhow!(
                "{path}:{}: config files cannot include other config files",
                k + 1
            ));
        }
        extra.push(format!("--{key}"));
        extra.push(value.trim().to_string());
    }
    let mut out = argv;
    let at = out.len().min(2);
    out.splice(at..at, extra);
    Ok(out)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Bound(a) => cmd_bound(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::ReplicateFig1(a) => {
            check_trials(a.trials)?;
            let campaign = run_fig1(a.trials, a.seed).map_err(validation)?;
            write_campaign(&a.output, &campaign)
        }
        Command::ReplicateFig2(a) => {
            check_trials(a.trials)?;
            let campaign = run_fig2(a.trials, a.seed).map_err(validation)?;
            write_campaign(&a.output, &campaign)
        }
    }
}

fn check_trials(trials: usize) -> Result<(), Failure> {
    if trials == 0 {
        return Err(validation(anyhow!("trials must be at least 1")));
    }
    Ok(())
}

fn cmd_estimate(a: &EstimateArgs) -> Result<(), Failure> {
    let raw = read_matrix_file(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))
        .map_err(validation)?;
    let samples = normalize_rows(&raw).map_err(|e| {
        let e = match e {
            SampleError::ZeroSample { row } => anyhow!("data row {} is the zero vector", row + 1),
            other => anyhow!(other),
        };
        validation(e.context(format!("ingesting {}", a.input.display())))
    })?;
    let mut solver = a.solver.config();
    solver.trace_target = a.trace_target;
    let result = tyler_iterate(&samples, &solver).map_err(|e| match e {
        EstimatorError::NotEnoughSamples { .. } | EstimatorError::InvalidConfig(_) => validation(e),
        other => Failure::Numerical(other.into()),
    })?;

    let report = json!({
        "n": samples.n(),
        "p": samples.p(),
        "converged": result.converged,
        "iterations": result.iterations,
        "residual": result.residual,
        "trace_target": result.trace_target,
        "trace_of_inverse": result.shape.trace_of_inverse(),
        "sphericity": sphericity(&result.shape),
        "output": a.output.as_ref().map(|p| p.display().to_string()),
    });
    if !result.converged {
        eprintln!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
        return Err(Failure::Numerical(anyhow!(
            "no convergence after {} iterations (residual {:e})",
            result.iterations,
            result.residual
        )));
    }
    if let Some(out) = &a.output {
        write_matrix_file(out, result.shape.matrix())
            .with_context(|| format!("writing {}", out.display()))
            .map_err(Failure::Validation)?;
    }
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    Ok(())
}

fn cmd_bound(a: &BoundArgs) -> Result<(), Failure> {
    let (cos_phi0, lambda_min) = match &a.shape {
        Some(spec) => {
            let shape = spec
                .parse::<ShapeSpec>()
                .and_then(|s| s.resolve(a.p))
                .map_err(validation)?;
            let st = sphericity(&shape);
            (st.cos_phi0, st.lambda_min)
        }
        None => (a.cos_phi0, a.lambda_min),
    };
    let query = BoundQuery {
        n: a.n,
        p: a.p,
        cos_phi0,
        lambda_min,
        confidence: a.confidence,
    };
    let result = optimize_bound(&query).map_err(validation)?;
    println!("{}", serde_json::to_string_pretty(&result).expect("serializable"));
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let sweep = match (&a.n_grid, &a.p_grid) {
        (Some(g), None) => {
            let p = a.p.ok_or_else(|| validation(anyhow!("--n-grid needs --p")))?;
            Sweep::SampleSize {
                p,
                ns: parse_grid(g).map_err(validation)?,
            }
        }
        (None, Some(g)) => {
            let n = a.n.ok_or_else(|| validation(anyhow!("--p-grid needs --n")))?;
            Sweep::Dimension {
                n,
                ps: parse_grid(g).map_err(validation)?,
            }
        }
        (None, None) => match (a.n, a.p) {
            (Some(n), Some(p)) => Sweep::SampleSize { p, ns: vec![n] },
            _ => {
                return Err(validation(anyhow!(
                    "give --n-grid with --p, --p-grid with --n, or both --n and --p"
                )))
            }
        },
        (Some(_), Some(_)) => return Err(validation(anyhow!("--n-grid and --p-grid are mutually exclusive"))),
    };
    let mut config = ExperimentConfig::new(sweep);
    config.model = a.model.parse::<Model>().map_err(validation)?;
    config.shape = a.shape.parse::<ShapeSpec>().map_err(validation)?;
    config.trials = a.trials;
    config.master_seed = a.seed;
    config.confidences = a.confidence.clone();
    config.solver = a.solver.config();
    let campaign = run_campaign(&config).map_err(validation)?;
    write_campaign(&a.output, &campaign)
}

fn write_campaign(dir: &Path, campaign: &Campaign) -> Result<(), Failure> {
    let io =
        |e: std::io::Error, what: &Path| Failure::Validation(anyhow!(e).context(format!("writing {}", what.display())));
    fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
    let trials = dir.join("trials.csv");
    let summary = dir.join("summary.csv");
    fs::write(&trials, trials_csv(campaign)).map_err(|e| io(e, &trials))?;
    fs::write(&summary, summary_csv(campaign)).map_err(|e| io(e, &summary))?;
    let report = json!({
        "trials_csv": trials.display().to_string(),
        "summary_csv": summary.display().to_string(),
        "grid_points": campaign.summary.len(),
        "trials": campaign.trials.len(),
        "converged": campaign.trials.iter().filter(|r| r.converged).count(),
    });
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    Ok(())
}
