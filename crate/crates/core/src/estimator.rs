//! Tyler's fixed-point shape estimator with a trace constraint on its inverse,
//! plus a trace-normalized sample covariance baseline.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::sampling::SampleSet;
use crate::shape::{ShapeError, ShapeMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("need more samples than dimensions: n = {n}, p = {p}")]
    NotEnoughSamples { n: usize, p: usize },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        /// Residual of every iterate that was evaluated.
        history: Vec<f64>,
    },

    #[error("sample covariance is singular")]
    SingularScm,

    #[error("quadratic form x^T T^-1 x = {value:e} underflows")]
    QuadFormUnderflow { value: f64 },

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(&'static str),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Relative Frobenius fixed-point residual at which to stop.
    pub tol: f64,
    pub max_iter: usize,
    /// Requested `Tr(T^-1)`; `None` means `p`.
    pub trace_target: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 1000,
            trace_target: None,
        }
    }
}

impl SolverConfig {
    pub fn with_trace_target(mut self, target: f64) -> Self {
        self.trace_target = Some(target);
        self
    }

    fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.tol > 0.0) {
            return Err(EstimatorError::InvalidConfig("tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(EstimatorError::InvalidConfig("max_iter must be at least 1"));
        }
        if let Some(t) = self.trace_target {
            if !(t > 0.0 && t.is_finite()) {
                return Err(EstimatorError::InvalidConfig("trace_target must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EstimatorResult {
    pub shape: ShapeMatrix,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub trace_target: f64,
}

/// Runs the iteration and reports the last iterate whether or not it converged.
///
/// Starting from `T = I`, each step maps `T` to
/// `(p/n) sum_i x_i x_i^T / (x_i^T T^-1 x_i)` and rescales so that
/// `Tr(T^-1) = p`. The relative residual `||T - F(T)||_F / ||T||_F` of the
/// current iterate is the stopping rule. On exit the iterate is rescaled to
/// the requested trace target.
///
/// If an update loses positive definiteness (samples confined to a proper
/// subspace) the previous iterate is returned with `converged = false`.
pub fn tyler_iterate(samples: &SampleSet, config: &SolverConfig) -> Result<EstimatorResult, EstimatorError> {
    tyler_iterate_with(samples, config, |_, _| {})
}

/// [`tyler_iterate`] with a callback receiving each iterate `(k, T_k)`,
/// normalized to `Tr(T_k^-1) = p`.
pub fn tyler_iterate_with<F>(
    samples: &SampleSet,
    config: &SolverConfig,
    observe: F,
) -> Result<EstimatorResult, EstimatorError>
where
    F: FnMut(usize, &DMatrix<f64>),
{
    run(samples, config, observe).map(|(r, _)| r)
}

/// Tyler's estimate; fails with [`EstimatorError::NotConverged`] if the
/// residual does not reach `config.tol` within `config.max_iter` iterations.
pub fn tyler_estimate(samples: &SampleSet, config: &SolverConfig) -> Result<EstimatorResult, EstimatorError> {
    let (result, history) = run(samples, config, |_, _| {})?;
    if result.converged {
        Ok(result)
    } else {
        Err(EstimatorError::NotConverged {
            iterations: result.iterations,
            residual: result.residual,
            history,
        })
    }
}

fn run<F>(
    samples: &SampleSet,
    config: &SolverConfig,
    mut observe: F,
) -> Result<(EstimatorResult, Vec<f64>), EstimatorError>
where
    F: FnMut(usize, &DMatrix<f64>),
{
    config.validate()?;
    let (n, p) = (samples.n(), samples.p());
    if n <= p {
        return Err(EstimatorError::NotEnoughSamples { n, p });
    }
    let target = config.trace_target.unwrap_or(p as f64);
    let pf = p as f64;
    let x = samples.columns();

    let mut t = DMatrix::<f64>::identity(p, p);
    let mut t_inv = DMatrix::<f64>::identity(p, p);
    let mut history = Vec::new();
    let mut converged = false;

    for k in 0..config.max_iter {
        observe(k, &t);
        let update = fixed_point_map(&x, &t_inv, pf)?;
        let residual = (&t - &update).norm() / t.norm();
        history.push(residual);
        if residual <= config.tol {
            converged = true;
            break;
        }
        let Some(update_inv) = spd_inverse(&update) else {
            break;
        };
        let c = update_inv.trace() / pf;
        t = update * c;
        t_inv = update_inv / c;
    }

    let iterations = history.len();
    let residual = *history.last().expect("at least one iteration");
    // Tr((sT)^-1) = Tr(T^-1)/s.
    let s = t_inv.trace() / target;
    let shape = match ShapeMatrix::new(t * s) {
        Ok(shape) => shape,
        Err(ShapeError::NotPositiveDefinite { .. }) => {
            return Err(EstimatorError::NotConverged {
                iterations,
                residual,
                history,
            })
        }
        Err(e) => return Err(e.into()),
    };
    let result = EstimatorResult {
        shape,
        iterations,
        residual,
        converged,
        trace_target: target,
    };
    Ok((result, history))
}

/// `(p/n) sum_i x_i x_i^T / (x_i^T T^-1 x_i)` with samples as columns of `x`.
fn fixed_point_map(
    x: &nalgebra::DMatrixView<'_, f64>,
    t_inv: &DMatrix<f64>,
    p: f64,
) -> Result<DMatrix<f64>, EstimatorError> {
    let n = x.ncols();
    let y = t_inv * x;
    let mut weighted = x.clone_owned();
    for (i, mut col) in weighted.column_iter_mut().enumerate() {
        let q = y.column(i).dot(&x.column(i));
        if q < 1e-300 {
            return Err(EstimatorError::QuadFormUnderflow { value: q });
        }
        col /= q;
    }
    let mut m = &weighted * x.transpose();
    m *= p / n as f64;
    Ok((&m + m.transpose()) * 0.5)
}

fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let chol = Cholesky::new(m.clone())?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    // Cholesky pivots squared bound the eigenvalue range from inside.
    if !(lo > 0.0) || (lo / hi).powi(2) <= crate::shape::PD_RELATIVE_CUTOFF {
        return None;
    }
    let inv = chol.inverse();
    Some((&inv + inv.transpose()) * 0.5)
}

/// `||T - (p/n) sum_i x_i x_i^T / (x_i^T T^-1 x_i)||_F / ||T||_F`.
pub fn fixed_point_residual(t: &ShapeMatrix, samples: &SampleSet) -> Result<f64, EstimatorError> {
    if t.dim() != samples.p() {
        return Err(EstimatorError::DimensionMismatch {
            left: t.dim(),
            right: samples.p(),
        });
    }
    let update = fixed_point_map(&samples.columns(), t.inverse(), samples.p() as f64)?;
    Ok((t.matrix() - update).norm() / t.matrix().norm())
}

/// Uncentered sample covariance `(1/n) sum_i x_i x_i^T`, rescaled so that
/// `Tr(S^-1) = trace_target`.
pub fn scm_estimate(samples: &SampleSet, trace_target: f64) -> Result<ShapeMatrix, EstimatorError> {
    let (n, p) = (samples.n(), samples.p());
    if n <= p {
        return Err(EstimatorError::NotEnoughSamples { n, p });
    }
    let x = samples.columns();
    scm_from_gram(x * x.transpose() / n as f64, trace_target)
}

/// [`scm_estimate`] on raw (unnormalized) rows of an `n x p` array.
pub fn scm_from_rows(rows: &DMatrix<f64>, trace_target: f64) -> Result<ShapeMatrix, EstimatorError> {
    let (n, p) = rows.shape();
    if n <= p {
        return Err(EstimatorError::NotEnoughSamples { n, p });
    }
    scm_from_gram(rows.transpose() * rows / n as f64, trace_target)
}

fn scm_from_gram(gram: DMatrix<f64>, trace_target: f64) -> Result<ShapeMatrix, EstimatorError> {
    if !(trace_target > 0.0 && trace_target.is_finite()) {
        return Err(EstimatorError::InvalidConfig("trace_target must be positive"));
    }
    let s = match ShapeMatrix::new(gram) {
        Ok(s) => s,
        Err(ShapeError::NotPositiveDefinite { .. }) => return Err(EstimatorError::SingularScm),
        Err(e) => return Err(e.into()),
    };
    Ok(s.scaled(s.trace_of_inverse() / trace_target))
}

/// Weights `1 / (x_i^T T^-1 x_i)` for every sample.
pub fn tyler_weights(t: &ShapeMatrix, samples: &SampleSet) -> DVector<f64> {
    let x = samples.columns();
    let y = t.inverse() * x;
    DVector::from_iterator(
        samples.n(),
        (0..samples.n()).map(|i| 1.0 / y.column(i).dot(&x.column(i))),
    )
}
