//! Symmetric positive-definite shape matrices and the sphericity statistic.
//!
//! A [`ShapeMatrix`] is validated once and then immutable. Its eigendecomposition
//! is computed eagerly and every derived quantity (square root, inverse, norms,
//! determinant) is read off that single factorization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Relative asymmetry allowed before symmetrization.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Smallest admissible eigenvalue, relative to the largest one.
pub const PD_RELATIVE_CUTOFF: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is empty")]
    Empty,

    #[error("matrix has a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("matrix is not symmetric: max asymmetry {asymmetry:e} exceeds {allowed:e}")]
    NotSymmetric { asymmetry: f64, allowed: f64 },

    #[error("matrix is not positive definite: smallest eigenvalue {min:e}, largest {max:e}")]
    NotPositiveDefinite { min: f64, max: f64 },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

/// A symmetric positive-definite `p x p` matrix with cached spectral data.
///
/// Used for the true shape matrix, its inverse, and estimator outputs alike.
#[derive(Debug, Clone)]
pub struct ShapeMatrix {
    entries: DMatrix<f64>,
    // Descending.
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    sqrt_factor: DMatrix<f64>,
    inverse: DMatrix<f64>,
}

impl ShapeMatrix {
    /// Validates and factorizes `entries`.
    ///
    /// The input is symmetrized by averaging with its transpose after the
    /// asymmetry check, so tiny rounding asymmetries are accepted.
    pub fn new(entries: DMatrix<f64>) -> Result<Self, ShapeError> {
        let (rows, cols) = entries.shape();
        if rows != cols {
            return Err(ShapeError::NotSquare { rows, cols });
        }
        if rows == 0 {
            return Err(ShapeError::Empty);
        }
        for j in 0..cols {
            for i in 0..rows {
                if !entries[(i, j)].is_finite() {
                    return Err(ShapeError::NonFinite { row: i, col: j });
                }
            }
        }
        let scale = entries.amax();
        let mut asymmetry = 0.0_f64;
        for j in 0..cols {
            for i in 0..j {
                asymmetry = asymmetry.max((entries[(i, j)] - entries[(j, i)]).abs());
            }
        }
        let allowed = SYMMETRY_TOL * scale;
        if asymmetry > allowed {
            return Err(ShapeError::NotSymmetric { asymmetry, allowed });
        }
        let symmetric = (&entries + entries.transpose()) * 0.5;
        Self::from_symmetric(symmetric)
    }

    fn from_symmetric(entries: DMatrix<f64>) -> Result<Self, ShapeError> {
        let p = entries.nrows();
        let eig = SymmetricEigen::new(entries.clone());
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let eigenvalues = DVector::from_iterator(p, order.iter().map(|&k| eig.eigenvalues[k]));
        let mut eigenvectors = DMatrix::zeros(p, p);
        for (dst, &src) in order.iter().enumerate() {
            eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
        }

        let max = eigenvalues[0];
        let min = eigenvalues[p - 1];
        if !(max > 0.0) || min <= PD_RELATIVE_CUTOFF * max {
            return Err(ShapeError::NotPositiveDefinite { min, max });
        }

        let sqrt_factor = spectral_function(&eigenvectors, &eigenvalues, f64::sqrt);
        let inverse = spectral_function(&eigenvectors, &eigenvalues, |l| 1.0 / l);
        Ok(Self {
            entries,
            eigenvalues,
            eigenvectors,
            sqrt_factor,
            inverse,
        })
    }

    pub fn identity(p: usize) -> Self {
        Self::from_diagonal(&vec![1.0; p]).expect("identity is positive definite")
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self, ShapeError> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors, column `k` paired with `eigenvalues()[k]`.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// Symmetric square root.
    pub fn sqrt_factor(&self) -> &DMatrix<f64> {
        &self.sqrt_factor
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn condition_number(&self) -> f64 {
        self.lambda_max() / self.lambda_min()
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.sum()
    }

    pub fn trace_of_inverse(&self) -> f64 {
        self.eigenvalues.iter().map(|l| 1.0 / l).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.eigenvalues.norm()
    }

    pub fn log_det(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.ln()).sum()
    }

    /// The inverse as a shape matrix, reusing the cached eigenvectors.
    pub fn inverted(&self) -> Self {
        let p = self.dim();
        let eigenvalues = DVector::from_iterator(p, (0..p).rev().map(|k| 1.0 / self.eigenvalues[k]));
        let mut eigenvectors = DMatrix::zeros(p, p);
        for k in 0..p {
            eigenvectors.set_column(k, &self.eigenvectors.column(p - 1 - k));
        }
        let sqrt_factor = spectral_function(&eigenvectors, &eigenvalues, f64::sqrt);
        Self {
            entries: self.inverse.clone(),
            eigenvalues,
            eigenvectors,
            sqrt_factor,
            inverse: self.entries.clone(),
        }
    }

    /// `c * self` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        assert!(c > 0.0 && c.is_finite(), "scale must be positive and finite");
        Self {
            entries: &self.entries * c,
            eigenvalues: &self.eigenvalues * c,
            eigenvectors: self.eigenvectors.clone(),
            sqrt_factor: &self.sqrt_factor * c.sqrt(),
            inverse: &self.inverse / c,
        }
    }

    /// `q * self * q^T`.
    pub fn conjugated(&self, q: &DMatrix<f64>) -> Result<Self, ShapeError> {
        if q.nrows() != self.dim() || q.ncols() != self.dim() {
            return Err(ShapeError::DimensionMismatch {
                left: self.dim(),
                right: q.nrows(),
            });
        }
        Self::new(q * &self.entries * q.transpose())
    }
}

fn spectral_function(vectors: &DMatrix<f64>, values: &DVector<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let mut scaled = vectors.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(values[k]);
    }
    let m = scaled * vectors.transpose();
    (&m + m.transpose()) * 0.5
}

/// Sphericity summary of a true shape matrix `theta0`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SphericityStats {
    /// `Tr(Omega0) / (sqrt(p) * ||Omega0||_F)` with `Omega0 = theta0^-1`.
    pub cos_phi0: f64,
    pub kappa: f64,
    pub lambda_min: f64,
}

pub fn sphericity(theta0: &ShapeMatrix) -> SphericityStats {
    let p = theta0.dim() as f64;
    // Eigenvalues of Omega0 are reciprocals; normalize by the largest to keep
    // the ratio scale-free in floating point.
    let lmin = theta0.lambda_min();
    let (mut trace, mut sq) = (0.0, 0.0);
    for &l in theta0.eigenvalues().iter() {
        let w = lmin / l;
        trace += w;
        sq += w * w;
    }
    let cos_phi0 = (trace / (p.sqrt() * sq.sqrt())).min(1.0);
    SphericityStats {
        cos_phi0,
        kappa: theta0.condition_number(),
        lambda_min: lmin,
    }
}

/// `||a^-1 - b^-1||_F`.
pub fn frobenius_distance_of_inverses(a: &ShapeMatrix, b: &ShapeMatrix) -> Result<f64, ShapeError> {
    if a.dim() != b.dim() {
        return Err(ShapeError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok((a.inverse() - b.inverse()).norm())
}
