//! Seeded generators for angular central Gaussian and compound-Gaussian data.
//!
//! Every generator emits unit-norm rows. Randomness comes from a ChaCha20
//! stream keyed by `(master_seed, stream_index)`, so trial `k` of a campaign
//! draws the same numbers no matter which worker runs it or in what order.
//!
//! Per sample, a generator consumes the texture draw first (if any), then the
//! `p` standard normal coordinates in index order.

use nalgebra::{DMatrix, DVectorView};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::shape::ShapeMatrix;

/// Raw rows with a Euclidean norm below this are rejected.
pub const ZERO_NORM_THRESHOLD: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleError {
    #[error("sample count must be at least 1")]
    Empty,

    #[error("sample dimension must be at least 1")]
    ZeroDimension,

    #[error("row {row} is (numerically) the zero vector")]
    ZeroSample { row: usize },

    #[error("row {row} has a non-finite entry")]
    NonFinite { row: usize },

    #[error("texture draw {value} for sample {row} is not strictly positive")]
    NonPositiveTexture { row: usize, value: f64 },

    #[error("row {row} has length {found}, expected {expected}")]
    RaggedRow { row: usize, expected: usize, found: usize },
}

/// Identifies one reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct SeededStream {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl SeededStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        Self {
            master_seed,
            stream_index,
        }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_index);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Acg,
    CompoundGaussian,
    External,
}

/// `n` unit-norm samples in dimension `p`.
///
/// Stored sample-major: sample `i` occupies `data[i*p .. (i+1)*p]`, which is
/// also the column-major layout of the `p x n` matrix whose columns are the
/// samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    p: usize,
    data: Vec<f64>,
    provenance: Provenance,
}

impl SampleSet {
    pub fn n(&self) -> usize {
        self.data.len() / self.p
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.p)
    }

    /// The `p x n` matrix whose columns are the samples.
    pub fn columns(&self) -> nalgebra::DMatrixView<'_, f64> {
        nalgebra::DMatrixView::from_slice(&self.data, self.p, self.n())
    }

    /// The `n x p` matrix whose rows are the samples.
    pub fn to_rows(&self) -> DMatrix<f64> {
        self.columns().transpose()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Each sample listed twice, in order.
    pub fn duplicated(&self) -> Self {
        let mut data = Vec::with_capacity(2 * self.data.len());
        for x in self.iter() {
            data.extend_from_slice(x);
            data.extend_from_slice(x);
        }
        Self { data, ..self.clone() }
    }

    /// Applies `q` to every sample. `q` must be orthogonal for the result to
    /// stay on the sphere; rows are renormalized regardless.
    pub fn transformed(&self, q: &DMatrix<f64>) -> Self {
        let mapped = q * self.columns();
        let mut out = Self {
            p: self.p,
            data: mapped.as_slice().to_vec(),
            provenance: self.provenance,
        };
        for x in out.data.chunks_exact_mut(self.p) {
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            x.iter_mut().for_each(|v| *v /= norm);
        }
        out
    }
}

/// Positive-scalar generator for compound-Gaussian textures.
pub trait TextureSampler {
    fn draw(&self, rng: &mut dyn RngCore) -> f64;
}

/// Deterministic texture. Consumes no randomness.
#[derive(Debug, Clone, Copy)]
pub struct ConstantTexture(pub f64);

impl TextureSampler for ConstantTexture {
    fn draw(&self, _rng: &mut dyn RngCore) -> f64 {
        self.0
    }
}

/// `tau = dof / chi2(dof)`: multivariate Student-t texture (Cauchy at `dof = 1`).
#[derive(Debug, Clone, Copy)]
pub struct InverseChiSquareTexture {
    dist: ChiSquared<f64>,
    dof: f64,
}

impl InverseChiSquareTexture {
    pub fn new(dof: f64) -> Self {
        assert!(dof > 0.0, "degrees of freedom must be positive");
        Self {
            dist: ChiSquared::new(dof).expect("positive dof"),
            dof,
        }
    }
}

impl TextureSampler for InverseChiSquareTexture {
    fn draw(&self, rng: &mut dyn RngCore) -> f64 {
        self.dof / self.dist.sample(rng)
    }
}

/// Raw compound-Gaussian rows `sqrt(tau_i) * theta0^{1/2} z_i` as an `n x p`
/// matrix. With `texture = None` these are plain Gaussian rows.
pub fn draw_raw(
    shape: &ShapeMatrix,
    texture: Option<&dyn TextureSampler>,
    n: usize,
    stream: &SeededStream,
) -> Result<DMatrix<f64>, SampleError> {
    if n == 0 {
        return Err(SampleError::Empty);
    }
    let p = shape.dim();
    let root = shape.sqrt_factor();
    let mut rng = stream.rng();
    let mut z = vec![0.0; p];
    let mut raw = DMatrix::zeros(n, p);
    for i in 0..n {
        let scale = match texture {
            Some(t) => {
                let tau = t.draw(&mut rng);
                if !(tau > 0.0) {
                    return Err(SampleError::NonPositiveTexture { row: i, value: tau });
                }
                tau.sqrt()
            }
            None => 1.0,
        };
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let y = root * DVectorView::from_slice(&z, p);
        for j in 0..p {
            raw[(i, j)] = scale * y[j];
        }
    }
    Ok(raw)
}

/// `n` i.i.d. draws from the angular central Gaussian law with shape `shape`.
pub fn sample_acg(shape: &ShapeMatrix, n: usize, stream: &SeededStream) -> Result<SampleSet, SampleError> {
    let raw = draw_raw(shape, None, n, stream)?;
    normalize_with(&raw, Provenance::Acg)
}

/// Compound-Gaussian draws, normalized to the sphere.
pub fn sample_compound_gaussian(
    shape: &ShapeMatrix,
    texture: &dyn TextureSampler,
    n: usize,
    stream: &SeededStream,
) -> Result<SampleSet, SampleError> {
    let raw = draw_raw(shape, Some(texture), n, stream)?;
    normalize_with(&raw, Provenance::CompoundGaussian)
}

/// Divides each row of an `n x p` array by its Euclidean norm.
pub fn normalize_rows(raw: &DMatrix<f64>) -> Result<SampleSet, SampleError> {
    normalize_with(raw, Provenance::External)
}

fn normalize_with(raw: &DMatrix<f64>, provenance: Provenance) -> Result<SampleSet, SampleError> {
    let (n, p) = raw.shape();
    if n == 0 {
        return Err(SampleError::Empty);
    }
    if p == 0 {
        return Err(SampleError::ZeroDimension);
    }
    let mut data = Vec::with_capacity(n * p);
    for (i, row) in raw.row_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(SampleError::NonFinite { row: i });
        }
        // Scale by the largest magnitude first so tiny or huge rows do not
        // under/overflow when squared.
        let amax = row.amax();
        if amax < ZERO_NORM_THRESHOLD {
            return Err(SampleError::ZeroSample { row: i });
        }
        let norm = amax * row.iter().map(|v| (v / amax).powi(2)).sum::<f64>().sqrt();
        if norm < ZERO_NORM_THRESHOLD {
            return Err(SampleError::ZeroSample { row: i });
        }
        data.extend(row.iter().map(|v| v / norm));
    }
    Ok(SampleSet { p, data, provenance })
}

/// Builds an `n x p` array from row vectors, checking they are rectangular.
pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, SampleError> {
    let n = rows.len();
    if n == 0 {
        return Err(SampleError::Empty);
    }
    let p = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != p {
            return Err(SampleError::RaggedRow {
                row: i,
                expected: p,
                found: r.len(),
            });
        }
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}
