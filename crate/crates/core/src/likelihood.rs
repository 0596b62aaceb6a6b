//! Angular central Gaussian negative log-likelihood in the inverse shape
//! parametrization `Omega = Theta^-1`, its derivatives as forms over the
//! symmetric matrices, and moments of ratios of quadratic forms.

use nalgebra::{DMatrix, DVectorView};
use thiserror::Error;

use crate::sampling::{sample_acg, SampleError, SampleSet, SeededStream};
use crate::shape::ShapeMatrix;

/// Quadratic forms `x^T Omega x` below this are treated as underflow.
pub const QUAD_FORM_FLOOR: f64 = 1e-300;

/// Tolerance on `|Tr U|` relative to `||U||_F` for a direction to count as traceless.
pub const TRACELESS_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LikelihoodError {
    #[error("quadratic form x^T Omega x = {value:e} underflows")]
    QuadFormUnderflow { value: f64 },

    #[error("sample is not unit norm (norm {norm})")]
    NotUnitNorm { norm: f64 },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("direction is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("direction has trace {trace:e}, expected traceless")]
    NotTraceless { trace: f64 },

    #[error("moment order {nu} has no closed form; use the Monte Carlo oracle")]
    UnsupportedOrder { nu: u32 },

    #[error("closed-form moments need Omega = I and Theta0 = I")]
    NotIdentity,

    #[error("moment bound needs an even order, got {nu}")]
    OddOrder { nu: u32 },

    #[error("Monte Carlo oracle needs at least {min} draws, got {got}")]
    TooFewDraws { min: usize, got: usize },

    #[error("sample set is empty")]
    NoSamples,

    #[error(transparent)]
    Sampling(#[from] SampleError),
}

/// A symmetric perturbation direction `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationDirection {
    u: DMatrix<f64>,
    traceless: bool,
}

impl PerturbationDirection {
    /// Symmetrizes `u` after checking asymmetry. The traceless flag is set
    /// automatically when `|Tr U| <= 1e-12 ||U||_F`.
    pub fn new(u: DMatrix<f64>) -> Result<Self, LikelihoodError> {
        if u.nrows() != u.ncols() {
            return Err(LikelihoodError::DimensionMismatch {
                left: u.nrows(),
                right: u.ncols(),
            });
        }
        let asymmetry = (&u - u.transpose()).amax();
        if asymmetry > 1e-12 * u.amax().max(f64::MIN_POSITIVE) {
            return Err(LikelihoodError::NotSymmetric { asymmetry });
        }
        let u = (&u + u.transpose()) * 0.5;
        let traceless = u.trace().abs() <= TRACELESS_TOL * u.norm();
        Ok(Self { u, traceless })
    }

    /// Like [`new`](Self::new) but fails unless the result is traceless.
    pub fn traceless(u: DMatrix<f64>) -> Result<Self, LikelihoodError> {
        let d = Self::new(u)?;
        if !d.traceless {
            return Err(LikelihoodError::NotTraceless { trace: d.u.trace() });
        }
        Ok(d)
    }

    /// Removes the trace component: `U - (Tr U / p) I`.
    pub fn project_traceless(u: &DMatrix<f64>) -> Result<Self, LikelihoodError> {
        let p = u.nrows();
        let sym = (u + u.transpose()) * 0.5;
        let shift = sym.trace() / p as f64;
        let mut m = sym;
        for i in 0..p {
            m[(i, i)] -= shift;
        }
        let mut d = Self::new(m)?;
        d.traceless = true;
        Ok(d)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn is_traceless(&self) -> bool {
        self.traceless
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }
}

impl From<&ShapeMatrix> for PerturbationDirection {
    fn from(s: &ShapeMatrix) -> Self {
        let u = s.matrix().clone();
        let traceless = u.trace().abs() <= TRACELESS_TOL * u.norm();
        Self { u, traceless }
    }
}

fn quad(a: &DMatrix<f64>, x: &[f64]) -> f64 {
    let v = DVectorView::from_slice(x, x.len());
    v.dot(&(a * v))
}

fn check_sample(p: usize, x: &[f64]) -> Result<(), LikelihoodError> {
    if x.len() != p {
        return Err(LikelihoodError::DimensionMismatch {
            left: p,
            right: x.len(),
        });
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(LikelihoodError::NotUnitNorm { norm });
    }
    Ok(())
}

fn check_dir(p: usize, u: &PerturbationDirection) -> Result<(), LikelihoodError> {
    if u.dim() != p {
        return Err(LikelihoodError::DimensionMismatch {
            left: p,
            right: u.dim(),
        });
    }
    Ok(())
}

fn guarded(q: f64) -> Result<f64, LikelihoodError> {
    if q < QUAD_FORM_FLOOR {
        Err(LikelihoodError::QuadFormUnderflow { value: q })
    } else {
        Ok(q)
    }
}

/// `Tr(A B)` for symmetric `A`, `B`.
fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// `Tr(M M)` for general square `M`.
fn trace_square(m: &DMatrix<f64>) -> f64 {
    m.component_mul(&m.transpose()).sum()
}

/// `-log|Omega| + p log(x^T Omega x)`.
pub fn neg_loglik(omega: &ShapeMatrix, x: &[f64]) -> Result<f64, LikelihoodError> {
    let p = omega.dim();
    check_sample(p, x)?;
    let q = guarded(quad(omega.matrix(), x))?;
    Ok(-omega.log_det() + p as f64 * q.ln())
}

/// Gradient of [`neg_loglik`] applied to `U`: `-Tr(Omega^-1 U) + p x^T U x / x^T Omega x`.
pub fn grad_form(omega: &ShapeMatrix, u: &PerturbationDirection, x: &[f64]) -> Result<f64, LikelihoodError> {
    let p = omega.dim();
    check_sample(p, x)?;
    check_dir(p, u)?;
    let q = guarded(quad(omega.matrix(), x))?;
    let r = quad(u.matrix(), x) / q;
    Ok(-trace_product(omega.inverse(), u.matrix()) + p as f64 * r)
}

/// Hessian of [`neg_loglik`] as a quadratic form:
/// `Tr(Omega^-1 U Omega^-1 U) - p (x^T U x / x^T Omega x)^2`.
pub fn hessian_form(omega: &ShapeMatrix, u: &PerturbationDirection, x: &[f64]) -> Result<f64, LikelihoodError> {
    let p = omega.dim();
    check_sample(p, x)?;
    check_dir(p, u)?;
    let q = guarded(quad(omega.matrix(), x))?;
    let r = quad(u.matrix(), x) / q;
    let m = omega.inverse() * u.matrix();
    Ok(trace_square(&m) - p as f64 * r * r)
}

/// Which pointwise form [`sample_avg`] averages.
#[derive(Debug, Clone, Copy)]
pub enum Form<'a> {
    NegLoglik,
    Gradient(&'a PerturbationDirection),
    Hessian(&'a PerturbationDirection),
}

/// Mean of a pointwise form over all samples.
///
/// The sample-independent trace terms are computed once; the result equals the
/// mean of the pointwise functions up to rounding.
pub fn sample_avg(form: Form<'_>, omega: &ShapeMatrix, samples: &SampleSet) -> Result<f64, LikelihoodError> {
    let p = omega.dim();
    if samples.p() != p {
        return Err(LikelihoodError::DimensionMismatch {
            left: p,
            right: samples.p(),
        });
    }
    if samples.n() == 0 {
        return Err(LikelihoodError::NoSamples);
    }
    let pf = p as f64;
    let nf = samples.n() as f64;
    match form {
        Form::NegLoglik => {
            let mut acc = 0.0;
            for x in samples.iter() {
                acc += guarded(quad(omega.matrix(), x))?.ln();
            }
            Ok(-omega.log_det() + pf * acc / nf)
        }
        Form::Gradient(u) => {
            check_dir(p, u)?;
            let mut acc = 0.0;
            for x in samples.iter() {
                acc += quad(u.matrix(), x) / guarded(quad(omega.matrix(), x))?;
            }
            Ok(-trace_product(omega.inverse(), u.matrix()) + pf * acc / nf)
        }
        Form::Hessian(u) => {
            check_dir(p, u)?;
            let mut acc = 0.0;
            for x in samples.iter() {
                let r = quad(u.matrix(), x) / guarded(quad(omega.matrix(), x))?;
                acc += r * r;
            }
            let m = omega.inverse() * u.matrix();
            Ok(trace_square(&m) - pf * acc / nf)
        }
    }
}

/// Expected Hessian form at the true parameter `Omega0 = theta0^-1`:
/// `[p Tr((Theta0 U)^2) - (Tr(Theta0 U))^2] / (p + 2)`.
///
/// Vanishes along `U = Omega0` and only there.
pub fn expected_hessian_at_truth(theta0: &ShapeMatrix, u: &PerturbationDirection) -> Result<f64, LikelihoodError> {
    let p = theta0.dim();
    check_dir(p, u)?;
    let m = theta0.matrix() * u.matrix();
    let pf = p as f64;
    Ok((pf * trace_square(&m) - m.trace().powi(2)) / (pf + 2.0))
}

/// Parameters of a moment `R^nu(U, Omega; Theta0) = E[(x^T U x / x^T Omega x)^nu]`.
#[derive(Debug, Clone)]
pub struct MomentSpec {
    pub nu: u32,
    pub u: DMatrix<f64>,
    pub omega: ShapeMatrix,
    /// Spectral norm of `Omega - I`.
    pub epsilon: f64,
    /// Position along the path `I + alpha (Omega - I)`.
    pub alpha: f64,
}

impl MomentSpec {
    /// Moment at `Omega = I`.
    pub fn at_identity(nu: u32, u: DMatrix<f64>) -> Self {
        let p = u.nrows();
        Self {
            nu,
            u,
            omega: ShapeMatrix::identity(p),
            epsilon: 0.0,
            alpha: 0.0,
        }
    }

    /// Moment at `Omega = I + delta`, with `epsilon = ||delta||_2`.
    pub fn perturbed(nu: u32, u: DMatrix<f64>, delta: &DMatrix<f64>) -> Result<Self, crate::shape::ShapeError> {
        let p = u.nrows();
        let omega = ShapeMatrix::new(DMatrix::identity(p, p) + delta)?;
        let epsilon = omega.eigenvalues().iter().map(|l| (l - 1.0).abs()).fold(0.0, f64::max);
        Ok(Self {
            nu,
            u,
            omega,
            epsilon,
            alpha: 1.0,
        })
    }
}

fn is_identity(s: &ShapeMatrix) -> bool {
    (s.matrix() - DMatrix::identity(s.dim(), s.dim())).amax() <= 1e-12
}

/// Closed-form `R^nu(U, I; I)` for `nu` in 1..=3.
pub fn moment_closed_form(nu: u32, u: &DMatrix<f64>) -> Result<f64, LikelihoodError> {
    let p = u.nrows() as f64;
    let t1 = u.trace();
    match nu {
        1 => Ok(t1 / p),
        2 => Ok((t1 * t1 + 2.0 * trace_square(u)) / (p * (p + 2.0))),
        3 => {
            let u2 = u * u;
            let t2 = u2.trace();
            let t3 = trace_product(&u2, u);
            Ok((t1.powi(3) + 6.0 * t1 * t2 + 8.0 * t3) / (p * (p + 2.0) * (p + 4.0)))
        }
        _ => Err(LikelihoodError::UnsupportedOrder { nu }),
    }
}

/// Closed-form moment; only defined at `Omega = I`, `Theta0 = I`.
pub fn moment_r(spec: &MomentSpec, theta0: &ShapeMatrix) -> Result<f64, LikelihoodError> {
    if spec.u.nrows() != theta0.dim() || spec.omega.dim() != theta0.dim() {
        return Err(LikelihoodError::DimensionMismatch {
            left: theta0.dim(),
            right: spec.u.nrows(),
        });
    }
    if !is_identity(&spec.omega) || !is_identity(theta0) {
        return Err(LikelihoodError::NotIdentity);
    }
    moment_closed_form(spec.nu, &spec.u)
}

/// Upper bound `(nu/2)! ||U||_F^nu / p^(nu/2)` on `R^nu(U, I; I)` for even `nu`.
pub fn moment_even_bound(nu: u32, u: &DMatrix<f64>, p: usize) -> Result<f64, LikelihoodError> {
    if nu == 0 || nu % 2 == 1 {
        return Err(LikelihoodError::OddOrder { nu });
    }
    let half = nu / 2;
    let factorial: f64 = (1..=half).map(f64::from).product();
    Ok(factorial * u.norm().powi(nu as i32) / (p as f64).powi(half as i32))
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

impl McEstimate {
    /// Whether `value` lies within `k` standard errors of the estimate.
    pub fn agrees_with(&self, value: f64, k: f64) -> bool {
        (self.estimate - value).abs() <= k * self.std_error
    }
}

/// Mean and standard error of `values`.
pub fn mean_and_std_error(values: impl IntoIterator<Item = f64>) -> McEstimate {
    // Welford.
    let (mut n, mut mean, mut m2) = (0.0_f64, 0.0_f64, 0.0_f64);
    for v in values {
        n += 1.0;
        let d = v - mean;
        mean += d / n;
        m2 += d * (v - mean);
    }
    let var = if n > 1.0 { m2 / (n - 1.0) } else { 0.0 };
    McEstimate {
        estimate: mean,
        std_error: (var / n).sqrt(),
    }
}

/// Empirical `E[(x^T U x / x^T Omega x)^nu]` over a given sample set.
pub fn moment_from_samples(
    nu: u32,
    u: &DMatrix<f64>,
    omega: &ShapeMatrix,
    samples: &SampleSet,
) -> Result<McEstimate, LikelihoodError> {
    if samples.p() != omega.dim() || u.nrows() != omega.dim() {
        return Err(LikelihoodError::DimensionMismatch {
            left: omega.dim(),
            right: samples.p(),
        });
    }
    let mut ratios = Vec::with_capacity(samples.n());
    for x in samples.iter() {
        let q = guarded(quad(omega.matrix(), x))?;
        ratios.push((quad(u, x) / q).powi(nu as i32));
    }
    Ok(mean_and_std_error(ratios))
}

pub const MIN_ORACLE_DRAWS: usize = 1000;

/// Monte Carlo estimate of `R^nu(U, Omega; Theta0)` from `n_mc` ACG(`theta0`) draws.
pub fn moment_mc_oracle(
    spec: &MomentSpec,
    theta0: &ShapeMatrix,
    n_mc: usize,
    stream: &SeededStream,
) -> Result<McEstimate, LikelihoodError> {
    if n_mc < MIN_ORACLE_DRAWS {
        return Err(LikelihoodError::TooFewDraws {
            min: MIN_ORACLE_DRAWS,
            got: n_mc,
        });
    }
    let samples = sample_acg(theta0, n_mc, stream)?;
    moment_from_samples(spec.nu, &spec.u, &spec.omega, &samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::normalize_rows;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gauss(rng: &mut impl Rng) -> f64 {
        rng.sample(StandardNormal)
    }

    fn random_symmetric(rng: &mut impl Rng, p: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(p, p, |_, _| gauss(rng));
        (&a + a.transpose()) * 0.5
    }

    fn random_spd(rng: &mut impl Rng, p: usize) -> ShapeMatrix {
        let a = DMatrix::from_fn(p, p, |_, _| gauss(rng));
        ShapeMatrix::new(&a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.5).unwrap()
    }

    fn random_unit(rng: &mut impl Rng, p: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..p).map(|_| gauss(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn identity_loglik_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_unit(&mut rng, 4);
        assert!(neg_loglik(&ShapeMatrix::identity(4), &x).unwrap().abs() < 1e-15);
    }

    #[test]
    fn loglik_hand_value() {
        let omega = ShapeMatrix::from_diagonal(&[2.0, 0.5]).unwrap();
        let v = neg_loglik(&omega, &[1.0, 0.0]).unwrap();
        assert!((v - 2.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn loglik_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let omega = random_spd(&mut rng, 5);
            let x = random_unit(&mut rng, 5);
            let base = neg_loglik(&omega, &x).unwrap();
            for c in [1e-3, 1.0, 1e3] {
                assert!((neg_loglik(&omega.scaled(c), &x).unwrap() - base).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_non_unit_and_underflow() {
        let omega = ShapeMatrix::identity(2);
        assert!(matches!(
            neg_loglik(&omega, &[1.0, 1.0]),
            Err(LikelihoodError::NotUnitNorm { .. })
        ));
        let tiny = ShapeMatrix::from_diagonal(&[1e-301, 1e-301]).unwrap();
        assert!(matches!(
            neg_loglik(&tiny, &[1.0, 0.0]),
            Err(LikelihoodError::QuadFormUnderflow { .. })
        ));
    }

    #[test]
    fn kernel_direction_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = rng.random_range(1..8);
            let omega = random_spd(&mut rng, p);
            let x = random_unit(&mut rng, p);
            let u = PerturbationDirection::from(&omega);
            assert!(grad_form(&omega, &u, &x).unwrap().abs() <= 1e-12 * p as f64);
            assert!(hessian_form(&omega, &u, &x).unwrap().abs() <= 1e-12 * p as f64);
        }
    }

    #[test]
    fn gradient_hand_value() {
        let p = 4;
        let mut e1 = DMatrix::zeros(p, p);
        e1[(0, 0)] = 1.0;
        let u = PerturbationDirection::new(e1).unwrap();
        let x = [1.0, 0.0, 0.0, 0.0];
        let g = grad_form(&ShapeMatrix::identity(p), &u, &x).unwrap();
        assert!((g - (p as f64 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn hessian_hand_value() {
        let u = PerturbationDirection::new(DMatrix::from_diagonal(&nalgebra::dvector![0.5, -2.0, 1.5])).unwrap();
        let h = hessian_form(&ShapeMatrix::identity(3), &u, &[1.0, 0.0, 0.0]).unwrap();
        let expected = (0.25 + 4.0 + 2.25) - 3.0 * 0.25;
        assert!((h - expected).abs() < 1e-14);
    }

    // Central differences of t -> neg_loglik(Omega + tU, x).
    fn fd(omega: &ShapeMatrix, u: &DMatrix<f64>, x: &[f64], h: f64) -> (f64, f64) {
        let at = |t: f64| neg_loglik(&ShapeMatrix::new(omega.matrix() + u * t).unwrap(), x).unwrap();
        let (fp, f0, fm) = (at(h), at(0.0), at(-h));
        ((fp - fm) / (2.0 * h), (fp - 2.0 * f0 + fm) / (h * h))
    }

    #[test]
    fn gradient_matches_finite_difference_at_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let omega = ShapeMatrix::identity(3);
        for _ in 0..20 {
            let u = random_symmetric(&mut rng, 3);
            let x = random_unit(&mut rng, 3);
            let (d1, _) = fd(&omega, &u, &x, 1e-5);
            let g = grad_form(&omega, &PerturbationDirection::new(u).unwrap(), &x).unwrap();
            assert!((g - d1).abs() <= 1e-6 * g.abs().max(1.0), "{g} vs {d1}");
        }
    }

    #[test]
    fn hessian_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = rng.random_range(2..6);
            let omega = random_spd(&mut rng, p);
            let u = random_symmetric(&mut rng, p);
            let x = random_unit(&mut rng, p);
            let (_, d2) = fd(&omega, &u, &x, 1e-4);
            let h = hessian_form(&omega, &PerturbationDirection::new(u).unwrap(), &x).unwrap();
            assert!((h - d2).abs() <= 1e-5 * h.abs().max(1.0), "{h} vs {d2}");
        }
    }

    #[test]
    fn sample_avg_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let omega = random_spd(&mut rng, 3);
        let u = PerturbationDirection::new(random_symmetric(&mut rng, 3)).unwrap();
        let x = random_unit(&mut rng, 3);
        let single = normalize_rows(&DMatrix::from_row_slice(1, 3, &x)).unwrap();
        for form in [Form::NegLoglik, Form::Gradient(&u), Form::Hessian(&u)] {
            let pointwise = match form {
                Form::NegLoglik => neg_loglik(&omega, &x),
                Form::Gradient(u) => grad_form(&omega, u, &x),
                Form::Hessian(u) => hessian_form(&omega, u, &x),
            }
            .unwrap();
            let avg = sample_avg(form, &omega, &single).unwrap();
            assert!((avg - pointwise).abs() <= 1e-12 * pointwise.abs().max(1.0));
        }

        let many = crate::sampling::sample_acg(&omega.inverted(), 50, &SeededStream::new(1, 1)).unwrap();
        for form in [Form::NegLoglik, Form::Gradient(&u), Form::Hessian(&u)] {
            let a = sample_avg(form, &omega, &many).unwrap();
            let b = sample_avg(form, &omega, &many.duplicated()).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn averaged_gradient_concentrates() {
        let p = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = PerturbationDirection::project_traceless(&random_symmetric(&mut rng, p)).unwrap();
        let u = PerturbationDirection::traceless(u.matrix() / u.matrix().norm()).unwrap();
        let samples =
            crate::sampling::sample_acg(&ShapeMatrix::identity(p), 100_000, &SeededStream::new(8, 0)).unwrap();
        let g = sample_avg(Form::Gradient(&u), &ShapeMatrix::identity(p), &samples).unwrap();
        assert!(g.abs() <= 5.0 * p as f64 / 100_000f64.sqrt());
    }

    #[test]
    fn expected_hessian_examples() {
        let theta0 = ShapeMatrix::from_diagonal(&[3.0, 1.0, 0.5]).unwrap();
        let kernel = PerturbationDirection::from(&theta0.inverted());
        assert!(expected_hessian_at_truth(&theta0, &kernel).unwrap().abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in [2, 5, 9] {
            let u = PerturbationDirection::project_traceless(&random_symmetric(&mut rng, p)).unwrap();
            let u = PerturbationDirection::traceless(u.matrix() / u.matrix().norm()).unwrap();
            let h = expected_hessian_at_truth(&ShapeMatrix::identity(p), &u).unwrap();
            assert!((h - p as f64 / (p as f64 + 2.0)).abs() < 1e-12);
        }

        let u = PerturbationDirection::new(dmatrix![1.0, 0.0; 0.0, -1.0]).unwrap();
        assert!((expected_hessian_at_truth(&ShapeMatrix::identity(2), &u).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn expected_hessian_restricted_convexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for k in 0..1000 {
            let p = 2 + k % 7;
            let theta0 = random_spd(&mut rng, p);
            let cos = crate::shape::sphericity(&theta0).cos_phi0;
            let u = PerturbationDirection::project_traceless(&random_symmetric(&mut rng, p)).unwrap();
            let r = theta0.sqrt_factor();
            let conj = (r * u.matrix() * r).norm_squared();
            let pf = p as f64;
            let lower = pf / (pf + 2.0) * cos * cos * conj;
            assert!(expected_hessian_at_truth(&theta0, &u).unwrap() >= lower - 1e-10);
        }
    }

    #[test]
    fn closed_form_moments() {
        for p in [1usize, 3, 7] {
            let i = DMatrix::identity(p, p);
            for nu in 1..=3 {
                assert!((moment_closed_form(nu, &i).unwrap() - 1.0).abs() < 1e-14);
            }
        }
        let r2 = moment_closed_form(2, &dmatrix![1.0, 0.0; 0.0, 0.0]).unwrap();
        assert!((r2 - 3.0 / 8.0).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in [2usize, 4, 10] {
            let u = PerturbationDirection::project_traceless(&random_symmetric(&mut rng, p)).unwrap();
            let u = u.matrix() / u.matrix().norm();
            let pf = p as f64;
            assert!((moment_closed_form(2, &u).unwrap() - 2.0 / (pf * (pf + 2.0))).abs() < 1e-14);
        }
        assert_eq!(
            moment_closed_form(4, &DMatrix::identity(2, 2)),
            Err(LikelihoodError::UnsupportedOrder { nu: 4 })
        );
    }

    #[test]
    fn moment_r_requires_identity() {
        let spec = MomentSpec::at_identity(2, DMatrix::identity(3, 3));
        assert!(moment_r(&spec, &ShapeMatrix::identity(3)).is_ok());
        assert_eq!(
            moment_r(&spec, &ShapeMatrix::from_diagonal(&[1.0, 2.0, 1.0]).unwrap()),
            Err(LikelihoodError::NotIdentity)
        );
    }

    #[test]
    fn closed_form_r2_matches_sphere_monte_carlo() {
        let u = dmatrix![1.0, 0.0; 0.0, 0.0];
        let spec = MomentSpec::at_identity(2, u);
        let mc = moment_mc_oracle(&spec, &ShapeMatrix::identity(2), 10_000_000, &SeededStream::new(77, 0)).unwrap();
        assert!(mc.agrees_with(3.0 / 8.0, 4.0), "{mc:?}");
    }

    #[test]
    fn even_bound_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for p in [2usize, 5, 11] {
            let u = PerturbationDirection::project_traceless(&random_symmetric(&mut rng, p)).unwrap();
            let u = u.matrix() / u.matrix().norm();
            let bound = moment_even_bound(2, &u, p).unwrap();
            assert!((bound - 1.0 / p as f64).abs() < 1e-14);
            assert!(moment_closed_form(2, &u).unwrap() <= bound);
        }
        let b4 = moment_even_bound(4, &DMatrix::identity(4, 4), 4).unwrap();
        assert!((b4 - 2.0).abs() < 1e-14);
        assert_eq!(
            moment_even_bound(3, &DMatrix::identity(2, 2), 2),
            Err(LikelihoodError::OddOrder { nu: 3 })
        );
    }

    #[test]
    fn oracle_edge_cases() {
        let omega = ShapeMatrix::from_diagonal(&[2.0, 1.0, 0.5]).unwrap();
        let spec = MomentSpec {
            nu: 3,
            u: omega.matrix().clone(),
            omega: omega.clone(),
            epsilon: 0.0,
            alpha: 0.0,
        };
        let mc = moment_mc_oracle(&spec, &ShapeMatrix::identity(3), 2000, &SeededStream::new(1, 2)).unwrap();
        assert_eq!(mc.estimate, 1.0);
        assert_eq!(mc.std_error, 0.0);
        assert!(matches!(
            moment_mc_oracle(&spec, &ShapeMatrix::identity(3), 10, &SeededStream::new(1, 2)),
            Err(LikelihoodError::TooFewDraws { .. })
        ));
    }

    #[test]
    fn sandwich_on_perturbed_moment() {
        let p = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let u = random_symmetric(&mut rng, p);
        let d = random_symmetric(&mut rng, p);
        let d = &d * (0.1 / d.symmetric_eigenvalues().amax());
        let spec = MomentSpec::perturbed(2, u.clone(), &d).unwrap();
        assert!((spec.epsilon - 0.1).abs() < 1e-12);
        let mc = moment_mc_oracle(&spec, &ShapeMatrix::identity(p), 200_000, &SeededStream::new(3, 3)).unwrap();
        let r = moment_closed_form(2, &u).unwrap();
        let lo = r / 1.1f64.powi(2) - 4.0 * mc.std_error;
        let hi = r / 0.9f64.powi(2) + 4.0 * mc.std_error;
        assert!(mc.estimate >= lo && mc.estimate <= hi);
    }
}
