//! Non-asymptotic error bounds for Tyler's estimator.
//!
//! Two Bernstein-type tail primitives feed two concentration statements: one
//! for the sample-average gradient at the truth and one for the sample-average
//! Hessian over traceless directions. Together they certify, with a computable
//! probability, that the estimator's inverse lies in a Frobenius ball around
//! the true inverse shape matrix. [`optimize_bound`] picks the free parameters
//! `(t, tau)` that make the ball smallest at a requested confidence.
//!
//! All probabilities returned here are clamped to `[0, 1]`.

use serde::Serialize;
use thiserror::Error;

/// Slope constant of the vector Bernstein tail.
pub const BERNSTEIN_SLOPE: f64 = 1.7;

/// Hessian-discount tail constants as a function of `tau`.
pub const HESSIAN_EXP_CONST: f64 = 46.0;
pub const HESSIAN_POLY_CONST: f64 = 2.0e3;

/// The same constants after substituting `tau = 3/5` and rounding.
pub const THEOREM_EXP_CONST: f64 = 77.0;
pub const THEOREM_POLY_CONST: f64 = 15.0e3;
pub const THEOREM_TAU: f64 = 0.6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("need n > p, got n = {n}, p = {p}")]
    NotEnoughSamples { n: usize, p: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("t = {t} is at or below the matrix Bernstein validity threshold {threshold}")]
    BelowValidityThreshold { t: f64, threshold: f64 },

    #[error("tau = {tau} is outside the admissible window [{lo}, {hi}]")]
    TauOutOfWindow { tau: f64, lo: f64, hi: f64 },

    #[error("epsilon = {epsilon} exceeds its ceiling {ceiling}")]
    EpsilonTooLarge { epsilon: f64, ceiling: f64 },
}

fn invalid(msg: impl Into<String>) -> BoundError {
    BoundError::InvalidParameter(msg.into())
}

fn clamp01(x: f64) -> f64 {
    if x.is_nan() {
        1.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

fn check_positive(name: &str, v: f64) -> Result<(), BoundError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_cos(cos_phi0: f64) -> Result<(), BoundError> {
    if cos_phi0 > 0.0 && cos_phi0 <= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("cos_phi0 must lie in (0, 1], got {cos_phi0}")))
    }
}

/// `min(1, 2 exp(-n t^2 / (2 (1 + 1.7 t L / sigma))))`.
pub fn vector_bernstein_tail(n: usize, t: f64, sigma: f64, l: f64) -> Result<f64, BoundError> {
    check_positive("sigma", sigma)?;
    check_positive("L", l)?;
    if !(t >= 0.0) {
        return Err(invalid(format!("t must be non-negative, got {t}")));
    }
    let nf = n as f64;
    Ok(clamp01(
        2.0 * (-nf * t * t / (2.0 * (1.0 + BERNSTEIN_SLOPE * t * l / sigma))).exp(),
    ))
}

fn matrix_bernstein_log(p: usize, sigma: f64, l: f64) -> Result<f64, BoundError> {
    let p2 = (p * p) as f64;
    let v = (64.0 * 2f64.sqrt() * p2 * l * l / (sigma * sigma)).ln();
    if v > 0.0 {
        Ok(v)
    } else {
        Err(invalid("log(64 sqrt2 p^2 L^2 / sigma^2) must be positive"))
    }
}

/// Smallest `t` (exclusive) at which [`matrix_bernstein_tail`] is valid.
pub fn matrix_bernstein_threshold(p: usize, sigma: f64, l: f64) -> Result<f64, BoundError> {
    check_positive("sigma", sigma)?;
    check_positive("L", l)?;
    if p == 0 {
        return Err(invalid("p must be at least 1"));
    }
    let p2 = (p * p) as f64;
    Ok(sigma / (4.0 * l) * (1.0 + 1.0 / p2) / matrix_bernstein_log(p, sigma, l)?)
}

/// Tail of the largest eigenvalue of an average of `n` centered `p x p`
/// matrices at level `t sigma`:
/// `2 p^2 exp(-n t sigma / (8 L ln(64 sqrt2 p^2 L^2/sigma^2))) (1 + 6 / (n^2 t^2 sigma^2 ln^2(1 + t/sigma)))`.
pub fn matrix_bernstein_tail(n: usize, p: usize, t: f64, sigma: f64, l: f64) -> Result<f64, BoundError> {
    let threshold = matrix_bernstein_threshold(p, sigma, l)?;
    if !(t > threshold) {
        return Err(BoundError::BelowValidityThreshold { t, threshold });
    }
    let (nf, p2) = (n as f64, (p * p) as f64);
    let log = matrix_bernstein_log(p, sigma, l)?;
    let lead = 2.0 * p2 * (-nf * t * sigma / (8.0 * l * log)).exp();
    let corr = 1.0 + 6.0 / (nf * nf * t * t * sigma * sigma * (1.0 + t / sigma).ln().powi(2));
    Ok(clamp01(lead * corr))
}

/// Probability that the averaged gradient at the truth exceeds `t p ||U||_F`
/// in some traceless direction `U`.
pub fn gradient_tail(n: usize, t: f64) -> f64 {
    vector_bernstein_tail(n, t.max(0.0), 1.0, 1.0).expect("sigma = L = 1 are valid")
}

/// Largest admissible spectral deviation `p cos^2 / (6 (p + 2))`.
pub fn epsilon_ceiling(p: usize, cos_phi0: f64) -> f64 {
    let pf = p as f64;
    pf * cos_phi0 * cos_phi0 / (6.0 * (pf + 2.0))
}

/// Admissible `tau` interval for a given `epsilon`:
/// `(1 + 1/p^2) / ln(32 sqrt2 p^2) <= tau p (1 - eps)^2 cos^2 / (p + 2) <= 1`.
pub fn tau_window(p: usize, cos_phi0: f64, epsilon: f64) -> (f64, f64) {
    let pf = p as f64;
    let p2 = pf * pf;
    let scale = pf * (1.0 - epsilon).powi(2) * cos_phi0 * cos_phi0 / (pf + 2.0);
    let floor = (1.0 + 1.0 / p2) / (32.0 * 2f64.sqrt() * p2).ln();
    (floor / scale, 1.0 / scale)
}

fn check_tau_eps(p: usize, tau: f64, cos_phi0: f64, epsilon: f64) -> Result<(), BoundError> {
    if p == 0 {
        return Err(invalid("p must be at least 1"));
    }
    check_cos(cos_phi0)?;
    let ceiling = epsilon_ceiling(p, cos_phi0);
    if !(epsilon >= 0.0) || epsilon > ceiling {
        return Err(BoundError::EpsilonTooLarge { epsilon, ceiling });
    }
    let (lo, hi) = tau_window(p, cos_phi0, epsilon);
    if !(tau >= lo && tau <= hi) {
        return Err(BoundError::TauOutOfWindow { tau, lo, hi });
    }
    Ok(())
}

fn hessian_tail_with(n: usize, p: usize, tau: f64, cos_phi0: f64, exp_const: f64, poly_const: f64) -> f64 {
    let (nf, pf) = (n as f64, p as f64);
    let c2 = cos_phi0 * cos_phi0;
    let growth = 1.0 + 2.0 / pf;
    let lead = 2.0 * pf * pf * (-nf * tau * c2 / (exp_const * (7.0 * pf).ln() * growth)).exp();
    let corr = 1.0 + poly_const * growth.powi(4) / (nf * nf * tau.powi(4) * c2.powi(4));
    clamp01(lead * corr)
}

/// Probability that half the sample-average Hessian along the segment to the
/// truth falls below `(1 - tau) p cos^2 / (4 (p + 2)) ||dOmega||_F^2`.
pub fn hessian_discount_tail(n: usize, p: usize, tau: f64, cos_phi0: f64, epsilon: f64) -> Result<f64, BoundError> {
    check_tau_eps(p, tau, cos_phi0, epsilon)?;
    Ok(hessian_tail_with(
        n,
        p,
        tau,
        cos_phi0,
        HESSIAN_EXP_CONST,
        HESSIAN_POLY_CONST,
    ))
}

/// `max(0, 1 - gradient_tail - hessian_discount_tail)` with epsilon at its ceiling.
pub fn success_probability(n: usize, p: usize, t: f64, tau: f64, cos_phi0: f64) -> Result<f64, BoundError> {
    let eps = epsilon_ceiling(p, cos_phi0);
    let h = hessian_discount_tail(n, p, tau, cos_phi0, eps)?;
    Ok(clamp01(1.0 - gradient_tail(n, t) - h))
}

/// Certified radius for `||T^-1 - Theta0^-1||_F`:
/// `(1/lambda_min) * 4 t / (1 - tau) * (p + 2) / cos^2`.
///
/// Infinite for `tau >= 1`.
pub fn radius(t: f64, tau: f64, p: usize, cos_phi0: f64, lambda_min: f64) -> f64 {
    if tau >= 1.0 {
        return f64::INFINITY;
    }
    4.0 * t / (1.0 - tau) * (p as f64 + 2.0) / (cos_phi0 * cos_phi0) / lambda_min
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoremBound {
    pub radius: f64,
    pub probability: f64,
}

/// The closed-form bound with `tau = 3/5` and `t = theta / sqrt(n)` substituted
/// and the constants rounded to 77 and 15e3.
pub fn theorem1_bound(
    n: usize,
    p: usize,
    cos_phi0: f64,
    lambda_min: f64,
    theta: f64,
) -> Result<TheoremBound, BoundError> {
    if n <= p {
        return Err(BoundError::NotEnoughSamples { n, p });
    }
    check_cos(cos_phi0)?;
    check_positive("lambda_min", lambda_min)?;
    if !(theta >= 0.0) {
        return Err(invalid(format!("theta must be non-negative, got {theta}")));
    }
    let (nf, pf) = (n as f64, p as f64);
    let c2 = cos_phi0 * cos_phi0;
    let radius = theta * 10.0 * (pf + 2.0) / (lambda_min * c2 * nf.sqrt());
    let grad = clamp01(2.0 * (-theta * theta / (2.0 * (1.0 + BERNSTEIN_SLOPE * theta / nf.sqrt()))).exp());
    let hess = hessian_tail_with(n, p, 1.0, cos_phi0, THEOREM_EXP_CONST, THEOREM_POLY_CONST);
    Ok(TheoremBound {
        radius,
        probability: clamp01(1.0 - grad - hess),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundQuery {
    pub n: usize,
    pub p: usize,
    pub cos_phi0: f64,
    pub lambda_min: f64,
    pub confidence: f64,
}

impl BoundQuery {
    pub fn identity(n: usize, p: usize, confidence: f64) -> Self {
        Self {
            n,
            p,
            cos_phi0: 1.0,
            lambda_min: 1.0,
            confidence,
        }
    }

    pub fn validate(&self) -> Result<(), BoundError> {
        if self.p == 0 {
            return Err(invalid("p must be at least 1"));
        }
        if self.n <= self.p {
            return Err(BoundError::NotEnoughSamples { n: self.n, p: self.p });
        }
        check_cos(self.cos_phi0)?;
        check_positive("lambda_min", self.lambda_min)?;
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(invalid(format!(
                "confidence must lie in (0, 1), got {}",
                self.confidence
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundResult {
    #[serde(flatten)]
    pub query: BoundQuery,
    pub feasible: bool,
    pub radius: Option<f64>,
    pub t_star: Option<f64>,
    pub tau_star: Option<f64>,
    pub theta: Option<f64>,
    /// Success probability at the optimum; when infeasible, the best
    /// probability reachable anywhere in the `(t, tau)` domain.
    pub probability: f64,
    /// Whether the certified ball fits inside the spectral ball on which the
    /// Hessian lower bound was derived.
    pub validity_radius_ok: bool,
}

/// Grid resolution of the coarse search in each of `t` and `tau`.
pub const COARSE_GRID: usize = 200;

const T_GRID_MIN: f64 = 1e-6;
const T_GRID_MAX: f64 = 10.0;

/// The `tau` interval searched by [`optimize_bound`]: the window at the
/// epsilon ceiling, capped strictly below 1 so the radius stays finite.
pub fn search_window(p: usize, cos_phi0: f64) -> Option<(f64, f64)> {
    let eps = epsilon_ceiling(p, cos_phi0);
    let (lo, hi) = tau_window(p, cos_phi0, eps);
    let hi = hi.min(1.0 - 1e-9);
    (lo < hi).then_some((lo, hi))
}

struct Problem {
    n: usize,
    p: usize,
    cos_phi0: f64,
    lambda_min: f64,
    confidence: f64,
}

impl Problem {
    fn hessian(&self, tau: f64) -> f64 {
        hessian_tail_with(
            self.n,
            self.p,
            tau,
            self.cos_phi0,
            HESSIAN_EXP_CONST,
            HESSIAN_POLY_CONST,
        )
    }

    fn feasible(&self, t: f64, h: f64) -> bool {
        clamp01(1.0 - gradient_tail(self.n, t) - h) >= self.confidence
    }

    fn radius(&self, t: f64, tau: f64) -> f64 {
        radius(t, tau, self.p, self.cos_phi0, self.lambda_min)
    }

    /// Smallest feasible `t` for this `tau`, by bisection on the monotone
    /// feasibility boundary.
    fn min_t(&self, tau: f64, mut lo: f64, mut hi: f64) -> Option<f64> {
        let h = self.hessian(tau);
        if 1.0 - h < self.confidence {
            return None;
        }
        while !self.feasible(hi, h) {
            lo = hi;
            hi *= 2.0;
            if hi > 1e12 {
                return None;
            }
        }
        if self.feasible(lo, h) {
            lo = 0.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.feasible(mid, h) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    }

    fn profile(&self, tau: f64) -> f64 {
        match self.min_t(tau, 0.0, T_GRID_MAX) {
            Some(t) => self.radius(t, tau),
            None => f64::INFINITY,
        }
    }
}

fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    // Clamped so rounding in exp/ln never leaves [lo, hi].
    (0..k)
        .map(|i| (a + (b - a) * i as f64 / (k - 1) as f64).exp().clamp(lo, hi))
        .collect()
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Minimizes the certified radius over `(t, tau)` subject to the success
/// probability reaching `query.confidence`.
///
/// A `200 x 200` logarithmic grid locates the feasible region. Every feasible
/// `tau` row is then refined by bisecting for the smallest feasible `t`
/// (ranking rows by their coarse `t` alone is off by up to one 8% grid step),
/// and a golden-section search over `tau` polishes the best row. Infeasibility is
/// reported through `feasible = false`, not as an error.
pub fn optimize_bound(query: &BoundQuery) -> Result<BoundResult, BoundError> {
    query.validate()?;
    let prob = Problem {
        n: query.n,
        p: query.p,
        cos_phi0: query.cos_phi0,
        lambda_min: query.lambda_min,
        confidence: query.confidence,
    };
    let infeasible = |best_probability: f64| BoundResult {
        query: *query,
        feasible: false,
        radius: None,
        t_star: None,
        tau_star: None,
        theta: None,
        probability: best_probability,
        validity_radius_ok: false,
    };

    let Some((tau_lo, tau_hi)) = search_window(query.p, query.cos_phi0) else {
        return Ok(infeasible(0.0));
    };

    let taus = log_grid(tau_lo, tau_hi, COARSE_GRID);
    let ts = log_grid(T_GRID_MIN, T_GRID_MAX, COARSE_GRID);
    let grads: Vec<f64> = ts.iter().map(|&t| gradient_tail(query.n, t)).collect();

    // (tau index, first feasible t index) per feasible tau row.
    let mut rows: Vec<(usize, usize)> = Vec::new();
    for (j, &tau) in taus.iter().enumerate() {
        let h = prob.hessian(tau);
        if let Some(i) = grads.iter().position(|&g| clamp01(1.0 - g - h) >= query.confidence) {
            rows.push((j, i));
        }
    }
    if rows.is_empty() {
        // The gradient tail vanishes as t grows, so the Hessian tail alone
        // limits what is reachable.
        let best = taus
            .iter()
            .map(|&tau| clamp01(1.0 - prob.hessian(tau)))
            .fold(0.0, f64::max);
        return Ok(infeasible(best));
    }
    let mut best = (f64::INFINITY, 0.0, 0.0, 0usize);
    for &(j, i) in &rows {
        let tau = taus[j];
        let lo = if i == 0 { 0.0 } else { ts[i - 1] };
        if let Some(t) = prob.min_t(tau, lo, ts[i]) {
            let r = prob.radius(t, tau);
            if r < best.0 {
                best = (r, t, tau, j);
            }
        }
    }

    let j = best.3;
    let a = if j == 0 { tau_lo } else { taus[j - 1] };
    let b = if j + 1 == taus.len() { tau_hi } else { taus[j + 1] };
    let (tau_gs, r_gs) = golden_section(|tau| prob.profile(tau), a, b, 80);
    if r_gs < best.0 {
        let t = prob
            .min_t(tau_gs, 0.0, T_GRID_MAX)
            .expect("finite profile implies feasibility");
        best = (r_gs, t, tau_gs, j);
    }

    let (r, t, tau, _) = best;
    let probability = success_probability(query.n, query.p, t, tau, query.cos_phi0)?;
    let eps_ceiling = epsilon_ceiling(query.p, query.cos_phi0);
    Ok(BoundResult {
        query: *query,
        feasible: true,
        radius: Some(r),
        t_star: Some(t),
        tau_star: Some(tau),
        theta: Some(t * (query.n as f64).sqrt()),
        probability,
        // Spectral norm <= Frobenius norm of the mapped deviation.
        validity_radius_ok: r * query.lambda_min <= eps_ceiling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn optimizer_beats_a_dense_tau_profile() {
        for (n, p, c) in [(20_000usize, 25usize, 0.95), (30_000, 50, 0.95), (5_000, 5, 0.5)] {
            let opt = optimize_bound(&BoundQuery::identity(n, p, c)).unwrap().radius.unwrap();
            let (lo, hi) = search_window(p, 1.0).unwrap();
            let mut best = f64::INFINITY;
            for k in 0..=4000 {
                let tau = lo + (hi - lo) * k as f64 / 4000.0;
                let (mut a, mut b) = (0.0, 10.0);
                if success_probability(n, p, b, tau, 1.0).unwrap() < c {
                    continue;
                }
                for _ in 0..100 {
                    let m = 0.5 * (a + b);
                    if success_probability(n, p, m, tau, 1.0).unwrap() >= c {
                        b = m;
                    } else {
                        a = m;
                    }
                }
                best = best.min(radius(b, tau, p, 1.0, 1.0));
            }
            assert!(opt <= best * (1.0 + 1e-9), "({n}, {p}, {c}): {opt} vs {best}");
        }
    }

    #[test]
    fn optimizer_stays_inside_the_tau_window() {
        for p in [2, 5, 10, 20, 50] {
            for n in [2_000, 5_000, 20_000, 100_000] {
                for c in [0.5, 0.95] {
                    let r = optimize_bound(&BoundQuery::identity(n, p, c)).unwrap();
                    if let Some(tau) = r.tau_star {
                        let (lo, hi) = search_window(p, 1.0).unwrap();
                        assert!(tau >= lo && tau <= hi);
                    }
                }
            }
        }
    }

    #[test]
    fn vector_tail_examples() {
        assert_eq!(vector_bernstein_tail(100, 0.0, 1.0, 1.0).unwrap(), 1.0);
        let v = vector_bernstein_tail(100, 1.0, 1.0, 1.0).unwrap();
        assert!(rel(v, 2.0 * (-100.0f64 / 5.4).exp()) < 1e-14);
        assert!((v - 1.81e-8).abs() < 0.01e-8);
        let mut prev = 1.0;
        for n in [100, 1000, 10_000] {
            let v = vector_bernstein_tail(n, 0.3, 1.0, 2.0).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(vector_bernstein_tail(10, -1.0, 1.0, 1.0).is_err());
        assert!(vector_bernstein_tail(10, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn matrix_tail_examples() {
        let (p, l) = (2usize, 1.0);
        let sigma = 2f64.sqrt() * l;
        let thr = matrix_bernstein_threshold(p, sigma, l).unwrap();
        assert!(matches!(
            matrix_bernstein_tail(100, p, thr * 0.5, sigma, l),
            Err(BoundError::BelowValidityThreshold { .. })
        ));
        let t = 0.5;
        let n = 200usize;
        let log = (32.0 * 2f64.sqrt() * 4.0f64).ln();
        let hand = 2.0
            * 4.0
            * (-200.0 * t * sigma / (8.0 * log)).exp()
            * (1.0 + 6.0 / (200.0f64.powi(2) * t * t * 2.0 * (1.0 + t / sigma).ln().powi(2)));
        let v = matrix_bernstein_tail(n, p, t, sigma, l).unwrap();
        assert!((v - hand).abs() <= 1e-12);
        let mut prev = 1.0;
        for n in [400, 800, 1600, 3200] {
            let v = matrix_bernstein_tail(n, p, t, sigma, l).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn gradient_tail_examples() {
        assert_eq!(gradient_tail(1000, 0.0), 1.0);
        let v = gradient_tail(10_000, 0.05);
        assert!(rel(v, 2.0 * (-25.0f64 / 2.17).exp()) < 1e-14);
        assert!((v - 1.98e-5).abs() < 0.01e-5);
        assert_eq!(v, vector_bernstein_tail(10_000, 0.05, 1.0, 1.0).unwrap());
    }

    #[test]
    fn hessian_tail_examples() {
        let (p, cos) = (50usize, 1.0);
        let eps = epsilon_ceiling(p, cos);
        assert!(matches!(
            hessian_discount_tail(10_000, p, 0.01, cos, eps),
            Err(BoundError::TauOutOfWindow { .. })
        ));
        assert!(matches!(
            hessian_discount_tail(10_000, p, 0.6, cos, eps * 1.01),
            Err(BoundError::EpsilonTooLarge { .. })
        ));
        let v = hessian_discount_tail(10_000, p, 0.6, cos, eps).unwrap();
        let growth = 1.0 + 2.0 / 50.0;
        let hand = 2.0
            * 2500.0
            * (-10_000.0 * 0.6 / (46.0 * 350f64.ln() * growth)).exp()
            * (1.0 + 2.0e3 * growth.powi(4) / (1e8 * 0.6f64.powi(4)));
        assert!((v - hand).abs() <= 1e-12);
        let mut prev = 1.0;
        for n in [5_000, 10_000, 20_000, 40_000] {
            let v = hessian_discount_tail(n, p, 0.6, cos, eps).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn success_probability_examples() {
        assert_eq!(success_probability(30_000, 50, 0.0, 0.6, 1.0).unwrap(), 0.0);
        let v = success_probability(30_000, 50, 0.05, 0.6, 1.0).unwrap();
        let g = 2.0 * (-30_000.0_f64 * 0.0025 / (2.0 * (1.0 + 1.7 * 0.05))).exp();
        let growth = 1.04;
        let h = 2.0
            * 2500.0
            * (-30_000.0 * 0.6 / (46.0 * 350f64.ln() * growth)).exp()
            * (1.0 + 2.0e3 * growth.powi(4) / (9e8 * 0.6f64.powi(4)));
        assert!((v - (1.0 - g - h)).abs() <= 1e-12);

        let mut prev = 0.0;
        for t in [0.01, 0.02, 0.04, 0.08] {
            let v = success_probability(20_000, 50, t, 0.6, 1.0).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        let mut prev = 0.0;
        for n in [5_000, 10_000, 20_000, 40_000] {
            let v = success_probability(n, 50, 0.03, 0.6, 1.0).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn radius_examples() {
        let (theta, n, p) = (1.0, 2500usize, 50usize);
        let r = radius(theta / (n as f64).sqrt(), 0.6, p, 1.0, 1.0);
        assert!(rel(r, 10.4) < 1e-14);
        let r2 = radius(0.1, 0.6, 10, 0.8, 2.0);
        assert!(rel(r2, 10.0 * 0.1 * 12.0 / (2.0 * 0.64)) < 1e-14);
        assert!(radius(0.1, 0.3, 10, 0.9, 1.0) < radius(0.1, 0.3, 10, 0.8, 1.0));
        assert!(radius(0.1, 0.3, 10, 0.9, 2.0) < radius(0.1, 0.3, 10, 0.9, 1.0));
        assert_eq!(radius(0.1, 1.0, 10, 0.9, 1.0), f64::INFINITY);
    }

    #[test]
    fn theorem_examples() {
        let b = theorem1_bound(2500, 50, 1.0, 1.0, 0.0).unwrap();
        assert_eq!((b.radius, b.probability), (0.0, 0.0));

        let b = theorem1_bound(30_000, 50, 1.0, 1.0, 3.0).unwrap();
        assert!(rel(b.radius, 30.0 * 52.0 / 30_000f64.sqrt()) < 1e-14);
        assert!((b.radius - 9.007).abs() < 1e-3);
        let growth: f64 = 1.04;
        let g = 2.0 * (-9.0 / (2.0 * (1.0 + 1.7 * 3.0 / 30_000f64.sqrt()))).exp();
        let h = 2.0 * 2500.0 * (-30_000.0 / (77.0 * 350f64.ln() * growth)).exp() * (1.0 + 15e3 * growth.powi(4) / 9e8);
        assert!((b.probability - (1.0 - g - h)).abs() <= 1e-12);

        assert!(matches!(
            theorem1_bound(50, 50, 1.0, 1.0, 1.0),
            Err(BoundError::NotEnoughSamples { .. })
        ));
    }

    #[test]
    fn corollary_display_for_identity() {
        // With cos = lambda_min = 1 and theta < sqrt(n)/4, 1 + 1.7 theta/sqrt(n) < 1.5,
        // so the gradient term is at most 2 exp(-theta^2/3).
        let (n, p) = (20_000usize, 20usize);
        for theta in [1.0, 3.0, 10.0, 30.0] {
            let b = theorem1_bound(n, p, 1.0, 1.0, theta).unwrap();
            assert!(rel(b.radius, 10.0 * theta * 22.0 / (n as f64).sqrt()) < 1e-14);
            let growth: f64 = 1.1;
            let h = 2.0
                * 400.0
                * (-(n as f64) / (77.0 * 140f64.ln() * growth)).exp()
                * (1.0 + 15e3 * growth.powi(4) / (n as f64).powi(2));
            let corollary_failure = (2.0 * (-theta * theta / 3.0f64).exp() + h).min(1.0);
            assert!(1.0 - b.probability <= corollary_failure + 1e-15);
        }
    }

    #[test]
    fn window_shapes() {
        let (lo, hi) = tau_window(50, 1.0, epsilon_ceiling(50, 1.0));
        assert!(lo > 0.1 && lo < 0.2 && hi > 1.0);
        // p = 1 has an empty search window.
        assert!(search_window(1, 1.0).is_none());
    }

    #[test]
    fn optimizer_infeasible_at_small_n() {
        let r = optimize_bound(&BoundQuery::identity(500, 50, 0.95)).unwrap();
        assert!(!r.feasible);
        assert!(r.radius.is_none());
        assert!(r.probability < 0.95);
    }

    #[test]
    fn optimizer_feasible_at_large_n() {
        let q = BoundQuery::identity(30_000, 50, 0.95);
        let r = optimize_bound(&q).unwrap();
        assert!(r.feasible);
        assert!(r.probability >= 0.95 - 1e-12);
        let (lo, hi) = search_window(50, 1.0).unwrap();
        let tau = r.tau_star.unwrap();
        assert!(tau >= lo && tau <= hi);
        let t = r.t_star.unwrap();
        assert!(rel(r.radius.unwrap(), radius(t, tau, 50, 1.0, 1.0)) < 1e-14);
        // Any feasible point on a coarse scan is no better.
        for k in 1..100 {
            let tau = lo + (hi - lo) * k as f64 / 100.0;
            for m in 1..400 {
                let t = m as f64 * 1e-3;
                if success_probability(30_000, 50, t, tau, 1.0).unwrap() >= 0.95 {
                    assert!(radius(t, tau, 50, 1.0, 1.0) >= r.radius.unwrap() * (1.0 - 1e-9));
                }
            }
        }
    }

    #[test]
    fn optimizer_radius_shrinks_with_confidence() {
        let mut prev = f64::INFINITY;
        for conf in [0.99, 0.9, 0.5, 0.1, 1e-3, 1e-6] {
            let r = optimize_bound(&BoundQuery::identity(30_000, 50, conf)).unwrap();
            let radius = r.radius.unwrap();
            assert!(radius > 0.0 && radius <= prev);
            prev = radius;
        }
    }

    #[test]
    fn optimizer_rejects_bad_queries() {
        assert!(optimize_bound(&BoundQuery::identity(50, 50, 0.9)).is_err());
        assert!(optimize_bound(&BoundQuery::identity(500, 5, 0.0)).is_err());
        assert!(optimize_bound(&BoundQuery::identity(500, 5, 1.0)).is_err());
        let mut q = BoundQuery::identity(500, 5, 0.5);
        q.cos_phi0 = 1.5;
        assert!(optimize_bound(&q).is_err());
    }
}
