//! Tyler's M-estimator of the shape matrix for generalized elliptical data,
//! its non-asymptotic error bounds, and a seeded Monte Carlo harness that
//! checks the bounds against simulated estimation errors.
//!
//! Module map:
//!
//! - [`shape`]: validated SPD matrices and the sphericity statistic `cos_phi0`.
//! - [`sampling`]: seeded angular central Gaussian and compound-Gaussian draws.
//! - [`likelihood`]: the ACG negative log-likelihood, its derivative forms and
//!   moments of ratios of quadratic forms.
//! - [`estimator`]: the fixed-point iteration and an SCM baseline.
//! - [`bounds`]: tail bounds, the certified radius and its optimization.
//! - [`experiments`]: Monte Carlo campaigns and CSV emission.
//! - [`io`]: dense CSV matrices.

// `!(x > 0.0)` is used deliberately so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod estimator;
pub mod experiments;
pub mod io;
pub mod likelihood;
pub mod sampling;
pub mod shape;

pub use bounds::{optimize_bound, theorem1_bound, BoundQuery, BoundResult};
pub use estimator::{fixed_point_residual, scm_estimate, tyler_estimate, EstimatorResult, SolverConfig};
pub use sampling::{normalize_rows, sample_acg, sample_compound_gaussian, SampleSet, SeededStream};
pub use shape::{frobenius_distance_of_inverses, sphericity, ShapeMatrix, SphericityStats};
