//! Learned global minimization of noisy black-box 1D functions.
//!
//! The pipeline: generate random multi-modal target functions as cubic
//! B-splines, sample them with calibrated Gaussian noise, fit an
//! interpolating spline to the noisy samples to obtain a baseline minimizer,
//! then run a three-stage iterative-refinement neural model that starts from
//! the spline minimum and walks toward the true global minimum. Ground-truth
//! labels come from exhaustive grid search over the true function.

mod banded;

pub mod autodiff;
pub mod cli;
pub mod eval;
pub mod funcgen;
pub mod model;
pub mod rng;
pub mod spline;
pub mod trainer;
