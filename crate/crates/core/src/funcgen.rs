//! Random multi-modal target functions, noisy sampling, and ground-truth
//! minima by exhaustive grid search.
//!
//! Targets are cubic B-splines over uniformly spaced knots. The coefficient
//! recipe builds deliberately deceptive terrain: a narrow well (the true
//! minimum) in the central region, ramps descending toward both domain
//! boundaries, one shoulder pocket per side carved to just above the well
//! bottom, and a sinusoidal oscillation plus uniform jitter on top. The
//! competitor minima sit close enough to the well depth that sample noise
//! routinely fools interpolation-based baselines. Functions whose grid argmin
//! falls outside [0.25, 0.75] or whose derivative at the argmin is large are
//! rejected and redrawn.

use crate::rng::Rng;
use crate::spline::{
    eval_bspline, eval_bspline_deriv, fit_interpolating_spline, GridSpec, KnotVector, SplineError,
    SplineFit,
};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum FuncGenError {
    #[error("function generation failed after {attempts} rejection attempts")]
    GenerationFailed { attempts: usize },
    #[error("invalid preset: {0}")]
    InvalidPreset(String),
    #[error("unknown preset name {0:?}")]
    UnknownPreset(String),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

/// Difficulty preset controlling sample count, noise level, knot density and
/// oscillation strength of generated functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyPreset {
    pub name: String,
    pub n_samples: usize,
    pub noise_multiplier: f64,
    pub knot_spacing_lo: f64,
    pub knot_spacing_hi: f64,
    pub oscillation_strength: f64,
}

impl DifficultyPreset {
    /// Hardest setting: 40 samples, noise multiplier 3.0, dense knots,
    /// strong oscillations.
    pub fn nightmare() -> Self {
        DifficultyPreset {
            name: "nightmare".into(),
            n_samples: 40,
            noise_multiplier: 3.0,
            knot_spacing_lo: 0.03,
            knot_spacing_hi: 0.08,
            oscillation_strength: 1.0,
        }
    }

    /// Noiseless near-unimodal setting, useful as a sanity baseline.
    pub fn smooth() -> Self {
        DifficultyPreset {
            name: "smooth".into(),
            n_samples: 40,
            noise_multiplier: 0.0,
            knot_spacing_lo: 0.2,
            knot_spacing_hi: 0.3,
            oscillation_strength: 0.0,
        }
    }

    /// Same preset with a different sample count; handy for small test rigs.
    pub fn with_samples(mut self, n_samples: usize) -> Self {
        self.n_samples = n_samples;
        self
    }

    pub fn by_name(name: &str) -> Result<Self, FuncGenError> {
        match name {
            "nightmare" => Ok(Self::nightmare()),
            "smooth" => Ok(Self::smooth()),
            other => Err(FuncGenError::UnknownPreset(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), FuncGenError> {
        if self.n_samples < 4 {
            return Err(FuncGenError::InvalidPreset(format!(
                "n_samples must be >= 4, got {}",
                self.n_samples
            )));
        }
        if !(self.knot_spacing_lo > 0.0
            && self.knot_spacing_lo <= self.knot_spacing_hi
            && self.knot_spacing_hi < 0.5)
        {
            return Err(FuncGenError::InvalidPreset(format!(
                "knot spacing range [{}, {}] must satisfy 0 < lo <= hi < 0.5",
                self.knot_spacing_lo, self.knot_spacing_hi
            )));
        }
        if self.noise_multiplier < 0.0 || self.oscillation_strength < 0.0 {
            return Err(FuncGenError::InvalidPreset(
                "noise multiplier and oscillation strength must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Ground-truth target: a cubic B-spline with its oracle argmin cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetFunction {
    pub knots: KnotVector,
    pub coeffs: Vec<f64>,
    /// Grid point of the oracle grid minimizing the function.
    pub argmin_true: f64,
    /// Value range over the oracle grid.
    pub value_range: f64,
}

impl TargetFunction {
    pub fn eval(&self, x: f64) -> f64 {
        eval_bspline(&self.knots, &self.coeffs, x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        eval_bspline_deriv(&self.knots, &self.coeffs, x)
    }
}

/// Noisy observations of a target function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisySamples {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Realized noise standard deviation, sqrt((dy/10)^2 * nu) with dy the
    /// pre-noise value range over the drawn sample positions.
    pub sigma: f64,
    pub seed: u64,
}

/// Rejection budget for [`generate_function`].
pub const MAX_GENERATION_ATTEMPTS: usize = 1000;

// Coefficient recipe constants. The bowl pulls the minimum toward a random
// center; the oscillation rides on top of it; jitter breaks symmetry.
const BOWL_CENTER: (f64, f64) = (0.35, 0.65);
const BOWL_DEPTH: (f64, f64) = (0.8, 1.5);
const BOWL_WIDTH: (f64, f64) = (0.06, 0.12);
const OSC_AMPLITUDE: (f64, f64) = (0.2, 0.6);
const OSC_WAVELENGTH: (f64, f64) = (3.0, 4.5);
const COEFF_JITTER: f64 = 0.1;
const EDGE_PULL: (f64, f64) = (0.93, 1.0);
const SHOULDER_OFFSET: (f64, f64) = (0.28, 0.42);
const SHOULDER_FLOOR: (f64, f64) = (0.02, 0.1);
const ARGMIN_BAND: (f64, f64) = (0.25, 0.75);
const DERIV_REJECT_FACTOR: f64 = 0.1;

/// Generate a random multi-modal target, rejection-sampled so the oracle
/// argmin lies in the central band. Deterministic given (preset, seed).
pub fn generate_function(
    preset: &DifficultyPreset,
    seed: u64,
) -> Result<TargetFunction, FuncGenError> {
    preset.validate()?;
    let mut rng = Rng::new(seed);
    let grid = GridSpec::oracle();
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let h = rng.uniform_in(preset.knot_spacing_lo, preset.knot_spacing_hi);
        let mut interior = Vec::new();
        let mut t = h;
        while t < 1.0 - 1e-9 {
            interior.push(t);
            t += h;
        }
        let knots = KnotVector::clamped(0.0, 1.0, &interior)?;

        let x_c = rng.uniform_in(BOWL_CENTER.0, BOWL_CENTER.1);
        let depth = rng.uniform_in(BOWL_DEPTH.0, BOWL_DEPTH.1);
        let width = rng.uniform_in(BOWL_WIDTH.0, BOWL_WIDTH.1);
        let amp = rng.uniform_in(OSC_AMPLITUDE.0, OSC_AMPLITUDE.1);
        let wavelength = rng.uniform_in(OSC_WAVELENGTH.0 * h, OSC_WAVELENGTH.1 * h);
        let phase = rng.uniform_in(0.0, 2.0 * PI);

        let edge_frac = rng.uniform_in(EDGE_PULL.0, EDGE_PULL.1);
        // Deceptive terrain before the oscillation: the level is `depth`
        // everywhere except the true well (level 0), ramps descending toward
        // both boundaries, and one shoulder pocket per side carved down to a
        // controlled level slightly above the well bottom.
        let base_level = |g: f64| {
            let bowl = depth * ((g - x_c) / width).powi(2).min(1.0);
            let u = (((g - 0.5).abs() - 0.25) / 0.25).clamp(0.0, 1.0);
            bowl - edge_frac * depth * u.cbrt()
        };
        let mut pockets: Vec<(f64, f64, f64)> = Vec::new();
        for side in [-1.0f64, 1.0] {
            let x_s = 0.5 + side * rng.uniform_in(SHOULDER_OFFSET.0, SHOULDER_OFFSET.1);
            let w_s = rng.uniform_in(BOWL_WIDTH.0, BOWL_WIDTH.1);
            let floor = depth * rng.uniform_in(SHOULDER_FLOOR.0, SHOULDER_FLOOR.1);
            let dip = (base_level(x_s) - floor).max(0.0);
            pockets.push((x_s, w_s, dip));
        }
        let coeffs: Vec<f64> = (0..knots.n_basis())
            .map(|i| {
                let g = knots.greville(i);
                let pocket: f64 = pockets
                    .iter()
                    .map(|&(x_s, w_s, dip)| {
                        dip * (1.0 - ((g - x_s) / w_s).powi(2).min(1.0))
                    })
                    .sum();
                let osc = preset.oscillation_strength
                    * amp
                    * (2.0 * PI * g / wavelength + phase).sin();
                let jitter = rng.uniform_in(-COEFF_JITTER, COEFF_JITTER);
                base_level(g) - pocket + osc + jitter
            })
            .collect();

        let mut min_v = f64::INFINITY;
        let mut max_v = f64::NEG_INFINITY;
        let mut argmin = 0.0;
        for x in grid.points() {
            let v = eval_bspline(&knots, &coeffs, x);
            if v < min_v {
                min_v = v;
                argmin = x;
            }
            if v > max_v {
                max_v = v;
            }
        }
        let range = max_v - min_v;
        if range <= 0.0 {
            continue;
        }
        if argmin < ARGMIN_BAND.0 || argmin > ARGMIN_BAND.1 {
            continue;
        }
        let deriv = eval_bspline_deriv(&knots, &coeffs, argmin);
        if deriv.abs() > DERIV_REJECT_FACTOR * range {
            continue;
        }
        return Ok(TargetFunction {
            knots,
            coeffs,
            argmin_true: argmin,
            value_range: range,
        });
    }
    Err(FuncGenError::GenerationFailed {
        attempts: MAX_GENERATION_ATTEMPTS,
    })
}

/// Draw noisy samples: positions equally spaced with deterministic +-20%
/// jitter of the spacing on interior points, values corrupted by Gaussian
/// noise calibrated to the pre-noise value range.
pub fn sample_noisy(
    f: &TargetFunction,
    preset: &DifficultyPreset,
    seed: u64,
) -> Result<NoisySamples, FuncGenError> {
    preset.validate()?;
    let n = preset.n_samples;
    let mut rng = Rng::new(seed);
    let spacing = 1.0 / (n - 1) as f64;
    let xs: Vec<f64> = (0..n)
        .map(|i| {
            if i == 0 || i == n - 1 {
                i as f64 * spacing
            } else {
                i as f64 * spacing + rng.uniform_in(-0.2, 0.2) * spacing
            }
        })
        .collect();
    let clean: Vec<f64> = xs.iter().map(|&x| f.eval(x)).collect();
    let dy = clean.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - clean.iter().cloned().fold(f64::INFINITY, f64::min);
    let sigma = (dy / 10.0) * preset.noise_multiplier.sqrt();
    let ys: Vec<f64> = clean.iter().map(|&y| y + sigma * rng.gaussian()).collect();
    Ok(NoisySamples {
        xs,
        ys,
        sigma,
        seed,
    })
}

/// Grid point minimizing the target function; ties break toward smaller x.
/// This is the training label.
pub fn exhaustive_argmin(f: &TargetFunction, grid: &GridSpec) -> f64 {
    grid.argmin_of(|x| f.eval(x))
}

/// Count of strict local minima of `f` on the grid (interior points whose
/// value is strictly below both neighbors).
pub fn count_local_minima(f: &TargetFunction, grid: &GridSpec) -> usize {
    let vals: Vec<f64> = grid.points().map(|x| f.eval(x)).collect();
    vals.windows(3)
        .filter(|w| w[1] < w[0] && w[1] < w[2])
        .count()
}

/// One fully assembled problem instance shared by training and evaluation.
#[derive(Debug, Clone)]
pub struct Case {
    pub target: TargetFunction,
    pub samples: NoisySamples,
    pub fit: SplineFit,
    /// Spline-baseline minimizer, the model's starting position.
    pub x0: f64,
    /// Oracle label.
    pub x_star: f64,
}

/// Generate a target, sample it, fit the interpolating spline, and locate
/// both the baseline minimizer and the oracle label.
pub fn build_case(
    preset: &DifficultyPreset,
    function_seed: u64,
    noise_seed: u64,
) -> Result<Case, FuncGenError> {
    let target = generate_function(preset, function_seed)?;
    let samples = sample_noisy(&target, preset, noise_seed)?;
    let fit = fit_interpolating_spline(&samples.xs, &samples.ys)?;
    let grid = GridSpec::oracle();
    let x0 = fit.argmin(&grid);
    let x_star = target.argmin_true;
    Ok(Case {
        target,
        samples,
        fit,
        x0,
        x_star,
    })
}

/// JSON case file emitted by the CLI and consumed by golden tests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseFile {
    pub knots: Vec<f64>,
    pub coeffs: Vec<f64>,
    pub argmin_true: f64,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub seed: u64,
    pub preset: String,
}

impl CaseFile {
    pub fn from_case(case: &Case, preset: &DifficultyPreset, seed: u64) -> Self {
        CaseFile {
            knots: case.target.knots.knots().to_vec(),
            coeffs: case.target.coeffs.clone(),
            argmin_true: case.target.argmin_true,
            xs: case.samples.xs.clone(),
            ys: case.samples.ys.clone(),
            seed,
            preset: preset.name.clone(),
        }
    }
}
