//! Held-out evaluation: model vs spline baseline over freshly generated
//! cases, with aggregate metrics and plot-ready report files.

use crate::funcgen::{build_case, Case, DifficultyPreset, FuncGenError};
use crate::model::{Model, ModelError, ModelInputs, StopReason};
use crate::rng::{derive_seed, Namespace};
use crate::trainer::TrainError;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum EvalError {
    #[error("invalid evaluation argument: {0}")]
    InvalidArgument(String),
    #[error("all {0} cases failed to generate")]
    NoCases(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] TrainError),
    #[error(transparent)]
    FuncGen(#[from] FuncGenError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub seed: u64,
    pub x_star: f64,
    pub x0: f64,
    pub x_final: f64,
    pub spline_error: f64,
    pub model_error: f64,
    /// f(x_final) - f(x*) on the true function; supplemental metric.
    pub value_gap: f64,
    pub iterations: usize,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

impl ErrorStats {
    pub fn from_values(values: &[f64]) -> Self {
        assert!(!values.is_empty());
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        ErrorStats {
            mean,
            median,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub preset: String,
    pub seed: u64,
    pub n_requested: usize,
    pub n_generation_failures: usize,
    pub cases: Vec<CaseResult>,
    pub model: ErrorStats,
    pub spline: ErrorStats,
    pub best_case_seed: u64,
    pub best_case_error: f64,
    pub success_at_010: f64,
    pub success_at_015: f64,
    /// spline mean error minus model mean error (positive = model better).
    pub improvement: f64,
    pub improved_fraction: f64,
    pub mean_value_gap: f64,
}

impl EvalReport {
    fn assemble(
        preset: &DifficultyPreset,
        seed: u64,
        n_requested: usize,
        n_generation_failures: usize,
        cases: Vec<CaseResult>,
    ) -> Self {
        let model_errors: Vec<f64> = cases.iter().map(|c| c.model_error).collect();
        let spline_errors: Vec<f64> = cases.iter().map(|c| c.spline_error).collect();
        let model = ErrorStats::from_values(&model_errors);
        let spline = ErrorStats::from_values(&spline_errors);
        let n = cases.len() as f64;
        let best = cases
            .iter()
            .min_by(|a, b| a.model_error.total_cmp(&b.model_error))
            .expect("at least one case");
        EvalReport {
            preset: preset.name.clone(),
            seed,
            n_requested,
            n_generation_failures,
            model,
            spline,
            best_case_seed: best.seed,
            best_case_error: best.model_error,
            success_at_010: cases.iter().filter(|c| c.model_error < 0.10).count() as f64 / n,
            success_at_015: cases.iter().filter(|c| c.model_error < 0.15).count() as f64 / n,
            improvement: spline.mean - model.mean,
            improved_fraction: cases
                .iter()
                .filter(|c| c.model_error < c.spline_error)
                .count() as f64
                / n,
            mean_value_gap: cases.iter().map(|c| c.value_gap).sum::<f64>() / n,
            cases,
        }
    }
}

/// Outcome of running the optimizer (or a stand-in) on one case.
pub struct RunOutcome {
    pub x_final: f64,
    pub iterations: usize,
    pub stop_reason: StopReason,
}

/// Evaluation over fresh cases with a caller-supplied per-case runner.
/// Case seeds come from the evaluation namespaces, disjoint from training.
pub fn evaluate_with<F>(
    preset: &DifficultyPreset,
    n_cases: usize,
    seed: u64,
    mut run: F,
) -> Result<EvalReport, EvalError>
where
    F: FnMut(&Case) -> Result<RunOutcome, ModelError>,
{
    if n_cases == 0 {
        return Err(EvalError::InvalidArgument("n_cases must be >= 1".into()));
    }
    let mut cases = Vec::with_capacity(n_cases);
    let mut failures = 0usize;
    for i in 0..n_cases {
        let fseed = derive_seed(seed, Namespace::EvalFunction, i as u64);
        let nseed = derive_seed(seed, Namespace::EvalNoise, i as u64);
        let case = match build_case(preset, fseed, nseed) {
            Ok(c) => c,
            Err(FuncGenError::GenerationFailed { .. }) => {
                failures += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let outcome = run(&case)?;
        let f_star = case.target.eval(case.x_star);
        cases.push(CaseResult {
            seed: fseed,
            x_star: case.x_star,
            x0: case.x0,
            x_final: outcome.x_final,
            spline_error: (case.x0 - case.x_star).abs(),
            model_error: (outcome.x_final - case.x_star).abs(),
            value_gap: case.target.eval(outcome.x_final) - f_star,
            iterations: outcome.iterations,
            stop_reason: outcome.stop_reason,
        });
    }
    if cases.is_empty() {
        return Err(EvalError::NoCases(n_cases));
    }
    Ok(EvalReport::assemble(preset, seed, n_cases, failures, cases))
}

pub fn evaluate_model(
    model: &Model,
    store: &crate::autodiff::ParamStore,
    preset: &DifficultyPreset,
    n_cases: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    evaluate_with(preset, n_cases, seed, |case| {
        let inputs = ModelInputs::from_case(case)?;
        let traj = model.run(store, &inputs)?;
        Ok(RunOutcome {
            x_final: traj.x_final,
            iterations: traj.steps.len(),
            stop_reason: traj.stop_reason,
        })
    })
}

/// Load a checkpoint (parameters + model config sidecar) and evaluate it.
pub fn evaluate_checkpoint(
    path: &Path,
    preset: &DifficultyPreset,
    n_cases: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let (model, store) = crate::trainer::model_from_checkpoint(path)?;
    evaluate_model(&model, &store, preset, n_cases, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub preset: String,
    pub seed: u64,
    pub n_requested: usize,
    pub n_generation_failures: usize,
    pub stats: ErrorStats,
    pub errors: Vec<f64>,
}

/// Spline-only error distribution; also the generator-calibration instrument.
pub fn spline_baseline(
    preset: &DifficultyPreset,
    n_cases: usize,
    seed: u64,
) -> Result<BaselineStats, EvalError> {
    let report = evaluate_with(preset, n_cases, seed, |case| {
        Ok(RunOutcome {
            x_final: case.x0,
            iterations: 0,
            stop_reason: StopReason::Converged,
        })
    })?;
    Ok(BaselineStats {
        preset: preset.name.clone(),
        seed,
        n_requested: n_cases,
        n_generation_failures: report.n_generation_failures,
        stats: report.spline,
        errors: report.cases.iter().map(|c| c.spline_error).collect(),
    })
}

// -- report files ---------------------------------------------------------------

pub const HISTOGRAM_BIN_WIDTH: f64 = 0.025;

/// Writes report.json, report.txt, histogram.csv, and cases.jsonl.
pub fn write_report(report: &EvalReport, out_dir: &Path) -> Result<(), EvalError> {
    fs::create_dir_all(out_dir)?;
    fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(report).expect("report serializes"),
    )?;
    fs::write(out_dir.join("report.txt"), render_text(report))?;

    let mut hist = fs::File::create(out_dir.join("histogram.csv"))?;
    writeln!(hist, "bin_lo,bin_hi,count")?;
    let n_bins = (1.0 / HISTOGRAM_BIN_WIDTH).ceil() as usize;
    for b in 0..n_bins {
        let lo = b as f64 * HISTOGRAM_BIN_WIDTH;
        let hi = lo + HISTOGRAM_BIN_WIDTH;
        let count = report
            .cases
            .iter()
            .filter(|c| c.model_error >= lo && (c.model_error < hi || (b + 1 == n_bins && c.model_error <= hi)))
            .count();
        writeln!(hist, "{lo},{hi},{count}")?;
    }

    let mut jsonl = fs::File::create(out_dir.join("cases.jsonl"))?;
    for case in &report.cases {
        writeln!(jsonl, "{}", serde_json::to_string(case).expect("case serializes"))?;
    }
    Ok(())
}

fn render_text(r: &EvalReport) -> String {
    let mut s = String::new();
    use std::fmt::Write as _;
    let _ = writeln!(s, "Evaluation: preset {}, seed {}", r.preset, r.seed);
    let _ = writeln!(
        s,
        "Cases: {} evaluated / {} requested ({} generation failures)",
        r.cases.len(),
        r.n_requested,
        r.n_generation_failures
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<22}{:>12}{:>12}", "metric", "spline", "model");
    let _ = writeln!(
        s,
        "{:<22}{:>11.2}%{:>11.2}%",
        "mean error",
        100.0 * r.spline.mean,
        100.0 * r.model.mean
    );
    let _ = writeln!(
        s,
        "{:<22}{:>11.2}%{:>11.2}%",
        "median error",
        100.0 * r.spline.median,
        100.0 * r.model.median
    );
    // Spline std and success rates are beyond-table supplementals.
    let _ = writeln!(
        s,
        "{:<22}{:>11.2}%{:>11.2}%  (supplemental)",
        "std of error",
        100.0 * r.spline.std,
        100.0 * r.model.std
    );
    let _ = writeln!(
        s,
        "{:<22}{:>12}{:>11.1}%",
        "success (<10%)",
        "--",
        100.0 * r.success_at_010
    );
    let _ = writeln!(
        s,
        "{:<22}{:>12}{:>11.1}%",
        "success (<15%)",
        "--",
        100.0 * r.success_at_015
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "improvement (mean): {:.2} points",
        100.0 * r.improvement
    );
    let _ = writeln!(
        s,
        "cases improved over spline: {:.1}%",
        100.0 * r.improved_fraction
    );
    let _ = writeln!(
        s,
        "best case: seed {} with error {:.2}%",
        r.best_case_seed,
        100.0 * r.best_case_error
    );
    let _ = writeln!(
        s,
        "mean value gap f(x_T) - f(x*): {:.4} (supplemental)",
        r.mean_value_gap
    );
    s
}
