//! Command-line front end: case generation, training, evaluation, single-case
//! demo, gradient verification, and the parameter-count audit.
//!
//! Every subcommand writes a `manifest.json` with the fully resolved
//! configuration into its output directory before doing any long work, so a
//! run can be reproduced from its artifacts alone.

use crate::autodiff::{grad_check, grad_check_sampled, AdError, ParamStore, Tape, ValueId};
use crate::eval::{evaluate_checkpoint, write_report, EvalError};
use crate::funcgen::{build_case, CaseFile, DifficultyPreset, FuncGenError};
use crate::model::{param_count, Model, ModelConfig, ModelError, ModelInputs, PUBLISHED_COUNTS};
use crate::rng::{derive_seed, Namespace, Rng};
use crate::trainer::{
    model_from_checkpoint, train, trajectory_loss, LossConfig, TrainConfig, TrainError,
};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum CliError {
    /// Bad flags or config values; exit code 1.
    #[error("{0}")]
    Usage(String),
    /// Numeric or runtime failure; exit code 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

impl From<FuncGenError> for CliError {
    fn from(e: FuncGenError) -> Self {
        match e {
            FuncGenError::UnknownPreset(_) | FuncGenError::InvalidPreset(_) => usage(e),
            _ => runtime(e),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidArgument(_) => usage(e),
            TrainError::Model(ModelError::InvalidConfig(_)) => usage(e),
            _ => runtime(e),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) | ModelError::InvalidInputs(_) => usage(e),
            _ => runtime(e),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidArgument(_) => usage(e),
            EvalError::FuncGen(fg) => fg.into(),
            EvalError::Model(m) => m.into(),
            EvalError::Checkpoint(t) => t.into(),
            _ => runtime(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        runtime(e)
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "globopt",
    version,
    about = "Learned global minimization of noisy 1D functions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate case files (target spline + noisy samples) for a preset.
    Gen(GenArgs),
    /// Train a model; writes checkpoints and a training-curve CSV.
    Train(TrainArgs),
    /// Evaluate a checkpoint against the spline baseline on fresh cases.
    Eval(EvalArgs),
    /// Run one case end to end and print the trajectory.
    Demo(DemoArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Audit parameter counts against the published component figures.
    Params(ParamsArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value = "nightmare")]
    pub preset: String,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "gen_out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON config file with optional train_config / loss_config /
    /// model_config sections; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Enable global-norm gradient clipping at this threshold.
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub alpha_traj: Option<f64>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub d_edv: Option<usize>,
    #[arg(long)]
    pub iter_hidden: Option<usize>,
    #[arg(long)]
    pub t_max: Option<usize>,
    #[arg(long)]
    pub stop_tau: Option<f64>,
    /// Force fixed-length unrolls (disables the convergence test).
    #[arg(long, default_value_t = false)]
    pub fixed_unroll: bool,
    #[arg(long, default_value = "train_out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "nightmare")]
    pub preset: String,
    #[arg(long, default_value_t = 50)]
    pub n_cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "eval_out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "nightmare")]
    pub preset: String,
    /// Checkpoint to run; "none" or omitted runs the spline baseline only.
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Also write a dense true-function/fit curve CSV to this path.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long, default_value = "demo_out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Max relative error allowed for primitive suites.
    #[arg(long, default_value_t = 1e-6)]
    pub threshold: f64,
    /// Max relative error allowed for the unrolled trajectory suite.
    #[arg(long, default_value_t = 1e-4)]
    pub trajectory_threshold: f64,
    #[arg(long, default_value = "gradcheck_out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ParamsArgs {
    #[arg(long, default_value_t = 128)]
    pub d_model: usize,
    #[arg(long, default_value_t = 64)]
    pub d_edv: usize,
    #[arg(long, default_value_t = 256)]
    pub iter_hidden: usize,
    #[arg(long, default_value = "params_out")]
    pub out: PathBuf,
}

// -- run manifest ---------------------------------------------------------------

#[derive(Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub output_paths: Vec<String>,
}

fn write_manifest(out_dir: &Path, manifest: &RunManifest) -> Result<(), CliError> {
    fs::create_dir_all(out_dir)?;
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(manifest).expect("manifest serializes"),
    )?;
    Ok(())
}

// -- dispatch ---------------------------------------------------------------------

pub fn run(cli: Cli, stdout: &mut impl std::io::Write) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(args) => cmd_gen(args, stdout),
        Command::Train(args) => cmd_train(args, stdout),
        Command::Eval(args) => cmd_eval(args, stdout),
        Command::Demo(args) => cmd_demo(args, stdout),
        Command::Gradcheck(args) => cmd_gradcheck(args, stdout),
        Command::Params(args) => cmd_params(args, stdout),
    }
}

fn cmd_gen(args: GenArgs, stdout: &mut impl std::io::Write) -> Result<(), CliError> {
    let preset = DifficultyPreset::by_name(&args.preset)?;
    write_manifest(
        &args.out,
        &RunManifest {
            subcommand: "gen".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: serde_json::json!({
                "preset": preset,
                "count": args.count,
            }),
            seeds: vec![args.seed],
            output_paths: (0..args.count)
                .map(|i| format!("case_{i:04}.json"))
                .collect(),
        },
    )?;
    for i in 0..args.count {
        let fseed = derive_seed(args.seed, Namespace::EvalFunction, i as u64);
        let nseed = derive_seed(args.seed, Namespace::EvalNoise, i as u64);
        let case = build_case(&preset, fseed, nseed)?;
        let file = CaseFile::from_case(&case, &preset, fseed);
        fs::write(
            args.out.join(format!("case_{i:04}.json")),
            serde_json::to_string_pretty(&file).expect("case serializes"),
        )?;
    }
    writeln!(
        stdout,
        "wrote {} case files to {}",
        args.count,
        args.out.display()
    )?;
    Ok(())
}

#[derive(serde::Deserialize, Default)]
struct FileConfig {
    train_config: Option<TrainConfig>,
    loss_config: Option<LossConfig>,
    model_config: Option<ModelConfig>,
}

/// Resolve configs with precedence: CLI flags > config file > defaults.
fn resolve_train_config(
    args: &TrainArgs,
) -> Result<(TrainConfig, LossConfig, ModelConfig), CliError> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| usage(format!("bad config {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    let mut tcfg = file.train_config.unwrap_or_default();
    let mut lcfg = file.loss_config.unwrap_or_default();
    let mut mcfg = file.model_config.unwrap_or_default();

    if let Some(v) = args.epochs {
        tcfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        tcfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        tcfg.learning_rate = v;
    }
    if let Some(name) = &args.preset {
        tcfg.preset = DifficultyPreset::by_name(name)?;
    }
    if let Some(v) = args.seed {
        tcfg.seed = v;
    }
    if let Some(v) = args.checkpoint_every {
        tcfg.checkpoint_every = v;
    }
    if let Some(v) = args.log_every {
        tcfg.log_every = v;
    }
    if let Some(v) = args.grad_clip {
        tcfg.grad_clip = Some(v);
    }
    if let Some(v) = args.alpha_traj {
        lcfg.alpha_traj = v;
    }
    if let Some(v) = args.d_model {
        mcfg.d_model = v;
    }
    if let Some(v) = args.d_edv {
        mcfg.d_edv = v;
    }
    if let Some(v) = args.iter_hidden {
        mcfg.iter_hidden = v;
    }
    if let Some(v) = args.t_max {
        mcfg.t_max = v;
    }
    if let Some(v) = args.stop_tau {
        mcfg.stop_tau = v;
    }
    if args.fixed_unroll {
        mcfg.fixed_unroll = true;
    }
    // The model consumes exactly the preset's samples.
    mcfg.n_samples = tcfg.preset.n_samples;
    Ok((tcfg, lcfg, mcfg))
}

fn cmd_train(args: TrainArgs, stdout: &mut impl std::io::Write) -> Result<(), CliError> {
    let (tcfg, lcfg, mcfg) = resolve_train_config(&args)?;
    tcfg.validate()?;
    mcfg.validate()?;
    write_manifest(
        &args.out,
        &RunManifest {
            subcommand: "train".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: serde_json::json!({
                "train_config": tcfg,
                "loss_config": lcfg,
                "model_config": mcfg,
            }),
            seeds: vec![tcfg.seed],
            output_paths: vec![
                "train_log.csv".into(),
                "config.json".into(),
                "checkpoint_final.bin".into(),
            ],
        },
    )?;
    let outcome = train(&tcfg, &lcfg, &mcfg, &args.out)?;
    let last = outcome.records.last().expect("at least one record");
    writeln!(
        stdout,
        "trained {} epochs: final loss {:.6}, mean error {:.4}",
        tcfg.epochs, last.loss, last.mean_error
    )?;
    writeln!(stdout, "checkpoint: {}", outcome.checkpoint.display())?;
    Ok(())
}

fn cmd_eval(args: EvalArgs, stdout: &mut impl std::io::Write) -> Result<(), CliError> {
    let preset = DifficultyPreset::by_name(&args.preset)?;
    write_manifest(
        &args.out,
        &RunManifest {
            subcommand: "eval".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: serde_json::json!({
                "checkpoint": args.checkpoint.display().to_string(),
                "preset": preset,
                "n_cases": args.n_cases,
            }),
            seeds: vec![args.seed],
            output_paths: vec![
                "report.json".into(),
                "report.txt".into(),
                "histogram.csv".into(),
                "cases.jsonl".into(),
            ],
        },
    )?;
    let report = evaluate_checkpoint(&args.checkpoint, &preset, args.n_cases, args.seed)?;
    write_report(&report, &args.out).map_err(CliError::from)?;
    writeln!(
        stdout,
        "evaluated {} cases: model mean error {:.4}, spline {:.4}, improvement {:.4}",
        report.cases.len(),
        report.model.mean,
        report.spline.mean,
        report.improvement
    )?;
    Ok(())
}

fn cmd_demo(args: DemoArgs, stdout: &mut impl std::io::Write) -> Result<(), CliError> {
    let preset = DifficultyPreset::by_name(&args.preset)?;
    let checkpoint = args.checkpoint.as_deref().filter(|c| *c != "none");
    write_manifest(
        &args.out,
        &RunManifest {
            subcommand: "demo".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: serde_json::json!({
                "preset": preset,
                "checkpoint": checkpoint,
                "curve": args.curve.as_ref().map(|p| p.display().to_string()),
            }),
            seeds: vec![args.seed],
            output_paths: vec![],
        },
    )?;
    let fseed = derive_seed(args.seed, Namespace::EvalFunction, 0);
    let nseed = derive_seed(args.seed, Namespace::EvalNoise, 0);
    let case = build_case(&preset, fseed, nseed)?;
    writeln!(stdout, "x_star: {}", case.x_star)?;
    writeln!(stdout, "x0 (spline): {}", case.x0)?;
    writeln!(
        stdout,
        "spline error: {:.6}",
        (case.x0 - case.x_star).abs()
    )?;

    if let Some(path) = checkpoint {
        let (model, store) = model_from_checkpoint(Path::new(path))?;
        let inputs = ModelInputs::from_case(&case)?;
        let traj = model.run(&store, &inputs)?;
        for (t, step) in traj.steps.iter().enumerate() {
            writeln!(
                stdout,
                "{}",
                serde_json::json!({ "t": t, "x": step.x, "s": step.s, "d": step.d })
            )?;
        }
        writeln!(stdout, "stop_reason: {:?}", traj.stop_reason)?;
        writeln!(
            stdout,
            "model error: {:.6}",
            (traj.x_final - case.x_star).abs()
        )?;
    }

    if let Some(curve_path) = &args.curve {
        let mut csv = String::from("x,f_true,f_fit\n");
        for i in 0..=2000 {
            let x = i as f64 / 2000.0;
            let fit = case.fit.eval(x).map_err(runtime)?;
            let _ = writeln!(csv, "{x},{},{fit}", case.target.eval(x));
        }
        fs::write(curve_path, csv)?;
        writeln!(stdout, "curve: {}", curve_path.display())?;
    }
    Ok(())
}

// -- gradient-check suites --------------------------------------------------------

pub struct SuiteResult {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub threshold: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.threshold
    }
}

fn rand_store(shapes: &[(&str, usize, usize)], seed: u64) -> ParamStore {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    for (name, r, c) in shapes {
        // Kept away from zero so kinked primitives (relu, abs, clamp) are
        // probed off their non-differentiable points.
        let data: Vec<f64> = (0..r * c)
            .map(|_| {
                let v = rng.uniform_in(0.2, 0.9);
                if rng.next_u64() % 2 == 0 {
                    v
                } else {
                    -v
                }
            })
            .collect();
        store.add(name, *r, *c, data);
    }
    store
}

/// Reduce any matrix to a scalar: row means, then a fixed linear readout.
fn to_scalar(tape: &mut Tape, x: ValueId) -> Result<ValueId, AdError> {
    let pooled = tape.mean_rows(x);
    let (_, c) = tape.shape(pooled);
    let w = tape.constant(1, c, (0..c).map(|i| 0.3 + 0.1 * i as f64).collect());
    let b = tape.constant(1, 1, vec![0.0]);
    tape.linear(w, b, pooled)
}

/// Primitive and composite gradient-check suites; each returns the max
/// relative error against central finite differences.
pub fn gradcheck_suites(
    primitive_threshold: f64,
    trajectory_threshold: f64,
) -> Result<Vec<SuiteResult>, AdError> {
    let mut results = Vec::new();
    let mut suite = |name: &'static str,
                     shapes: &[(&str, usize, usize)],
                     seed: u64,
                     build: &dyn Fn(&mut Tape, &[ValueId]) -> Result<ValueId, AdError>|
     -> Result<(), AdError> {
        let mut store = rand_store(shapes, seed);
        let max_rel = grad_check(&mut store, build, 1e-6)?;
        results.push(SuiteResult {
            name,
            max_rel_error: max_rel,
            threshold: primitive_threshold,
        });
        Ok(())
    };

    suite(
        "linear",
        &[("w", 3, 4), ("b", 1, 3), ("x", 2, 4)],
        11,
        &|tape, p| {
            let y = tape.linear(p[0], p[1], p[2])?;
            to_scalar(tape, y)
        },
    )?;
    suite("relu", &[("x", 2, 3)], 12, &|tape, p| {
        let y = tape.relu(p[0]);
        to_scalar(tape, y)
    })?;
    suite("tanh", &[("x", 2, 3)], 13, &|tape, p| {
        let y = tape.tanh(p[0]);
        to_scalar(tape, y)
    })?;
    suite("softplus", &[("x", 2, 3)], 14, &|tape, p| {
        let y = tape.softplus(p[0]);
        to_scalar(tape, y)
    })?;
    suite("abs", &[("x", 2, 3)], 15, &|tape, p| {
        let y = tape.abs(p[0]);
        to_scalar(tape, y)
    })?;
    suite("square_scale", &[("x", 2, 3)], 16, &|tape, p| {
        let y = tape.square(p[0]);
        let y = tape.scale(y, 1.7);
        to_scalar(tape, y)
    })?;
    suite("clamp", &[("x", 2, 3)], 17, &|tape, p| {
        // Values lie in +-(0.2, 0.9); clamp bounds sit strictly outside the
        // kink neighborhoods probed by finite differences.
        let y = tape.clamp(p[0], -0.95, 0.95);
        let y = tape.clamp_max(y, 0.93);
        to_scalar(tape, y)
    })?;
    suite(
        "add_sub_mul",
        &[("a", 2, 3), ("b", 2, 3)],
        18,
        &|tape, p| {
            let s = tape.add(p[0], p[1])?;
            let d = tape.sub(p[0], p[1])?;
            let m = tape.mul(s, d)?;
            to_scalar(tape, m)
        },
    )?;
    suite(
        "concat_tile_meanrows",
        &[("a", 1, 2), ("b", 3, 3)],
        19,
        &|tape, p| {
            let tiled = tape.tile(p[0], 3)?;
            let cat = tape.concat(&[tiled, p[1]])?;
            to_scalar(tape, cat)
        },
    )?;
    suite(
        "stable_cubic",
        &[("z", 2, 3), ("la", 1, 1), ("lb", 1, 1), ("lg", 1, 1)],
        20,
        &|tape, p| {
            let y = tape.stable_cubic(p[0], p[1], p[2], p[3])?;
            to_scalar(tape, y)
        },
    )?;
    suite(
        "variance3",
        &[("a", 1, 1), ("b", 1, 1), ("c", 1, 1)],
        21,
        &|tape, p| tape.variance3(p[0], p[1], p[2]),
    )?;

    // Full trajectory loss through a 2-iteration unroll, 5-sample toy case.
    let mcfg = ModelConfig {
        d_model: 4,
        d_edv: 4,
        iter_hidden: 4,
        t_max: 2,
        stop_tau: 1e-5,
        n_samples: 5,
        fixed_unroll: true,
    };
    let mut store = ParamStore::new();
    let model = Model::new(mcfg, &mut store, 41).map_err(model_to_ad)?;
    let inputs = ModelInputs {
        xs: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        ys: vec![0.3, -0.2, 0.5, -0.4, 0.1],
        dys: vec![1.0, -0.5, 0.2, 0.8, -1.2],
        cs: vec![0.2, 0.1, -0.3, 0.4, 0.0],
        x0: 0.6,
    };
    let lcfg = LossConfig::default();
    let max_rel = grad_check_sampled(
        &mut store,
        |tape, pids| {
            let traj = model.run_on_tape(tape, pids, &inputs).map_err(model_to_ad)?;
            trajectory_loss(tape, &traj, 0.35, &lcfg).map_err(|e| AdError::ShapeMismatch {
                op: "loss",
                detail: e.to_string(),
            })
        },
        1e-6,
        200,
        7,
    )?;
    results.push(SuiteResult {
        name: "trajectory_unroll",
        max_rel_error: max_rel,
        threshold: trajectory_threshold,
    });
    Ok(results)
}

fn model_to_ad(e: ModelError) -> AdError {
    AdError::ShapeMismatch {
        op: "model",
        detail: e.to_string(),
    }
}

fn cmd_gradcheck(args: GradcheckArgs, stdout: &mut impl std::io::Write) -> Result<(), CliError> {
    write_manifest(
        &args.out,
        &RunManifest {
            subcommand: "gradcheck".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: serde_json::json!({
                "threshold": args.threshold,
                "trajectory_threshold": args.trajectory_threshold,
            }),
            seeds: vec![],
            output_paths: vec![],
        },
    )?;
    let results =
        gradcheck_suites(args.threshold, args.trajectory_threshold).map_err(runtime)?;
    let mut all_pass = true;
    for r in &results {
        writeln!(
            stdout,
            "{:<24} max rel error {:.3e} (threshold {:.0e}) {}",
            r.name,
            r.max_rel_error,
            r.threshold,
            if r.passed() { "PASS" } else { "FAIL" }
        )?;
        all_pass &= r.passed();
    }
    if all_pass {
        Ok(())
    } else {
        Err(CliError::Runtime("gradient check failed".into()))
    }
}

fn cmd_params(args: ParamsArgs, stdout: &mut impl std::io::Write) -> Result<(), CliError> {
    write_manifest(
        &args.out,
        &RunManifest {
            subcommand: "params".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: serde_json::json!({
                "d_model": args.d_model,
                "d_edv": args.d_edv,
                "iter_hidden": args.iter_hidden,
            }),
            seeds: vec![],
            output_paths: vec![],
        },
    )?;
    let cfg = ModelConfig {
        d_model: args.d_model,
        d_edv: args.d_edv,
        iter_hidden: args.iter_hidden,
        ..ModelConfig::default()
    };
    let mut store = ParamStore::new();
    Model::new(cfg, &mut store, 0)?;
    let counts = param_count(&store);
    let rows = [
        ("main_encoder", counts.main_encoder, PUBLISHED_COUNTS.main_encoder),
        ("iterator", counts.iterator, PUBLISHED_COUNTS.iterator),
        ("updater", counts.updater, PUBLISHED_COUNTS.updater),
        ("total", counts.total, PUBLISHED_COUNTS.total),
    ];
    writeln!(
        stdout,
        "{:<14}{:>12}{:>12}{:>12}",
        "component", "built", "published", "delta"
    )?;
    for (name, built, published) in rows {
        writeln!(
            stdout,
            "{:<14}{:>12}{:>12}{:>12}",
            name,
            built,
            published,
            built as i64 - published as i64
        )?;
    }
    Ok(())
}
