//! Trajectory loss, Adam training loop over freshly generated functions,
//! checkpointing, and training-curve logging.

use crate::autodiff::{AdError, ParamStore, StoreIoError, Tape, ValueId};
use crate::funcgen::{build_case, DifficultyPreset, FuncGenError};
use crate::model::{param_count, Model, ModelConfig, ModelError, ModelInputs, TapeTrajectory};
use crate::rng::{derive_seed, Namespace};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum TrainError {
    #[error("invalid training argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite loss at epoch {epoch} (case function seed {case_seed})")]
    NonFiniteLoss { epoch: usize, case_seed: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    FuncGen(#[from] FuncGenError),
    #[error(transparent)]
    Store(#[from] StoreIoError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ad(#[from] AdError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight on the per-step trajectory terms (distinct from activation
    /// alphas).
    pub alpha_traj: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha_traj: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub preset: DifficultyPreset,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub log_every: usize,
    /// Global-norm gradient clip; disabled by default for faithfulness runs.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10_000,
            batch_size: 16,
            learning_rate: 2e-4,
            preset: DifficultyPreset::nightmare(),
            seed: 0,
            checkpoint_every: 1000,
            log_every: 10,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidArgument(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if self.learning_rate < 0.0 {
            return Err(TrainError::InvalidArgument(
                "learning_rate must be >= 0".into(),
            ));
        }
        if self.checkpoint_every == 0 || self.log_every == 0 {
            return Err(TrainError::InvalidArgument(
                "checkpoint_every and log_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub loss: f64,
    pub mean_error: f64,
    pub seconds: f64,
}

// -- trajectory loss ----------------------------------------------------------

/// Loss = |x_T - x*|^2 + alpha * sum_t [ |x_t - x*|^2
///        + ReLU(|x_t - x*| - |x_{t-1} - x*|)^2 ]
/// with x_0 the starting position and t running over executed steps.
pub fn trajectory_loss(
    tape: &mut Tape,
    traj: &TapeTrajectory,
    x_star: f64,
    cfg: &LossConfig,
) -> Result<ValueId, TrainError> {
    if traj.xs.is_empty() {
        return Err(TrainError::InvalidArgument(
            "trajectory has no steps".into(),
        ));
    }
    let star = tape.constant(1, 1, vec![x_star]);
    let err_of = |tape: &mut Tape, x: ValueId| -> Result<ValueId, AdError> {
        let diff = tape.sub(x, star)?;
        Ok(tape.abs(diff))
    };

    let mut prev_err = err_of(tape, traj.x0)?;
    let mut per_step_sum: Option<ValueId> = None;
    for &x_t in &traj.xs {
        let e_t = err_of(tape, x_t)?;
        let sq = tape.square(e_t);
        let regress = tape.sub(e_t, prev_err)?;
        let relu = tape.relu(regress);
        let penalty = tape.square(relu);
        let term = tape.add(sq, penalty)?;
        per_step_sum = Some(match per_step_sum {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
        prev_err = e_t;
    }
    let final_err = err_of(tape, *traj.xs.last().unwrap())?;
    let final_sq = tape.square(final_err);
    let weighted = tape.scale(per_step_sum.unwrap(), cfg.alpha_traj);
    Ok(tape.add(final_sq, weighted)?)
}

// -- optimizer ----------------------------------------------------------------

/// Adam with bias correction; moments laid out parallel to the store.
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        let shapes: Vec<Vec<f64>> = store
            .iter()
            .map(|p| vec![0.0; p.rows * p.cols])
            .collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    /// One update from the gradients currently accumulated in the store.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for idx in 0..store.len() {
            let p = store.param_mut(idx);
            for (k, g) in p.grad.clone().iter().enumerate() {
                let m = &mut self.m[idx][k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                let v = &mut self.v[idx][k];
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                p.data[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Scale all gradients so the global norm does not exceed `max_norm`.
pub fn clip_gradients(store: &mut ParamStore, max_norm: f64) {
    let norm = store.grad_norm();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for idx in 0..store.len() {
            store
                .param_mut(idx)
                .grad
                .iter_mut()
                .for_each(|g| *g *= factor);
        }
    }
}

// -- checkpoints ----------------------------------------------------------------

/// Parameter binary plus a JSON sidecar holding the model config and the
/// audited parameter counts.
pub fn save_checkpoint(
    store: &ParamStore,
    mcfg: &ModelConfig,
    path: &Path,
) -> Result<(), TrainError> {
    store.save(path)?;
    let sidecar = serde_json::json!({
        "model_config": mcfg,
        "param_counts": param_count(store),
    });
    fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
    )?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, ModelConfig), TrainError> {
    let store = ParamStore::load(path)?;
    let text = fs::read_to_string(sidecar_path(path))?;
    let sidecar: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| TrainError::InvalidArgument(format!("bad checkpoint sidecar: {e}")))?;
    let mcfg: ModelConfig = serde_json::from_value(sidecar["model_config"].clone())
        .map_err(|e| TrainError::InvalidArgument(format!("bad model config in sidecar: {e}")))?;
    Ok((store, mcfg))
}

/// Rebuild a runnable model from a checkpoint: fresh layout from the sidecar
/// config, then exact parameter values from the binary.
pub fn model_from_checkpoint(path: &Path) -> Result<(Model, ParamStore), TrainError> {
    let (values, mcfg) = load_checkpoint(path)?;
    let mut store = ParamStore::new();
    let model = Model::new(mcfg, &mut store, 0)?;
    store.load_values_from(&values)?;
    Ok((model, store))
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

// -- training loop --------------------------------------------------------------

pub struct TrainOutcome {
    pub records: Vec<TrainLogRecord>,
    pub checkpoint: PathBuf,
    pub log_csv: PathBuf,
}

/// Case seeds for one epoch: function and noise streams both keyed by the
/// global case index so every epoch sees fresh data.
fn case_seeds(root: u64, epoch: usize, batch_size: usize, member: usize) -> (u64, u64) {
    let idx = (epoch * batch_size + member) as u64;
    (
        derive_seed(root, Namespace::TrainFunction, idx),
        derive_seed(root, Namespace::TrainNoise, idx),
    )
}

pub fn train(
    tcfg: &TrainConfig,
    lcfg: &LossConfig,
    mcfg: &ModelConfig,
    out_dir: &Path,
) -> Result<TrainOutcome, TrainError> {
    tcfg.validate()?;
    mcfg.validate()?;
    fs::create_dir_all(out_dir)?;

    let mut store = ParamStore::new();
    let model = Model::new(mcfg.clone(), &mut store, derive_seed(tcfg.seed, Namespace::TrainFunction, u32::MAX as u64))?;
    let mut adam = Adam::new(&store, tcfg.learning_rate);

    let config_json = serde_json::json!({
        "train_config": tcfg,
        "loss_config": lcfg,
        "model_config": mcfg,
        "param_counts": param_count(&store),
    });
    fs::write(
        out_dir.join("config.json"),
        serde_json::to_string_pretty(&config_json).expect("config serializes"),
    )?;

    let log_csv = out_dir.join("train_log.csv");
    let mut log = fs::File::create(&log_csv)?;
    writeln!(log, "epoch,loss,mean_error,seconds")?;

    let started = Instant::now();
    let mut records = Vec::new();

    for epoch in 0..tcfg.epochs {
        store.zero_grad();
        let mut loss_sum = 0.0;
        let mut err_sum = 0.0;
        let inv_batch = 1.0 / tcfg.batch_size as f64;

        for member in 0..tcfg.batch_size {
            let (fseed, nseed) = case_seeds(tcfg.seed, epoch, tcfg.batch_size, member);
            let case = build_case(&tcfg.preset, fseed, nseed)?;
            let inputs = ModelInputs::from_case(&case)?;

            let mut tape = Tape::new();
            let pids = tape.load_params(&store);
            let traj = model.run_on_tape(&mut tape, &pids, &inputs)?;
            let loss = trajectory_loss(&mut tape, &traj, case.x_star, lcfg)?;
            let scaled = tape.scale(loss, inv_batch);

            let loss_val = tape.scalar_value(loss);
            if !loss_val.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    case_seed: fseed,
                });
            }
            loss_sum += loss_val * inv_batch;
            let x_final = tape.scalar_value(*traj.xs.last().unwrap());
            err_sum += (x_final - case.x_star).abs() * inv_batch;

            let grads = tape.backward(scaled);
            tape.accumulate_param_grads(&grads, &mut store);
        }

        if let Some(max_norm) = tcfg.grad_clip {
            clip_gradients(&mut store, max_norm);
        }
        adam.step(&mut store);

        let record = TrainLogRecord {
            epoch,
            loss: loss_sum,
            mean_error: err_sum,
            seconds: started.elapsed().as_secs_f64(),
        };
        if epoch % tcfg.log_every == 0 || epoch + 1 == tcfg.epochs {
            // Loss and error columns are deterministic; the seconds column is
            // wall time and excluded from byte-identity comparisons.
            writeln!(
                log,
                "{},{},{},{:.3}",
                record.epoch, record.loss, record.mean_error, record.seconds
            )?;
            records.push(record);
        }
        if (epoch + 1) % tcfg.checkpoint_every == 0 && epoch + 1 != tcfg.epochs {
            save_checkpoint(
                &store,
                mcfg,
                &out_dir.join(format!("checkpoint_{:07}.bin", epoch + 1)),
            )?;
        }
    }

    let checkpoint = out_dir.join("checkpoint_final.bin");
    save_checkpoint(&store, mcfg, &checkpoint)?;
    Ok(TrainOutcome {
        records,
        checkpoint,
        log_csv,
    })
}
