//! Three-stage iterative-refinement model: MainEncoder, Iterator, Updater.
//!
//! The encoder projects four per-sample modalities (positions, values, spline
//! derivatives, spline coefficients) into a compact encoding `e` plus an
//! initial step size. The Iterator proposes bounded moves from the current
//! position; the Updater re-encodes the function representation conditioned
//! on each move. The loop stops when the variance of the last three step
//! sizes drops below `stop_tau`, or after `t_max` iterations.

use crate::autodiff::{AdError, ParamStore, Tape, ValueId};
use crate::funcgen::Case;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("invalid model inputs: {0}")]
    InvalidInputs(String),
    #[error("numeric failure at iteration {iteration}: {source}")]
    Numeric {
        iteration: usize,
        source: AdError,
    },
    #[error(transparent)]
    Ad(#[from] AdError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_edv: usize,
    pub iter_hidden: usize,
    pub t_max: usize,
    pub stop_tau: f64,
    pub n_samples: usize,
    /// Disables the convergence test so every run executes exactly `t_max`
    /// steps; used for gradient-check determinism.
    #[serde(default)]
    pub fixed_unroll: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            d_edv: 64,
            iter_hidden: 256,
            t_max: 40,
            stop_tau: 1e-5,
            n_samples: 40,
            fixed_unroll: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.d_edv == 0 || self.iter_hidden == 0 {
            return Err(ModelError::InvalidConfig("zero layer width".into()));
        }
        if self.d_model % 4 != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} must be divisible by 4 for the halving chain",
                self.d_model
            )));
        }
        if self.t_max == 0 || self.n_samples == 0 {
            return Err(ModelError::InvalidConfig(
                "t_max and n_samples must be positive".into(),
            ));
        }
        if !(self.stop_tau > 0.0) {
            return Err(ModelError::InvalidConfig("stop_tau must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-sample model inputs plus the spline-baseline starting position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInputs {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub dys: Vec<f64>,
    pub cs: Vec<f64>,
    pub x0: f64,
}

impl ModelInputs {
    /// Assemble inputs from an already-built case: spline derivatives at the
    /// sample positions and the n interior of the n+2 fitted coefficients
    /// (dropping first and last keeps per-sample index alignment).
    pub fn from_case(case: &Case) -> Result<Self, ModelError> {
        let xs = case.samples.xs.clone();
        let dys = case
            .fit
            .derivative_at(&xs)
            .map_err(|e| ModelError::InvalidInputs(e.to_string()))?;
        let n = xs.len();
        debug_assert_eq!(case.fit.coeffs.len(), n + 2);
        let cs = case.fit.coeffs[1..=n].to_vec();
        Ok(ModelInputs {
            xs,
            ys: case.samples.ys.clone(),
            dys,
            cs,
            x0: case.x0,
        })
    }

    pub fn validate(&self, n: usize) -> Result<(), ModelError> {
        for (name, v) in [
            ("xs", &self.xs),
            ("ys", &self.ys),
            ("dys", &self.dys),
            ("cs", &self.cs),
        ] {
            if v.len() != n {
                return Err(ModelError::InvalidInputs(format!(
                    "{name} has length {}, expected {n}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::InvalidInputs(format!(
                    "{name} contains a non-finite value"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.x0) {
            return Err(ModelError::InvalidInputs(format!(
                "x0 = {} outside [0,1]",
                self.x0
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Converged,
    MaxIters,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub x: f64,
    pub s: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub x0: f64,
    pub steps: Vec<StepRecord>,
    pub stop_reason: StopReason,
    pub x_final: f64,
}

/// Differentiable trajectory: position/step value ids still on the tape.
pub struct TapeTrajectory {
    pub x0: ValueId,
    pub xs: Vec<ValueId>,
    pub ss: Vec<ValueId>,
    pub ds: Vec<ValueId>,
    pub stop_reason: StopReason,
}

// -- parameter layout --------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct LinearLayer {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Activation {
    log_alpha: usize,
    log_beta: usize,
    log_gamma: usize,
}

/// Linear layer followed by a StableCubic activation with its own scalars.
#[derive(Debug, Clone, Copy)]
struct CubicLinear {
    lin: LinearLayer,
    act: Activation,
}

#[derive(Debug, Clone, Copy)]
struct UNetLayout {
    enc1: CubicLinear,
    enc2: CubicLinear,
    enc3: CubicLinear,
    bottleneck: CubicLinear,
    dec1: CubicLinear,
    dec2: CubicLinear,
    dec3: CubicLinear,
    final_proj: CubicLinear,
}

#[derive(Debug, Clone, Copy)]
struct PoolLayout {
    global: CubicLinear,
    focus: CubicLinear,
    local: CubicLinear,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayout {
    x_enc: CubicLinear,
    y_enc: CubicLinear,
    dy_enc: CubicLinear,
    c_enc: CubicLinear,
    unet: UNetLayout,
    pools: PoolLayout,
    edv: LinearLayer,
    delta: LinearLayer,
}

#[derive(Debug, Clone, Copy)]
struct IteratorLayout {
    hidden: CubicLinear,
    dir: LinearLayer,
    step: LinearLayer,
}

#[derive(Debug, Clone, Copy)]
struct UpdaterLayout {
    expand: CubicLinear,
    decompress_unet: UNetLayout,
    modifiers: [CubicLinear; 4],
    reencode_unet: UNetLayout,
    pools: PoolLayout,
    edv: LinearLayer,
}

/// Model: configuration plus parameter indices into a [`ParamStore`].
pub struct Model {
    pub cfg: ModelConfig,
    encoder: EncoderLayout,
    iterator: IteratorLayout,
    updater: UpdaterLayout,
}

const ACT_INIT: [f64; 3] = [0.1, 0.01, 0.001]; // alpha, beta, gamma

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: Rng,
}

impl Builder<'_> {
    fn linear(&mut self, name: &str, out: usize, inp: usize) -> LinearLayer {
        let bound = 1.0 / (inp as f64).sqrt();
        let w_data: Vec<f64> = (0..out * inp)
            .map(|_| self.rng.uniform_in(-bound, bound))
            .collect();
        let w = self.store.add(&format!("{name}.w"), out, inp, w_data);
        let b = self.store.add(&format!("{name}.b"), 1, out, vec![0.0; out]);
        LinearLayer { w, b }
    }

    fn activation(&mut self, name: &str) -> Activation {
        let mut ids = [0usize; 3];
        for (k, (tag, init)) in ["log_alpha", "log_beta", "log_gamma"]
            .iter()
            .zip(ACT_INIT)
            .enumerate()
        {
            ids[k] = self
                .store
                .add(&format!("{name}.{tag}"), 1, 1, vec![init.ln()]);
        }
        Activation {
            log_alpha: ids[0],
            log_beta: ids[1],
            log_gamma: ids[2],
        }
    }

    fn cubic_linear(&mut self, name: &str, out: usize, inp: usize) -> CubicLinear {
        CubicLinear {
            lin: self.linear(name, out, inp),
            act: self.activation(name),
        }
    }

    /// Halving chain 4d -> 2d -> d -> d/2 -> d/4, then mirrored decoding with
    /// skip concatenations, final projection 4d -> d.
    fn unet(&mut self, name: &str, d: usize) -> UNetLayout {
        UNetLayout {
            enc1: self.cubic_linear(&format!("{name}.enc1"), 2 * d, 4 * d),
            enc2: self.cubic_linear(&format!("{name}.enc2"), d, 2 * d),
            enc3: self.cubic_linear(&format!("{name}.enc3"), d / 2, d),
            bottleneck: self.cubic_linear(&format!("{name}.bottleneck"), d / 4, d / 2),
            dec1: self.cubic_linear(&format!("{name}.dec1"), d / 2, d / 4),
            dec2: self.cubic_linear(&format!("{name}.dec2"), d, d),
            dec3: self.cubic_linear(&format!("{name}.dec3"), 2 * d, 2 * d),
            final_proj: self.cubic_linear(&format!("{name}.final"), d, 4 * d),
        }
    }

    fn pools(&mut self, name: &str, d: usize) -> PoolLayout {
        PoolLayout {
            global: self.cubic_linear(&format!("{name}.global"), d, d),
            focus: self.cubic_linear(&format!("{name}.focus"), d, d),
            local: self.cubic_linear(&format!("{name}.local"), d, d),
        }
    }
}

impl Model {
    /// Construct the model, registering all parameters into `store` with
    /// fan-in-scaled uniform weights and zero biases.
    pub fn new(cfg: ModelConfig, store: &mut ParamStore, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let d = cfg.d_model;
        let mut b = Builder {
            store,
            rng: Rng::new(seed),
        };

        let encoder = EncoderLayout {
            x_enc: b.cubic_linear("main_encoder.x_enc", d, 1),
            y_enc: b.cubic_linear("main_encoder.y_enc", d, 1),
            dy_enc: b.cubic_linear("main_encoder.dy_enc", d, 1),
            c_enc: b.cubic_linear("main_encoder.c_enc", d, 1),
            unet: b.unet("main_encoder.unet", d),
            pools: b.pools("main_encoder.pool", d),
            edv: b.linear("main_encoder.edv", cfg.d_edv, 3 * d),
            delta: b.linear("main_encoder.delta", 1, 3 * d),
        };
        let iterator = IteratorLayout {
            hidden: b.cubic_linear("iterator.hidden", cfg.iter_hidden, cfg.d_edv + 2),
            dir: b.linear("iterator.dir", 1, cfg.iter_hidden),
            step: b.linear("iterator.step", 1, cfg.iter_hidden),
        };
        let updater = UpdaterLayout {
            expand: b.cubic_linear("updater.expand", 4 * d, cfg.d_edv),
            decompress_unet: b.unet("updater.decompress_unet", d),
            modifiers: [
                b.cubic_linear("updater.mod_x", d, d + 2),
                b.cubic_linear("updater.mod_y", d, d + 2),
                b.cubic_linear("updater.mod_dy", d, d + 2),
                b.cubic_linear("updater.mod_c", d, d + 2),
            ],
            reencode_unet: b.unet("updater.reencode_unet", d),
            pools: b.pools("updater.pool", d),
            edv: b.linear("updater.edv", cfg.d_edv, 3 * d),
        };

        Ok(Model {
            cfg,
            encoder,
            iterator,
            updater,
        })
    }

    // -- forward pieces ------------------------------------------------------

    fn apply_cubic_linear(
        &self,
        tape: &mut Tape,
        pids: &[ValueId],
        layer: &CubicLinear,
        x: ValueId,
    ) -> Result<ValueId, AdError> {
        let z = tape.linear(pids[layer.lin.w], pids[layer.lin.b], x)?;
        tape.stable_cubic(
            z,
            pids[layer.act.log_alpha],
            pids[layer.act.log_beta],
            pids[layer.act.log_gamma],
        )
    }

    fn apply_unet(
        &self,
        tape: &mut Tape,
        pids: &[ValueId],
        unet: &UNetLayout,
        x: ValueId,
    ) -> Result<ValueId, AdError> {
        let z1 = self.apply_cubic_linear(tape, pids, &unet.enc1, x)?;
        let z2 = self.apply_cubic_linear(tape, pids, &unet.enc2, z1)?;
        let z3 = self.apply_cubic_linear(tape, pids, &unet.enc3, z2)?;
        let zb = self.apply_cubic_linear(tape, pids, &unet.bottleneck, z3)?;
        let d1 = self.apply_cubic_linear(tape, pids, &unet.dec1, zb)?;
        let u1 = tape.concat(&[d1, z3])?;
        let d2 = self.apply_cubic_linear(tape, pids, &unet.dec2, u1)?;
        let u2 = tape.concat(&[d2, z2])?;
        let d3 = self.apply_cubic_linear(tape, pids, &unet.dec3, u2)?;
        let u3 = tape.concat(&[d3, z1])?;
        self.apply_cubic_linear(tape, pids, &unet.final_proj, u3)
    }

    /// Mean-pool at three scales, concatenate, no trailing activation on the
    /// projection itself.
    fn apply_pools(
        &self,
        tape: &mut Tape,
        pids: &[ValueId],
        pools: &PoolLayout,
        f: ValueId,
    ) -> Result<ValueId, AdError> {
        let m = tape.mean_rows(f);
        let g = self.apply_cubic_linear(tape, pids, &pools.global, m)?;
        let fo = self.apply_cubic_linear(tape, pids, &pools.focus, m)?;
        let lo = self.apply_cubic_linear(tape, pids, &pools.local, m)?;
        tape.concat(&[g, fo, lo])
    }

    /// MainEncoder: four 1-wide modality projections, U-Net fusion,
    /// multi-scale pooling, and the (e, delta0) heads.
    pub fn encode(
        &self,
        tape: &mut Tape,
        pids: &[ValueId],
        inputs: &ModelInputs,
    ) -> Result<(ValueId, ValueId), ModelError> {
        inputs.validate(self.cfg.n_samples)?;
        let n = self.cfg.n_samples;
        let xs = tape.constant(n, 1, inputs.xs.clone());
        let ys = tape.constant(n, 1, inputs.ys.clone());
        let dys = tape.constant(n, 1, inputs.dys.clone());
        let cs = tape.constant(n, 1, inputs.cs.clone());

        let hx = self.apply_cubic_linear(tape, pids, &self.encoder.x_enc, xs)?;
        let hy = self.apply_cubic_linear(tape, pids, &self.encoder.y_enc, ys)?;
        let hdy = self.apply_cubic_linear(tape, pids, &self.encoder.dy_enc, dys)?;
        let hc = self.apply_cubic_linear(tape, pids, &self.encoder.c_enc, cs)?;
        let hcat = tape.concat(&[hx, hy, hdy, hc])?;

        let fused = self.apply_unet(tape, pids, &self.encoder.unet, hcat)?;
        let g = self.apply_pools(tape, pids, &self.encoder.pools, fused)?;
        let e = tape.linear(pids[self.encoder.edv.w], pids[self.encoder.edv.b], g)?;
        let dz = tape.linear(pids[self.encoder.delta.w], pids[self.encoder.delta.b], g)?;
        let delta0 = tape.softplus(dz);
        tape.check_finite(e, "main_encoder")?;
        Ok((e, delta0))
    }

    /// Iterator: v = [e || x_t || delta_prev], one hidden layer, tanh
    /// direction and softplus step heads, clamped position update.
    #[allow(clippy::type_complexity)]
    pub fn iterate_step(
        &self,
        tape: &mut Tape,
        pids: &[ValueId],
        e: ValueId,
        x_t: ValueId,
        delta_prev: ValueId,
    ) -> Result<(ValueId, ValueId, ValueId), ModelError> {
        let v = tape.concat(&[e, x_t, delta_prev])?;
        let h = self.apply_cubic_linear(tape, pids, &self.iterator.hidden, v)?;
        let dz = tape.linear(pids[self.iterator.dir.w], pids[self.iterator.dir.b], h)?;
        let d = tape.tanh(dz);
        let sz = tape.linear(pids[self.iterator.step.w], pids[self.iterator.step.b], h)?;
        let s = tape.softplus(sz);
        let step = tape.mul(s, d)?;
        let moved = tape.add(x_t, step)?;
        let x_next = tape.clamp(moved, 0.0, 1.0);
        tape.check_finite(x_next, "iterator")?;
        Ok((x_next, s, d))
    }

    /// Updater: decompress e to per-sample features, condition on the new
    /// position and step via four modifiers, re-encode to e_{t+1}.
    pub fn update_encoding(
        &self,
        tape: &mut Tape,
        pids: &[ValueId],
        e: ValueId,
        x_next: ValueId,
        s_t: ValueId,
    ) -> Result<ValueId, ModelError> {
        let n = self.cfg.n_samples;
        let expanded = self.apply_cubic_linear(tape, pids, &self.updater.expand, e)?;
        let broad = tape.tile(expanded, n)?;
        let r = self.apply_unet(tape, pids, &self.updater.decompress_unet, broad)?;

        let x_col = tape.tile(x_next, n)?;
        let s_col = tape.tile(s_t, n)?;
        let cond = tape.concat(&[r, x_col, s_col])?;
        let mut mods = Vec::with_capacity(4);
        for layer in &self.updater.modifiers {
            mods.push(self.apply_cubic_linear(tape, pids, layer, cond)?);
        }
        let mcat = tape.concat(&mods)?;

        let fused = self.apply_unet(tape, pids, &self.updater.reencode_unet, mcat)?;
        let g = self.apply_pools(tape, pids, &self.updater.pools, fused)?;
        let e_next = tape.linear(pids[self.updater.edv.w], pids[self.updater.edv.b], g)?;
        tape.check_finite(e_next, "updater")?;
        Ok(e_next)
    }

    /// Full iterate-until-convergence forward pass on an existing tape,
    /// leaving positions and steps differentiable.
    pub fn run_on_tape(
        &self,
        tape: &mut Tape,
        pids: &[ValueId],
        inputs: &ModelInputs,
    ) -> Result<TapeTrajectory, ModelError> {
        let (mut e, delta0) = self.encode(tape, pids, inputs)?;
        let x0 = tape.constant(1, 1, vec![inputs.x0]);
        let mut x_t = x0;
        let mut delta_prev = delta0;

        let mut xs = Vec::new();
        let mut ss = Vec::new();
        let mut ds = Vec::new();
        let mut stop_reason = StopReason::MaxIters;

        for t in 0..self.cfg.t_max {
            let (x_next, s, d) = self
                .iterate_step(tape, pids, e, x_t, delta_prev)
                .map_err(|err| wrap_numeric(err, t))?;
            xs.push(x_next);
            ss.push(s);
            ds.push(d);
            x_t = x_next;
            delta_prev = s;

            // Convergence is control flow only: read the variance value off
            // the tape, never differentiate through the comparison.
            if t >= 2 && !self.cfg.fixed_unroll {
                let var = tape
                    .variance3(ss[t - 2], ss[t - 1], ss[t])
                    .map_err(|err| wrap_numeric(ModelError::Ad(err), t))?;
                if tape.scalar_value(var) < self.cfg.stop_tau {
                    stop_reason = StopReason::Converged;
                    break;
                }
            }

            if t + 1 < self.cfg.t_max {
                e = self
                    .update_encoding(tape, pids, e, x_next, s)
                    .map_err(|err| wrap_numeric(err, t))?;
            }
        }

        Ok(TapeTrajectory {
            x0,
            xs,
            ss,
            ds,
            stop_reason,
        })
    }

    /// Values-only forward pass.
    pub fn run(
        &self,
        store: &ParamStore,
        inputs: &ModelInputs,
    ) -> Result<Trajectory, ModelError> {
        let mut tape = Tape::new();
        let pids = tape.load_params(store);
        let traj = self.run_on_tape(&mut tape, &pids, inputs)?;
        Ok(traj.materialize(&tape, inputs.x0))
    }
}

impl TapeTrajectory {
    pub fn materialize(&self, tape: &Tape, x0: f64) -> Trajectory {
        let steps: Vec<StepRecord> = self
            .xs
            .iter()
            .zip(&self.ss)
            .zip(&self.ds)
            .map(|((&x, &s), &d)| StepRecord {
                x: tape.scalar_value(x),
                s: tape.scalar_value(s),
                d: tape.scalar_value(d),
            })
            .collect();
        let x_final = steps.last().map(|r| r.x).unwrap_or(x0);
        Trajectory {
            x0,
            steps,
            stop_reason: self.stop_reason,
            x_final,
        }
    }
}

fn wrap_numeric(err: ModelError, iteration: usize) -> ModelError {
    match err {
        ModelError::Ad(source) => ModelError::Numeric { iteration, source },
        other => other,
    }
}

// -- parameter accounting -----------------------------------------------------

/// Component parameter counts published in the reference description; the
/// audited counts from the constructed layers differ (the published figures
/// are not reconstructible from the stated layer dimensions), so reports show
/// both and the delta.
pub const PUBLISHED_COUNTS: ParamCounts = ParamCounts {
    main_encoder: 687_232,
    iterator: 84_225,
    updater: 519_389,
    total: 1_290_846,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub main_encoder: usize,
    pub iterator: usize,
    pub updater: usize,
    pub total: usize,
}

/// Audit parameter counts by component name prefix.
pub fn param_count(store: &ParamStore) -> ParamCounts {
    let mut counts = ParamCounts {
        main_encoder: 0,
        iterator: 0,
        updater: 0,
        total: 0,
    };
    for p in store.iter() {
        let n = p.rows * p.cols;
        counts.total += n;
        if p.name.starts_with("main_encoder.") {
            counts.main_encoder += n;
        } else if p.name.starts_with("iterator.") {
            counts.iterator += n;
        } else if p.name.starts_with("updater.") {
            counts.updater += n;
        }
    }
    debug_assert_eq!(
        counts.total,
        counts.main_encoder + counts.iterator + counts.updater
    );
    counts
}
