//! Minimal reverse-mode differentiation over dense row-major arrays.
//!
//! A [`Tape`] records one forward pass; [`Tape::backward`] walks the recorded
//! nodes in reverse and accumulates exact analytic gradients. The op set is
//! exactly what the model needs: affine layers over per-sample rows,
//! column concatenation, mean pooling, the usual pointwise nonlinearities,
//! and the fused learnable cubic activation. Gradients of every primitive are
//! verified against central finite differences in the test suite.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum AdError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value in {stage}")]
    NonFinite { stage: String },
}

// ---------------------------------------------------------------------------
// Parameter storage

/// One named learnable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Ordered, name-indexed collection of learnable parameters. Iteration order
/// is insertion order; serialization depends on it.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"GOPT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Error, Debug)]
pub enum StoreIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint manifest: {0}")]
    CorruptManifest(String),
    #[error("parameter {name} has shape ({found_rows}, {found_cols}), expected ({rows}, {cols})")]
    ShapeMismatch {
        name: String,
        found_rows: usize,
        found_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("checkpoint is missing parameter {0}")]
    MissingParam(String),
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    rows: usize,
    cols: usize,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter; returns its stable index. Panics on duplicate
    /// names, which would be a construction bug.
    pub fn add(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) -> usize {
        assert_eq!(data.len(), rows * cols, "data length for {name}");
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let idx = self.params.len();
        self.by_name.insert(name.to_string(), idx);
        self.params.push(Param {
            name: name.to_string(),
            rows,
            cols,
            grad: vec![0.0; data.len()],
            data,
        });
        idx
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar parameter count.
    pub fn total_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn param(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn param_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Versioned, little-endian binary format: magic, version, a JSON
    /// name/shape manifest, then all parameter data in insertion order.
    pub fn save(&self, path: &Path) -> Result<(), StoreIoError> {
        let manifest: Vec<ManifestEntry> = self
            .params
            .iter()
            .map(|p| ManifestEntry {
                name: p.name.clone(),
                rows: p.rows,
                cols: p.cols,
            })
            .collect();
        let manifest_bytes = serde_json::to_vec(&manifest)
            .map_err(|e| StoreIoError::CorruptManifest(e.to_string()))?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(CHECKPOINT_MAGIC)?;
        f.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        f.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
        f.write_all(&manifest_bytes)?;
        for p in &self.params {
            for v in &p.data {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ParamStore, StoreIoError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        read_exact_or_corrupt(&mut f, &mut magic, "magic")?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(StoreIoError::CorruptManifest("bad magic bytes".into()));
        }
        let mut buf4 = [0u8; 4];
        read_exact_or_corrupt(&mut f, &mut buf4, "version")?;
        let version = u32::from_le_bytes(buf4);
        if version != CHECKPOINT_VERSION {
            return Err(StoreIoError::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut buf8 = [0u8; 8];
        read_exact_or_corrupt(&mut f, &mut buf8, "manifest length")?;
        let mlen = u64::from_le_bytes(buf8) as usize;
        let mut manifest_bytes = vec![0u8; mlen];
        read_exact_or_corrupt(&mut f, &mut manifest_bytes, "manifest")?;
        let manifest: Vec<ManifestEntry> = serde_json::from_slice(&manifest_bytes)
            .map_err(|e| StoreIoError::CorruptManifest(e.to_string()))?;
        let mut store = ParamStore::new();
        for entry in manifest {
            let count = entry.rows * entry.cols;
            let mut data = vec![0.0f64; count];
            for v in data.iter_mut() {
                read_exact_or_corrupt(&mut f, &mut buf8, "parameter data")?;
                *v = f64::from_le_bytes(buf8);
            }
            store.add(&entry.name, entry.rows, entry.cols, data);
        }
        Ok(store)
    }

    /// Copy values from `other` into this store, requiring an exact
    /// name-and-shape match for every parameter of `self`.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<(), StoreIoError> {
        for i in 0..self.params.len() {
            let name = self.params[i].name.clone();
            let src_idx = other
                .index_of(&name)
                .ok_or_else(|| StoreIoError::MissingParam(name.clone()))?;
            let src = other.param(src_idx);
            let dst = &mut self.params[i];
            if src.rows != dst.rows || src.cols != dst.cols {
                return Err(StoreIoError::ShapeMismatch {
                    name,
                    found_rows: src.rows,
                    found_cols: src.cols,
                    rows: dst.rows,
                    cols: dst.cols,
                });
            }
            dst.data.copy_from_slice(&src.data);
        }
        Ok(())
    }

    /// JSON export for inspection (names, shapes, values).
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!(self
            .params
            .iter()
            .map(|p| {
                serde_json::json!({
                    "name": p.name,
                    "rows": p.rows,
                    "cols": p.cols,
                    "data": p.data,
                })
            })
            .collect::<Vec<_>>())
    }
}

fn read_exact_or_corrupt(
    f: &mut impl Read,
    buf: &mut [u8],
    what: &str,
) -> Result<(), StoreIoError> {
    f.read_exact(buf)
        .map_err(|_| StoreIoError::CorruptManifest(format!("truncated while reading {what}")))
}

// ---------------------------------------------------------------------------
// Tape

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<usize> },
    Linear { w: ValueId, b: ValueId, x: ValueId },
    Concat { parts: Vec<ValueId> },
    MeanRows { x: ValueId },
    Tile { x: ValueId },
    Relu { x: ValueId },
    Tanh { x: ValueId },
    Softplus { x: ValueId },
    ClampMax { x: ValueId, max: f64 },
    Clamp { x: ValueId, lo: f64, hi: f64 },
    Abs { x: ValueId },
    Add { a: ValueId, b: ValueId },
    Sub { a: ValueId, b: ValueId },
    Mul { a: ValueId, b: ValueId },
    Square { x: ValueId },
    Scale { x: ValueId, k: f64 },
    StableCubic {
        z: ValueId,
        log_alpha: ValueId,
        log_beta: ValueId,
        log_gamma: ValueId,
    },
    Variance3 { a: ValueId, b: ValueId, c: ValueId },
}

#[derive(Debug)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Records one forward pass. Nodes are appended in topological order, so the
/// backward sweep is a single reverse iteration.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Input clamp threshold of the stable cubic activation.
pub const CUBIC_CLAMP: f64 = 10.0;

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, data: Vec<f64>) -> ValueId {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node {
            op,
            rows,
            cols,
            data,
        });
        ValueId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> ValueId {
        self.push(Op::Leaf { param: None }, rows, cols, data)
    }

    pub fn scalar(&mut self, v: f64) -> ValueId {
        self.constant(1, 1, vec![v])
    }

    /// Leaf tied to a [`ParamStore`] entry; backward accumulates into the
    /// store's gradient when routed through [`Tape::accumulate_param_grads`].
    pub fn param(&mut self, store: &ParamStore, idx: usize) -> ValueId {
        let p = store.param(idx);
        self.push(
            Op::Leaf { param: Some(idx) },
            p.rows,
            p.cols,
            p.data.clone(),
        )
    }

    /// Leaves for every parameter, aligned with store indices.
    pub fn load_params(&mut self, store: &ParamStore) -> Vec<ValueId> {
        (0..store.len()).map(|i| self.param(store, i)).collect()
    }

    pub fn value(&self, id: ValueId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn scalar_value(&self, id: ValueId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    pub fn shape(&self, id: ValueId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    /// Error if any entry of `id` is not finite, tagged with the stage name.
    pub fn check_finite(&self, id: ValueId, stage: &str) -> Result<(), AdError> {
        if self.nodes[id.0].data.iter().any(|v| !v.is_finite()) {
            return Err(AdError::NonFinite {
                stage: stage.to_string(),
            });
        }
        Ok(())
    }

    // -- ops ---------------------------------------------------------------

    /// x (r x in) * w^T (in x out) + b (1 x out) -> (r x out).
    pub fn linear(&mut self, w: ValueId, b: ValueId, x: ValueId) -> Result<ValueId, AdError> {
        let (out_dim, in_dim) = self.shape(w);
        let (brows, bcols) = self.shape(b);
        let (r, xc) = self.shape(x);
        if xc != in_dim || brows != 1 || bcols != out_dim {
            return Err(AdError::ShapeMismatch {
                op: "linear",
                detail: format!(
                    "w ({out_dim}x{in_dim}), b ({brows}x{bcols}), x ({r}x{xc})"
                ),
            });
        }
        let wd = &self.nodes[w.0].data;
        let bd = &self.nodes[b.0].data;
        let xd = &self.nodes[x.0].data;
        let mut out = vec![0.0; r * out_dim];
        for row in 0..r {
            let xrow = &xd[row * in_dim..(row + 1) * in_dim];
            let orow = &mut out[row * out_dim..(row + 1) * out_dim];
            for o in 0..out_dim {
                let wrow = &wd[o * in_dim..(o + 1) * in_dim];
                let mut acc = bd[o];
                for i in 0..in_dim {
                    acc += wrow[i] * xrow[i];
                }
                orow[o] = acc;
            }
        }
        Ok(self.push(Op::Linear { w, b, x }, r, out_dim, out))
    }

    /// Column-wise concatenation of parts with equal row counts.
    pub fn concat(&mut self, parts: &[ValueId]) -> Result<ValueId, AdError> {
        assert!(!parts.is_empty());
        let rows = self.shape(parts[0]).0;
        if parts.iter().any(|p| self.shape(*p).0 != rows) {
            return Err(AdError::ShapeMismatch {
                op: "concat",
                detail: format!(
                    "row counts {:?}",
                    parts.iter().map(|p| self.shape(*p).0).collect::<Vec<_>>()
                ),
            });
        }
        let total_cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut out = vec![0.0; rows * total_cols];
        let mut col0 = 0;
        for p in parts {
            let (_, c) = self.shape(*p);
            let pd = &self.nodes[p.0].data;
            for row in 0..rows {
                out[row * total_cols + col0..row * total_cols + col0 + c]
                    .copy_from_slice(&pd[row * c..(row + 1) * c]);
            }
            col0 += c;
        }
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
            },
            rows,
            total_cols,
            out,
        ))
    }

    /// (r x c) -> (1 x c), mean over rows (samples).
    pub fn mean_rows(&mut self, x: ValueId) -> ValueId {
        let (r, c) = self.shape(x);
        let xd = &self.nodes[x.0].data;
        let mut out = vec![0.0; c];
        for row in 0..r {
            for j in 0..c {
                out[j] += xd[row * c + j];
            }
        }
        let inv = 1.0 / r as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        self.push(Op::MeanRows { x }, 1, c, out)
    }

    /// (1 x c) -> (rows x c), repeated rows.
    pub fn tile(&mut self, x: ValueId, rows: usize) -> Result<ValueId, AdError> {
        let (r, c) = self.shape(x);
        if r != 1 {
            return Err(AdError::ShapeMismatch {
                op: "tile",
                detail: format!("expected a single row, got {r}x{c}"),
            });
        }
        let xd = &self.nodes[x.0].data;
        let mut out = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            out.extend_from_slice(xd);
        }
        Ok(self.push(Op::Tile { x }, rows, c, out))
    }

    fn unary(&mut self, x: ValueId, op: Op, f: impl Fn(f64) -> f64) -> ValueId {
        let (r, c) = self.shape(x);
        let data = self.nodes[x.0].data.iter().map(|&v| f(v)).collect();
        self.push(op, r, c, data)
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        self.unary(x, Op::Relu { x }, |v| v.max(0.0))
    }

    pub fn tanh(&mut self, x: ValueId) -> ValueId {
        self.unary(x, Op::Tanh { x }, f64::tanh)
    }

    pub fn softplus(&mut self, x: ValueId) -> ValueId {
        self.unary(x, Op::Softplus { x }, stable_softplus)
    }

    pub fn clamp_max(&mut self, x: ValueId, max: f64) -> ValueId {
        self.unary(x, Op::ClampMax { x, max }, |v| v.min(max))
    }

    pub fn clamp(&mut self, x: ValueId, lo: f64, hi: f64) -> ValueId {
        self.unary(x, Op::Clamp { x, lo, hi }, |v| v.clamp(lo, hi))
    }

    pub fn abs(&mut self, x: ValueId) -> ValueId {
        self.unary(x, Op::Abs { x }, f64::abs)
    }

    pub fn square(&mut self, x: ValueId) -> ValueId {
        self.unary(x, Op::Square { x }, |v| v * v)
    }

    pub fn scale(&mut self, x: ValueId, k: f64) -> ValueId {
        self.unary(x, Op::Scale { x, k }, |v| k * v)
    }

    fn binary(
        &mut self,
        a: ValueId,
        b: ValueId,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<ValueId, AdError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ar != br || ac != bc {
            return Err(AdError::ShapeMismatch {
                op: name,
                detail: format!("({ar}x{ac}) vs ({br}x{bc})"),
            });
        }
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(op, ar, ac, data))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AdError> {
        self.binary(a, b, "add", Op::Add { a, b }, |x, y| x + y)
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AdError> {
        self.binary(a, b, "sub", Op::Sub { a, b }, |x, y| x - y)
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AdError> {
        self.binary(a, b, "mul", Op::Mul { a, b }, |x, y| x * y)
    }

    /// Fused learnable cubic activation: alpha*r + beta*r^2 + gamma*r^3 with
    /// r = relu(min(z, 10)) and alpha = exp(log_alpha) etc. The three
    /// parameters are 1x1 leaves.
    pub fn stable_cubic(
        &mut self,
        z: ValueId,
        log_alpha: ValueId,
        log_beta: ValueId,
        log_gamma: ValueId,
    ) -> Result<ValueId, AdError> {
        for (p, nm) in [
            (log_alpha, "log_alpha"),
            (log_beta, "log_beta"),
            (log_gamma, "log_gamma"),
        ] {
            if self.shape(p) != (1, 1) {
                return Err(AdError::ShapeMismatch {
                    op: "stable_cubic",
                    detail: format!("{nm} must be a scalar"),
                });
            }
        }
        let alpha = self.scalar_value(log_alpha).exp();
        let beta = self.scalar_value(log_beta).exp();
        let gamma = self.scalar_value(log_gamma).exp();
        let (r, c) = self.shape(z);
        let data = self.nodes[z.0]
            .data
            .iter()
            .map(|&v| {
                let rr = v.min(CUBIC_CLAMP).max(0.0);
                rr * (alpha + rr * (beta + rr * gamma))
            })
            .collect();
        Ok(self.push(
            Op::StableCubic {
                z,
                log_alpha,
                log_beta,
                log_gamma,
            },
            r,
            c,
            data,
        ))
    }

    /// Population variance of three scalars.
    pub fn variance3(
        &mut self,
        a: ValueId,
        b: ValueId,
        c: ValueId,
    ) -> Result<ValueId, AdError> {
        for v in [a, b, c] {
            if self.shape(v) != (1, 1) {
                return Err(AdError::ShapeMismatch {
                    op: "variance3",
                    detail: "all inputs must be scalars".into(),
                });
            }
        }
        let (x, y, z) = (
            self.scalar_value(a),
            self.scalar_value(b),
            self.scalar_value(c),
        );
        // Mean written so a constant triple gives exactly zero variance.
        let m = x + ((y - x) + (z - x)) / 3.0;
        let v = ((x - m).powi(2) + (y - m).powi(2) + (z - m).powi(2)) / 3.0;
        Ok(self.push(Op::Variance3 { a, b, c }, 1, 1, vec![v]))
    }

    // -- backward ----------------------------------------------------------

    /// Reverse sweep from a scalar output. Returns per-node gradients.
    pub fn backward(&self, out: ValueId) -> Gradients {
        assert_eq!(
            self.nodes[out.0].data.len(),
            1,
            "backward requires a scalar output"
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![1.0]);

        for i in (0..=out.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn acc(grads: &mut [Option<Vec<f64>>], node: &Node, id: ValueId, f: impl FnOnce(&mut [f64])) {
        let slot =
            grads[id.0].get_or_insert_with(|| vec![0.0; node.data.len()]);
        f(slot);
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Linear { w, b, x } => {
                let (out_dim, in_dim) = self.shape(*w);
                let r = self.shape(*x).0;
                let wd = &self.nodes[w.0].data;
                let xd = &self.nodes[x.0].data;
                Self::acc(grads, &self.nodes[x.0], *x, |gx| {
                    for row in 0..r {
                        let grow = &g[row * out_dim..(row + 1) * out_dim];
                        let gxrow = &mut gx[row * in_dim..(row + 1) * in_dim];
                        for o in 0..out_dim {
                            let go = grow[o];
                            if go == 0.0 {
                                continue;
                            }
                            let wrow = &wd[o * in_dim..(o + 1) * in_dim];
                            for k in 0..in_dim {
                                gxrow[k] += go * wrow[k];
                            }
                        }
                    }
                });
                Self::acc(grads, &self.nodes[w.0], *w, |gw| {
                    for row in 0..r {
                        let grow = &g[row * out_dim..(row + 1) * out_dim];
                        let xrow = &xd[row * in_dim..(row + 1) * in_dim];
                        for o in 0..out_dim {
                            let go = grow[o];
                            if go == 0.0 {
                                continue;
                            }
                            let gwrow = &mut gw[o * in_dim..(o + 1) * in_dim];
                            for k in 0..in_dim {
                                gwrow[k] += go * xrow[k];
                            }
                        }
                    }
                });
                Self::acc(grads, &self.nodes[b.0], *b, |gb| {
                    for row in 0..r {
                        let grow = &g[row * out_dim..(row + 1) * out_dim];
                        for o in 0..out_dim {
                            gb[o] += grow[o];
                        }
                    }
                });
            }
            Op::Concat { parts } => {
                let total_cols = node.cols;
                let rows = node.rows;
                let mut col0 = 0;
                for p in parts {
                    let (_, c) = self.shape(*p);
                    Self::acc(grads, &self.nodes[p.0], *p, |gp| {
                        for row in 0..rows {
                            for j in 0..c {
                                gp[row * c + j] += g[row * total_cols + col0 + j];
                            }
                        }
                    });
                    col0 += c;
                }
            }
            Op::MeanRows { x } => {
                let (r, c) = self.shape(*x);
                let inv = 1.0 / r as f64;
                Self::acc(grads, &self.nodes[x.0], *x, |gx| {
                    for row in 0..r {
                        for j in 0..c {
                            gx[row * c + j] += g[j] * inv;
                        }
                    }
                });
            }
            Op::Tile { x } => {
                let c = node.cols;
                let rows = node.rows;
                Self::acc(grads, &self.nodes[x.0], *x, |gx| {
                    for row in 0..rows {
                        for j in 0..c {
                            gx[j] += g[row * c + j];
                        }
                    }
                });
            }
            Op::Relu { x } => {
                let xd = &self.nodes[x.0].data;
                Self::acc(grads, &self.nodes[x.0], *x, |gx| {
                    for (k, gv) in g.iter().enumerate() {
                        if xd[k] > 0.0 {
                            gx[k] += gv;
                        }
                    }
                });
            }
            Op::Tanh { x } => {
                let yd = &node.data;
                Self::acc(grads, &self.nodes[x.0], *x, |gx| {
                    for (k, gv) in g.iter().enumerate() {
                        gx[k] += gv * (1.0 - yd[k] * yd[k]);
                    }
                });
            }
            Op::Softplus { x } => {
                let xd = &self.nodes[x.0].data;
                Self::acc(grads, &self.nodes[x.0], *x, |gx| {
                    for (k, gv) in g.iter().enumerate() {
                        gx[k] += gv * sigmoid(xd[k]);
                    }
                });
            }
            Op::ClampMax { x, max } => {
                let xd = &self.nodes[x.0].data;
                Self::acc(grads, &self.nodes[x.0], *x, |gx| {
                    for (k, gv) in g.iter().enumerate() {
                        if xd[k] <= *max {
                            gx[k] += gv;
                        }
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let xd = &self.nodes[x.0].data;
                Self::acc(grads, &self.nodes[x.0], *x, |gx| {
                    for (k, gv) in g.iter().enumerate() {
                        if xd[k] >= *lo && xd[k] <= *hi {
                            gx[k] += gv;
                        }
                    }
                });
            }
            Op::Abs { x } => {
                let xd = &self.nodes[x.0].data;
                Self::acc(grads, &self.nodes[x.0], *x, |gx| {
                    for (k, gv) in g.iter().enumerate() {
                        gx[k] += gv * xd[k].signum() * if xd[k] == 0.0 { 0.0 } else { 1.0 };
                    }
                });
            }
            Op::Add { a, b } => {
                for id in [a, b] {
                    Self::acc(grads, &self.nodes[id.0], *id, |gp| {
                        for (k, gv) in g.iter().enumerate() {
                            gp[k] += gv;
                        }
                    });
                }
            }
            Op::Sub { a, b } => {
                Self::acc(grads, &self.nodes[a.0], *a, |gp| {
                    for (k, gv) in g.iter().enumerate() {
                        gp[k] += gv;
                    }
                });
                Self::acc(grads, &self.nodes[b.0], *b, |gp| {
                    for (k, gv) in g.iter().enumerate() {
                        gp[k] -= gv;
                    }
                });
            }
            Op::Mul { a, b } => {
                let ad = &self.nodes[a.0].data;
                let bd = &self.nodes[b.0].data;
                Self::acc(grads, &self.nodes[a.0], *a, |gp| {
                    for (k, gv) in g.iter().enumerate() {
                        gp[k] += gv * bd[k];
                    }
                });
                Self::acc(grads, &self.nodes[b.0], *b, |gp| {
                    for (k, gv) in g.iter().enumerate() {
                        gp[k] += gv * ad[k];
                    }
                });
            }
            Op::Square { x } => {
                let xd = &self.nodes[x.0].data;
                Self::acc(grads, &self.nodes[x.0], *x, |gx| {
                    for (k, gv) in g.iter().enumerate() {
                        gx[k] += gv * 2.0 * xd[k];
                    }
                });
            }
            Op::Scale { x, k } => {
                let kk = *k;
                Self::acc(grads, &self.nodes[x.0], *x, |gx| {
                    for (i2, gv) in g.iter().enumerate() {
                        gx[i2] += gv * kk;
                    }
                });
            }
            Op::StableCubic {
                z,
                log_alpha,
                log_beta,
                log_gamma,
            } => {
                let alpha = self.nodes[log_alpha.0].data[0].exp();
                let beta = self.nodes[log_beta.0].data[0].exp();
                let gamma = self.nodes[log_gamma.0].data[0].exp();
                let zd = &self.nodes[z.0].data;
                let (mut ga, mut gb, mut gc) = (0.0, 0.0, 0.0);
                Self::acc(grads, &self.nodes[z.0], *z, |gz| {
                    for (k, gv) in g.iter().enumerate() {
                        let v = zd[k];
                        let r = v.min(CUBIC_CLAMP).max(0.0);
                        // d(out)/d(log alpha) = alpha * r, etc.
                        ga += gv * alpha * r;
                        gb += gv * beta * r * r;
                        gc += gv * gamma * r * r * r;
                        if v > 0.0 && v <= CUBIC_CLAMP {
                            gz[k] += gv * (alpha + r * (2.0 * beta + 3.0 * gamma * r));
                        }
                    }
                });
                Self::acc(grads, &self.nodes[log_alpha.0], *log_alpha, |gp| gp[0] += ga);
                Self::acc(grads, &self.nodes[log_beta.0], *log_beta, |gp| gp[0] += gb);
                Self::acc(grads, &self.nodes[log_gamma.0], *log_gamma, |gp| gp[0] += gc);
            }
            Op::Variance3 { a, b, c } => {
                let x = self.nodes[a.0].data[0];
                let y = self.nodes[b.0].data[0];
                let z = self.nodes[c.0].data[0];
                let m = x + ((y - x) + (z - x)) / 3.0;
                let gv = g[0];
                for (id, v) in [(a, x), (b, y), (c, z)] {
                    Self::acc(grads, &self.nodes[id.0], *id, |gp| {
                        gp[0] += gv * 2.0 * (v - m) / 3.0;
                    });
                }
            }
        }
    }

    /// Add the parameter-leaf gradients of a backward pass into the store.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(idx) } = node.op {
                if let Some(g) = &grads.grads[i] {
                    let p = store.param_mut(idx);
                    for (dst, src) in p.grad.iter_mut().zip(g) {
                        *dst += src;
                    }
                }
            }
        }
    }
}

/// Per-node gradients from one backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the output w.r.t. node `id`; zeros if the node does not
    /// influence the output.
    pub fn of(&self, tape: &Tape, id: ValueId) -> Vec<f64> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => vec![0.0; tape.nodes[id.0].data.len()],
        }
    }
}

// ---------------------------------------------------------------------------
// Gradient checking

/// Max relative error between analytic parameter gradients and central finite
/// differences of the scalar computation `build`, probing every coordinate.
pub fn grad_check<F>(store: &mut ParamStore, build: F, eps: f64) -> Result<f64, AdError>
where
    F: Fn(&mut Tape, &[ValueId]) -> Result<ValueId, AdError>,
{
    let n_params = store.len();
    let coords: Vec<(usize, usize)> = (0..n_params)
        .flat_map(|p| (0..store.param(p).data.len()).map(move |k| (p, k)))
        .collect();
    grad_check_coords(store, build, eps, &coords)
}

/// Like [`grad_check`] but probing a pseudorandom subset of at most
/// `max_coords` parameter coordinates.
pub fn grad_check_sampled<F>(
    store: &mut ParamStore,
    build: F,
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64, AdError>
where
    F: Fn(&mut Tape, &[ValueId]) -> Result<ValueId, AdError>,
{
    let mut coords: Vec<(usize, usize)> = (0..store.len())
        .flat_map(|p| (0..store.param(p).data.len()).map(move |k| (p, k)))
        .collect();
    let mut rng = crate::rng::Rng::new(seed);
    // partial Fisher-Yates
    let take = max_coords.min(coords.len());
    for i in 0..take {
        let j = i + (rng.next_u64() as usize) % (coords.len() - i);
        coords.swap(i, j);
    }
    coords.truncate(take);
    grad_check_coords(store, build, eps, &coords)
}

fn grad_check_coords<F>(
    store: &mut ParamStore,
    build: F,
    eps: f64,
    coords: &[(usize, usize)],
) -> Result<f64, AdError>
where
    F: Fn(&mut Tape, &[ValueId]) -> Result<ValueId, AdError>,
{
    let forward = |store: &ParamStore| -> Result<f64, AdError> {
        let mut tape = Tape::new();
        let ids = tape.load_params(store);
        let out = build(&mut tape, &ids)?;
        let v = tape.scalar_value(out);
        if !v.is_finite() {
            return Err(AdError::NonFinite {
                stage: "grad_check forward".into(),
            });
        }
        Ok(v)
    };

    // analytic pass
    let mut tape = Tape::new();
    let ids = tape.load_params(store);
    let out = build(&mut tape, &ids)?;
    tape.check_finite(out, "grad_check forward")?;
    let grads = tape.backward(out);
    let analytic: Vec<Vec<f64>> = ids.iter().map(|id| grads.of(&tape, *id)).collect();

    let mut max_rel = 0.0f64;
    for &(p, k) in coords {
        let orig = store.param(p).data[k];
        store.param_mut(p).data[k] = orig + eps;
        let fp = forward(store)?;
        store.param_mut(p).data[k] = orig - eps;
        let fm = forward(store)?;
        store.param_mut(p).data[k] = orig;
        let fd = (fp - fm) / (2.0 * eps);
        let an = analytic[p][k];
        let rel = (an - fd).abs() / an.abs().max(1.0);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand_store(shapes: &[(&str, usize, usize)], seed: u64) -> ParamStore {
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        for (name, r, c) in shapes {
            let data: Vec<f64> = (0..r * c).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            store.add(name, *r, *c, data);
        }
        store
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let mut t = Tape::new();
        let x = t.scalar(0.0);
        let y = t.softplus(x);
        assert!((t.scalar_value(y) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn tanh_gradient_at_zero_is_one() {
        let mut t = Tape::new();
        let x = t.scalar(0.0);
        let y = t.tanh(x);
        let g = t.backward(y);
        assert_eq!(g.of(&t, x), vec![1.0]);
    }

    #[test]
    fn mean_rows_gradient_is_uniform() {
        let n = 40;
        let mut t = Tape::new();
        let x = t.constant(n, 1, (0..n).map(|i| i as f64).collect());
        let m = t.mean_rows(x);
        let g = t.backward(m);
        for v in g.of(&t, x) {
            assert!((v - 1.0 / n as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn clamp_max_gradient_hard_zero_above() {
        let mut t = Tape::new();
        let x = t.constant(1, 3, vec![5.0, 10.0, 10.5]);
        let y = t.clamp_max(x, 10.0);
        let w = t.constant(1, 3, vec![1.0, 1.0, 1.0]);
        let b = t.constant(1, 1, vec![0.0]);
        let out = t.linear(w, b, y).unwrap();
        let g = t.backward(out);
        let gx = g.of(&t, x);
        assert_eq!(gx[0], 1.0);
        assert_eq!(gx[1], 1.0);
        assert_eq!(gx[2], 0.0);
    }

    #[test]
    fn stable_cubic_spec_values() {
        let mut store = ParamStore::new();
        store.add("la", 1, 1, vec![(0.1f64).ln()]);
        store.add("lb", 1, 1, vec![(0.01f64).ln()]);
        store.add("lg", 1, 1, vec![(0.001f64).ln()]);
        let eval = |z: f64, store: &ParamStore| {
            let mut t = Tape::new();
            let ids = t.load_params(store);
            let zv = t.scalar(z);
            let y = t.stable_cubic(zv, ids[0], ids[1], ids[2]).unwrap();
            t.scalar_value(y)
        };
        assert_eq!(eval(-1.0, &store), 0.0);
        assert!((eval(1.0, &store) - 0.111).abs() < 1e-12);
        assert!((eval(20.0, &store) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn stable_cubic_bounded_and_monotone() {
        let mut rng = Rng::new(77);
        for _ in 0..100 {
            let la = rng.uniform_in(-4.0, 0.5);
            let lb = rng.uniform_in(-6.0, 0.0);
            let lg = rng.uniform_in(-8.0, -1.0);
            let (a, b, g) = (la.exp(), lb.exp(), lg.exp());
            let bound = 10.0 * a + 100.0 * b + 1000.0 * g;
            let mut store = ParamStore::new();
            store.add("la", 1, 1, vec![la]);
            store.add("lb", 1, 1, vec![lb]);
            store.add("lg", 1, 1, vec![lg]);
            let mut prev = -1.0f64;
            for k in 0..200 {
                let z = -5.0 + k as f64 * 0.1;
                let mut t = Tape::new();
                let ids = t.load_params(&store);
                let zv = t.scalar(z);
                let y = t.stable_cubic(zv, ids[0], ids[1], ids[2]).unwrap();
                let v = t.scalar_value(y);
                assert!(v >= 0.0 && v <= bound + 1e-12);
                assert!(v >= prev - 1e-12, "not monotone at z={z}");
                prev = v;
            }
        }
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // f(x) = x*x + x*x via a shared square vs two independent squares.
        let mut t = Tape::new();
        let x = t.scalar(3.0);
        let sq = t.square(x);
        let shared = t.add(sq, sq).unwrap();
        let g_shared = t.backward(shared).of(&t, x)[0];

        let mut t2 = Tape::new();
        let x2 = t2.scalar(3.0);
        let sq_a = t2.square(x2);
        let sq_b = t2.square(x2);
        let dup = t2.add(sq_a, sq_b).unwrap();
        let g_dup = t2.backward(dup).of(&t2, x2)[0];

        assert_eq!(g_shared, 12.0);
        assert_eq!(g_shared, g_dup);
    }

    #[test]
    fn square_gradcheck_trivial() {
        let mut store = ParamStore::new();
        store.add("w", 1, 1, vec![3.0]);
        let err = grad_check(
            &mut store,
            |t, ids| {
                let y = t.square(ids[0]);
                Ok(y)
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "rel err {err}");
    }

    /// Run `build` over `trials` random parameter draws and return the worst
    /// finite-difference relative error. Draws that land a parameter within
    /// `kink_margin` of any value in `kinks` are redrawn: a probe straddling
    /// a subgradient kink measures the probe, not the gradient.
    fn check_primitive<F>(
        name: &str,
        shapes: &[(&str, usize, usize)],
        trials: usize,
        kinks: &[f64],
        build: F,
    ) where
        F: Fn(&mut Tape, &[ValueId]) -> Result<ValueId, AdError>,
    {
        let kink_margin = 1e-4;
        let mut worst = 0.0f64;
        let mut seed = 0u64;
        let mut done = 0;
        while done < trials {
            seed += 1;
            let mut store = rand_store(shapes, 0xAD00 + seed);
            let near_kink = store.iter().any(|p| {
                p.data
                    .iter()
                    .any(|v| kinks.iter().any(|k| (v - k).abs() < kink_margin))
            });
            if near_kink {
                continue;
            }
            let err = grad_check(&mut store, &build, 1e-6).unwrap();
            worst = worst.max(err);
            done += 1;
        }
        assert!(worst < 1e-6, "{name}: worst rel err {worst}");
    }

    #[test]
    fn primitives_match_finite_differences() {
        let v4 = &[("x", 2, 2)][..];
        check_primitive("relu", v4, 100, &[0.0], |t, ids| {
            let y = t.relu(ids[0]);
            let m = t.mean_rows(y);
            let w = t.constant(1, 2, vec![1.0, -0.5]);
            let b = t.constant(1, 1, vec![0.0]);
            t.linear(w, b, m)
        });
        check_primitive("tanh", v4, 100, &[], |t, ids| {
            let y = t.tanh(ids[0]);
            let m = t.mean_rows(y);
            let w = t.constant(1, 2, vec![1.0, -0.5]);
            let b = t.constant(1, 1, vec![0.0]);
            t.linear(w, b, m)
        });
        check_primitive("softplus", v4, 100, &[], |t, ids| {
            let y = t.softplus(ids[0]);
            let m = t.mean_rows(y);
            let w = t.constant(1, 2, vec![1.0, -0.5]);
            let b = t.constant(1, 1, vec![0.0]);
            t.linear(w, b, m)
        });
        check_primitive("abs", v4, 100, &[0.0], |t, ids| {
            let y = t.abs(ids[0]);
            let m = t.mean_rows(y);
            let w = t.constant(1, 2, vec![1.0, -0.5]);
            let b = t.constant(1, 1, vec![0.0]);
            t.linear(w, b, m)
        });
        check_primitive("square_mul_addsub", v4, 100, &[], |t, ids| {
            let sq = t.square(ids[0]);
            let pr = t.mul(sq, ids[0])?;
            let su = t.add(pr, sq)?;
            let di = t.sub(su, ids[0])?;
            let m = t.mean_rows(di);
            let w = t.constant(1, 2, vec![1.0, -0.5]);
            let b = t.constant(1, 1, vec![0.0]);
            t.linear(w, b, m)
        });
        check_primitive("clamp", v4, 100, &[-0.3, 0.3], |t, ids| {
            let y = t.clamp(ids[0], -0.3, 0.3);
            let m = t.mean_rows(y);
            let w = t.constant(1, 2, vec![1.0, -0.5]);
            let b = t.constant(1, 1, vec![0.0]);
            t.linear(w, b, m)
        });
        check_primitive("clamp_max", v4, 100, &[0.2], |t, ids| {
            let y = t.clamp_max(ids[0], 0.2);
            let m = t.mean_rows(y);
            let w = t.constant(1, 2, vec![1.0, -0.5]);
            let b = t.constant(1, 1, vec![0.0]);
            t.linear(w, b, m)
        });
        check_primitive(
            "linear_concat_mean_tile",
            &[("w1", 3, 4), ("b1", 1, 3), ("x", 5, 4)],
            100,
            &[],
            |t, ids| {
                let h = t.linear(ids[0], ids[1], ids[2])?; // 5x3
                let ht = t.tanh(h);
                let cat = t.concat(&[h, ht])?; // 5x6
                let m = t.mean_rows(cat); // 1x6
                let tiled = t.tile(m, 3)?; // 3x6
                let m2 = t.mean_rows(tiled);
                let w = t.constant(1, 6, vec![0.5; 6]);
                let b = t.constant(1, 1, vec![0.0]);
                t.linear(w, b, m2)
            },
        );
        check_primitive(
            "stable_cubic",
            &[("z", 2, 3), ("la", 1, 1), ("lb", 1, 1), ("lg", 1, 1)],
            100,
            &[0.0],
            |t, ids| {
                let y = t.stable_cubic(ids[0], ids[1], ids[2], ids[3])?;
                let m = t.mean_rows(y);
                let w = t.constant(1, 3, vec![1.0, -0.5, 0.25]);
                let b = t.constant(1, 1, vec![0.0]);
                t.linear(w, b, m)
            },
        );
        check_primitive(
            "variance3",
            &[("a", 1, 1), ("b", 1, 1), ("c", 1, 1)],
            100,
            &[],
            |t, ids| t.variance3(ids[0], ids[1], ids[2]),
        );
    }

    #[test]
    fn variance3_values_and_gradient() {
        let mut store = ParamStore::new();
        store.add("a", 1, 1, vec![0.1]);
        store.add("b", 1, 1, vec![0.5]);
        store.add("c", 1, 1, vec![0.1]);
        let mut t = Tape::new();
        let ids = t.load_params(&store);
        let v = t.variance3(ids[0], ids[1], ids[2]).unwrap();
        // mean 0.2333.., var of {0.1, 0.5, 0.1}
        let m: f64 = 0.7 / 3.0;
        let expect = ((0.1 - m).powi(2) * 2.0 + (0.5 - m).powi(2)) / 3.0;
        assert!((t.scalar_value(v) - expect).abs() < 1e-15);
        let err = grad_check(
            &mut store,
            |t, ids| t.variance3(ids[0], ids[1], ids[2]),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-8, "rel err {err}");
    }

    #[test]
    fn constant_sequence_variance_is_zero() {
        let mut t = Tape::new();
        let a = t.scalar(0.7);
        let b = t.scalar(0.7);
        let c = t.scalar(0.7);
        let v = t.variance3(a, b, c).unwrap();
        assert_eq!(t.scalar_value(v), 0.0);
    }

    #[test]
    fn shape_mismatch_names_operation() {
        let mut t = Tape::new();
        let w = t.constant(2, 3, vec![0.0; 6]);
        let b = t.constant(1, 2, vec![0.0; 2]);
        let x = t.constant(4, 5, vec![0.0; 20]);
        match t.linear(w, b, x) {
            Err(AdError::ShapeMismatch { op, .. }) => assert_eq!(op, "linear"),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn store_roundtrip_bit_exact() {
        let store = rand_store(&[("w", 7, 3), ("b", 1, 7)], 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        store.save(&path).unwrap();
        let loaded = ParamStore::load(&path).unwrap();
        assert_eq!(store.len(), loaded.len());
        for (a, b) in store.iter().zip(loaded.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!((a.rows, a.cols), (b.rows, b.cols));
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn truncated_checkpoint_is_corrupt() {
        let store = rand_store(&[("w", 7, 3)], 6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        store.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(
            ParamStore::load(&path),
            Err(StoreIoError::CorruptManifest(_))
        ));
    }

    #[test]
    fn version_mismatch_detected() {
        let store = rand_store(&[("w", 2, 2)], 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        store.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            ParamStore::load(&path),
            Err(StoreIoError::VersionMismatch { found: 99, .. })
        ));
    }

    #[test]
    fn load_values_shape_mismatch_names_tensor() {
        let mut dst = rand_store(&[("w", 4, 4)], 8);
        let src = rand_store(&[("w", 2, 2)], 9);
        match dst.load_values_from(&src) {
            Err(StoreIoError::ShapeMismatch { name, .. }) => assert_eq!(name, "w"),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }
}
