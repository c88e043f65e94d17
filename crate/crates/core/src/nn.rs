//! Small feed-forward network engine: a shared first hidden layer feeding two
//! specialised heads, exact reverse-mode gradients, Adam and soft updates.
//!
//! Topology for `hidden_dims = [h0, h1, ..]`:
//!
//! ```text
//! input -> dense(h0) -> relu -> dropout            (trunk, shared)
//!        ├── dense(h1) -> relu -> dropout -> .. -> dense(out0)   (head 0)
//!        └── dense(h1) -> relu -> dropout -> .. -> dense(out1)   (head 1)
//! ```
//!
//! Head 0 is the state value `V` (dueling) or the policy logits (actor-critic);
//! head 1 is the advantage vector or the action values `Q`. With an empty
//! `hidden_dims` both heads are linear maps of the input.
//!
//! All parameters live in one flat `Vec<f64>` in declaration order: trunk
//! layers, then head 0 (hidden layers, output layer), then head 1. Every layer
//! stores its weight matrix row-major with shape `(fan_in, fan_out)` followed by
//! its bias vector. The checkpoint format in [`ParameterSet::write_to`] dumps
//! exactly this vector.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_HIDDEN: [usize; 2] = [128, 64];
pub const DEFAULT_DROPOUT: f64 = 0.1;

const MAGIC: &[u8; 8] = b"DLRLNET\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input dimension mismatch: network expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operation requires a {expected:?} network, found {found:?}")]
    WrongHead { expected: HeadKind, found: HeadKind },
    #[error("backprop called without a recorded forward pass")]
    MissingForwardPass,
    #[error("cotangent shape {found:?} does not match head output shape {expected:?}")]
    CotangentShape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("gradient contains a non-finite entry at index {index}")]
    NonFiniteGradient { index: usize },
    #[error("parameter sets belong to different network specs")]
    SpecMismatch,
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    DuelingQ,
    ActorCritic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub n_actions: usize,
    pub head_kind: HeadKind,
    pub dropout_rate: f64,
}

impl NetworkSpec {
    /// Default architecture: hidden layers `[128, 64]`, dropout 0.1.
    pub fn new(input_dim: usize, n_actions: usize, head_kind: HeadKind) -> Self {
        Self {
            input_dim,
            hidden_dims: DEFAULT_HIDDEN.to_vec(),
            n_actions,
            head_kind,
            dropout_rate: DEFAULT_DROPOUT,
        }
    }

    pub fn with_hidden(mut self, hidden_dims: Vec<usize>) -> Self {
        self.hidden_dims = hidden_dims;
        self
    }

    pub fn with_dropout(mut self, dropout_rate: f64) -> Self {
        self.dropout_rate = dropout_rate;
        self
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 {
            return Err(NnError::InvalidSpec("input_dim must be positive".into()));
        }
        if self.n_actions == 0 {
            return Err(NnError::InvalidSpec("n_actions must be positive".into()));
        }
        if self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(NnError::InvalidSpec("hidden layer of width 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NnError::InvalidSpec(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Output widths of head 0 and head 1.
    pub fn head_dims(&self) -> [usize; 2] {
        match self.head_kind {
            HeadKind::DuelingQ => [1, self.n_actions],
            HeadKind::ActorCritic => [self.n_actions, self.n_actions],
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn n_params(&self) -> usize {
        self.layout().n_params
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
    /// Hidden layers apply relu and dropout; output layers are linear.
    pub hidden: bool,
}

impl LayerSlot {
    pub fn weights(&self) -> Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    pub fn bias(&self) -> Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }
}

/// Offsets of every layer inside the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Layout {
    pub layers: Vec<LayerSlot>,
    pub trunk: Range<usize>,
    pub heads: [Range<usize>; 2],
    pub n_params: usize,
}

impl Layout {
    fn new(spec: &NetworkSpec) -> Self {
        let mut layers = Vec::new();
        let mut offset = 0;
        let mut push = |fan_in: usize, fan_out: usize, hidden: bool, layers: &mut Vec<LayerSlot>| {
            layers.push(LayerSlot {
                fan_in,
                fan_out,
                offset,
                hidden,
            });
            offset += fan_in * fan_out + fan_out;
        };

        let (trunk_width, head_hidden) = match spec.hidden_dims.split_first() {
            Some((&first, rest)) => {
                push(spec.input_dim, first, true, &mut layers);
                (first, rest)
            }
            None => (spec.input_dim, &[][..]),
        };
        let trunk = 0..layers.len();

        let mut heads = [0..0, 0..0];
        for (head, out_dim) in spec.head_dims().into_iter().enumerate() {
            let start = layers.len();
            let mut width = trunk_width;
            for &h in head_hidden {
                push(width, h, true, &mut layers);
                width = h;
            }
            push(width, out_dim, false, &mut layers);
            heads[head] = start..layers.len();
        }

        Self {
            layers,
            trunk,
            heads,
            n_params: offset,
        }
    }
}

/// Network weights plus the spec that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    spec: NetworkSpec,
    layout_params: usize,
    values: Vec<f64>,
}

/// One real per parameter; same layout as the [`ParameterSet`] it differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
}

impl GradientVector {
    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add_scaled(&mut self, other: &GradientVector, scale: f64) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Dropout switch for a forward pass.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

/// Raw head outputs for a batch; rows are samples.
#[derive(Debug, Clone)]
pub struct HeadOutputs {
    pub heads: [Array2<f64>; 2],
}

struct LayerRecord {
    input: Array2<f64>,
    /// relu derivative times dropout scale, hidden layers only
    factor: Option<Array2<f64>>,
}

/// Activations cached by a forward pass so the paired backward pass can reuse
/// the same dropout masks.
#[derive(Default)]
pub struct Tape {
    records: Vec<LayerRecord>,
    batch: usize,
}

impl Tape {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clear(&mut self) {
        self.records.clear();
        self.batch = 0;
    }
}

impl ParameterSet {
    /// Xavier-uniform weights, zero biases.
    pub fn init(spec: NetworkSpec, rng: &mut dyn RngCore) -> Result<Self, NnError> {
        spec.validate()?;
        let layout = spec.layout();
        let mut values = vec![0.0; layout.n_params];
        for slot in &layout.layers {
            let limit = (6.0 / (slot.fan_in + slot.fan_out) as f64).sqrt();
            for w in &mut values[slot.weights()] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(Self {
            spec,
            layout_params: layout.n_params,
            values,
        })
    }

    pub fn from_values(spec: NetworkSpec, values: Vec<f64>) -> Result<Self, NnError> {
        spec.validate()?;
        let n = spec.n_params();
        if values.len() != n {
            return Err(NnError::InvalidSpec(format!(
                "expected {n} parameters, got {}",
                values.len()
            )));
        }
        Ok(Self {
            spec,
            layout_params: n,
            values,
        })
    }

    /// All weights zero, output biases set: the heads emit `outputs` for any input.
    pub fn constant(spec: NetworkSpec, outputs: [&[f64]; 2]) -> Result<Self, NnError> {
        spec.validate()?;
        let layout = spec.layout();
        let mut values = vec![0.0; layout.n_params];
        for (head, out) in layout.heads.iter().zip(outputs) {
            let slot = layout.layers[head.end - 1];
            if out.len() != slot.fan_out {
                return Err(NnError::DimensionMismatch {
                    expected: slot.fan_out,
                    found: out.len(),
                });
            }
            values[slot.bias()].copy_from_slice(out);
        }
        Self::from_values(spec, values)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.layout_params
    }

    pub fn is_empty(&self) -> bool {
        self.layout_params == 0
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn zero_gradient(&self) -> GradientVector {
        GradientVector::zeros(self.len())
    }

    fn weights(&self, slot: &LayerSlot) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((slot.fan_in, slot.fan_out), &self.values[slot.weights()])
            .expect("layout shape")
    }

    fn bias(&self, slot: &LayerSlot) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.values[slot.bias()])
    }

    /// Batched forward pass. Rows of `inputs` are belief vectors. When `tape`
    /// is given, activations and dropout masks are recorded for [`Self::backprop`].
    pub fn forward(
        &self,
        inputs: ArrayView2<'_, f64>,
        mut mode: Mode<'_>,
        mut tape: Option<&mut Tape>,
    ) -> Result<HeadOutputs, NnError> {
        if inputs.ncols() != self.spec.input_dim {
            return Err(NnError::DimensionMismatch {
                expected: self.spec.input_dim,
                found: inputs.ncols(),
            });
        }
        if let Some(t) = tape.as_deref_mut() {
            t.clear();
            t.batch = inputs.nrows();
        }
        let layout = self.spec.layout();
        let keep = 1.0 - self.spec.dropout_rate;

        let mut run_layer = |x: Array2<f64>, slot: &LayerSlot, tape: &mut Option<&mut Tape>| {
            let mut y = x.dot(&self.weights(slot));
            y += &self.bias(slot);
            let factor = if slot.hidden {
                let mut factor = y.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                if let Mode::Train(rng) = &mut mode {
                    if self.spec.dropout_rate > 0.0 {
                        let scale = 1.0 / keep;
                        factor.mapv_inplace(|f| {
                            if rng.random::<f64>() < keep {
                                f * scale
                            } else {
                                0.0
                            }
                        });
                    }
                }
                y *= &factor;
                Some(factor)
            } else {
                None
            };
            if let Some(t) = tape.as_deref_mut() {
                t.records.push(LayerRecord { input: x, factor });
            }
            y
        };

        let mut trunk_out = inputs.to_owned();
        for slot in &layout.layers[layout.trunk.clone()] {
            trunk_out = run_layer(trunk_out, slot, &mut tape);
        }
        let mut outs = Vec::with_capacity(2);
        for head in &layout.heads {
            let mut x = trunk_out.clone();
            for slot in &layout.layers[head.clone()] {
                x = run_layer(x, slot, &mut tape);
            }
            outs.push(x);
        }
        let second = outs.pop().expect("two heads");
        let first = outs.pop().expect("two heads");
        Ok(HeadOutputs {
            heads: [first, second],
        })
    }

    /// Exact gradient of `sum_i <heads_i, cotangents_i>` with respect to every
    /// parameter, through the activations recorded on `tape`.
    pub fn backprop(
        &self,
        tape: &Tape,
        cotangents: &[Array2<f64>; 2],
    ) -> Result<GradientVector, NnError> {
        if tape.is_empty() {
            return Err(NnError::MissingForwardPass);
        }
        let layout = self.spec.layout();
        if tape.records.len() != layout.layers.len() {
            return Err(NnError::MissingForwardPass);
        }
        for (cot, dim) in cotangents.iter().zip(self.spec.head_dims()) {
            if cot.dim() != (tape.batch, dim) {
                return Err(NnError::CotangentShape {
                    expected: (tape.batch, dim),
                    found: cot.dim(),
                });
            }
        }

        let mut grad = self.zero_gradient();
        let back_layer = |idx: usize, dy: Array2<f64>, grad: &mut GradientVector| -> Array2<f64> {
            let slot = &layout.layers[idx];
            let record = &tape.records[idx];
            let dy = match &record.factor {
                Some(f) => dy * f,
                None => dy,
            };
            let (w_range, b_range) = (slot.weights(), slot.bias());
            {
                let mut dw = ArrayViewMut2::from_shape(
                    (slot.fan_in, slot.fan_out),
                    &mut grad.values[w_range],
                )
                .expect("layout shape");
                general_mat_mul(1.0, &record.input.t(), &dy, 1.0, &mut dw);
            }
            let db = dy.sum_axis(Axis(0));
            for (g, d) in grad.values[b_range].iter_mut().zip(db.iter()) {
                *g += d;
            }
            dy.dot(&self.weights(slot).t())
        };

        let trunk_width = layout
            .trunk
            .clone()
            .last()
            .map(|i| layout.layers[i].fan_out)
            .unwrap_or(self.spec.input_dim);
        let mut d_trunk = Array2::<f64>::zeros((tape.batch, trunk_width));
        for (head, cot) in layout.heads.iter().zip(cotangents) {
            let mut dy = cot.clone();
            for idx in head.clone().rev() {
                dy = back_layer(idx, dy, &mut grad);
            }
            d_trunk += &dy;
        }
        let mut dy = d_trunk;
        for idx in layout.trunk.clone().rev() {
            dy = back_layer(idx, dy, &mut grad);
        }
        Ok(grad)
    }

    fn check_same_spec(&self, other: &ParameterSet) -> Result<(), NnError> {
        if self.spec != other.spec {
            return Err(NnError::SpecMismatch);
        }
        Ok(())
    }

    /// Overwrite with another network's weights (hard target sync).
    pub fn copy_from(&mut self, other: &ParameterSet) -> Result<(), NnError> {
        self.check_same_spec(other)?;
        self.values.copy_from_slice(&other.values);
        Ok(())
    }

    /// Serialises header and parameters. Layout, all integers little-endian:
    ///
    /// ```text
    /// bytes  field
    /// 8      magic "DLRLNET\0"
    /// 4      format version (u32) = 1
    /// 4      head kind (u32): 0 = DuelingQ, 1 = ActorCritic
    /// 8      input_dim (u64)
    /// 8      n_actions (u64)
    /// 8      dropout_rate (f64 bits)
    /// 8      number of hidden layers n (u64)
    /// 8*n    hidden widths (u64 each)
    /// 8      number of parameters p (u64)
    /// 8*p    parameters (f64 bits) in declaration order
    /// ```
    pub fn write_to(&self, mut w: impl Write) -> Result<(), NnError> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let kind: u32 = match self.spec.head_kind {
            HeadKind::DuelingQ => 0,
            HeadKind::ActorCritic => 1,
        };
        w.write_all(&kind.to_le_bytes())?;
        w.write_all(&(self.spec.input_dim as u64).to_le_bytes())?;
        w.write_all(&(self.spec.n_actions as u64).to_le_bytes())?;
        w.write_all(&self.spec.dropout_rate.to_le_bytes())?;
        w.write_all(&(self.spec.hidden_dims.len() as u64).to_le_bytes())?;
        for &h in &self.spec.hidden_dims {
            w.write_all(&(h as u64).to_le_bytes())?;
        }
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, NnError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::BadCheckpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(NnError::BadCheckpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let head_kind = match read_u32(&mut r)? {
            0 => HeadKind::DuelingQ,
            1 => HeadKind::ActorCritic,
            k => return Err(NnError::BadCheckpoint(format!("unknown head kind {k}"))),
        };
        let input_dim = read_u64(&mut r)? as usize;
        let n_actions = read_u64(&mut r)? as usize;
        let dropout_rate = f64::from_bits(read_u64(&mut r)?);
        let n_hidden = read_u64(&mut r)? as usize;
        if n_hidden > 64 {
            return Err(NnError::BadCheckpoint(format!("{n_hidden} hidden layers")));
        }
        let hidden_dims = (0..n_hidden)
            .map(|_| read_u64(&mut r).map(|h| h as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let spec = NetworkSpec {
            input_dim,
            hidden_dims,
            n_actions,
            head_kind,
            dropout_rate,
        };
        spec.validate()
            .map_err(|e| NnError::BadCheckpoint(e.to_string()))?;
        let n_params = read_u64(&mut r)? as usize;
        if n_params != spec.n_params() {
            return Err(NnError::BadCheckpoint(format!(
                "header promises {n_params} parameters, spec needs {}",
                spec.n_params()
            )));
        }
        let values = (0..n_params)
            .map(|_| read_u64(&mut r).map(f64::from_bits))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_values(spec, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, NnError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64, NnError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Per-state outputs of a dueling network.
#[derive(Debug, Clone, PartialEq)]
pub struct DuelingOutput {
    pub v: f64,
    pub adv: Vec<f64>,
    pub q: Vec<f64>,
}

/// Per-state outputs of an actor-critic network.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCriticOutput {
    pub policy: Vec<f64>,
    pub q: Vec<f64>,
}

fn expect_head(params: &ParameterSet, kind: HeadKind) -> Result<(), NnError> {
    if params.spec.head_kind != kind {
        return Err(NnError::WrongHead {
            expected: kind,
            found: params.spec.head_kind,
        });
    }
    Ok(())
}

fn single_row(belief: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, belief.len()), belief).expect("row view")
}

/// `q[a] = v + adv[a] - mean(adv)` row by row.
pub fn dueling_q(v: ArrayView2<'_, f64>, adv: ArrayView2<'_, f64>) -> Array2<f64> {
    let mean = adv.mean_axis(Axis(1)).expect("non-empty advantage head");
    let mut q = adv.to_owned();
    for ((mut row, &m), &vv) in q.rows_mut().into_iter().zip(mean.iter()).zip(v.column(0)) {
        row.mapv_inplace(|a| vv + a - m);
    }
    q
}

/// Maps a cotangent on `q` back onto the `(v, adv)` head outputs.
pub fn dueling_cotangent(dq: &Array2<f64>) -> [Array2<f64>; 2] {
    let dv = dq.sum_axis(Axis(1)).insert_axis(Axis(1));
    let mean = dq.mean_axis(Axis(1)).expect("non-empty").insert_axis(Axis(1));
    let dadv = dq - &mean;
    [dv, dadv]
}

/// Numerically stable softmax of every row.
pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

pub fn forward_dueling(
    params: &ParameterSet,
    belief: &[f64],
    mode: Mode<'_>,
) -> Result<DuelingOutput, NnError> {
    expect_head(params, HeadKind::DuelingQ)?;
    let out = params.forward(single_row(belief), mode, None)?;
    let q = dueling_q(out.heads[0].view(), out.heads[1].view());
    Ok(DuelingOutput {
        v: out.heads[0][[0, 0]],
        adv: out.heads[1].row(0).to_vec(),
        q: q.row(0).to_vec(),
    })
}

pub fn forward_actor_critic(
    params: &ParameterSet,
    belief: &[f64],
    mode: Mode<'_>,
) -> Result<ActorCriticOutput, NnError> {
    expect_head(params, HeadKind::ActorCritic)?;
    let out = params.forward(single_row(belief), mode, None)?;
    let policy = softmax_rows(out.heads[0].view());
    Ok(ActorCriticOutput {
        policy: policy.row(0).to_vec(),
        q: out.heads[1].row(0).to_vec(),
    })
}

/// Adam moments and hyperparameters. Moments share the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam descent step. Non-finite gradients are rejected
/// before anything is modified.
pub fn adam_step(
    params: &mut ParameterSet,
    state: &mut AdamState,
    grad: &GradientVector,
) -> Result<(), NnError> {
    if grad.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(NnError::SpecMismatch);
    }
    if let Some(index) = grad.values.iter().position(|g| !g.is_finite()) {
        return Err(NnError::NonFiniteGradient { index });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let step = state.learning_rate;
    for (((p, m), v), &g) in params
        .values
        .iter_mut()
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
        .zip(&grad.values)
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= step * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

/// `rate * target + (1 - rate) * online`, entry by entry.
pub fn soft_update_params(
    target: &ParameterSet,
    online: &ParameterSet,
    rate: f64,
) -> Result<ParameterSet, NnError> {
    let mut out = target.clone();
    soft_update_in_place(&mut out, online, rate)?;
    Ok(out)
}

pub fn soft_update_in_place(
    target: &mut ParameterSet,
    online: &ParameterSet,
    rate: f64,
) -> Result<(), NnError> {
    target.check_same_spec(online)?;
    if !(0.0..=1.0).contains(&rate) {
        return Err(NnError::InvalidSpec(format!("soft-update rate {rate} outside [0, 1]")));
    }
    for (t, o) in target.values.iter_mut().zip(&online.values) {
        *t = rate * *t + (1.0 - rate) * o;
    }
    Ok(())
}

/// Stacks belief vectors into a batch matrix.
pub fn stack_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>, width: usize) -> Array2<f64> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        debug_assert_eq!(r.len(), width);
        data.extend_from_slice(r);
        n += 1;
    }
    Array2::from_shape_vec((n, width), data).expect("row widths")
}

pub fn zeros_like_heads(spec: &NetworkSpec, batch: usize) -> [Array2<f64>; 2] {
    let [a, b] = spec.head_dims();
    [Array2::zeros((batch, a)), Array2::zeros((batch, b))]
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec(kind: HeadKind) -> NetworkSpec {
        NetworkSpec::new(4, 3, kind)
            .with_hidden(vec![6, 5])
            .with_dropout(0.0)
    }

    fn random_input(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn dueling_combination_matches_worked_example() {
        let v = Array2::from_shape_vec((1, 1), vec![2.0]).unwrap();
        let adv = Array2::from_shape_vec((1, 3), vec![1.0, -1.0, 0.0]).unwrap();
        let q = dueling_q(v.view(), adv.view());
        assert_eq!(q.row(0).to_vec(), vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn equal_advantages_give_q_equal_v() {
        let v = Array2::from_shape_vec((1, 1), vec![-0.7]).unwrap();
        let adv = Array2::from_elem((1, 4), 3.25);
        let q = dueling_q(v.view(), adv.view());
        assert!(q.iter().all(|&x| (x + 0.7).abs() < 1e-15));
    }

    #[test]
    fn softmax_of_ln2_and_zero() {
        let logits = Array2::from_shape_vec((1, 2), vec![2f64.ln(), 0.0]).unwrap();
        let p = softmax_rows(logits.view());
        assert!((p[[0, 0]] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[[0, 1]] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn equal_logits_uniform_policy() {
        let logits = Array2::from_elem((1, 5), 0.3);
        let p = softmax_rows(logits.view());
        assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = ParameterSet::init(small_spec(HeadKind::DuelingQ), &mut rng).unwrap();
        let err = forward_dueling(&params, &[0.0; 5], Mode::Eval).unwrap_err();
        assert!(matches!(err, NnError::DimensionMismatch { expected: 4, found: 5 }));
        let err = forward_actor_critic(&params, &[0.0; 4], Mode::Eval).unwrap_err();
        assert!(matches!(err, NnError::WrongHead { .. }));
    }

    #[test]
    fn backprop_without_forward_is_usage_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = ParameterSet::init(small_spec(HeadKind::DuelingQ), &mut rng).unwrap();
        let tape = Tape::default();
        let cot = zeros_like_heads(params.spec(), 1);
        assert!(matches!(
            params.backprop(&tape, &cot),
            Err(NnError::MissingForwardPass)
        ));
    }

    #[test]
    fn zero_cotangent_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = ParameterSet::init(small_spec(HeadKind::ActorCritic), &mut rng).unwrap();
        let x = random_input(&mut rng, 3, 4);
        let mut tape = Tape::default();
        params.forward(x.view(), Mode::Eval, Some(&mut tape)).unwrap();
        let g = params
            .backprop(&tape, &zeros_like_heads(params.spec(), 3))
            .unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cotangent_shape_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = ParameterSet::init(small_spec(HeadKind::DuelingQ), &mut rng).unwrap();
        let x = random_input(&mut rng, 2, 4);
        let mut tape = Tape::default();
        params.forward(x.view(), Mode::Eval, Some(&mut tape)).unwrap();
        let bad = zeros_like_heads(params.spec(), 3);
        assert!(matches!(
            params.backprop(&tape, &bad),
            Err(NnError::CotangentShape { .. })
        ));
    }

    #[test]
    fn linear_net_head_weights_are_structurally_sparse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = NetworkSpec::new(4, 3, HeadKind::ActorCritic)
            .with_hidden(vec![])
            .with_dropout(0.0);
        let params = ParameterSet::init(spec, &mut rng).unwrap();
        let x = random_input(&mut rng, 1, 4);
        let mut tape = Tape::default();
        params.forward(x.view(), Mode::Eval, Some(&mut tape)).unwrap();
        // d q[0] only
        let mut cot = zeros_like_heads(params.spec(), 1);
        cot[1][[0, 0]] = 1.0;
        let g = params.backprop(&tape, &cot).unwrap();
        let layout = params.spec().layout();
        let q_layer = layout.layers[layout.heads[1].start];
        // weight (input 2 -> output 1) only feeds q[1]
        let idx = q_layer.offset + 2 * q_layer.fan_out + 1;
        assert_eq!(g.values[idx], 0.0);
        let idx0 = q_layer.offset + 2 * q_layer.fan_out;
        assert_eq!(g.values[idx0], x[[0, 2]]);
    }

    #[test]
    fn zero_gradient_adam_leaves_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut params = ParameterSet::init(small_spec(HeadKind::DuelingQ), &mut rng).unwrap();
        let before = params.clone();
        let mut adam = AdamState::new(params.len(), 1e-3);
        for _ in 0..5 {
            let zero = params.zero_gradient();
            adam_step(&mut params, &mut adam, &zero).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(adam.step_count, 5);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = ParameterSet::init(small_spec(HeadKind::DuelingQ), &mut rng).unwrap();
        let before = params.clone();
        let mut adam = AdamState::new(params.len(), 1e-3);
        let mut g = params.zero_gradient();
        g.values[3] = f64::NAN;
        assert!(matches!(
            adam_step(&mut params, &mut adam, &g),
            Err(NnError::NonFiniteGradient { index: 3 })
        ));
        assert_eq!(params, before);
        assert_eq!(adam.step_count, 0);
    }

    /// Scalar Adam re-simulated independently: a constant gradient moves the
    /// parameter by exactly `lr` per step (m_hat = g, v_hat = g^2).
    #[test]
    fn constant_gradient_moves_against_sign() {
        let spec = NetworkSpec::new(1, 1, HeadKind::DuelingQ)
            .with_hidden(vec![])
            .with_dropout(0.0);
        let n = spec.n_params();
        let mut params = ParameterSet::from_values(spec, vec![0.0; n]).unwrap();
        let mut adam = AdamState::new(n, 0.01);
        let mut g = params.zero_gradient();
        for (i, v) in g.values.iter_mut().enumerate() {
            *v = if i % 2 == 0 { 0.5 } else { -2.0 };
        }
        let mut oracle = vec![0.0f64; n];
        let (mut m, mut v) = (vec![0.0f64; n], vec![0.0f64; n]);
        for t in 1..=50 {
            adam_step(&mut params, &mut adam, &g).unwrap();
            for i in 0..n {
                m[i] = 0.9 * m[i] + 0.1 * g.values[i];
                v[i] = 0.999 * v[i] + 0.001 * g.values[i] * g.values[i];
                let mh = m[i] / (1.0 - 0.9f64.powi(t));
                let vh = v[i] / (1.0 - 0.999f64.powi(t));
                oracle[i] -= 0.01 * mh / (vh.sqrt() + 1e-8);
            }
        }
        for i in 0..n {
            assert!((params.values()[i] - oracle[i]).abs() < 1e-12);
            assert_eq!(params.values()[i].signum(), -g.values[i].signum());
        }
        assert_eq!(adam.step_count, 50);
    }

    #[test]
    fn soft_update_edges() {
        let spec = NetworkSpec::new(1, 1, HeadKind::DuelingQ)
            .with_hidden(vec![])
            .with_dropout(0.0);
        let n = spec.n_params();
        let target = ParameterSet::from_values(spec.clone(), vec![2.0; n]).unwrap();
        let online = ParameterSet::from_values(spec, vec![4.0; n]).unwrap();
        assert_eq!(soft_update_params(&target, &online, 0.0).unwrap(), online);
        assert_eq!(soft_update_params(&target, &online, 1.0).unwrap(), target);
        let half = soft_update_params(&target, &online, 0.5).unwrap();
        assert!(half.values().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn soft_update_spec_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = ParameterSet::init(small_spec(HeadKind::DuelingQ), &mut rng).unwrap();
        let b = ParameterSet::init(small_spec(HeadKind::ActorCritic), &mut rng).unwrap();
        assert!(matches!(
            soft_update_params(&a, &b, 0.5),
            Err(NnError::SpecMismatch)
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = ParameterSet::init(
            NetworkSpec::new(7, 5, HeadKind::ActorCritic).with_hidden(vec![9, 4]),
            &mut rng,
        )
        .unwrap();
        let mut bytes = Vec::new();
        params.write_to(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 8 + 4 + 4 + 8 * 4 + 8 * 2 + 8 + 8 * params.len());
        let back = ParameterSet::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, params);
        bytes[0] = b'X';
        assert!(ParameterSet::read_from(bytes.as_slice()).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let bad = NetworkSpec::new(3, 2, HeadKind::DuelingQ).with_dropout(1.0);
        assert!(ParameterSet::init(bad, &mut rng).is_err());
        let bad = NetworkSpec::new(0, 2, HeadKind::DuelingQ);
        assert!(ParameterSet::init(bad, &mut rng).is_err());
    }

    #[test]
    fn default_layout_sizes() {
        let spec = NetworkSpec::new(40, 9, HeadKind::DuelingQ);
        let expected = (40 * 128 + 128) + (128 * 64 + 64) + (64 + 1) + (128 * 64 + 64) + (64 * 9 + 9);
        assert_eq!(spec.n_params(), expected);
    }
}
