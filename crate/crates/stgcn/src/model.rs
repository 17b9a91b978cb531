//! The trainable spatio-temporal graph convolutional classifier.
//!
//! One window flows through: gated temporal convolution (a width-`K_t`
//! valid 1-D convolution per node whose output splits into a linear path
//! `P` and a sigmoid gate `Q`, combined as `P ⊙ σ(Q)`), then the
//! first-order spatial graph convolution `S · H · Θ` at every retained
//! time step, ReLU, per-node layer normalization over features, dropout,
//! mean-pooling over time, and a two-layer fully connected head producing
//! one logit per gesture class. Cross-entropy on those logits is the
//! training loss; prediction is the argmax.
//!
//! Every step is recorded on a [`Tape`], so the whole pipeline is
//! differentiable and checkable against finite differences.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {reason}")]
    InvalidConfig { reason: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad checkpoint magic, expected \"STGW\"")]
    BadMagic { path: String },
    #[error("{path}: truncated checkpoint")]
    Truncated { path: String },
    #[error("{path}: checkpoint tensor {name} has {got} entries, config implies {want}")]
    TensorSizeMismatch { path: String, name: &'static str, got: usize, want: usize },
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Electrodes / graph nodes.
    pub n_nodes: usize,
    /// Samples per window.
    pub window_len: usize,
    /// Temporal kernel width `K_t`.
    pub temporal_kernel: usize,
    /// Input channels per node (raw samples: 1).
    pub in_channels: usize,
    /// Temporal convolution output channels `c_o`.
    pub temporal_channels: usize,
    /// Spatial convolution output channels `c_s`.
    pub spatial_channels: usize,
    /// Hidden width of the classifier head.
    pub hidden: usize,
    /// Gesture classes.
    pub classes: usize,
    /// Dropout probability.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_nodes: 128,
            window_len: 512,
            temporal_kernel: 5,
            in_channels: 1,
            temporal_channels: 64,
            spatial_channels: 64,
            hidden: 128,
            classes: 65,
            dropout: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |reason: String| Err(ModelError::InvalidConfig { reason });
        if self.temporal_kernel > self.window_len {
            return fail(format!(
                "temporal kernel {} exceeds window length {}",
                self.temporal_kernel, self.window_len
            ));
        }
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        for (name, v) in [
            ("n_nodes", self.n_nodes),
            ("window_len", self.window_len),
            ("temporal_kernel", self.temporal_kernel),
            ("in_channels", self.in_channels),
            ("temporal_channels", self.temporal_channels),
            ("spatial_channels", self.spatial_channels),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    /// Retained time steps after the valid temporal convolution.
    pub fn retained_steps(&self) -> usize {
        self.window_len - self.temporal_kernel + 1
    }
}

/// One trainable tensor: shared buffer plus shape.
///
/// Buffers are `Arc`ed so concurrent per-sample tapes read the same storage;
/// the optimizer mutates in place once the tapes are gone.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub data: Arc<Vec<f64>>,
    pub shape: Vec<usize>,
}

impl ParamTensor {
    fn new(data: Vec<f64>, shape: Vec<usize>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Self { data: Arc::new(data), shape }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// All trainable tensors, in checkpoint declaration order.
#[derive(Debug, Clone)]
pub struct ModelParams {
    /// Temporal kernel `[K_t, c_i, 2 c_o]`.
    pub temporal_kernel: ParamTensor,
    /// Spatial feature mixing `[c_o, c_s]`.
    pub spatial_weight: ParamTensor,
    /// Layer-norm gain `[c_s]`.
    pub ln_gain: ParamTensor,
    /// Layer-norm bias `[c_s]`.
    pub ln_bias: ParamTensor,
    /// Head hidden weights `[n_nodes * c_s, hidden]`.
    pub head_w1: ParamTensor,
    /// Head hidden bias `[hidden]`.
    pub head_b1: ParamTensor,
    /// Head output weights `[hidden, classes]`.
    pub head_w2: ParamTensor,
    /// Head output bias `[classes]`.
    pub head_b2: ParamTensor,
}

pub const PARAM_NAMES: [&str; 8] = [
    "temporal_kernel",
    "spatial_weight",
    "ln_gain",
    "ln_bias",
    "head_w1",
    "head_b1",
    "head_w2",
    "head_b2",
];

impl ModelParams {
    /// Seeded initialization: uniform Xavier bounds for the weight tensors,
    /// ones for the layer-norm gain, zeros for every bias.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xavier = |fan_in: usize, fan_out: usize, shape: Vec<usize>| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
            ParamTensor::new(data, shape)
        };

        let (kt, ci, co, cs) = (
            cfg.temporal_kernel,
            cfg.in_channels,
            cfg.temporal_channels,
            cfg.spatial_channels,
        );
        let flat = cfg.n_nodes * cs;
        Ok(Self {
            temporal_kernel: xavier(kt * ci, 2 * co, vec![kt, ci, 2 * co]),
            spatial_weight: xavier(co, cs, vec![co, cs]),
            ln_gain: ParamTensor::new(vec![1.0; cs], vec![cs]),
            ln_bias: ParamTensor::new(vec![0.0; cs], vec![cs]),
            head_w1: xavier(flat, cfg.hidden, vec![flat, cfg.hidden]),
            head_b1: ParamTensor::new(vec![0.0; cfg.hidden], vec![cfg.hidden]),
            head_w2: xavier(cfg.hidden, cfg.classes, vec![cfg.hidden, cfg.classes]),
            head_b2: ParamTensor::new(vec![0.0; cfg.classes], vec![cfg.classes]),
        })
    }

    /// Tensors in declaration order.
    pub fn tensors(&self) -> [&ParamTensor; 8] {
        [
            &self.temporal_kernel,
            &self.spatial_weight,
            &self.ln_gain,
            &self.ln_bias,
            &self.head_w1,
            &self.head_b1,
            &self.head_w2,
            &self.head_b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut ParamTensor; 8] {
        [
            &mut self.temporal_kernel,
            &mut self.spatial_weight,
            &mut self.ln_gain,
            &mut self.ln_bias,
            &mut self.head_w1,
            &mut self.head_b1,
            &mut self.head_w2,
            &mut self.head_b2,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// A window paired with its own propagation matrix — the unit the network
/// consumes.
#[derive(Debug, Clone)]
pub struct GraphWindow {
    /// Node-major samples `[n_nodes x window_len]`.
    pub input: Arc<Vec<f64>>,
    /// Renormalized propagation matrix `[n_nodes x n_nodes]`.
    pub propagation: Arc<Vec<f64>>,
    pub label: usize,
    pub repetition: usize,
}

/// Inverted-dropout masks for one forward pass, drawn by the caller so the
/// pass itself stays a pure function.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    /// Over the `[n_nodes, retained, c_s]` features after layer norm.
    pub features: Arc<Vec<f64>>,
    /// Over the `[1, hidden]` head activations.
    pub hidden: Arc<Vec<f64>>,
}

/// Draw inverted-dropout masks: entries are `0` with probability `p`,
/// otherwise `1 / (1 - p)` so the expected value of masked activations is
/// unchanged.
pub fn make_dropout_masks(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> DropoutMasks {
    let p = cfg.dropout;
    let keep_scale = 1.0 / (1.0 - p);
    let mut draw = |n: usize| -> Arc<Vec<f64>> {
        Arc::new(
            (0..n)
                .map(|_| if rng.random_range(0.0..1.0) < p { 0.0 } else { keep_scale })
                .collect(),
        )
    };
    DropoutMasks {
        features: draw(cfg.n_nodes * cfg.retained_steps() * cfg.spatial_channels),
        hidden: draw(cfg.hidden),
    }
}

/// Apply inverted dropout, or pass through untouched when evaluating or
/// when `p = 0`.
pub fn dropout(
    tape: &mut Tape,
    h: &Tensor,
    mask: Option<&Arc<Vec<f64>>>,
) -> Result<Tensor, TensorError> {
    match mask {
        Some(mask) => tape.mul_mask(h, mask.clone()),
        None => Ok(h.clone()),
    }
}

/// Gated temporal convolution: valid 1-D convolution to `2 c_o` channels,
/// split into `P` and `Q`, combined as `P ⊙ σ(Q)`. Output time length is
/// `len - K_t + 1`.
pub fn temporal_gated_conv(
    tape: &mut Tape,
    u: &Tensor,
    gamma: &Tensor,
) -> Result<Tensor, TensorError> {
    let pq = tape.conv1d_valid(u, gamma)?;
    let two_co = *pq.shape().last().unwrap();
    let c_out = two_co / 2;
    let p = tape.slice_last(&pq, 0, c_out)?;
    let q = tape.slice_last(&pq, c_out, two_co)?;
    let gate = tape.sigmoid(&q)?;
    tape.mul(&p, &gate)
}

/// First-order spatial graph convolution `S · H · Θ`, broadcast over the
/// time axis of `h`.
pub fn spatial_graph_conv(
    tape: &mut Tape,
    propagation: Arc<Vec<f64>>,
    h: &Tensor,
    theta: &Tensor,
) -> Result<Tensor, TensorError> {
    tape.spatial_conv(h, theta, propagation)
}

/// Two-layer head: flatten, affine, ReLU, optional dropout, affine.
pub fn classifier_head(
    tape: &mut Tape,
    features: &Tensor,
    w1: &Tensor,
    b1: &Tensor,
    w2: &Tensor,
    b2: &Tensor,
    hidden_mask: Option<&Arc<Vec<f64>>>,
) -> Result<Tensor, TensorError> {
    let flat = tape.reshape(features, vec![1, features.numel()])?;
    let h = tape.matmul(&flat, w1)?;
    let h = tape.add_row_broadcast(&h, b1)?;
    let h = tape.relu(&h)?;
    let h = dropout(tape, &h, hidden_mask)?;
    let out = tape.matmul(&h, w2)?;
    let out = tape.add_row_broadcast(&out, b2)?;
    let classes = out.numel();
    tape.reshape(&out, vec![classes])
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Parameter leaves of one forward pass, in declaration order.
pub struct ParamLeaves(pub [Tensor; 8]);

/// The full pipeline over already-recorded leaves. Exposed separately so
/// gradient checks can route any single tensor — the input or one
/// parameter — through an externally supplied leaf.
pub fn forward_with_leaves(
    tape: &mut Tape,
    x: &Tensor,
    leaves: &[Tensor; 8],
    propagation: Arc<Vec<f64>>,
    masks: Option<&DropoutMasks>,
) -> Result<Tensor, TensorError> {
    let [gamma, theta, gain, bias, w1, b1, w2, b2] = leaves;
    let glu = temporal_gated_conv(tape, x, gamma)?;
    let spatial = spatial_graph_conv(tape, propagation, &glu, theta)?;
    let activated = tape.relu(&spatial)?;
    let normed = tape.layer_norm(&activated, gain, bias, LAYER_NORM_EPS)?;
    let dropped = dropout(tape, &normed, masks.map(|m| &m.features))?;
    let pooled = tape.mean_over_time(&dropped)?;
    classifier_head(tape, &pooled, w1, b1, w2, b2, masks.map(|m| &m.hidden))
}

/// Record the full pipeline for one sample on `tape`; returns the logits
/// and the parameter leaves (for gradient extraction after `backward`).
pub fn build_forward(
    tape: &mut Tape,
    sample: &GraphWindow,
    params: &ModelParams,
    cfg: &ModelConfig,
    masks: Option<&DropoutMasks>,
) -> Result<(Tensor, ParamLeaves), ModelError> {
    let leaves = ParamLeaves(
        params
            .tensors()
            .map(|p| tape.leaf_shared(p.data.clone(), p.shape.clone())),
    );
    let x = tape.leaf_shared(
        sample.input.clone(),
        vec![cfg.n_nodes, cfg.window_len, cfg.in_channels],
    );
    let logits =
        forward_with_leaves(tape, &x, &leaves.0, sample.propagation.clone(), masks)?;
    Ok((logits, leaves))
}

/// Whether a batch pass draws dropout masks, and from which seed.
#[derive(Debug, Clone, Copy)]
pub enum BatchMode {
    Eval,
    Train { mask_seed: u64 },
}

/// Forward a batch: one independent tape per window, evaluated in parallel,
/// logits collected in input order. In training mode each sample's dropout
/// masks come from a stream derived from `mask_seed` and the sample index,
/// so results do not depend on scheduling.
pub fn stgcn_forward(
    batch: &[GraphWindow],
    params: &ModelParams,
    cfg: &ModelConfig,
    mode: BatchMode,
) -> Result<Vec<Vec<f64>>, ModelError> {
    batch
        .par_iter()
        .enumerate()
        .map(|(idx, sample)| {
            let mut tape = Tape::new();
            let masks = match mode {
                BatchMode::Eval => None,
                BatchMode::Train { mask_seed } => {
                    if cfg.dropout == 0.0 {
                        None
                    } else {
                        let mut rng = sample_rng(mask_seed, idx);
                        Some(make_dropout_masks(cfg, &mut rng))
                    }
                }
            };
            let (logits, _) = build_forward(&mut tape, sample, params, cfg, masks.as_ref())?;
            Ok(tape.value(&logits).to_vec())
        })
        .collect()
}

/// Deterministic per-sample RNG stream.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64))
}

/// Argmax with ties broken toward the smallest index.
pub fn predict(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

// ── Checkpoint format ───────────────────────────────────────────────────
//
// magic "STGW" | 8 x u32 config fields | f64 dropout
// | per tensor, declaration order: u32 ndim | u32 dims.. | f64 payload
// All little-endian; round-trips bit-exactly.

const CHECKPOINT_MAGIC: &[u8; 4] = b"STGW";

pub fn save_checkpoint(
    path: &Path,
    cfg: &ModelConfig,
    params: &ModelParams,
) -> Result<(), ModelError> {
    let io = |e: std::io::Error| ModelError::Io { path: path.display().to_string(), source: e };
    let file = File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    for field in [
        cfg.n_nodes,
        cfg.window_len,
        cfg.temporal_kernel,
        cfg.in_channels,
        cfg.temporal_channels,
        cfg.spatial_channels,
        cfg.hidden,
        cfg.classes,
    ] {
        w.write_all(&(field as u32).to_le_bytes()).map_err(io)?;
    }
    w.write_all(&cfg.dropout.to_le_bytes()).map_err(io)?;
    for tensor in params.tensors() {
        w.write_all(&(tensor.shape.len() as u32).to_le_bytes()).map_err(io)?;
        for &d in &tensor.shape {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        }
        for v in tensor.data.iter() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams), ModelError> {
    let io = |e: std::io::Error| ModelError::Io { path: path.display().to_string(), source: e };
    let truncated = || ModelError::Truncated { path: path.display().to_string() };
    let file = File::open(path).map_err(io)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| truncated())?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ModelError::BadMagic { path: path.display().to_string() });
    }
    let read_u32 = |r: &mut BufReader<File>| -> Result<u32, ModelError> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| truncated())?;
        Ok(u32::from_le_bytes(b))
    };
    let fields: Vec<usize> = (0..8)
        .map(|_| read_u32(&mut r).map(|v| v as usize))
        .collect::<Result<_, _>>()?;
    let mut dropout_bytes = [0u8; 8];
    r.read_exact(&mut dropout_bytes).map_err(|_| truncated())?;
    let cfg = ModelConfig {
        n_nodes: fields[0],
        window_len: fields[1],
        temporal_kernel: fields[2],
        in_channels: fields[3],
        temporal_channels: fields[4],
        spatial_channels: fields[5],
        hidden: fields[6],
        classes: fields[7],
        dropout: f64::from_le_bytes(dropout_bytes),
    };
    cfg.validate()?;

    let reference = ModelParams::init(&cfg, 0)?;
    let mut loaded: Vec<ParamTensor> = Vec::with_capacity(8);
    for (tensor, name) in reference.tensors().iter().zip(PARAM_NAMES) {
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        if shape != tensor.shape {
            return Err(ModelError::TensorSizeMismatch {
                path: path.display().to_string(),
                name,
                got: numel,
                want: tensor.len(),
            });
        }
        let mut payload = vec![0u8; numel * 8];
        r.read_exact(&mut payload).map_err(|_| truncated())?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        loaded.push(ParamTensor::new(data, shape));
    }
    let mut it = loaded.into_iter();
    let mut next = || it.next().unwrap();
    let params = ModelParams {
        temporal_kernel: next(),
        spatial_weight: next(),
        ln_gain: next(),
        ln_bias: next(),
        head_w1: next(),
        head_b1: next(),
        head_w2: next(),
        head_b2: next(),
    };
    Ok((cfg, params))
}

#[cfg(test)]
mod tests;
