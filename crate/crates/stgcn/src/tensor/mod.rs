//! Minimal reverse-mode differentiation engine.
//!
//! A [`Tape`] records every primitive operation applied during a forward
//! pass. Values are 64-bit floats in row-major buffers. Calling
//! [`Tape::backward`] on a scalar loss walks the tape once in reverse and
//! accumulates the gradient of every reachable leaf via the chain rule.
//!
//! The engine is define-by-run with one tape per forward pass. Parameters
//! live outside the tape in plain buffers and enter a pass through
//! [`Tape::leaf_shared`], so independent tapes (one per sample) can share
//! read-only parameter storage. Gradients accumulate additively across
//! fan-out within a tape; across samples the caller owns the reduction.
//!
//! [`grad_check`] is the verification oracle: central finite differences of
//! an arbitrary tensor-to-scalar function, compared entry-wise against the
//! tape's analytic gradient.

mod ops;

use std::sync::Arc;

use thiserror::Error;

pub(crate) use ops::Op;

/// Identifier of a node on a [`Tape`].
pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch, expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("backward requires a scalar loss, got {numel} elements")]
    NonScalarLoss { numel: usize },
    #[error("softmax_cross_entropy: label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

pub(crate) fn shape_str(shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("[{}]", dims.join(", "))
}

/// Handle to a value recorded on a [`Tape`].
///
/// Cheap to clone; the data itself lives in the tape's node arena.
#[derive(Debug, Clone)]
pub struct Tensor {
    id: NodeId,
    shape: Vec<usize>,
}

impl Tensor {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Total number of entries (product of the shape; 1 for scalars).
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Arc<Vec<f64>>,
    pub(crate) op: Op,
}

/// Records a single forward pass and replays it in reverse for gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input leaf, taking ownership of its buffer.
    pub fn leaf(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Tensor {
        self.leaf_shared(Arc::new(data), shape)
    }

    /// Record an input leaf backed by a shared buffer. Lets many tapes read
    /// the same parameter storage without copying it.
    pub fn leaf_shared(&mut self, data: Arc<Vec<f64>>, shape: Vec<usize>) -> Tensor {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "leaf buffer length {} does not match shape {}",
            data.len(),
            shape_str(&shape),
        );
        self.push(shape, data, Op::Leaf)
    }

    fn push(&mut self, shape: Vec<usize>, data: Arc<Vec<f64>>, op: Op) -> Tensor {
        // Append-only ids keep the tape topologically ordered: an op can
        // only reference tensors that already exist.
        debug_assert!(op.input_ids().iter().all(|&i| i < self.nodes.len()));
        let id = self.nodes.len();
        self.nodes.push(Node { shape: shape.clone(), data, op });
        self.grads.push(None);
        Tensor { id, shape }
    }

    fn record(&mut self, op: Op) -> Result<Tensor, TensorError> {
        let (shape, data) = op.forward(&self.nodes)?;
        Ok(self.push(shape, Arc::new(data), op))
    }

    /// Forward value of a recorded tensor.
    pub fn value(&self, t: &Tensor) -> &[f64] {
        &self.nodes[t.id].data
    }

    /// Gradient of the last `backward` loss w.r.t. `t`, if populated.
    pub fn grad(&self, t: &Tensor) -> Option<&[f64]> {
        self.grads[t.id].as_deref()
    }

    /// Value of a scalar tensor.
    pub fn scalar(&self, t: &Tensor) -> f64 {
        debug_assert_eq!(t.numel(), 1);
        self.nodes[t.id].data[0]
    }

    // ── Primitive operations ────────────────────────────────────────────

    /// Element-wise sum of two same-shape tensors.
    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        self.record(Op::Add { a: a.id, b: b.id })
    }

    /// Element-wise difference `a - b`.
    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        self.record(Op::Sub { a: a.id, b: b.id })
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        self.record(Op::Mul { a: a.id, b: b.id })
    }

    /// Multiply every entry by a constant.
    pub fn scale(&mut self, a: &Tensor, factor: f64) -> Result<Tensor, TensorError> {
        self.record(Op::Scale { a: a.id, factor })
    }

    /// Matrix product of `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        self.record(Op::MatMul { a: a.id, b: b.id })
    }

    /// Logistic sigmoid, element-wise.
    pub fn sigmoid(&mut self, a: &Tensor) -> Result<Tensor, TensorError> {
        self.record(Op::Sigmoid { a: a.id })
    }

    /// Rectified linear unit, element-wise.
    pub fn relu(&mut self, a: &Tensor) -> Result<Tensor, TensorError> {
        self.record(Op::Relu { a: a.id })
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: &Tensor) -> Result<Tensor, TensorError> {
        self.record(Op::Sum { a: a.id })
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: &Tensor) -> Result<Tensor, TensorError> {
        self.record(Op::Mean { a: a.id })
    }

    /// Valid (no padding) 1-D convolution, applied independently per node.
    ///
    /// `signal` is `[n_nodes, len, c_in]`, `kernel` is `[k, c_in, c_out]`;
    /// the output is `[n_nodes, len - k + 1, c_out]`, a sliding dot product
    /// over `k` consecutive samples of every input channel.
    pub fn conv1d_valid(&mut self, signal: &Tensor, kernel: &Tensor) -> Result<Tensor, TensorError> {
        self.record(Op::Conv1dValid { signal: signal.id, kernel: kernel.id })
    }

    /// Slice `[from, to)` of the last axis.
    pub fn slice_last(&mut self, a: &Tensor, from: usize, to: usize) -> Result<Tensor, TensorError> {
        self.record(Op::SliceLast { a: a.id, from, to })
    }

    /// Graph propagation `S · H_t · Θ` applied at every time step.
    ///
    /// `h` is `[n_nodes, t, c_in]`, `theta` is `[c_in, c_out]`, and
    /// `propagation` is a constant `n_nodes x n_nodes` matrix (it is
    /// per-window data, not a trainable input, so it rides along as saved
    /// context rather than a tape node).
    pub fn spatial_conv(
        &mut self,
        h: &Tensor,
        theta: &Tensor,
        propagation: Arc<Vec<f64>>,
    ) -> Result<Tensor, TensorError> {
        self.record(Op::SpatialConv { h: h.id, theta: theta.id, propagation })
    }

    /// Normalize the last axis of `a` to zero mean / unit variance
    /// (population, `eps` inside the square root), then scale by `gain` and
    /// shift by `bias` (both of length `c`, the last-axis extent).
    pub fn layer_norm(
        &mut self,
        a: &Tensor,
        gain: &Tensor,
        bias: &Tensor,
        eps: f64,
    ) -> Result<Tensor, TensorError> {
        self.record(Op::LayerNorm { a: a.id, gain: gain.id, bias: bias.id, eps })
    }

    /// Element-wise product with a constant mask (inverted-dropout masks are
    /// built by the caller, which owns the RNG).
    pub fn mul_mask(&mut self, a: &Tensor, mask: Arc<Vec<f64>>) -> Result<Tensor, TensorError> {
        self.record(Op::MulMask { a: a.id, mask })
    }

    /// Mean over the middle (time) axis: `[n, t, c]` to `[n, c]`.
    pub fn mean_over_time(&mut self, a: &Tensor) -> Result<Tensor, TensorError> {
        self.record(Op::MeanOverTime { a: a.id })
    }

    /// Reinterpret the buffer under a new shape with the same length.
    pub fn reshape(&mut self, a: &Tensor, shape: Vec<usize>) -> Result<Tensor, TensorError> {
        self.record(Op::Reshape { a: a.id, shape })
    }

    /// Add a length-`c` vector to every row of an `[r, c]` matrix.
    pub fn add_row_broadcast(&mut self, m: &Tensor, v: &Tensor) -> Result<Tensor, TensorError> {
        self.record(Op::AddRowBroadcast { m: m.id, v: v.id })
    }

    /// Numerically stable softmax cross-entropy of a logit vector against an
    /// integer label: `logsumexp(logits) - logits[label]`, max-shifted.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: &Tensor,
        label: usize,
    ) -> Result<Tensor, TensorError> {
        self.record(Op::SoftmaxCrossEntropy { logits: logits.id, label })
    }

    // ── Reverse pass ────────────────────────────────────────────────────

    /// Populate gradients of `loss` w.r.t. every node that feeds it.
    ///
    /// Walks the tape once, in reverse id order, so each node's adjoint is
    /// complete before it is propagated. Leaves that do not reach the loss
    /// get an explicit zero gradient.
    pub fn backward(&mut self, loss: &Tensor) -> Result<(), TensorError> {
        if loss.numel() != 1 {
            return Err(TensorError::NonScalarLoss { numel: loss.numel() });
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(out_grad) = self.grads[id].take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
            op.backward(id, &out_grad, &self.nodes, &mut self.grads);
            self.nodes[id].op = op;
            self.grads[id] = Some(out_grad);
        }

        // Leaves outside the loss's cone of influence contribute nothing:
        // report that as an explicit zero rather than an absent gradient.
        for id in 0..self.nodes.len() {
            if matches!(self.nodes[id].op, Op::Leaf) && self.grads[id].is_none() {
                self.grads[id] = Some(vec![0.0; self.nodes[id].data.len()]);
            }
        }
        Ok(())
    }
}

// ── Gradient checking ───────────────────────────────────────────────────

/// Maximum relative error between the tape gradient of `f` at `x` and a
/// central finite-difference estimate with step `h`.
///
/// The error for entry `i` is `|analytic_i - numeric_i| / max(1, |analytic_i|)`;
/// the maximum over entries is returned and the caller applies a threshold.
pub fn grad_check<F>(
    f: &F,
    x_data: &[f64],
    x_shape: &[usize],
    h: f64,
) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &Tensor) -> Result<Tensor, TensorError>,
{
    let eval = |data: &[f64]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let x = tape.leaf(data.to_vec(), x_shape.to_vec());
        let loss = f(&mut tape, &x)?;
        if loss.numel() != 1 {
            return Err(TensorError::NonScalarLoss { numel: loss.numel() });
        }
        Ok(tape.scalar(&loss))
    };

    let mut tape = Tape::new();
    let x = tape.leaf(x_data.to_vec(), x_shape.to_vec());
    let loss = f(&mut tape, &x)?;
    tape.backward(&loss)?;
    let analytic = tape.grad(&x).expect("leaf gradient populated").to_vec();

    let mut max_err: f64 = 0.0;
    let mut perturbed = x_data.to_vec();
    for i in 0..perturbed.len() {
        let orig = perturbed[i];
        perturbed[i] = orig + h;
        let plus = eval(&perturbed)?;
        perturbed[i] = orig - h;
        let minus = eval(&perturbed)?;
        perturbed[i] = orig;

        let numeric = (plus - minus) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        max_err = max_err.max(err);
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests;
