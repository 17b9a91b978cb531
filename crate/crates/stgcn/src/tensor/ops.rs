//! Forward evaluation and vector-Jacobian products for every tape primitive.

use std::sync::Arc;

use super::{shape_str, Node, TensorError};

type NodeId = usize;

pub(crate) enum Op {
    Leaf,
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, factor: f64 },
    MatMul { a: NodeId, b: NodeId },
    Sigmoid { a: NodeId },
    Relu { a: NodeId },
    Sum { a: NodeId },
    Mean { a: NodeId },
    Conv1dValid { signal: NodeId, kernel: NodeId },
    SliceLast { a: NodeId, from: usize, to: usize },
    SpatialConv { h: NodeId, theta: NodeId, propagation: Arc<Vec<f64>> },
    LayerNorm { a: NodeId, gain: NodeId, bias: NodeId, eps: f64 },
    MulMask { a: NodeId, mask: Arc<Vec<f64>> },
    MeanOverTime { a: NodeId },
    Reshape { a: NodeId, shape: Vec<usize> },
    AddRowBroadcast { m: NodeId, v: NodeId },
    SoftmaxCrossEntropy { logits: NodeId, label: usize },
}

fn mismatch(op: &'static str, expected: impl Into<String>, actual: &[&[usize]]) -> TensorError {
    let actual: Vec<String> = actual.iter().map(|s| shape_str(s)).collect();
    TensorError::ShapeMismatch {
        op,
        expected: expected.into(),
        actual: actual.join(" and "),
    }
}

fn same_shape(op: &'static str, a: &Node, b: &Node) -> Result<(), TensorError> {
    if a.shape != b.shape {
        return Err(mismatch(op, "two tensors of identical shape", &[&a.shape, &b.shape]));
    }
    Ok(())
}

/// Accumulate `delta` into the gradient slot of `id`, allocating zeros first
/// if this is the first contribution (fan-out sums).
fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: NodeId, delta: &[f64]) {
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].data.len()]);
    for (s, d) in slot.iter_mut().zip(delta) {
        *s += d;
    }
}

impl Op {
    pub(crate) fn input_ids(&self) -> Vec<NodeId> {
        match *self {
            Op::Leaf => vec![],
            Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } | Op::MatMul { a, b } => {
                vec![a, b]
            }
            Op::Scale { a, .. }
            | Op::Sigmoid { a }
            | Op::Relu { a }
            | Op::Sum { a }
            | Op::Mean { a }
            | Op::SliceLast { a, .. }
            | Op::MulMask { a, .. }
            | Op::MeanOverTime { a }
            | Op::Reshape { a, .. } => vec![a],
            Op::Conv1dValid { signal, kernel } => vec![signal, kernel],
            Op::SpatialConv { h, theta, .. } => vec![h, theta],
            Op::LayerNorm { a, gain, bias, .. } => vec![a, gain, bias],
            Op::AddRowBroadcast { m, v } => vec![m, v],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![logits],
        }
    }

    /// Validate input shapes and compute the output (shape, buffer).
    pub(crate) fn forward(&self, nodes: &[Node]) -> Result<(Vec<usize>, Vec<f64>), TensorError> {
        match self {
            Op::Leaf => unreachable!("leaves are pushed directly"),

            Op::Add { a, b } => {
                let (na, nb) = (&nodes[*a], &nodes[*b]);
                same_shape("add", na, nb)?;
                let out = na.data.iter().zip(nb.data.iter()).map(|(x, y)| x + y).collect();
                Ok((na.shape.clone(), out))
            }
            Op::Sub { a, b } => {
                let (na, nb) = (&nodes[*a], &nodes[*b]);
                same_shape("sub", na, nb)?;
                let out = na.data.iter().zip(nb.data.iter()).map(|(x, y)| x - y).collect();
                Ok((na.shape.clone(), out))
            }
            Op::Mul { a, b } => {
                let (na, nb) = (&nodes[*a], &nodes[*b]);
                same_shape("mul", na, nb)?;
                let out = na.data.iter().zip(nb.data.iter()).map(|(x, y)| x * y).collect();
                Ok((na.shape.clone(), out))
            }
            Op::Scale { a, factor } => {
                let na = &nodes[*a];
                Ok((na.shape.clone(), na.data.iter().map(|x| factor * x).collect()))
            }
            Op::MatMul { a, b } => {
                let (na, nb) = (&nodes[*a], &nodes[*b]);
                if na.shape.len() != 2 || nb.shape.len() != 2 || na.shape[1] != nb.shape[0] {
                    return Err(mismatch("matmul", "[m, k] and [k, n]", &[&na.shape, &nb.shape]));
                }
                let (m, k, n) = (na.shape[0], na.shape[1], nb.shape[1]);
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = na.data[i * k + p];
                        let brow = &nb.data[p * n..(p + 1) * n];
                        let orow = &mut out[i * n..(i + 1) * n];
                        for (o, bv) in orow.iter_mut().zip(brow) {
                            *o += aip * bv;
                        }
                    }
                }
                Ok((vec![m, n], out))
            }
            Op::Sigmoid { a } => {
                let na = &nodes[*a];
                let out = na.data.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
                Ok((na.shape.clone(), out))
            }
            Op::Relu { a } => {
                let na = &nodes[*a];
                Ok((na.shape.clone(), na.data.iter().map(|&x| x.max(0.0)).collect()))
            }
            Op::Sum { a } => Ok((vec![], vec![nodes[*a].data.iter().sum()])),
            Op::Mean { a } => {
                let na = &nodes[*a];
                Ok((vec![], vec![na.data.iter().sum::<f64>() / na.data.len() as f64]))
            }

            Op::Conv1dValid { signal, kernel } => {
                let (ns, nk) = (&nodes[*signal], &nodes[*kernel]);
                if ns.shape.len() != 3 || nk.shape.len() != 3 || ns.shape[2] != nk.shape[1] {
                    return Err(mismatch(
                        "conv1d_valid",
                        "[n, len, c_in] and [k, c_in, c_out]",
                        &[&ns.shape, &nk.shape],
                    ));
                }
                let (n, len, c_in) = (ns.shape[0], ns.shape[1], ns.shape[2]);
                let (k, c_out) = (nk.shape[0], nk.shape[2]);
                if k > len {
                    return Err(mismatch(
                        "conv1d_valid",
                        "kernel width <= signal length",
                        &[&ns.shape, &nk.shape],
                    ));
                }
                let t_out = len - k + 1;
                let mut out = vec![0.0; n * t_out * c_out];
                for nn in 0..n {
                    for t in 0..t_out {
                        let orow = &mut out[(nn * t_out + t) * c_out..(nn * t_out + t + 1) * c_out];
                        for kk in 0..k {
                            for i in 0..c_in {
                                let x = ns.data[(nn * len + t + kk) * c_in + i];
                                let wrow = &nk.data[(kk * c_in + i) * c_out..(kk * c_in + i + 1) * c_out];
                                for (o, w) in orow.iter_mut().zip(wrow) {
                                    *o += x * w;
                                }
                            }
                        }
                    }
                }
                Ok((vec![n, t_out, c_out], out))
            }

            Op::SliceLast { a, from, to } => {
                let na = &nodes[*a];
                let c = *na.shape.last().unwrap_or(&0);
                if na.shape.is_empty() || *from >= *to || *to > c {
                    return Err(mismatch(
                        "slice_last",
                        format!("a last axis covering [{from}, {to})"),
                        &[&na.shape],
                    ));
                }
                let width = to - from;
                let rows = na.data.len() / c;
                let mut out = Vec::with_capacity(rows * width);
                for r in 0..rows {
                    out.extend_from_slice(&na.data[r * c + from..r * c + to]);
                }
                let mut shape = na.shape.clone();
                *shape.last_mut().unwrap() = width;
                Ok((shape, out))
            }

            Op::SpatialConv { h, theta, propagation } => {
                let (nh, nt) = (&nodes[*h], &nodes[*theta]);
                if nh.shape.len() != 3 || nt.shape.len() != 2 || nh.shape[2] != nt.shape[0] {
                    return Err(mismatch(
                        "spatial_conv",
                        "[n, t, c_in] and [c_in, c_out]",
                        &[&nh.shape, &nt.shape],
                    ));
                }
                let (n, t, c_in) = (nh.shape[0], nh.shape[1], nh.shape[2]);
                let c_out = nt.shape[1];
                if propagation.len() != n * n {
                    return Err(mismatch(
                        "spatial_conv",
                        format!("an {n} x {n} propagation matrix"),
                        &[&nh.shape],
                    ));
                }
                // m = H . Theta per (node, step), then y = S . m per step.
                let mut mixed = vec![0.0; n * t * c_out];
                for v in 0..n {
                    for tt in 0..t {
                        let hrow = &nh.data[(v * t + tt) * c_in..(v * t + tt + 1) * c_in];
                        let orow = &mut mixed[(v * t + tt) * c_out..(v * t + tt + 1) * c_out];
                        for (i, &hv) in hrow.iter().enumerate() {
                            let trow = &nt.data[i * c_out..(i + 1) * c_out];
                            for (o, w) in orow.iter_mut().zip(trow) {
                                *o += hv * w;
                            }
                        }
                    }
                }
                let mut out = vec![0.0; n * t * c_out];
                for u in 0..n {
                    for v in 0..n {
                        let s = propagation[u * n + v];
                        if s == 0.0 {
                            continue;
                        }
                        for tt in 0..t {
                            let mrow = &mixed[(v * t + tt) * c_out..(v * t + tt + 1) * c_out];
                            let orow = &mut out[(u * t + tt) * c_out..(u * t + tt + 1) * c_out];
                            for (o, m) in orow.iter_mut().zip(mrow) {
                                *o += s * m;
                            }
                        }
                    }
                }
                Ok((vec![n, t, c_out], out))
            }

            Op::LayerNorm { a, gain, bias, eps } => {
                let (na, ng, nb) = (&nodes[*a], &nodes[*gain], &nodes[*bias]);
                let c = *na.shape.last().unwrap_or(&0);
                if c == 0 || ng.shape != [c] || nb.shape != [c] {
                    return Err(mismatch(
                        "layer_norm",
                        "[.., c] with gain and bias of shape [c]",
                        &[&na.shape, &ng.shape, &nb.shape],
                    ));
                }
                let rows = na.data.len() / c;
                let mut out = vec![0.0; na.data.len()];
                for r in 0..rows {
                    let row = &na.data[r * c..(r + 1) * c];
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    for j in 0..c {
                        out[r * c + j] = ng.data[j] * (row[j] - mean) * inv + nb.data[j];
                    }
                }
                Ok((na.shape.clone(), out))
            }

            Op::MulMask { a, mask } => {
                let na = &nodes[*a];
                if mask.len() != na.data.len() {
                    return Err(mismatch("mul_mask", "a mask of matching length", &[&na.shape]));
                }
                let out = na.data.iter().zip(mask.iter()).map(|(x, m)| x * m).collect();
                Ok((na.shape.clone(), out))
            }

            Op::MeanOverTime { a } => {
                let na = &nodes[*a];
                if na.shape.len() != 3 {
                    return Err(mismatch("mean_over_time", "[n, t, c]", &[&na.shape]));
                }
                let (n, t, c) = (na.shape[0], na.shape[1], na.shape[2]);
                let mut out = vec![0.0; n * c];
                for nn in 0..n {
                    for tt in 0..t {
                        let row = &na.data[(nn * t + tt) * c..(nn * t + tt + 1) * c];
                        let orow = &mut out[nn * c..(nn + 1) * c];
                        for (o, x) in orow.iter_mut().zip(row) {
                            *o += x;
                        }
                    }
                }
                for o in &mut out {
                    *o /= t as f64;
                }
                Ok((vec![n, c], out))
            }

            Op::Reshape { a, shape } => {
                let na = &nodes[*a];
                if shape.iter().product::<usize>() != na.data.len() {
                    return Err(mismatch(
                        "reshape",
                        format!("a shape with {} entries", na.data.len()),
                        &[shape],
                    ));
                }
                Ok((shape.clone(), na.data.as_ref().clone()))
            }

            Op::AddRowBroadcast { m, v } => {
                let (nm, nv) = (&nodes[*m], &nodes[*v]);
                if nm.shape.len() != 2 || nv.shape != [nm.shape[1]] {
                    return Err(mismatch(
                        "add_row_broadcast",
                        "[r, c] and [c]",
                        &[&nm.shape, &nv.shape],
                    ));
                }
                let c = nm.shape[1];
                let out = nm
                    .data
                    .iter()
                    .enumerate()
                    .map(|(idx, x)| x + nv.data[idx % c])
                    .collect();
                Ok((nm.shape.clone(), out))
            }

            Op::SoftmaxCrossEntropy { logits, label } => {
                let nl = &nodes[*logits];
                if nl.shape.len() != 1 {
                    return Err(mismatch("softmax_cross_entropy", "[c] logits", &[&nl.shape]));
                }
                let c = nl.shape[0];
                if *label >= c {
                    return Err(TensorError::LabelOutOfRange { label: *label, classes: c });
                }
                let max = nl.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + nl.data.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
                Ok((vec![], vec![lse - nl.data[*label]]))
            }
        }
    }

    /// Propagate `out_grad` (the adjoint of node `id`) to this op's inputs.
    pub(crate) fn backward(
        &self,
        id: NodeId,
        out_grad: &[f64],
        nodes: &[Node],
        grads: &mut [Option<Vec<f64>>],
    ) {
        match self {
            Op::Leaf => {}

            Op::Add { a, b } => {
                accumulate(grads, nodes, *a, out_grad);
                accumulate(grads, nodes, *b, out_grad);
            }
            Op::Sub { a, b } => {
                accumulate(grads, nodes, *a, out_grad);
                let neg: Vec<f64> = out_grad.iter().map(|g| -g).collect();
                accumulate(grads, nodes, *b, &neg);
            }
            Op::Mul { a, b } => {
                let da: Vec<f64> =
                    out_grad.iter().zip(nodes[*b].data.iter()).map(|(g, y)| g * y).collect();
                let db: Vec<f64> =
                    out_grad.iter().zip(nodes[*a].data.iter()).map(|(g, x)| g * x).collect();
                accumulate(grads, nodes, *a, &da);
                accumulate(grads, nodes, *b, &db);
            }
            Op::Scale { a, factor } => {
                let da: Vec<f64> = out_grad.iter().map(|g| g * factor).collect();
                accumulate(grads, nodes, *a, &da);
            }
            Op::MatMul { a, b } => {
                let (na, nb) = (&nodes[*a], &nodes[*b]);
                let (m, k, n) = (na.shape[0], na.shape[1], nb.shape[1]);
                // dA = G . B^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let g = out_grad[i * n + j];
                        for p in 0..k {
                            da[i * k + p] += g * nb.data[p * n + j];
                        }
                    }
                }
                // dB = A^T . G
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let av = na.data[i * k + p];
                        let grow = &out_grad[i * n..(i + 1) * n];
                        let drow = &mut db[p * n..(p + 1) * n];
                        for (d, g) in drow.iter_mut().zip(grow) {
                            *d += av * g;
                        }
                    }
                }
                accumulate(grads, nodes, *a, &da);
                accumulate(grads, nodes, *b, &db);
            }
            Op::Sigmoid { a } => {
                let y = &nodes[id].data;
                let da: Vec<f64> =
                    out_grad.iter().zip(y.iter()).map(|(g, s)| g * s * (1.0 - s)).collect();
                accumulate(grads, nodes, *a, &da);
            }
            Op::Relu { a } => {
                let x = &nodes[*a].data;
                let da: Vec<f64> = out_grad
                    .iter()
                    .zip(x.iter())
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(grads, nodes, *a, &da);
            }
            Op::Sum { a } => {
                let da = vec![out_grad[0]; nodes[*a].data.len()];
                accumulate(grads, nodes, *a, &da);
            }
            Op::Mean { a } => {
                let n = nodes[*a].data.len();
                let da = vec![out_grad[0] / n as f64; n];
                accumulate(grads, nodes, *a, &da);
            }

            Op::Conv1dValid { signal, kernel } => {
                let (ns, nk) = (&nodes[*signal], &nodes[*kernel]);
                let (n, len, c_in) = (ns.shape[0], ns.shape[1], ns.shape[2]);
                let (k, c_out) = (nk.shape[0], nk.shape[2]);
                let t_out = len - k + 1;
                let mut dsig = vec![0.0; ns.data.len()];
                let mut dker = vec![0.0; nk.data.len()];
                for nn in 0..n {
                    for t in 0..t_out {
                        let grow = &out_grad[(nn * t_out + t) * c_out..(nn * t_out + t + 1) * c_out];
                        for kk in 0..k {
                            for i in 0..c_in {
                                let sig_idx = (nn * len + t + kk) * c_in + i;
                                let x = ns.data[sig_idx];
                                let wrow =
                                    &nk.data[(kk * c_in + i) * c_out..(kk * c_in + i + 1) * c_out];
                                let dwrow =
                                    &mut dker[(kk * c_in + i) * c_out..(kk * c_in + i + 1) * c_out];
                                let mut ds = 0.0;
                                for o in 0..c_out {
                                    ds += grow[o] * wrow[o];
                                    dwrow[o] += grow[o] * x;
                                }
                                dsig[sig_idx] += ds;
                            }
                        }
                    }
                }
                accumulate(grads, nodes, *signal, &dsig);
                accumulate(grads, nodes, *kernel, &dker);
            }

            Op::SliceLast { a, from, to } => {
                let na = &nodes[*a];
                let c = *na.shape.last().unwrap();
                let width = to - from;
                let rows = na.data.len() / c;
                let mut da = vec![0.0; na.data.len()];
                for r in 0..rows {
                    for j in 0..width {
                        da[r * c + from + j] = out_grad[r * width + j];
                    }
                }
                accumulate(grads, nodes, *a, &da);
            }

            Op::SpatialConv { h, theta, propagation } => {
                let (nh, nt) = (&nodes[*h], &nodes[*theta]);
                let (n, t, c_in) = (nh.shape[0], nh.shape[1], nh.shape[2]);
                let c_out = nt.shape[1];
                // gm = S^T . G per step (adjoint of the propagation).
                let mut gm = vec![0.0; n * t * c_out];
                for u in 0..n {
                    for v in 0..n {
                        let s = propagation[u * n + v];
                        if s == 0.0 {
                            continue;
                        }
                        for tt in 0..t {
                            let grow = &out_grad[(u * t + tt) * c_out..(u * t + tt + 1) * c_out];
                            let mrow = &mut gm[(v * t + tt) * c_out..(v * t + tt + 1) * c_out];
                            for (m, g) in mrow.iter_mut().zip(grow) {
                                *m += s * g;
                            }
                        }
                    }
                }
                // dH = gm . Theta^T, dTheta = sum over (node, step) of h^T . gm.
                let mut dh = vec![0.0; nh.data.len()];
                let mut dtheta = vec![0.0; nt.data.len()];
                for v in 0..n {
                    for tt in 0..t {
                        let base = (v * t + tt) * c_out;
                        let hrow = &nh.data[(v * t + tt) * c_in..(v * t + tt + 1) * c_in];
                        for i in 0..c_in {
                            let trow = &nt.data[i * c_out..(i + 1) * c_out];
                            let dtrow = &mut dtheta[i * c_out..(i + 1) * c_out];
                            let mut acc = 0.0;
                            for o in 0..c_out {
                                let g = gm[base + o];
                                acc += g * trow[o];
                                dtrow[o] += g * hrow[i];
                            }
                            dh[(v * t + tt) * c_in + i] += acc;
                        }
                    }
                }
                accumulate(grads, nodes, *h, &dh);
                accumulate(grads, nodes, *theta, &dtheta);
            }

            Op::LayerNorm { a, gain, bias, eps } => {
                let (na, ng) = (&nodes[*a], &nodes[*gain]);
                let c = *na.shape.last().unwrap();
                let rows = na.data.len() / c;
                let mut da = vec![0.0; na.data.len()];
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                for r in 0..rows {
                    let row = &na.data[r * c..(r + 1) * c];
                    let grow = &out_grad[r * c..(r + 1) * c];
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
                    let inv = 1.0 / (var + eps).sqrt();

                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..c {
                        let xhat = (row[j] - mean) * inv;
                        let dxhat = grow[j] * ng.data[j];
                        dgain[j] += grow[j] * xhat;
                        dbias[j] += grow[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    for j in 0..c {
                        let xhat = (row[j] - mean) * inv;
                        let dxhat = grow[j] * ng.data[j];
                        da[r * c + j] = inv
                            * (dxhat - sum_dxhat / c as f64 - xhat * sum_dxhat_xhat / c as f64);
                    }
                }
                accumulate(grads, nodes, *a, &da);
                accumulate(grads, nodes, *gain, &dgain);
                accumulate(grads, nodes, *bias, &dbias);
            }

            Op::MulMask { a, mask } => {
                let da: Vec<f64> = out_grad.iter().zip(mask.iter()).map(|(g, m)| g * m).collect();
                accumulate(grads, nodes, *a, &da);
            }

            Op::MeanOverTime { a } => {
                let na = &nodes[*a];
                let (n, t, c) = (na.shape[0], na.shape[1], na.shape[2]);
                let mut da = vec![0.0; na.data.len()];
                for nn in 0..n {
                    for tt in 0..t {
                        for ch in 0..c {
                            da[(nn * t + tt) * c + ch] = out_grad[nn * c + ch] / t as f64;
                        }
                    }
                }
                accumulate(grads, nodes, *a, &da);
            }

            Op::Reshape { a, .. } => {
                accumulate(grads, nodes, *a, out_grad);
            }

            Op::AddRowBroadcast { m, v } => {
                let c = nodes[*m].shape[1];
                accumulate(grads, nodes, *m, out_grad);
                let mut dv = vec![0.0; c];
                for (idx, g) in out_grad.iter().enumerate() {
                    dv[idx % c] += g;
                }
                accumulate(grads, nodes, *v, &dv);
            }

            Op::SoftmaxCrossEntropy { logits, label } => {
                let nl = &nodes[*logits];
                let max = nl.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = nl.data.iter().map(|&x| (x - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                let g = out_grad[0];
                let dl: Vec<f64> = exps
                    .iter()
                    .enumerate()
                    .map(|(j, e)| g * (e / z - if j == *label { 1.0 } else { 0.0 }))
                    .collect();
                accumulate(grads, nodes, *logits, &dl);
            }
        }
    }
}
