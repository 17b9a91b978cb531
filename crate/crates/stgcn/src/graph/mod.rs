//! Muscle-network graph construction and spectral filtering.
//!
//! A window of multichannel EMG becomes an undirected weighted graph: nodes
//! are electrodes, edge weights are absolute Pearson correlations between
//! channel signals. The dense adjacency is pruned to each node's k
//! strongest neighbors and symmetrized, and from the pruned weights come
//! the normalized Laplacian and the renormalized propagation matrix
//! `S = D̃^{-1/2} W̃ D̃^{-1/2}` (with `W̃ = W + I`) that the first-order
//! spatial convolution layer multiplies by.
//!
//! Two filter routes are provided on purpose. [`spectral_filter`] applies a
//! filter exactly through a full symmetric eigendecomposition — the
//! verification oracle, never used in training. [`chebyshev_filter`] is the
//! polynomial approximation evaluated by the three-term recurrence on
//! vectors. Tests hold the two against each other.

mod eigen;

use std::fmt::Write as _;

use thiserror::Error;

use crate::signal::Window;

pub use eigen::{power_iteration_lambda_max, symmetric_eigen};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("k = {k} out of range, need 1 <= k <= {max} for {n} nodes")]
    KOutOfRange { k: usize, max: usize, n: usize },
    #[error("{op}: matrix is not symmetric (|a[{i}][{j}] - a[{j}][{i}]| = {delta})")]
    NotSymmetric { op: &'static str, i: usize, j: usize, delta: f64 },
    #[error("{op}: expected {expected}, got {actual}")]
    DimensionMismatch { op: &'static str, expected: String, actual: String },
    #[error("region map covers {got} nodes, graph has {want}")]
    RegionMapMismatch { got: usize, want: usize },
}

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMat {
    n: usize,
    data: Vec<f64>,
}

impl SquareMat {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_data(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n);
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        self.data
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn check_symmetric(&self, op: &'static str, tol: f64) -> Result<(), GraphError> {
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let delta = (self.at(i, j) - self.at(j, i)).abs();
                if delta > tol {
                    return Err(GraphError::NotSymmetric { op, i, j, delta });
                }
            }
        }
        Ok(())
    }
}

/// The muscle network derived from one window: dense Pearson adjacency,
/// k-NN pruned weights, normalized Laplacian, and the renormalized
/// propagation matrix used by the spatial convolution layer.
#[derive(Debug, Clone)]
pub struct MuscleGraph {
    pub n_nodes: usize,
    pub adjacency_full: SquareMat,
    pub weights: SquareMat,
    pub laplacian: SquareMat,
    pub propagation: SquareMat,
    pub k: usize,
}

impl MuscleGraph {
    /// Build the full graph chain for one window.
    pub fn from_window(window: &Window, k: usize) -> Result<Self, GraphError> {
        let adjacency_full = pearson_adjacency(window);
        Self::from_adjacency(adjacency_full, k)
    }

    /// Build from an existing dense adjacency (used by the global-graph
    /// ablation mode, where one adjacency comes from a whole training split).
    pub fn from_adjacency(adjacency_full: SquareMat, k: usize) -> Result<Self, GraphError> {
        let weights = knn_prune(&adjacency_full, k)?;
        let laplacian = normalized_laplacian(&weights)?;
        let propagation = renormalized_propagation(&weights)?;
        Ok(Self {
            n_nodes: adjacency_full.n(),
            adjacency_full,
            weights,
            laplacian,
            propagation,
            k,
        })
    }
}

/// Dense adjacency of absolute Pearson correlations between channels.
///
/// `a[i][j] = |rho(channel_i, channel_j)|` for `i != j`, zero diagonal. A
/// constant channel has no correlation defined; its entries are 0.
pub fn pearson_adjacency(window: &Window) -> SquareMat {
    let n = window.channels;
    let len = window.len;
    debug_assert!(len >= 2, "pearson needs at least 2 samples");

    // Two-pass: center each channel, then accumulate cross products.
    let mut means = vec![0.0; n];
    for (ch, mean) in means.iter_mut().enumerate() {
        *mean = window.channel(ch).iter().sum::<f64>() / len as f64;
    }
    let mut norms = vec![0.0; n];
    for ch in 0..n {
        norms[ch] = window
            .channel(ch)
            .iter()
            .map(|x| (x - means[ch]) * (x - means[ch]))
            .sum::<f64>()
            .sqrt();
    }

    let mut a = SquareMat::zeros(n);
    for i in 0..n {
        if norms[i] == 0.0 {
            continue;
        }
        for j in (i + 1)..n {
            if norms[j] == 0.0 {
                continue;
            }
            let xi = window.channel(i);
            let xj = window.channel(j);
            let dot: f64 = xi
                .iter()
                .zip(xj)
                .map(|(x, y)| (x - means[i]) * (y - means[j]))
                .sum();
            let rho = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            a.set(i, j, rho.abs());
            a.set(j, i, rho.abs());
        }
    }
    a
}

/// Keep each row's k largest off-diagonal entries (ties broken toward the
/// smaller column index), zero the rest, then symmetrize by element-wise
/// max so edges stay undirected. Rows may end up with more than k nonzeros
/// from the symmetrization, never fewer.
pub fn knn_prune(a: &SquareMat, k: usize) -> Result<SquareMat, GraphError> {
    let n = a.n();
    if k == 0 || k > n.saturating_sub(1) {
        return Err(GraphError::KOutOfRange { k, max: n.saturating_sub(1), n });
    }
    a.check_symmetric("knn_prune", 0.0)?;

    let mut pruned = SquareMat::zeros(n);
    let mut order: Vec<usize> = Vec::with_capacity(n - 1);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        // Descending by weight, ascending by column on ties.
        order.sort_by(|&x, &y| {
            a.at(i, y)
                .partial_cmp(&a.at(i, x))
                .unwrap()
                .then(x.cmp(&y))
        });
        for &j in order.iter().take(k) {
            pruned.set(i, j, a.at(i, j));
        }
    }

    let mut w = SquareMat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            w.set(i, j, pruned.at(i, j).max(pruned.at(j, i)));
        }
    }
    Ok(w)
}

/// Normalized graph Laplacian `L = I - D^{-1/2} W D^{-1/2}`.
///
/// Isolated nodes (zero degree) take `D^{-1/2} = 0`, leaving their row of
/// `L` equal to the identity's.
pub fn normalized_laplacian(w: &SquareMat) -> Result<SquareMat, GraphError> {
    w.check_symmetric("normalized_laplacian", 0.0)?;
    let n = w.n();
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = w.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();

    let mut l = SquareMat::identity(n);
    for i in 0..n {
        for j in 0..n {
            let norm = inv_sqrt_deg[i] * w.at(i, j) * inv_sqrt_deg[j];
            l.set(i, j, l.at(i, j) - norm);
        }
    }
    Ok(l)
}

/// Renormalized propagation matrix `S = D̃^{-1/2} W̃ D̃^{-1/2}` with
/// `W̃ = W + I`. Self-loops make every degree at least 1, so the scaling is
/// never singular; the spectral radius of `S` is at most 1.
pub fn renormalized_propagation(w: &SquareMat) -> Result<SquareMat, GraphError> {
    w.check_symmetric("renormalized_propagation", 0.0)?;
    let n = w.n();
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = w.row(i).iter().sum::<f64>() + 1.0;
            1.0 / d.sqrt()
        })
        .collect();

    let mut s = SquareMat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let w_tilde = w.at(i, j) + if i == j { 1.0 } else { 0.0 };
            s.set(i, j, inv_sqrt_deg[i] * w_tilde * inv_sqrt_deg[j]);
        }
    }
    Ok(s)
}

/// Exact spectral filter: `x' = U diag(theta(lambda_1..lambda_n)) U^T x`
/// through a full symmetric eigendecomposition.
///
/// This is the verification oracle for the polynomial filters; it is not on
/// any training path.
pub fn spectral_filter<F>(l: &SquareMat, theta_spectrum: F, x: &[f64]) -> Result<Vec<f64>, GraphError>
where
    F: Fn(f64) -> f64,
{
    l.check_symmetric("spectral_filter", 1e-12)?;
    let n = l.n();
    if x.len() != n {
        return Err(GraphError::DimensionMismatch {
            op: "spectral_filter",
            expected: format!("vector of length {n}"),
            actual: format!("length {}", x.len()),
        });
    }
    let (values, vectors) = symmetric_eigen(l);
    // y = U^T x, scale by theta(lambda), back to U basis.
    let mut y = vec![0.0; n];
    for (j, yj) in y.iter_mut().enumerate() {
        *yj = (0..n).map(|r| vectors.at(r, j) * x[r]).sum();
    }
    for (j, yj) in y.iter_mut().enumerate() {
        *yj *= theta_spectrum(values[j]);
    }
    let mut out = vec![0.0; n];
    for (r, o) in out.iter_mut().enumerate() {
        *o = (0..n).map(|j| vectors.at(r, j) * y[j]).sum();
    }
    Ok(out)
}

/// Chebyshev polynomial filter `x' = sum_k theta_k T_k(L̃) x` with
/// `L̃ = (2 / lambda_max) L - I`, computed by the three-term recurrence on
/// vectors — `T_k(L̃)` is never materialized as a matrix.
pub fn chebyshev_filter(
    l: &SquareMat,
    thetas: &[f64],
    lambda_max: f64,
    x: &[f64],
) -> Result<Vec<f64>, GraphError> {
    let n = l.n();
    if x.len() != n {
        return Err(GraphError::DimensionMismatch {
            op: "chebyshev_filter",
            expected: format!("vector of length {n}"),
            actual: format!("length {}", x.len()),
        });
    }
    assert!(lambda_max > 0.0, "lambda_max must be positive");
    if thetas.is_empty() {
        return Ok(vec![0.0; n]);
    }

    let scaled_mul = |v: &[f64]| -> Vec<f64> {
        // L̃ v = (2 / lambda_max) L v - v
        let lv = l.mul_vec(v);
        lv.iter()
            .zip(v)
            .map(|(lv, v)| 2.0 / lambda_max * lv - v)
            .collect()
    };

    let mut t_prev = x.to_vec();
    let mut out: Vec<f64> = t_prev.iter().map(|v| thetas[0] * v).collect();
    if thetas.len() == 1 {
        return Ok(out);
    }
    let mut t_curr = scaled_mul(&t_prev);
    for (o, t) in out.iter_mut().zip(&t_curr) {
        *o += thetas[1] * t;
    }
    for theta in &thetas[2..] {
        let lt = scaled_mul(&t_curr);
        let t_next: Vec<f64> = lt
            .iter()
            .zip(&t_prev)
            .map(|(lt, tp)| 2.0 * lt - tp)
            .collect();
        for (o, t) in out.iter_mut().zip(&t_next) {
            *o += theta * t;
        }
        t_prev = t_curr;
        t_curr = t_next;
    }
    Ok(out)
}

/// Exact largest Laplacian eigenvalue for [`chebyshev_filter`]; the
/// first-order layer instead fixes `lambda_max = 2`.
pub fn lambda_max(l: &SquareMat) -> f64 {
    power_iteration_lambda_max(l, 1e-10, 100_000)
}

/// Contiguous node-index regions: eight blocks, sixteen nodes per block for
/// the 128-electrode grids.
pub fn grid_regions(n_nodes: usize) -> Vec<usize> {
    (0..n_nodes).map(|i| i * 8 / n_nodes.max(1)).collect()
}

/// Render the pruned graph as Graphviz DOT: nodes colored by region, edge
/// pen width proportional to correlation weight.
pub fn export_dot(graph: &MuscleGraph, regions: &[usize]) -> Result<String, GraphError> {
    if regions.len() != graph.n_nodes {
        return Err(GraphError::RegionMapMismatch { got: regions.len(), want: graph.n_nodes });
    }
    let mut out = String::new();
    out.push_str("graph muscle_network {\n");
    out.push_str("  layout=circo;\n");
    out.push_str("  node [style=filled, colorscheme=set28];\n");
    for (i, region) in regions.iter().enumerate() {
        writeln!(out, "  n{i} [label=\"{i}\", fillcolor={}];", region % 8 + 1).unwrap();
    }
    for i in 0..graph.n_nodes {
        for j in (i + 1)..graph.n_nodes {
            let w = graph.weights.at(i, j);
            if w > 0.0 {
                writeln!(out, "  n{i} -- n{j} [penwidth={:.4}];", 4.0 * w).unwrap();
            }
        }
    }
    out.push_str("}\n");
    Ok(out)
}

/// Upper-triangle adjacency as `node_i,node_j,weight` CSV lines.
///
/// With `full` set, every pair is emitted from the dense adjacency;
/// otherwise only the pruned graph's surviving edges.
pub fn export_adjacency_csv(graph: &MuscleGraph, full: bool) -> String {
    let mat = if full { &graph.adjacency_full } else { &graph.weights };
    let mut out = String::from("node_i,node_j,weight\n");
    for i in 0..graph.n_nodes {
        for j in (i + 1)..graph.n_nodes {
            let w = mat.at(i, j);
            if full || w > 0.0 {
                writeln!(out, "{i},{j},{w}").unwrap();
            }
        }
    }
    out
}
