//! Training and cross-validation harness.
//!
//! Adam with a multiplicative per-epoch learning-rate decay, early stopping
//! on held-out loss, and repetition-held-out k-fold cross-validation: fold
//! `f` tests exactly the windows of repetition `f` and trains on the rest,
//! so no window ever appears on both sides.
//!
//! Everything is seeded. Batch shuffling, dropout masks, and parameter
//! initialization all derive from the run seed through pure mixing, and
//! per-sample gradients are reduced in batch order, so a rerun with the
//! same seed, config, and data is bit-identical even when samples and folds
//! evaluate on multiple threads.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{pearson_adjacency, GraphError, MuscleGraph, SquareMat};
use crate::model::{
    self, build_forward, BatchMode, GraphWindow, ModelConfig, ModelError, ModelParams,
    DropoutMasks, PARAM_NAMES,
};
use crate::provenance;
use crate::signal::{zscore_normalize, Window};
use crate::tensor::Tape;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {reason}")]
    InvalidConfig { reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("empty fold: repetition {fold} has no test windows")]
    EmptyFold { fold: usize },
    #[error("empty training split for fold {fold}")]
    EmptyTrainSplit { fold: usize },
    #[error("repetition {repetition} out of range for {folds} folds")]
    RepetitionOutOfRange { repetition: usize, folds: usize },
    #[error("non-finite gradient in {name} at epoch {epoch}, batch {batch}")]
    NonFiniteGradient { name: &'static str, epoch: usize, batch: usize },
    #[error("training diverged (loss {loss}) at epoch {epoch}, batch {batch}")]
    Diverged { loss: f64, epoch: usize, batch: usize },
    #[error("inconsistent dataset: {reason}")]
    InconsistentDataset { reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate.
    pub lr0: f64,
    /// Multiplicative per-epoch decay: `lr = lr0 * (1 - lr_decay)^epoch`.
    pub lr_decay: f64,
    /// Epochs without held-out loss improvement before stopping.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Neighbors kept per node when building muscle graphs.
    pub k: usize,
    pub folds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr0: 0.001,
            lr_decay: 0.05,
            patience: 30,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            k: 2,
            folds: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |reason: String| Err(TrainError::InvalidConfig { reason });
        if self.epochs < 1 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size < 1 {
            return fail("batch size must be at least 1".into());
        }
        if self.lr0 <= 0.0 {
            return fail(format!("lr0 {} must be positive", self.lr0));
        }
        if !(0.0..1.0).contains(&self.lr_decay) {
            return fail(format!("lr_decay {} outside [0, 1)", self.lr_decay));
        }
        if self.patience < 1 {
            return fail("patience must be at least 1".into());
        }
        if self.folds < 2 {
            return fail("need at least 2 folds".into());
        }
        if self.k < 1 {
            return fail("k must be at least 1".into());
        }
        Ok(())
    }

    /// Canonical `key=value` lines for provenance hashing.
    pub fn provenance_lines(&self, model: &ModelConfig) -> Vec<(String, String)> {
        vec![
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("lr0".into(), self.lr0.to_string()),
            ("lr_decay".into(), self.lr_decay.to_string()),
            ("patience".into(), self.patience.to_string()),
            ("beta1".into(), self.beta1.to_string()),
            ("beta2".into(), self.beta2.to_string()),
            ("eps".into(), self.eps.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("k".into(), self.k.to_string()),
            ("folds".into(), self.folds.to_string()),
            ("n_nodes".into(), model.n_nodes.to_string()),
            ("window_len".into(), model.window_len.to_string()),
            ("temporal_kernel".into(), model.temporal_kernel.to_string()),
            ("in_channels".into(), model.in_channels.to_string()),
            ("temporal_channels".into(), model.temporal_channels.to_string()),
            ("spatial_channels".into(), model.spatial_channels.to_string()),
            ("hidden".into(), model.hidden.to_string()),
            ("classes".into(), model.classes.to_string()),
            ("dropout".into(), model.dropout.to_string()),
        ]
    }

    pub fn config_hash(&self, model: &ModelConfig) -> u64 {
        provenance::config_hash(&self.provenance_lines(model))
    }
}

/// Scheduled learning rate for an epoch (monotone non-increasing).
pub fn lr_schedule(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.lr0 * (1.0 - cfg.lr_decay).powi(epoch as i32)
}

// ── Adam ────────────────────────────────────────────────────────────────

/// Per-parameter first and second moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let m = params.tensors().iter().map(|p| vec![0.0; p.len()]).collect();
        let v = params.tensors().iter().map(|p| vec![0.0; p.len()]).collect();
        Self { m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// Gradients aligned with [`ModelParams::tensors`] order.
#[derive(Debug, Clone)]
pub struct ParamGrads(pub Vec<Vec<f64>>);

impl ParamGrads {
    pub fn zeros(params: &ModelParams) -> Self {
        Self(params.tensors().iter().map(|p| vec![0.0; p.len()]).collect())
    }

    fn add(&mut self, other: &[Vec<f64>]) {
        for (acc, g) in self.0.iter_mut().zip(other) {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for g in &mut self.0 {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// Elementwise bias-corrected Adam update on one buffer at step `t`
/// (already incremented): `m = b1 m + (1-b1) g`, `v = b2 v + (1-b2) g^2`,
/// `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    cfg: &TrainConfig,
) {
    let bias1 = 1.0 - cfg.beta1.powi(t as i32);
    let bias2 = 1.0 - cfg.beta2.powi(t as i32);
    for j in 0..p.len() {
        m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
        v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
        // Saturate the bias-corrected moments: g*g can overflow to infinity
        // for finite but astronomically large gradients, and inf/inf would
        // poison the parameter with NaN. Saturation is the identity for any
        // magnitude that matters and keeps finite gradients giving finite
        // parameters.
        let m_hat = (m[j] / bias1).clamp(-f64::MAX, f64::MAX);
        let v_hat = (v[j] / bias2).min(f64::MAX);
        p[j] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// One Adam step over every parameter tensor.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ParamGrads,
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    assert!(lr > 0.0, "learning rate must be positive");
    for (grad, name) in grads.0.iter().zip(PARAM_NAMES) {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteGradient { name, epoch: 0, batch: 0 });
        }
    }

    state.t += 1;
    for (i, tensor) in params.tensors_mut().into_iter().enumerate() {
        let data = Arc::make_mut(&mut tensor.data);
        adam_update(data, &grads.0[i], &mut state.m[i], &mut state.v[i], state.t, lr, cfg);
    }
    Ok(())
}

// ── Folds ───────────────────────────────────────────────────────────────

/// A fold's `(train_indices, test_indices)` pair.
pub type FoldSplit = (Vec<usize>, Vec<usize>);

/// Repetition-held-out folds: fold `f` tests exactly the windows whose
/// repetition index is `f`. Returns `(train_indices, test_indices)` per
/// fold; the test sets partition the dataset.
pub fn kfold_split(
    repetitions: &[usize],
    n_folds: usize,
) -> Result<Vec<FoldSplit>, TrainError> {
    for &rep in repetitions {
        if rep >= n_folds {
            return Err(TrainError::RepetitionOutOfRange { repetition: rep, folds: n_folds });
        }
    }
    let mut folds = Vec::with_capacity(n_folds);
    for fold in 0..n_folds {
        let test: Vec<usize> =
            (0..repetitions.len()).filter(|&i| repetitions[i] == fold).collect();
        let train: Vec<usize> =
            (0..repetitions.len()).filter(|&i| repetitions[i] != fold).collect();
        if test.is_empty() {
            return Err(TrainError::EmptyFold { fold });
        }
        if train.is_empty() {
            return Err(TrainError::EmptyTrainSplit { fold });
        }
        folds.push((train, test));
    }
    Ok(folds)
}

// ── Dataset preparation ─────────────────────────────────────────────────

/// How windows become model inputs.
#[derive(Debug, Clone, Copy)]
pub struct PipelineOptions {
    /// Per-channel z-score each window before anything else.
    pub zscore: bool,
    /// Build one adjacency per fold from the whole training split instead
    /// of one graph per window (ablation mode).
    pub global_graph: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { zscore: true, global_graph: false }
    }
}

fn check_dataset(windows: &[Window], model_cfg: &ModelConfig) -> Result<(), TrainError> {
    let fail = |reason: String| Err(TrainError::InconsistentDataset { reason });
    let Some(first) = windows.first() else {
        return fail("no windows".into());
    };
    if windows
        .iter()
        .any(|w| w.channels != first.channels || w.len != first.len)
    {
        return fail("windows disagree in channel count or length".into());
    }
    if first.channels != model_cfg.n_nodes {
        return fail(format!(
            "{} channels but model expects {} nodes",
            first.channels, model_cfg.n_nodes
        ));
    }
    if first.len != model_cfg.window_len {
        return fail(format!(
            "{}-sample windows but model expects {}",
            first.len, model_cfg.window_len
        ));
    }
    if let Some(w) = windows.iter().find(|w| w.label >= model_cfg.classes) {
        return fail(format!(
            "label {} outside the model's {} classes",
            w.label, model_cfg.classes
        ));
    }
    Ok(())
}

/// Per-window graphs: each window is paired with the propagation matrix of
/// its own muscle network.
pub fn prepare_per_window(
    windows: &[Window],
    k: usize,
    zscore: bool,
) -> Result<Vec<GraphWindow>, TrainError> {
    windows
        .par_iter()
        .map(|w| {
            let w = if zscore { zscore_normalize(w) } else { w.clone() };
            let graph = MuscleGraph::from_window(&w, k)?;
            Ok(GraphWindow {
                input: Arc::new(w.data),
                propagation: Arc::new(graph.propagation.into_data()),
                label: w.label,
                repetition: w.repetition,
            })
        })
        .collect()
}

/// Pearson adjacency over the concatenation of many windows, two-pass.
pub fn global_adjacency(windows: &[&Window]) -> SquareMat {
    assert!(!windows.is_empty());
    let channels = windows[0].channels;
    let len = windows[0].len;
    let concat_len = windows.len() * len;
    let mut concatenated = Window {
        data: vec![0.0; channels * concat_len],
        channels,
        len: concat_len,
        label: 0,
        repetition: 0,
        subject: 0,
        source_offset: 0,
    };
    for (wi, w) in windows.iter().enumerate() {
        for ch in 0..channels {
            let dst = ch * concat_len + wi * len;
            concatenated.data[dst..dst + len].copy_from_slice(w.channel(ch));
        }
    }
    pearson_adjacency(&concatenated)
}

// ── Metrics ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct FoldMetrics {
    /// Held-out accuracy of the returned (best-loss) parameters.
    pub accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub optimizer_steps: usize,
    pub curves: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub fold_accuracy: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation across folds.
    pub std: f64,
    pub folds: Vec<FoldMetrics>,
    pub params: Vec<ModelParams>,
    pub config_hash: u64,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

// ── Training ────────────────────────────────────────────────────────────

/// Absolute held-out-loss improvement below this does not reset patience.
pub const EARLY_STOP_TOL: f64 = 1e-6;

/// Strict no-improvement early stopping: the best observation is the one
/// whose loss undercuts the previous best by more than [`EARLY_STOP_TOL`];
/// after `patience` consecutive non-improving epochs, stop.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_epoch: usize,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    NoImprovement,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best_loss: f64::INFINITY, best_epoch: 0, stale: 0 }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best_loss - EARLY_STOP_TOL {
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            StopDecision::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::NoImprovement
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

fn mix(a: u64, b: u64) -> u64 {
    let mut x = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

struct SampleResult {
    loss: f64,
    predicted: usize,
    grads: Vec<Vec<f64>>,
}

fn forward_backward(
    sample: &GraphWindow,
    params: &ModelParams,
    cfg: &ModelConfig,
    masks: Option<&DropoutMasks>,
) -> Result<SampleResult, ModelError> {
    let mut tape = Tape::new();
    let (logits, leaves) = build_forward(&mut tape, sample, params, cfg, masks)?;
    let loss = tape.softmax_cross_entropy(&logits, sample.label)?;
    tape.backward(&loss)?;
    let predicted = model::predict(tape.value(&logits));
    let grads = leaves
        .0
        .iter()
        .map(|leaf| tape.grad(leaf).expect("parameter gradient populated").to_vec())
        .collect();
    Ok(SampleResult { loss: tape.scalar(&loss), predicted, grads })
}

/// Numerically stable cross-entropy of raw logit values.
pub fn cross_entropy_value(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Mean loss and accuracy of `params` on a sample set (eval mode).
pub fn evaluate(
    samples: &[GraphWindow],
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<(f64, f64), ModelError> {
    let logits = model::stgcn_forward(samples, params, cfg, BatchMode::Eval)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (sample, l) in samples.iter().zip(&logits) {
        loss += cross_entropy_value(l, sample.label);
        if model::predict(l) == sample.label {
            correct += 1;
        }
    }
    let n = samples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Train on one fold with Adam, scheduled learning rate, and early stopping
/// on held-out loss; returns the best-loss parameters and the full curves.
///
/// Mini-batches reshuffle every epoch from a seed derived from
/// `(fold_seed, epoch)`; the partial final batch still counts as an
/// optimizer step, so one epoch performs `ceil(|train| / batch_size)` steps.
pub fn train_fold(
    train: &[GraphWindow],
    test: &[GraphWindow],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    fold_seed: u64,
) -> Result<(ModelParams, FoldMetrics), TrainError> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSplit { fold: 0 });
    }
    if test.is_empty() {
        return Err(TrainError::EmptyFold { fold: 0 });
    }

    let mut params = ModelParams::init(model_cfg, mix(fold_seed, 0x1217))?;
    let mut adam = AdamState::new(&params);

    let mut best_params = params.clone();
    let mut best_acc = 0.0;
    let mut stopper = EarlyStopping::new(train_cfg.patience);
    let mut curves = Vec::new();
    let mut optimizer_steps = 0usize;

    let mut indices: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..train_cfg.epochs {
        let lr = lr_schedule(train_cfg, epoch);
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix(fold_seed, epoch as u64));
        indices.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;
        for (step, batch_ids) in indices.chunks(train_cfg.batch_size).enumerate() {
            let mask_seed = mix(mix(fold_seed, epoch as u64), step as u64);
            let results: Vec<Result<SampleResult, ModelError>> = batch_ids
                .par_iter()
                .enumerate()
                .map(|(pos, &id)| {
                    let masks = if model_cfg.dropout > 0.0 {
                        let mut rng = model::sample_rng(mask_seed, pos);
                        Some(model::make_dropout_masks(model_cfg, &mut rng))
                    } else {
                        None
                    };
                    forward_backward(&train[id], &params, model_cfg, masks.as_ref())
                })
                .collect();

            // Reduce in batch order so the sum is schedule-independent.
            let mut batch_grads = ParamGrads::zeros(&params);
            for (pos, r) in results.into_iter().enumerate() {
                let r = r?;
                if !r.loss.is_finite() {
                    return Err(TrainError::Diverged { loss: r.loss, epoch, batch: step });
                }
                epoch_loss += r.loss;
                if r.predicted == train[batch_ids[pos]].label {
                    epoch_correct += 1;
                }
                batch_grads.add(&r.grads);
            }
            batch_grads.scale(1.0 / batch_ids.len() as f64);

            adam_step(&mut params, &batch_grads, &mut adam, lr, train_cfg).map_err(|e| {
                match e {
                    TrainError::NonFiniteGradient { name, .. } => {
                        TrainError::NonFiniteGradient { name, epoch, batch: step }
                    }
                    other => other,
                }
            })?;
            optimizer_steps += 1;
        }

        // Train metrics come from the same dropout-active forwards that
        // produced the gradients; the held-out split is evaluated clean.
        let train_loss = epoch_loss / train.len() as f64;
        let train_acc = epoch_correct as f64 / train.len() as f64;
        let (test_loss, test_acc) = evaluate(test, &params, model_cfg)?;
        curves.push(EpochRecord { epoch, train_loss, train_acc, test_loss, test_acc });

        match stopper.observe(epoch, test_loss) {
            StopDecision::Improved => {
                best_acc = test_acc;
                best_params = params.clone();
            }
            StopDecision::NoImprovement => {}
            StopDecision::Stop => break,
        }
    }

    let metrics = FoldMetrics {
        accuracy: best_acc,
        best_epoch: stopper.best_epoch(),
        epochs_run: curves.len(),
        optimizer_steps,
        curves,
    };
    Ok((best_params, metrics))
}

/// Repetition-held-out cross-validation over a windowed dataset.
///
/// Folds run in parallel; outputs are ordered by fold index, so the result
/// does not depend on scheduling. In global-graph mode each fold builds one
/// adjacency from its training split only and applies it to both splits.
pub fn cross_validate(
    windows: &[Window],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    opts: PipelineOptions,
) -> Result<CvOutcome, TrainError> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    check_dataset(windows, model_cfg)?;

    let reps: Vec<usize> = windows.iter().map(|w| w.repetition).collect();
    let folds = kfold_split(&reps, train_cfg.folds)?;

    let normalized: Vec<Window> = if opts.zscore {
        windows.par_iter().map(zscore_normalize).collect()
    } else {
        windows.to_vec()
    };

    // Per-window graphs are fold-independent; build them once.
    let per_window: Option<Vec<GraphWindow>> = if opts.global_graph {
        None
    } else {
        Some(prepare_per_window(&normalized, train_cfg.k, false)?)
    };

    let fold_results: Vec<Result<(ModelParams, FoldMetrics), TrainError>> = folds
        .par_iter()
        .enumerate()
        .map(|(fold, (train_ids, test_ids))| {
            let fold_seed = mix(train_cfg.seed, fold as u64);
            let (train_set, test_set): (Vec<GraphWindow>, Vec<GraphWindow>) =
                match &per_window {
                    Some(prepared) => (
                        train_ids.iter().map(|&i| prepared[i].clone()).collect(),
                        test_ids.iter().map(|&i| prepared[i].clone()).collect(),
                    ),
                    None => {
                        let train_windows: Vec<&Window> =
                            train_ids.iter().map(|&i| &normalized[i]).collect();
                        let adjacency = global_adjacency(&train_windows);
                        let graph = MuscleGraph::from_adjacency(adjacency, train_cfg.k)?;
                        let propagation = Arc::new(graph.propagation.into_data());
                        let to_sample = |i: usize| GraphWindow {
                            input: Arc::new(normalized[i].data.clone()),
                            propagation: propagation.clone(),
                            label: normalized[i].label,
                            repetition: normalized[i].repetition,
                        };
                        (
                            train_ids.iter().map(|&i| to_sample(i)).collect(),
                            test_ids.iter().map(|&i| to_sample(i)).collect(),
                        )
                    }
                };
            train_fold(&train_set, &test_set, model_cfg, train_cfg, fold_seed)
        })
        .collect();

    let mut params = Vec::with_capacity(folds.len());
    let mut fold_metrics = Vec::with_capacity(folds.len());
    for r in fold_results {
        let (p, m) = r?;
        params.push(p);
        fold_metrics.push(m);
    }
    let fold_accuracy: Vec<f64> = fold_metrics.iter().map(|m| m.accuracy).collect();
    let (mean, std) = mean_std(&fold_accuracy);
    Ok(CvOutcome {
        fold_accuracy,
        mean,
        std,
        folds: fold_metrics,
        params,
        config_hash: train_cfg.config_hash(model_cfg),
    })
}

// ── CSV emission ────────────────────────────────────────────────────────

fn write_file(path: &Path, text: &str) -> Result<(), TrainError> {
    std::fs::write(path, text)
        .map_err(|e| TrainError::Io { path: path.display().to_string(), source: e })
}

/// `curves.csv`: one row per (fold, epoch).
pub fn write_curves_csv(path: &Path, outcome: &CvOutcome) -> Result<(), TrainError> {
    let mut text = String::from("epoch,fold,train_loss,train_acc,test_loss,test_acc\n");
    for (fold, metrics) in outcome.folds.iter().enumerate() {
        for r in &metrics.curves {
            text.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, fold, r.train_loss, r.train_acc, r.test_loss, r.test_acc
            ));
        }
    }
    write_file(path, &text)
}

/// `folds.csv`: held-out accuracy per fold.
pub fn write_folds_csv(path: &Path, outcome: &CvOutcome) -> Result<(), TrainError> {
    let mut text = String::from("fold,accuracy\n");
    for (fold, acc) in outcome.fold_accuracy.iter().enumerate() {
        text.push_str(&format!("{fold},{acc}\n"));
    }
    write_file(path, &text)
}

/// `summary.csv`: mean, population std, and the config hash.
pub fn write_summary_csv(path: &Path, outcome: &CvOutcome) -> Result<(), TrainError> {
    let text = format!(
        "mean,std,config_hash\n{},{},{:016x}\n",
        outcome.mean, outcome.std, outcome.config_hash
    );
    write_file(path, &text)
}
