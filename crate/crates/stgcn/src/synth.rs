//! Seeded synthetic datasets with class-specific correlation structure.
//!
//! Each class fixes a partition of the nodes into groups; within a window,
//! all channels of a group follow the same band-limited latent (a sum of
//! three low-frequency sinusoids) up to a per-channel gain, plus white
//! noise. Class identity therefore lives in the spatial correlation
//! pattern, not in amplitudes — exactly the pathway the spatial graph
//! convolution is supposed to exploit — while the latents give the temporal
//! convolution non-trivial structure.
//!
//! [`oracle_separability_check`] is a training-free nearest-centroid
//! classifier over adjacency features. Running it before any
//! training-based test certifies the dataset is learnable, so a training
//! failure indicts the model, not the data.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::pearson_adjacency;
use crate::signal::{Annotation, EmgRecording, Window};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {reason}")]
    InvalidConfig { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub n_nodes: usize,
    pub window_len: usize,
    pub reps: usize,
    pub windows_per_rep: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 8,
            n_nodes: 16,
            window_len: 64,
            reps: 5,
            windows_per_rep: 12,
            noise_std: 0.3,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |reason: String| Err(SynthError::InvalidConfig { reason });
        if self.n_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.n_nodes < 4 {
            return fail(format!("need at least 4 nodes, got {}", self.n_nodes));
        }
        if self.window_len < 8 {
            return fail(format!(
                "window length {} too short for a width-5 temporal kernel",
                self.window_len
            ));
        }
        if self.reps < 2 {
            return fail("need at least 2 repetitions to hold one out".into());
        }
        if self.windows_per_rep < 1 {
            return fail("need at least 1 window per repetition".into());
        }
        if self.noise_std < 0.0 {
            return fail(format!("noise_std {} negative", self.noise_std));
        }
        Ok(())
    }

    pub fn total_windows(&self) -> usize {
        self.n_classes * self.reps * self.windows_per_rep
    }
}

/// Generated windows plus the per-class node partitions that shaped them.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub windows: Vec<Window>,
    /// `partitions[class][node]` = group index of `node` under that class.
    pub partitions: Vec<Vec<usize>>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two uniforms.
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Random partition of nodes into `groups` non-empty groups.
fn random_partition(rng: &mut ChaCha8Rng, n_nodes: usize, groups: usize) -> Vec<usize> {
    loop {
        let assignment: Vec<usize> = (0..n_nodes).map(|_| rng.random_range(0..groups)).collect();
        let mut seen = vec![false; groups];
        for &g in &assignment {
            seen[g] = true;
        }
        if seen.iter().all(|&s| s) {
            return assignment;
        }
    }
}

/// Generate a fully balanced labeled dataset: `windows_per_rep` windows for
/// every (class, repetition) cell, in deterministic order.
pub fn generate_synthetic_dataset(cfg: &SynthConfig) -> Result<SynthDataset, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let groups = (cfg.n_nodes / 4).max(2);

    // Distinct partition per class, rejection-sampled to differ.
    let mut partitions: Vec<Vec<usize>> = Vec::with_capacity(cfg.n_classes);
    while partitions.len() < cfg.n_classes {
        let candidate = random_partition(&mut rng, cfg.n_nodes, groups);
        if !partitions.contains(&candidate) {
            partitions.push(candidate);
        }
    }

    let len = cfg.window_len;
    let mut windows = Vec::with_capacity(cfg.total_windows());
    for (class, partition) in partitions.iter().enumerate() {
        for rep in 0..cfg.reps {
            for _ in 0..cfg.windows_per_rep {
                // Fresh band-limited latent per group: three sinusoids with
                // frequencies below a quarter of Nyquist. Frequencies keep a
                // minimum pairwise gap across the whole window so two groups
                // never ride nearly identical tones, which would correlate
                // them spuriously over a short window.
                // Each accepted frequency excludes a 2*gap-wide band, so
                // keep the total exclusion well under the 0.095-wide range.
                let total_freqs = groups * 3;
                let gap = (0.095 / (2.6 * total_freqs as f64)).min(0.008);
                let mut freqs: Vec<f64> = Vec::with_capacity(total_freqs);
                while freqs.len() < total_freqs {
                    let f = rng.random_range(0.03..0.125);
                    if freqs.iter().all(|&g| (g - f).abs() >= gap) {
                        freqs.push(f);
                    }
                }
                let latents: Vec<Vec<f64>> = (0..groups)
                    .map(|g| {
                        let mut latent = vec![0.0; len];
                        for m in 0..3 {
                            let amp = rng.random_range(0.5..1.0);
                            let freq = freqs[g * 3 + m];
                            let phase = rng.random_range(0.0..std::f64::consts::TAU);
                            for (t, v) in latent.iter_mut().enumerate() {
                                *v += amp
                                    * (std::f64::consts::TAU * freq * t as f64 + phase).sin();
                            }
                        }
                        latent
                    })
                    .collect();

                let mut data = vec![0.0; cfg.n_nodes * len];
                for node in 0..cfg.n_nodes {
                    let gain = rng.random_range(0.5..1.5);
                    let latent = &latents[partition[node]];
                    let row = &mut data[node * len..(node + 1) * len];
                    for (t, v) in row.iter_mut().enumerate() {
                        *v = gain * latent[t] + cfg.noise_std * gaussian(&mut rng);
                    }
                }
                windows.push(Window {
                    data,
                    channels: cfg.n_nodes,
                    len,
                    label: class,
                    repetition: rep,
                    subject: 0,
                    source_offset: windows.len() * len,
                });
            }
        }
    }
    Ok(SynthDataset { windows, partitions })
}

/// Flattened upper-triangle adjacency features of one window.
fn adjacency_features(w: &Window) -> Vec<f64> {
    let a = pearson_adjacency(w);
    let n = w.channels;
    let mut feats = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            feats.push(a.at(i, j));
        }
    }
    feats
}

/// Training-free separability oracle: nearest-centroid classification on
/// adjacency features, centroids from all repetitions except the last,
/// tested on the last. Returns held-out accuracy.
pub fn oracle_separability_check(windows: &[Window]) -> f64 {
    let test_rep = windows.iter().map(|w| w.repetition).max().expect("non-empty dataset");
    let n_classes = windows.iter().map(|w| w.label).max().unwrap() + 1;
    let feat_dim = windows[0].channels * (windows[0].channels - 1) / 2;

    let mut centroids = vec![vec![0.0; feat_dim]; n_classes];
    let mut counts = vec![0usize; n_classes];
    let mut test_set: Vec<(usize, Vec<f64>)> = Vec::new();
    for w in windows {
        let feats = adjacency_features(w);
        if w.repetition == test_rep {
            test_set.push((w.label, feats));
        } else {
            for (c, f) in centroids[w.label].iter_mut().zip(&feats) {
                *c += f;
            }
            counts[w.label] += 1;
        }
    }
    for (centroid, count) in centroids.iter_mut().zip(&counts) {
        if *count > 0 {
            for c in centroid.iter_mut() {
                *c /= *count as f64;
            }
        }
    }

    let mut correct = 0usize;
    for (label, feats) in &test_set {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (class, centroid) in centroids.iter().enumerate() {
            let dist: f64 = centroid.iter().zip(feats).map(|(c, f)| (c - f) * (c - f)).sum();
            if dist < best_dist {
                best_dist = dist;
                best = class;
            }
        }
        if best == *label {
            correct += 1;
        }
    }
    correct as f64 / test_set.len().max(1) as f64
}

/// Pack generated windows into the binary container plus annotations, so
/// synthetic data can exercise the real ingestion path. Windows are laid
/// back-to-back; each annotation interval covers exactly one window.
pub fn to_recording(windows: &[Window], sample_rate: u32) -> (EmgRecording, Vec<Annotation>) {
    assert!(!windows.is_empty());
    let channels = windows[0].channels;
    let len = windows[0].len;
    let total = windows.len() * len;

    let mut data = vec![0.0f32; channels * total];
    let mut annotations = Vec::with_capacity(windows.len());
    for (i, w) in windows.iter().enumerate() {
        for ch in 0..channels {
            let dst = ch * total + i * len;
            for (t, v) in w.channel(ch).iter().enumerate() {
                data[dst + t] = *v as f32;
            }
        }
        annotations.push(Annotation {
            start_sample: i * len,
            end_sample: (i + 1) * len,
            label: w.label,
            repetition: w.repetition,
        });
    }
    let mut rec = EmgRecording::new(channels, sample_rate, data).expect("valid geometry");
    rec.attach_annotations(annotations.clone()).expect("non-overlapping by construction");
    (rec, annotations)
}
