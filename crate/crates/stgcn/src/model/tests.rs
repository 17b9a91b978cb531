use rand::Rng;
use tempfile::tempdir;

use super::*;
use crate::tensor::grad_check;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn toy_config() -> ModelConfig {
    ModelConfig {
        n_nodes: 4,
        window_len: 12,
        temporal_kernel: 3,
        in_channels: 1,
        temporal_channels: 2,
        spatial_channels: 2,
        hidden: 8,
        classes: 3,
        dropout: 0.0,
    }
}

fn toy_sample(cfg: &ModelConfig, seed: u64) -> GraphWindow {
    let mut r = rng(seed);
    let n = cfg.n_nodes;
    let input = rand_vec(&mut r, n * cfg.window_len, -1.0, 1.0);
    // A valid propagation matrix: symmetric, rows roughly stochastic.
    let mut prop = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            prop[i * n + j] = if i == j { 0.5 } else { 0.5 / (n - 1) as f64 };
        }
    }
    GraphWindow {
        input: Arc::new(input),
        propagation: Arc::new(prop),
        label: seed as usize % cfg.classes,
        repetition: 0,
    }
}

// ── Temporal gated convolution ──────────────────────────────────────────

/// Naive sliding-dot-product GLU oracle.
fn glu_oracle(
    u: &[f64],
    gamma: &[f64],
    n: usize,
    len: usize,
    c_in: usize,
    kt: usize,
    c_out: usize,
) -> Vec<f64> {
    let t_out = len - kt + 1;
    let mut out = vec![0.0; n * t_out * c_out];
    for nn in 0..n {
        for t in 0..t_out {
            for o in 0..c_out {
                let mut p = 0.0;
                let mut q = 0.0;
                for k in 0..kt {
                    for i in 0..c_in {
                        let x = u[(nn * len + t + k) * c_in + i];
                        p += x * gamma[(k * c_in + i) * 2 * c_out + o];
                        q += x * gamma[(k * c_in + i) * 2 * c_out + c_out + o];
                    }
                }
                out[(nn * t_out + t) * c_out + o] = p / (1.0 + (-q).exp());
            }
        }
    }
    out
}

#[test]
fn glu_zero_gate_kernel_halves_p() {
    let (n, len, c_in, kt, c_out) = (2, 6, 1, 3, 2);
    let mut r = rng(5);
    // Fill only the P half of the kernel; the Q half stays zero.
    let mut gamma = vec![0.0; kt * c_in * 2 * c_out];
    for k in 0..kt {
        for o in 0..c_out {
            gamma[k * 2 * c_out + o] = r.random_range(-1.0..1.0);
        }
    }
    let u = rand_vec(&mut r, n * len * c_in, -1.0, 1.0);

    let mut tape = Tape::new();
    let ut = tape.leaf(u.clone(), vec![n, len, c_in]);
    let gt = tape.leaf(gamma.clone(), vec![kt, c_in, 2 * c_out]);
    let out = temporal_gated_conv(&mut tape, &ut, &gt).unwrap();

    // P alone, via a kernel holding just the P half.
    let mut p_kernel = vec![0.0; kt * c_in * c_out];
    for k in 0..kt {
        for o in 0..c_out {
            p_kernel[k * c_out + o] = gamma[k * 2 * c_out + o];
        }
    }
    let pt = tape.leaf(p_kernel, vec![kt, c_in, c_out]);
    let p = tape.conv1d_valid(&ut, &pt).unwrap();
    for (got, p) in tape.value(&out).iter().zip(tape.value(&p)) {
        assert!((got - 0.5 * p).abs() < 1e-12);
    }
}

#[test]
fn glu_window_equal_to_kernel_gives_one_step() {
    let mut r = rng(6);
    let mut tape = Tape::new();
    let u = tape.leaf(rand_vec(&mut r, 5, -1.0, 1.0), vec![1, 5, 1]);
    let g = tape.leaf(rand_vec(&mut r, 5 * 2, -1.0, 1.0), vec![5, 1, 2]);
    let out = temporal_gated_conv(&mut tape, &u, &g).unwrap();
    assert_eq!(out.shape(), &[1, 1, 1]);
}

#[test]
fn glu_matches_naive_oracle() {
    let (n, len, c_in, kt, c_out) = (3, 8, 1, 5, 2);
    let mut r = rng(7);
    let u = rand_vec(&mut r, n * len * c_in, -1.0, 1.0);
    let gamma = rand_vec(&mut r, kt * c_in * 2 * c_out, -1.0, 1.0);

    let mut tape = Tape::new();
    let ut = tape.leaf(u.clone(), vec![n, len, c_in]);
    let gt = tape.leaf(gamma.clone(), vec![kt, c_in, 2 * c_out]);
    let out = temporal_gated_conv(&mut tape, &ut, &gt).unwrap();
    assert_eq!(out.shape(), &[n, len - kt + 1, c_out]);

    let want = glu_oracle(&u, &gamma, n, len, c_in, kt, c_out);
    for (got, want) in tape.value(&out).iter().zip(&want) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn glu_window_shorter_than_kernel_errors() {
    let mut tape = Tape::new();
    let u = tape.leaf(vec![0.0; 3], vec![1, 3, 1]);
    let g = tape.leaf(vec![0.0; 10], vec![5, 1, 2]);
    assert!(temporal_gated_conv(&mut tape, &u, &g).is_err());
}

// ── Spatial graph convolution ───────────────────────────────────────────

#[test]
fn spatial_identity_propagation_and_weights() {
    let (n, t, c) = (3, 4, 3);
    let mut r = rng(8);
    let h = rand_vec(&mut r, n * t * c, -1.0, 1.0);
    let mut eye_s = vec![0.0; n * n];
    for i in 0..n {
        eye_s[i * n + i] = 1.0;
    }
    let mut eye_theta = vec![0.0; c * c];
    for i in 0..c {
        eye_theta[i * c + i] = 1.0;
    }

    let mut tape = Tape::new();
    let ht = tape.leaf(h.clone(), vec![n, t, c]);
    let tt = tape.leaf(eye_theta, vec![c, c]);
    let out = spatial_graph_conv(&mut tape, Arc::new(eye_s), &ht, &tt).unwrap();
    for (got, want) in tape.value(&out).iter().zip(&h) {
        assert!((got - want).abs() < 1e-15);
    }
}

#[test]
fn spatial_nullspace_of_averaging_propagation() {
    // S = [[.5,.5],[.5,.5]] annihilates node-antisymmetric features.
    let (n, t, c) = (2, 3, 2);
    let mut h = vec![0.0; n * t * c];
    for tt in 0..t {
        for ch in 0..c {
            h[tt * c + ch] = 1.0;
            h[(t + tt) * c + ch] = -1.0;
        }
    }
    let mut tape = Tape::new();
    let ht = tape.leaf(h, vec![n, t, c]);
    let theta = tape.leaf(vec![1.0, 0.0, 0.0, 1.0], vec![c, c]);
    let out =
        spatial_graph_conv(&mut tape, Arc::new(vec![0.5; 4]), &ht, &theta).unwrap();
    assert!(tape.value(&out).iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn spatial_matches_triple_loop_oracle() {
    let (n, t, c_in, c_out) = (5, 3, 2, 4);
    let mut r = rng(9);
    let h = rand_vec(&mut r, n * t * c_in, -1.0, 1.0);
    let theta = rand_vec(&mut r, c_in * c_out, -1.0, 1.0);
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = r.random_range(-0.5..0.5);
            s[i * n + j] = v;
            s[j * n + i] = v;
        }
    }

    let mut tape = Tape::new();
    let ht = tape.leaf(h.clone(), vec![n, t, c_in]);
    let tt = tape.leaf(theta.clone(), vec![c_in, c_out]);
    let out = spatial_graph_conv(&mut tape, Arc::new(s.clone()), &ht, &tt).unwrap();

    for u in 0..n {
        for step in 0..t {
            for o in 0..c_out {
                let mut want = 0.0;
                for v in 0..n {
                    for i in 0..c_in {
                        want += s[u * n + v] * h[(v * t + step) * c_in + i] * theta[i * c_out + o];
                    }
                }
                let got = tape.value(&out)[(u * t + step) * c_out + o];
                assert!((got - want).abs() < 1e-12, "({u},{step},{o})");
            }
        }
    }
}

#[test]
fn spatial_commutes_with_node_permutation() {
    let (n, t, c) = (4, 2, 3);
    let mut r = rng(10);
    let h = rand_vec(&mut r, n * t * c, -1.0, 1.0);
    let theta = rand_vec(&mut r, c * c, -1.0, 1.0);
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = r.random_range(0.0..1.0);
            s[i * n + j] = v;
            s[j * n + i] = v;
        }
    }
    let perm = [2usize, 0, 3, 1];

    let run = |s: Vec<f64>, h: Vec<f64>| {
        let mut tape = Tape::new();
        let ht = tape.leaf(h, vec![n, t, c]);
        let tt = tape.leaf(theta.clone(), vec![c, c]);
        let out = spatial_graph_conv(&mut tape, Arc::new(s), &ht, &tt).unwrap();
        tape.value(&out).to_vec()
    };

    let base = run(s.clone(), h.clone());
    // Permuted inputs: S' = P S P^T, H' = P H (row u of H' is row perm[u] of H).
    let mut s_p = vec![0.0; n * n];
    let mut h_p = vec![0.0; n * t * c];
    for u in 0..n {
        for v in 0..n {
            s_p[u * n + v] = s[perm[u] * n + perm[v]];
        }
        h_p[u * t * c..(u + 1) * t * c]
            .copy_from_slice(&h[perm[u] * t * c..(perm[u] + 1) * t * c]);
    }
    let permuted = run(s_p, h_p);
    for u in 0..n {
        for rest in 0..t * c {
            let got = permuted[u * t * c + rest];
            let want = base[perm[u] * t * c + rest];
            assert!((got - want).abs() < 1e-12);
        }
    }
}

// ── Layer norm ──────────────────────────────────────────────────────────

#[test]
fn layer_norm_unit_example() {
    let mut tape = Tape::new();
    let h = tape.leaf(vec![1.0, 2.0, 3.0], vec![1, 3]);
    let gain = tape.leaf(vec![1.0; 3], vec![3]);
    let bias = tape.leaf(vec![0.0; 3], vec![3]);
    let out = tape.layer_norm(&h, &gain, &bias, LAYER_NORM_EPS).unwrap();
    let want = [-1.2247, 0.0, 1.2247];
    for (got, want) in tape.value(&out).iter().zip(want) {
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
    }
}

#[test]
fn layer_norm_constant_row_yields_bias() {
    let mut tape = Tape::new();
    let h = tape.leaf(vec![7.5; 4], vec![1, 4]);
    let gain = tape.leaf(vec![2.0; 4], vec![4]);
    let bias = tape.leaf(vec![0.1, 0.2, 0.3, 0.4], vec![4]);
    let out = tape.layer_norm(&h, &gain, &bias, LAYER_NORM_EPS).unwrap();
    for (got, want) in tape.value(&out).iter().zip([0.1, 0.2, 0.3, 0.4]) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn layer_norm_row_mean_equals_bias_mean() {
    let mut r = rng(11);
    let mut tape = Tape::new();
    let h = tape.leaf(rand_vec(&mut r, 5 * 6, -3.0, 3.0), vec![5, 6]);
    let gain = tape.leaf(vec![1.0; 6], vec![6]);
    let bias_vals = rand_vec(&mut r, 6, -1.0, 1.0);
    let bias_mean: f64 = bias_vals.iter().sum::<f64>() / 6.0;
    let bias = tape.leaf(bias_vals, vec![6]);
    let out = tape.layer_norm(&h, &gain, &bias, LAYER_NORM_EPS).unwrap();
    for row in tape.value(&out).chunks(6) {
        let mean: f64 = row.iter().sum::<f64>() / 6.0;
        assert!((mean - bias_mean).abs() < 1e-10);
    }
}

// ── Dropout ─────────────────────────────────────────────────────────────

#[test]
fn dropout_eval_is_identity() {
    let mut r = rng(12);
    let mut tape = Tape::new();
    let h = tape.leaf(rand_vec(&mut r, 24, -1.0, 1.0), vec![4, 6]);
    let out = dropout(&mut tape, &h, None).unwrap();
    assert_eq!(tape.value(&out), tape.value(&h));
}

#[test]
fn dropout_statistics_at_half() {
    // One million mask entries at p = 0.5.
    let cfg = ModelConfig {
        n_nodes: 100,
        window_len: 104,
        temporal_kernel: 5,
        in_channels: 1,
        temporal_channels: 2,
        spatial_channels: 100,
        hidden: 8,
        classes: 3,
        dropout: 0.5,
    };
    let mut r = rng(13);
    let masks = make_dropout_masks(&cfg, &mut r);
    assert_eq!(masks.features.len(), 1_000_000);

    let survivors = masks.features.iter().filter(|&&m| m != 0.0).count();
    let fraction = survivors as f64 / 1e6;
    assert!((fraction - 0.5).abs() < 0.002, "survivor fraction {fraction}");

    let mut r2 = rng(14);
    let x = rand_vec(&mut r2, 1_000_000, 0.5, 1.5);
    let mean_before: f64 = x.iter().sum::<f64>() / 1e6;
    let mean_after: f64 =
        x.iter().zip(masks.features.iter()).map(|(a, m)| a * m).sum::<f64>() / 1e6;
    assert!(
        (mean_after - mean_before).abs() / mean_before < 0.005,
        "{mean_after} vs {mean_before}"
    );
}

// ── Classifier head ─────────────────────────────────────────────────────

#[test]
fn head_zero_weights_zero_logits() {
    let mut tape = Tape::new();
    let f = tape.leaf(vec![1.0, -2.0, 3.0, 0.5], vec![2, 2]);
    let w1 = tape.leaf(vec![0.0; 4 * 3], vec![4, 3]);
    let b1 = tape.leaf(vec![0.0; 3], vec![3]);
    let w2 = tape.leaf(vec![0.0; 3 * 2], vec![3, 2]);
    let b2 = tape.leaf(vec![0.0; 2], vec![2]);
    let logits = classifier_head(&mut tape, &f, &w1, &b1, &w2, &b2, None).unwrap();
    assert_eq!(tape.value(&logits), &[0.0, 0.0]);
}

#[test]
fn head_one_hot_routes_single_feature() {
    let mut tape = Tape::new();
    let f = tape.leaf(vec![0.0, 0.0, 2.5, 0.0], vec![2, 2]);
    // w1 routes feature 2 to hidden 0; w2 routes hidden 0 to logit 1.
    let mut w1 = vec![0.0; 4 * 3];
    w1[2 * 3] = 1.0;
    let mut w2 = vec![0.0; 3 * 2];
    w2[1] = 1.0;
    let w1 = tape.leaf(w1, vec![4, 3]);
    let b1 = tape.leaf(vec![0.0; 3], vec![3]);
    let w2 = tape.leaf(w2, vec![3, 2]);
    let b2 = tape.leaf(vec![0.0; 2], vec![2]);
    let logits = classifier_head(&mut tape, &f, &w1, &b1, &w2, &b2, None).unwrap();
    assert_eq!(tape.value(&logits), &[0.0, 2.5]);
}

#[test]
fn head_matches_affine_chain_oracle() {
    let (nodes, cs, hidden, classes) = (3, 2, 5, 4);
    let flat_dim = nodes * cs;
    let mut r = rng(15);
    let feats = rand_vec(&mut r, flat_dim, -1.0, 1.0);
    let w1 = rand_vec(&mut r, flat_dim * hidden, -1.0, 1.0);
    let b1 = rand_vec(&mut r, hidden, -1.0, 1.0);
    let w2 = rand_vec(&mut r, hidden * classes, -1.0, 1.0);
    let b2 = rand_vec(&mut r, classes, -1.0, 1.0);

    let mut tape = Tape::new();
    let ft = tape.leaf(feats.clone(), vec![nodes, cs]);
    let w1t = tape.leaf(w1.clone(), vec![flat_dim, hidden]);
    let b1t = tape.leaf(b1.clone(), vec![hidden]);
    let w2t = tape.leaf(w2.clone(), vec![hidden, classes]);
    let b2t = tape.leaf(b2.clone(), vec![classes]);
    let logits = classifier_head(&mut tape, &ft, &w1t, &b1t, &w2t, &b2t, None).unwrap();

    let mut h: Vec<f64> = (0..hidden)
        .map(|j| b1[j] + (0..flat_dim).map(|f| feats[f] * w1[f * hidden + j]).sum::<f64>())
        .collect();
    for v in &mut h {
        *v = v.max(0.0);
    }
    let want: Vec<f64> = (0..classes)
        .map(|c| b2[c] + (0..hidden).map(|j| h[j] * w2[j * classes + c]).sum::<f64>())
        .collect();
    for (got, want) in tape.value(&logits).iter().zip(&want) {
        assert!((got - want).abs() < 1e-12);
    }
}

// ── Softmax cross-entropy ───────────────────────────────────────────────

#[test]
fn cross_entropy_uniform_logits_is_ln_c() {
    let mut tape = Tape::new();
    let logits = tape.leaf(vec![0.7; 65], vec![65]);
    let loss = tape.softmax_cross_entropy(&logits, 12).unwrap();
    assert!((tape.scalar(&loss) - 65.0_f64.ln()).abs() < 1e-12);
}

#[test]
fn cross_entropy_saturated_is_negligible() {
    let mut tape = Tape::new();
    let mut vals = vec![0.0; 65];
    vals[7] = 30.0;
    let logits = tape.leaf(vals, vec![65]);
    let loss = tape.softmax_cross_entropy(&logits, 7).unwrap();
    assert!(tape.scalar(&loss) < 1e-9);
}

#[test]
fn cross_entropy_nonnegative_and_shift_invariant() {
    let mut r = rng(26);
    for _ in 0..50 {
        let vals = rand_vec(&mut r, 7, -4.0, 4.0);
        let label = r.random_range(0..7usize);
        let shift = r.random_range(-20.0..20.0);

        let mut tape = Tape::new();
        let logits = tape.leaf(vals.clone(), vec![7]);
        let loss = tape.softmax_cross_entropy(&logits, label).unwrap();
        let base = tape.scalar(&loss);
        assert!(base >= 0.0);

        let shifted_vals: Vec<f64> = vals.iter().map(|v| v + shift).collect();
        let shifted = tape.leaf(shifted_vals, vec![7]);
        let loss2 = tape.softmax_cross_entropy(&shifted, label).unwrap();
        assert!((tape.scalar(&loss2) - base).abs() < 1e-12);
    }
}

#[test]
fn cross_entropy_matches_compensated_oracle() {
    let mut r = rng(16);
    for _ in 0..20 {
        let vals = rand_vec(&mut r, 9, -5.0, 5.0);
        let label = r.random_range(0..9usize);
        let mut tape = Tape::new();
        let logits = tape.leaf(vals.clone(), vec![9]);
        let loss = tape.softmax_cross_entropy(&logits, label).unwrap();

        // Kahan-compensated logsumexp.
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut sum, mut c) = (0.0, 0.0);
        for &v in &vals {
            let y = (v - max).exp() - c;
            let t = sum + y;
            c = (t - sum) - y;
            sum = t;
        }
        let want = max + sum.ln() - vals[label];
        assert!((tape.scalar(&loss) - want).abs() < 1e-12);
    }
}

// ── Whole pipeline ──────────────────────────────────────────────────────

#[test]
fn forward_shape_contract() {
    let cfg = ModelConfig { classes: 65, ..toy_config() };
    let params = ModelParams::init(&cfg, 1).unwrap();
    let batch: Vec<GraphWindow> = (0..3).map(|i| toy_sample(&cfg, i)).collect();
    let logits = stgcn_forward(&batch, &params, &cfg, BatchMode::Eval).unwrap();
    assert_eq!(logits.len(), 3);
    assert!(logits.iter().all(|l| l.len() == 65));
}

#[test]
fn eval_forward_is_deterministic() {
    let cfg = toy_config();
    let params = ModelParams::init(&cfg, 2).unwrap();
    let sample = toy_sample(&cfg, 3);
    let batch = vec![sample.clone(), sample];
    let logits = stgcn_forward(&batch, &params, &cfg, BatchMode::Eval).unwrap();
    let a: Vec<u64> = logits[0].iter().map(|v| v.to_bits()).collect();
    let b: Vec<u64> = logits[1].iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
}

/// Gradient-check the full pipeline loss through the input and every
/// parameter tensor on the toy config.
fn pipeline_grad_check(seed: u64, masks: Option<DropoutMasks>) {
    let cfg = toy_config();
    let params = ModelParams::init(&cfg, seed).unwrap();
    let sample = toy_sample(&cfg, seed + 50);
    let label = 1usize;

    // Through the input window.
    let f_input = {
        let (params, sample, masks) = (params.clone(), sample.clone(), masks.clone());
        move |tape: &mut Tape, x: &Tensor| {
            let leaves = params
                .tensors()
                .map(|p| tape.leaf_shared(p.data.clone(), p.shape.clone()));
            let logits =
                forward_with_leaves(tape, x, &leaves, sample.propagation.clone(), masks.as_ref())?;
            tape.softmax_cross_entropy(&logits, label)
        }
    };
    let err = grad_check(
        &f_input,
        &sample.input,
        &[cfg.n_nodes, cfg.window_len, 1],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-4, "input grad error {err}");

    // Through each parameter tensor in turn.
    for (which, name) in PARAM_NAMES.iter().enumerate() {
        let f_param = {
            let (params, sample, cfg, masks) = (params.clone(), sample.clone(), cfg.clone(), masks.clone());
            move |tape: &mut Tape, x: &Tensor| {
                let mut leaf_vec = Vec::with_capacity(8);
                for (i, p) in params.tensors().into_iter().enumerate() {
                    if i == which {
                        leaf_vec.push(x.clone());
                    } else {
                        leaf_vec.push(tape.leaf_shared(p.data.clone(), p.shape.clone()));
                    }
                }
                let leaves: [Tensor; 8] = leaf_vec.try_into().unwrap();
                let xin = tape.leaf_shared(
                    sample.input.clone(),
                    vec![cfg.n_nodes, cfg.window_len, 1],
                );
                let logits = forward_with_leaves(
                    tape,
                    &xin,
                    &leaves,
                    sample.propagation.clone(),
                    masks.as_ref(),
                )?;
                tape.softmax_cross_entropy(&logits, label)
            }
        };
        let p = params.tensors()[which];
        let err = grad_check(&f_param, &p.data, &p.shape, 1e-5).unwrap();
        assert!(err <= 1e-4, "{name} grad error {err}");
    }
}

#[test]
fn toy_pipeline_grad_check_eval() {
    pipeline_grad_check(21, None);
}

#[test]
fn toy_pipeline_grad_check_with_fixed_dropout_masks() {
    let cfg = ModelConfig { dropout: 0.5, ..toy_config() };
    let mut r = rng(31);
    let masks = make_dropout_masks(&cfg, &mut r);
    pipeline_grad_check(22, Some(masks));
}

// ── Prediction ──────────────────────────────────────────────────────────

#[test]
fn predict_examples() {
    assert_eq!(predict(&[0.1, 0.9, 0.3]), 1);
    assert_eq!(predict(&[0.5, 0.5, 0.5]), 0);
    let logits = [0.3, -0.2, 1.1, 0.0];
    for shift in [-10.0, 0.0, 3.5] {
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        assert_eq!(predict(&shifted), predict(&logits));
    }
}

// ── Persistence ─────────────────────────────────────────────────────────

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("model.stgw");
    let cfg = toy_config();
    let params = ModelParams::init(&cfg, 77).unwrap();
    save_checkpoint(&path, &cfg, &params).unwrap();
    let (cfg2, params2) = load_checkpoint(&path).unwrap();
    assert_eq!(cfg, cfg2);
    for (a, b) in params.tensors().iter().zip(params2.tensors()) {
        assert_eq!(a.shape, b.shape);
        let ab: Vec<u64> = a.data.iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u64> = b.data.iter().map(|v| v.to_bits()).collect();
        assert_eq!(ab, bb);
    }

    // Saving the loaded params again produces identical bytes.
    let path2 = dir.path().join("model2.stgw");
    save_checkpoint(&path2, &cfg2, &params2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}

#[test]
fn checkpoint_bad_magic_and_truncation() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("model.stgw");
    let cfg = toy_config();
    let params = ModelParams::init(&cfg, 1).unwrap();
    save_checkpoint(&path, &cfg, &params).unwrap();

    let bytes = std::fs::read(&path).unwrap();
    let bad = dir.path().join("bad.stgw");
    std::fs::write(&bad, [b"XXXX".as_slice(), &bytes[4..]].concat()).unwrap();
    assert!(matches!(load_checkpoint(&bad), Err(ModelError::BadMagic { .. })));

    let trunc = dir.path().join("trunc.stgw");
    std::fs::write(&trunc, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint(&trunc), Err(ModelError::Truncated { .. })));
}

#[test]
fn init_is_seeded_and_finite() {
    let cfg = toy_config();
    let a = ModelParams::init(&cfg, 9).unwrap();
    let b = ModelParams::init(&cfg, 9).unwrap();
    let c = ModelParams::init(&cfg, 10).unwrap();
    assert!(a.all_finite());
    for (x, y) in a.tensors().iter().zip(b.tensors()) {
        assert_eq!(x.data, y.data);
    }
    assert_ne!(a.temporal_kernel.data, c.temporal_kernel.data);
}

#[test]
fn config_validation_rejects_bad_values() {
    let cfg = ModelConfig { temporal_kernel: 20, window_len: 12, ..toy_config() };
    assert!(cfg.validate().is_err());
    let cfg = ModelConfig { classes: 1, ..toy_config() };
    assert!(cfg.validate().is_err());
    let cfg = ModelConfig { dropout: 1.0, ..toy_config() };
    assert!(cfg.validate().is_err());
}
