//! Implementations of the CLI subcommands.

use std::path::Path;

use anyhow::{bail, Context, Result};
use stgcn::graph::{export_adjacency_csv, export_dot, grid_regions, MuscleGraph};
use stgcn::model::save_checkpoint;
use stgcn::provenance;
use stgcn::signal;
use stgcn::synth;
use stgcn::train::{self, cross_validate};

use crate::config::RunConfig;
use crate::data;
use crate::{CvArgs, CvOverrides, GraphArgs, SegmentArgs, SweepArgs, SynthArgs};

pub fn cmd_segment(args: &SegmentArgs) -> Result<()> {
    let mut rec = signal::load_recording(&args.input)?;
    let annotations = signal::load_annotations(&args.annotations)?;
    let annotated = !annotations.is_empty();
    rec.attach_annotations(annotations)?;
    let windows = signal::segment_windows(&rec, args.window_ms, args.overlap, args.subject)?;

    let hash = provenance::config_hash(&[
        ("input".into(), args.input.display().to_string()),
        ("window_ms".into(), args.window_ms.to_string()),
        ("overlap".into(), args.overlap.to_string()),
        ("subject".into(), args.subject.to_string()),
    ]);
    data::write_dataset(&args.out_dir, &windows, rec.sample_rate, hash)?;

    if windows.is_empty() {
        if annotated {
            eprintln!("warning: no annotated interval spans a full window; wrote zero windows");
        } else {
            eprintln!("warning: annotation file is empty; wrote zero windows");
        }
    }
    println!("windows={}", windows.len());
    println!("out_dir={}", args.out_dir.display());
    println!("config_hash={hash:016x}");
    Ok(())
}

pub fn cmd_graph(args: &GraphArgs) -> Result<()> {
    if args.dot.is_none() && args.csv.is_none() {
        bail!("nothing to do: pass --dot and/or --csv");
    }
    // Pearson weights are invariant to per-channel affine rescaling, so no
    // normalization toggle is needed here.
    let window = data::load_window_file(&args.window)?;
    let graph = MuscleGraph::from_window(&window, args.k)?;

    let hash = provenance::config_hash(&[
        ("window".into(), args.window.display().to_string()),
        ("k".into(), args.k.to_string()),
        ("full".into(), args.full.to_string()),
    ]);
    if let Some(dot_path) = &args.dot {
        let dot = export_dot(&graph, &grid_regions(graph.n_nodes))?;
        data::write_text(dot_path, &format!("// config_hash={hash:016x}\n{dot}"))?;
        println!("dot={}", dot_path.display());
    }
    if let Some(csv_path) = &args.csv {
        let csv = export_adjacency_csv(&graph, args.full);
        data::write_text(csv_path, &format!("{}{csv}", data::hash_comment(hash)))?;
        println!("csv={}", csv_path.display());
    }
    println!("nodes={} k={}", graph.n_nodes, graph.k);
    println!("config_hash={hash:016x}");
    Ok(())
}

fn resolved_config(
    config: &Option<std::path::PathBuf>,
    overrides: &[(&str, Option<String>)],
) -> Result<RunConfig> {
    let mut run = RunConfig::default();
    if let Some(path) = config {
        run.apply_file(path)?;
    }
    for (key, value) in overrides {
        if let Some(value) = value {
            run.set(key, value)?;
        }
    }
    Ok(run)
}

fn cv_overrides(args: &CvArgs) -> Vec<(&'static str, Option<String>)> {
    vec![
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
        ("lr0", args.lr0.map(|v| v.to_string())),
        ("lr_decay", args.lr_decay.map(|v| v.to_string())),
        ("patience", args.patience.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("k", args.k.map(|v| v.to_string())),
        ("folds", args.folds.map(|v| v.to_string())),
        ("classes", args.classes.clone()),
        ("dropout", args.dropout.map(|v| v.to_string())),
        ("temporal_channels", args.temporal_channels.map(|v| v.to_string())),
        ("spatial_channels", args.spatial_channels.map(|v| v.to_string())),
        ("hidden", args.hidden.map(|v| v.to_string())),
        ("zscore", args.zscore.map(|v| v.to_string())),
        ("global_graph", args.global_graph.map(|v| v.to_string())),
    ]
}

fn sweep_overrides(args: &CvOverrides) -> Vec<(&'static str, Option<String>)> {
    vec![
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
        ("lr0", args.lr0.map(|v| v.to_string())),
        ("lr_decay", args.lr_decay.map(|v| v.to_string())),
        ("patience", args.patience.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("folds", args.folds.map(|v| v.to_string())),
        ("classes", args.classes.clone()),
        ("dropout", args.dropout.map(|v| v.to_string())),
        ("temporal_channels", args.temporal_channels.map(|v| v.to_string())),
        ("spatial_channels", args.spatial_channels.map(|v| v.to_string())),
        ("hidden", args.hidden.map(|v| v.to_string())),
        ("zscore", args.zscore.map(|v| v.to_string())),
        ("global_graph", args.global_graph.map(|v| v.to_string())),
    ]
}

/// Run cross-validation for one resolved config; writes the CSV triple plus
/// per-fold checkpoints and returns (mean, std, hash).
fn run_cv(run: &RunConfig, dataset_dir: &Path, out_dir: &Path) -> Result<(f64, f64, u64)> {
    let windows = data::load_dataset(dataset_dir)?;
    let observed_classes = windows.iter().map(|w| w.label).max().unwrap() + 1;
    let model_cfg = run.model_config(windows[0].channels, windows[0].len, observed_classes);
    model_cfg.validate()?;
    run.train.validate()?;

    let outcome = cross_validate(&windows, &model_cfg, &run.train, run.pipeline_options())?;

    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let hash = outcome.config_hash;
    train::write_summary_csv(&out_dir.join("summary.csv"), &outcome)?;
    train::write_curves_csv(&out_dir.join("curves.csv"), &outcome)?;
    data::stamp_hash(&out_dir.join("curves.csv"), hash)?;
    train::write_folds_csv(&out_dir.join("folds.csv"), &outcome)?;
    data::stamp_hash(&out_dir.join("folds.csv"), hash)?;
    for (fold, params) in outcome.params.iter().enumerate() {
        save_checkpoint(&out_dir.join(format!("fold_{fold}.stgw")), &model_cfg, params)?;
    }

    let mut resolved = data::hash_comment(hash);
    let mut lines = run.provenance_lines(&model_cfg);
    lines.sort();
    for (k, v) in &lines {
        resolved.push_str(&format!("{k}={v}\n"));
    }
    data::write_text(&out_dir.join("run_config.txt"), &resolved)?;

    Ok((outcome.mean, outcome.std, hash))
}

pub fn cmd_cv(args: &CvArgs) -> Result<()> {
    let run = resolved_config(&args.config, &cv_overrides(args))?;
    let (mean, std, hash) = run_cv(&run, &args.dataset, &args.out_dir)?;
    println!("mean={mean}");
    println!("std={std}");
    println!("out_dir={}", args.out_dir.display());
    println!("config_hash={hash:016x}");
    Ok(())
}

pub fn cmd_sweep_k(args: &SweepArgs) -> Result<()> {
    if args.k_max < args.k_min {
        bail!("k_max {} smaller than k_min {}", args.k_max, args.k_min);
    }
    if args.k_min == 0 {
        bail!("k must be at least 1");
    }
    let base = resolved_config(&args.config, &sweep_overrides(&args.cv))?;

    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mut sweep = String::from("k,mean,std,config_hash\n");
    for k in args.k_min..=args.k_max {
        let mut run = base.clone();
        run.train.k = k;
        // Each k gets its own sub-run, reproducible standalone via `cv --k`.
        let sub_dir = args.out_dir.join(format!("k_{k}"));
        let (mean, std, hash) = run_cv(&run, &args.dataset, &sub_dir)?;
        sweep.push_str(&format!("{k},{mean},{std},{hash:016x}\n"));
        println!("k={k} mean={mean} std={std}");
    }
    data::write_text(&args.out_dir.join("sweep.csv"), &sweep)?;
    println!("out_dir={}", args.out_dir.display());
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let cfg = synth::SynthConfig {
        n_classes: args.classes,
        n_nodes: args.nodes,
        window_len: args.window_len,
        reps: args.reps,
        windows_per_rep: args.windows_per_rep,
        noise_std: args.noise_std,
        seed: args.seed,
    };
    let dataset = synth::generate_synthetic_dataset(&cfg)?;
    let (rec, annotations) = synth::to_recording(&dataset.windows, args.rate);

    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let rec_path = args.out_dir.join("recording.emg");
    let ann_path = args.out_dir.join("annotations.csv");
    signal::save_recording(&rec_path, &rec)?;
    signal::save_annotations(&ann_path, &annotations)?;

    let hash = provenance::config_hash(&[
        ("classes".into(), cfg.n_classes.to_string()),
        ("nodes".into(), cfg.n_nodes.to_string()),
        ("window_len".into(), cfg.window_len.to_string()),
        ("reps".into(), cfg.reps.to_string()),
        ("windows_per_rep".into(), cfg.windows_per_rep.to_string()),
        ("noise_std".into(), cfg.noise_std.to_string()),
        ("seed".into(), cfg.seed.to_string()),
        ("rate".into(), args.rate.to_string()),
    ]);
    data::stamp_hash(&ann_path, hash)?;

    let window_ms = cfg.window_len as f64 * 1000.0 / args.rate as f64;
    println!("recording={}", rec_path.display());
    println!("annotations={}", ann_path.display());
    println!("windows={}", dataset.windows.len());
    println!("segment_window_ms={window_ms}");
    println!("config_hash={hash:016x}");
    Ok(())
}
