//! `stgcn` — muscle-network gesture recognition pipeline.
//!
//! Subcommands cover the whole workflow: generate or ingest recordings,
//! segment them into labeled windows, inspect muscle graphs, run
//! repetition-held-out cross-validation, and sweep the graph sparsity
//! parameter k.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod data;

#[derive(Parser)]
#[command(name = "stgcn", version, about = "Spatio-temporal graph convolution for HD-sEMG gesture recognition")]
struct Cli {
    /// Worker threads for fold- and batch-level parallelism (default: all
    /// cores). Outputs are identical regardless of the thread count.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut a recording into labeled sliding windows.
    Segment(SegmentArgs),
    /// Export the muscle graph of one window as DOT and/or CSV.
    Graph(GraphArgs),
    /// Repetition-held-out cross-validation over a windowed dataset.
    Cv(CvArgs),
    /// Cross-validate for every k in a range, one summary row per k.
    SweepK(SweepArgs),
    /// Generate a synthetic recording with class-specific correlation
    /// structure, in the same container format as real data.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SegmentArgs {
    /// Recording in the EMG1 container format.
    #[arg(long)]
    input: PathBuf,
    /// Annotation sidecar (start,end,label,repetition per line).
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Window length in milliseconds.
    #[arg(long, default_value_t = 250.0)]
    window_ms: f64,
    /// Fractional overlap between consecutive windows, in [0, 1).
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    /// Subject id recorded in the window index.
    #[arg(long, default_value_t = 0)]
    subject: usize,
}

#[derive(Args)]
struct GraphArgs {
    /// A single-window container (as written by `segment`).
    #[arg(long)]
    window: PathBuf,
    /// Neighbors kept per node.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Write Graphviz DOT here.
    #[arg(long)]
    dot: Option<PathBuf>,
    /// Write adjacency CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Export the dense (unpruned) adjacency in the CSV.
    #[arg(long)]
    full: bool,
}

#[derive(Args)]
struct CvArgs {
    /// Dataset directory written by `segment`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// key=value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Neighbors kept per node in the muscle graphs.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    /// Number of gesture classes, or `auto` to infer from labels.
    #[arg(long)]
    classes: Option<String>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    temporal_channels: Option<usize>,
    #[arg(long)]
    spatial_channels: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Per-channel z-score windows before graph construction (true/false).
    #[arg(long)]
    zscore: Option<bool>,
    /// One adjacency per fold from the whole training split (true/false).
    #[arg(long)]
    global_graph: Option<bool>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    k_min: usize,
    #[arg(long, default_value_t = 6)]
    k_max: usize,
    #[command(flatten)]
    cv: CvOverrides,
}

// The sweep shares cv's tuning flags but owns --dataset/--out-dir/--config,
// so the flatten carries only the overridable knobs.
#[derive(Args)]
struct CvOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    classes: Option<String>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    temporal_channels: Option<usize>,
    #[arg(long)]
    spatial_channels: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    zscore: Option<bool>,
    #[arg(long)]
    global_graph: Option<bool>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    nodes: usize,
    /// Samples per window.
    #[arg(long, default_value_t = 64)]
    window_len: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 12)]
    windows_per_rep: usize,
    #[arg(long, default_value_t = 0.3)]
    noise_std: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Sample rate stamped into the container.
    #[arg(long, default_value_t = 2048)]
    rate: u32,
}

fn main() {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: setting --jobs: {e}");
            std::process::exit(1);
        }
    }
    let result = match &cli.command {
        Command::Segment(args) => commands::cmd_segment(args),
        Command::Graph(args) => commands::cmd_graph(args),
        Command::Cv(args) => commands::cmd_cv(args),
        Command::SweepK(args) => commands::cmd_sweep_k(args),
        Command::Synth(args) => commands::cmd_synth(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
