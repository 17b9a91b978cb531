//! Run configuration: a plain `key=value` text file merged with flag
//! overrides, resolved before any work starts and hashed for provenance.

use std::path::Path;

use anyhow::{bail, Context, Result};
use stgcn::model::ModelConfig;
use stgcn::train::{PipelineOptions, TrainConfig};

/// Everything a training run needs beyond the dataset geometry (node count,
/// window length, and classes come from the data unless overridden).
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub temporal_channels: usize,
    pub spatial_channels: usize,
    pub hidden: usize,
    /// Gesture classes; inferred from the labels when absent.
    pub classes: Option<usize>,
    pub dropout: f64,
    pub zscore: bool,
    pub global_graph: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            train: TrainConfig::default(),
            temporal_channels: model.temporal_channels,
            spatial_channels: model.spatial_channels,
            hidden: model.hidden,
            classes: None,
            dropout: model.dropout,
            zscore: true,
            global_graph: false,
        }
    }
}

impl RunConfig {
    /// Merge `key=value` lines from a config file over the defaults.
    /// Unknown keys are errors; `#` comments and blank lines are ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{}:{}: expected key=value, got {line:?}", path.display(), idx + 1);
            };
            self.set(key.trim(), value.trim())
                .with_context(|| format!("{}:{}", path.display(), idx + 1))?;
        }
        Ok(())
    }

    /// Set one configuration key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| anyhow::anyhow!("invalid value {value:?} for {key}"))
        }
        match key {
            "epochs" => self.train.epochs = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "lr0" => self.train.lr0 = parse(key, value)?,
            "lr_decay" => self.train.lr_decay = parse(key, value)?,
            "patience" => self.train.patience = parse(key, value)?,
            "beta1" => self.train.beta1 = parse(key, value)?,
            "beta2" => self.train.beta2 = parse(key, value)?,
            "eps" => self.train.eps = parse(key, value)?,
            "seed" => self.train.seed = parse(key, value)?,
            "k" => self.train.k = parse(key, value)?,
            "folds" => self.train.folds = parse(key, value)?,
            "temporal_channels" => self.temporal_channels = parse(key, value)?,
            "spatial_channels" => self.spatial_channels = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "classes" => {
                self.classes =
                    if value == "auto" { None } else { Some(parse(key, value)?) }
            }
            "dropout" => self.dropout = parse(key, value)?,
            "zscore" => self.zscore = parse(key, value)?,
            "global_graph" => self.global_graph = parse(key, value)?,
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions { zscore: self.zscore, global_graph: self.global_graph }
    }

    /// Model config for a dataset of `n_nodes` x `window_len` windows whose
    /// labels span `observed_classes`.
    pub fn model_config(&self, n_nodes: usize, window_len: usize, observed_classes: usize) -> ModelConfig {
        ModelConfig {
            n_nodes,
            window_len,
            temporal_kernel: 5,
            in_channels: 1,
            temporal_channels: self.temporal_channels,
            spatial_channels: self.spatial_channels,
            hidden: self.hidden,
            classes: self.classes.unwrap_or(observed_classes),
            dropout: self.dropout,
        }
    }

    /// Canonical resolved `key=value` rendering (sorted on write by the
    /// hashing layer); every knob appears so the hash pins the exact run.
    pub fn provenance_lines(&self, model: &ModelConfig) -> Vec<(String, String)> {
        let mut lines = self.train.provenance_lines(model);
        lines.push(("zscore".into(), self.zscore.to_string()));
        lines.push(("global_graph".into(), self.global_graph.to_string()));
        lines
    }
}
