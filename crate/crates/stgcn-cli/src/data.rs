//! Windowed-dataset directory layout shared by `segment`, `cv`, and
//! `sweep-k`.
//!
//! A dataset directory holds one binary container per window plus two CSV
//! indexes:
//!
//! - `windows.csv` — `file,label,repetition,subject,source_offset`
//! - `manifest.csv` — `label,repetition,count`
//!
//! Every CSV emitted by the CLI starts with a `# config_hash=...` comment
//! so any two outputs with equal hashes came from identical configs.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use stgcn::signal::{self, Window};

pub fn hash_comment(hash: u64) -> String {
    format!("# config_hash={hash:016x}\n")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Prepend the config-hash comment to an already-written text file.
pub fn stamp_hash(path: &Path, hash: u64) -> Result<()> {
    let body = std::fs::read_to_string(path)
        .with_context(|| format!("reading back {}", path.display()))?;
    write_text(path, &format!("{}{}", hash_comment(hash), body))
}

/// Write every window as its own container, plus the two CSV indexes.
pub fn write_dataset(
    out_dir: &Path,
    windows: &[Window],
    sample_rate: u32,
    hash: u64,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    let mut index = hash_comment(hash);
    index.push_str("file,label,repetition,subject,source_offset\n");
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        let name = format!("window_{i:05}.emg");
        let data: Vec<f32> = w.data.iter().map(|&v| v as f32).collect();
        let rec = signal::EmgRecording::new(w.channels, sample_rate, data)
            .context("window geometry")?;
        signal::save_recording(&out_dir.join(&name), &rec)?;
        index.push_str(&format!(
            "{name},{},{},{},{}\n",
            w.label, w.repetition, w.subject, w.source_offset
        ));
        *counts.entry((w.label, w.repetition)).or_default() += 1;
    }
    write_text(&out_dir.join("windows.csv"), &index)?;

    let mut manifest = hash_comment(hash);
    manifest.push_str("label,repetition,count\n");
    for ((label, rep), count) in &counts {
        manifest.push_str(&format!("{label},{rep},{count}\n"));
    }
    write_text(&out_dir.join("manifest.csv"), &manifest)
}

/// Load a dataset directory back into labeled windows.
pub fn load_dataset(dir: &Path) -> Result<Vec<Window>> {
    let index_path = dir.join("windows.csv");
    let text = std::fs::read_to_string(&index_path)
        .with_context(|| format!("reading {}", index_path.display()))?;
    let mut windows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("file,") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            bail!("{}:{}: expected 5 fields, got {}", index_path.display(), idx + 1, fields.len());
        }
        let parse = |field: &str, what: &str| -> Result<usize> {
            field
                .parse()
                .map_err(|_| anyhow::anyhow!("{}:{}: bad {what}: {field:?}", index_path.display(), idx + 1))
        };
        let rec = signal::load_recording(&dir.join(fields[0]))?;
        windows.push(Window {
            data: rec.data.iter().map(|&v| v as f64).collect(),
            channels: rec.channels,
            len: rec.samples,
            label: parse(fields[1], "label")?,
            repetition: parse(fields[2], "repetition")?,
            subject: parse(fields[3], "subject")?,
            source_offset: parse(fields[4], "source_offset")?,
        });
    }
    if windows.is_empty() {
        bail!("{}: no windows listed", index_path.display());
    }
    Ok(windows)
}

/// Load one window container written by `write_dataset` (or any EMG1 file
/// holding a single window's samples).
pub fn load_window_file(path: &Path) -> Result<Window> {
    let rec = signal::load_recording(path)?;
    Ok(Window {
        data: rec.data.iter().map(|&v| v as f64).collect(),
        channels: rec.channels,
        len: rec.samples,
        label: 0,
        repetition: 0,
        subject: 0,
        source_offset: 0,
    })
}
