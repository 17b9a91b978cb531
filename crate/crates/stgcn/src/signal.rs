//! Loading, segmenting, and normalizing multichannel EMG recordings.
//!
//! Recordings arrive in a small binary container (see [`load_recording`])
//! with gesture annotations in a text sidecar. Segmentation slices every
//! annotated interval into fixed-length windows on a sliding grid — the
//! labeled units the classifier consumes. Unannotated stretches (rest
//! periods between repetitions) produce no windows.
//!
//! Container layout, little-endian, bit-exact:
//!
//! ```text
//! magic "EMG1" (4 bytes) | u32 n_channels | u64 t_total | u32 sample_rate
//! | f32 payload, channel-major, n_channels x t_total
//! ```
//!
//! Annotation sidecar: one interval per line,
//! `start_sample,end_sample,label,repetition` (integers, end exclusive).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic, expected \"EMG1\"")]
    BadMagic { path: String },
    #[error("{path}: truncated header ({got} of {want} bytes)")]
    TruncatedHeader { path: String, got: usize, want: usize },
    #[error("{path}: truncated payload, expected {expected} bytes, got {actual}")]
    TruncatedPayload { path: String, expected: u64, actual: u64 },
    #[error("{path}: header declares {expected} payload bytes but file carries {actual}")]
    HeaderDimMismatch { path: String, expected: u64, actual: u64 },
    #[error("{path}: invalid header: {reason}")]
    InvalidHeader { path: String, reason: String },
    #[error("{path}:{line}: malformed annotation: {reason}")]
    MalformedAnnotation { path: String, line: usize, reason: String },
    #[error("annotation [{start}, {end}) does not fit in {t_total} samples")]
    AnnotationOutOfRange { start: usize, end: usize, t_total: usize },
    #[error("annotations overlap around sample {at}")]
    OverlappingAnnotations { at: usize },
    #[error("{window_ms} ms at {rate} Hz is not a whole positive number of samples")]
    NonIntegerWindow { window_ms: f64, rate: u32 },
    #[error("overlap {overlap} of a {window}-sample window does not give a positive integer hop")]
    NonIntegerHop { overlap: f64, window: usize },
    #[error("overlap fraction {overlap} outside [0, 1)")]
    OverlapOutOfRange { overlap: f64 },
}

fn io_err(path: &Path, source: std::io::Error) -> SignalError {
    SignalError::Io { path: path.display().to_string(), source }
}

/// One labeled gesture interval, `[start_sample, end_sample)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Annotation {
    pub start_sample: usize,
    pub end_sample: usize,
    pub label: usize,
    pub repetition: usize,
}

/// A multichannel EMG recording with optional gesture annotations.
///
/// Samples are stored channel-major exactly as in the container (`f32`);
/// they are widened to `f64` only when windows are cut.
#[derive(Debug, Clone)]
pub struct EmgRecording {
    pub channels: usize,
    pub sample_rate: u32,
    pub samples: usize,
    pub data: Vec<f32>,
    pub annotations: Vec<Annotation>,
}

impl EmgRecording {
    pub fn new(channels: usize, sample_rate: u32, data: Vec<f32>) -> Result<Self, SignalError> {
        if channels < 2 || sample_rate == 0 || !data.len().is_multiple_of(channels) {
            return Err(SignalError::InvalidHeader {
                path: "<memory>".into(),
                reason: format!(
                    "channels={channels}, rate={sample_rate}, payload len={}",
                    data.len()
                ),
            });
        }
        let samples = data.len() / channels;
        Ok(Self { channels, sample_rate, samples, data, annotations: Vec::new() })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples as f64 / self.sample_rate as f64
    }

    /// One channel's full sample row.
    pub fn channel(&self, i: usize) -> &[f32] {
        &self.data[i * self.samples..(i + 1) * self.samples]
    }

    /// Attach annotations, enforcing that every interval lies inside the
    /// recording and that no two intervals overlap.
    pub fn attach_annotations(&mut self, mut anns: Vec<Annotation>) -> Result<(), SignalError> {
        anns.sort_by_key(|a| a.start_sample);
        for a in &anns {
            if a.start_sample >= a.end_sample || a.end_sample > self.samples {
                return Err(SignalError::AnnotationOutOfRange {
                    start: a.start_sample,
                    end: a.end_sample,
                    t_total: self.samples,
                });
            }
        }
        for pair in anns.windows(2) {
            if pair[1].start_sample < pair[0].end_sample {
                return Err(SignalError::OverlappingAnnotations { at: pair[1].start_sample });
            }
        }
        self.annotations = anns;
        Ok(())
    }
}

/// A fixed-length labeled segment — the unit the classifier sees.
#[derive(Debug, Clone)]
pub struct Window {
    /// Channel-major `[channels x len]` samples.
    pub data: Vec<f64>,
    pub channels: usize,
    pub len: usize,
    pub label: usize,
    pub repetition: usize,
    pub subject: usize,
    /// Sample index of the window start in the source recording.
    pub source_offset: usize,
}

impl Window {
    pub fn channel(&self, i: usize) -> &[f64] {
        &self.data[i * self.len..(i + 1) * self.len]
    }
}

const MAGIC: &[u8; 4] = b"EMG1";
const HEADER_LEN: usize = 4 + 4 + 8 + 4;

/// Read a recording from the binary container format.
///
/// The declared dimensions are validated against the physical file size
/// before anything is allocated, so a corrupt header cannot trigger a huge
/// allocation or an arithmetic overflow.
pub fn load_recording(path: &Path) -> Result<EmgRecording, SignalError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let file_len = file.metadata().map_err(|e| io_err(path, e))?.len();
    let mut reader = BufReader::new(file);

    let mut header = [0u8; HEADER_LEN];
    let got = read_up_to(&mut reader, &mut header).map_err(|e| io_err(path, e))?;
    if got < HEADER_LEN {
        return Err(SignalError::TruncatedHeader {
            path: path.display().to_string(),
            got,
            want: HEADER_LEN,
        });
    }
    if &header[0..4] != MAGIC {
        return Err(SignalError::BadMagic { path: path.display().to_string() });
    }
    let channels = u32::from_le_bytes(header[4..8].try_into().unwrap()) as u64;
    let t_total = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let sample_rate = u32::from_le_bytes(header[16..20].try_into().unwrap());
    if channels < 2 || sample_rate == 0 {
        return Err(SignalError::InvalidHeader {
            path: path.display().to_string(),
            reason: format!("channels={channels}, rate={sample_rate}"),
        });
    }

    let expected = (channels as u128) * (t_total as u128) * 4;
    let actual = file_len as u128 - HEADER_LEN as u128;
    if actual < expected {
        return Err(SignalError::TruncatedPayload {
            path: path.display().to_string(),
            expected: expected.min(u64::MAX as u128) as u64,
            actual: actual as u64,
        });
    }
    if actual > expected {
        return Err(SignalError::HeaderDimMismatch {
            path: path.display().to_string(),
            expected: expected as u64,
            actual: actual as u64,
        });
    }

    let mut payload = vec![0u8; expected as usize];
    let got = read_up_to(&mut reader, &mut payload).map_err(|e| io_err(path, e))?;
    if (got as u128) < expected {
        return Err(SignalError::TruncatedPayload {
            path: path.display().to_string(),
            expected: expected as u64,
            actual: got as u64,
        });
    }

    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(EmgRecording {
        channels: channels as usize,
        sample_rate,
        samples: t_total as usize,
        data,
        annotations: Vec::new(),
    })
}

fn read_up_to<R: Read>(reader: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = reader.read(&mut buf[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    Ok(filled)
}

/// Write a recording in the binary container format.
pub fn save_recording(path: &Path, rec: &EmgRecording) -> Result<(), SignalError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| io_err(path, e));
    write(MAGIC)?;
    write(&(rec.channels as u32).to_le_bytes())?;
    write(&(rec.samples as u64).to_le_bytes())?;
    write(&rec.sample_rate.to_le_bytes())?;
    for v in &rec.data {
        write(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Parse the annotation sidecar (`start,end,label,repetition` per line;
/// blank lines and `#` comments ignored).
pub fn load_annotations(path: &Path) -> Result<Vec<Annotation>, SignalError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut anns = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(SignalError::MalformedAnnotation {
                path: path.display().to_string(),
                line: idx + 1,
                reason: format!("expected 4 comma-separated integers, got {}", fields.len()),
            });
        }
        let parse = |s: &str| -> Result<usize, SignalError> {
            s.parse().map_err(|_| SignalError::MalformedAnnotation {
                path: path.display().to_string(),
                line: idx + 1,
                reason: format!("not an integer: {s:?}"),
            })
        };
        anns.push(Annotation {
            start_sample: parse(fields[0])?,
            end_sample: parse(fields[1])?,
            label: parse(fields[2])?,
            repetition: parse(fields[3])?,
        });
    }
    Ok(anns)
}

/// Write the annotation sidecar.
pub fn save_annotations(path: &Path, anns: &[Annotation]) -> Result<(), SignalError> {
    let mut text = String::new();
    for a in anns {
        text.push_str(&format!(
            "{},{},{},{}\n",
            a.start_sample, a.end_sample, a.label, a.repetition
        ));
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Window geometry derived from milliseconds and an overlap fraction.
///
/// Both the length and the hop must come out as whole positive sample
/// counts; anything else is a configuration error, not a rounding choice.
pub fn window_geometry(
    sample_rate: u32,
    window_ms: f64,
    overlap_fraction: f64,
) -> Result<(usize, usize), SignalError> {
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(SignalError::OverlapOutOfRange { overlap: overlap_fraction });
    }
    let exact_len = window_ms * sample_rate as f64 / 1000.0;
    if exact_len < 1.0 || (exact_len - exact_len.round()).abs() > 1e-9 {
        return Err(SignalError::NonIntegerWindow { window_ms, rate: sample_rate });
    }
    let len = exact_len.round() as usize;
    let exact_hop = len as f64 * (1.0 - overlap_fraction);
    if exact_hop < 1.0 || (exact_hop - exact_hop.round()).abs() > 1e-9 {
        return Err(SignalError::NonIntegerHop { overlap: overlap_fraction, window: len });
    }
    Ok((len, exact_hop.round() as usize))
}

/// Cut sliding windows out of every annotated interval.
///
/// Windows step by `hop` and must lie entirely inside a single interval, so
/// no window ever mixes gesture and rest samples or two different gestures.
/// An interval spanning fewer than `len` samples yields nothing. Windows
/// that would run past the interval end are dropped, not padded.
pub fn segment_windows(
    rec: &EmgRecording,
    window_ms: f64,
    overlap_fraction: f64,
    subject: usize,
) -> Result<Vec<Window>, SignalError> {
    let (len, hop) = window_geometry(rec.sample_rate, window_ms, overlap_fraction)?;
    let mut windows = Vec::new();
    for ann in &rec.annotations {
        let span = ann.end_sample - ann.start_sample;
        if span < len {
            continue;
        }
        let mut offset = ann.start_sample;
        while offset + len <= ann.end_sample {
            let mut data = Vec::with_capacity(rec.channels * len);
            for ch in 0..rec.channels {
                let row = &rec.data[ch * rec.samples + offset..ch * rec.samples + offset + len];
                data.extend(row.iter().map(|&v| v as f64));
            }
            windows.push(Window {
                data,
                channels: rec.channels,
                len,
                label: ann.label,
                repetition: ann.repetition,
                subject,
                source_offset: offset,
            });
            offset += hop;
        }
    }
    Ok(windows)
}

/// Number of windows a single interval of `span` samples yields.
pub fn window_count(span: usize, len: usize, hop: usize) -> usize {
    if span < len {
        0
    } else {
        (span - len) / hop + 1
    }
}

/// Standardize each channel to zero mean and unit population variance.
///
/// A constant channel has no scale to divide by and maps to all zeros.
pub fn zscore_normalize(w: &Window) -> Window {
    assert!(w.len >= 2, "z-score needs at least 2 samples per channel");
    let mut out = w.clone();
    for ch in 0..w.channels {
        let row = &mut out.data[ch * w.len..(ch + 1) * w.len];
        let mean = row.iter().sum::<f64>() / w.len as f64;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / w.len as f64;
        if var == 0.0 {
            row.fill(0.0);
        } else {
            let inv = 1.0 / var.sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
    }
    out
}
