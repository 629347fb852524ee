//! FlowPic: a square 2D histogram of packet size (rows) over arrival time (columns).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Flow, Origin};

pub const MINI_BINS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalize {
    None,
    #[default]
    MaxOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PicSpec {
    pub bins: usize,
    pub time_span_s: f64,
    pub size_span: f64,
    pub normalize: Normalize,
}

impl Default for PicSpec {
    fn default() -> Self {
        PicSpec {
            bins: MINI_BINS,
            time_span_s: 15.0,
            size_span: 1500.0,
            normalize: Normalize::MaxOne,
        }
    }
}

impl PicSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && !v.is_nan();
        if self.bins == 0 || !positive(self.time_span_s) || !positive(self.size_span) {
            return Err(Error::InvalidConfig(format!("bad pic spec {self:?}")));
        }
        Ok(())
    }

    /// Half-open `[lo, hi)` bins; anything at or past the span lands in the last bin.
    pub fn time_bin(&self, time: f64) -> usize {
        bin_index(time, self.time_span_s, self.bins)
    }

    pub fn size_bin(&self, size: u32) -> usize {
        bin_index(f64::from(size), self.size_span, self.bins)
    }
}

fn bin_index(value: f64, span: f64, bins: usize) -> usize {
    let idx = (value * bins as f64 / span).floor();
    if idx <= 0.0 {
        0
    } else {
        (idx as usize).min(bins - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowPic {
    bins: usize,
    cells: Vec<f64>,
    label: String,
    origin: Origin,
}

impl FlowPic {
    pub fn from_cells(bins: usize, cells: Vec<f64>, label: impl Into<String>, origin: Origin) -> Result<Self> {
        if bins == 0 || cells.len() != bins * bins {
            return Err(Error::ShapeMismatch(format!(
                "{} cells for a {bins}x{bins} pic",
                cells.len()
            )));
        }
        if let Some(bad) = cells.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::ShapeMismatch(format!(
                "cell value {bad} is not a finite nonnegative"
            )));
        }
        Ok(FlowPic {
            bins,
            cells,
            label: label.into(),
            origin,
        })
    }

    pub fn zeros(bins: usize, label: impl Into<String>, origin: Origin) -> Self {
        FlowPic {
            bins,
            cells: vec![0.0; bins * bins],
            label: label.into(),
            origin,
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Row-major, `cells[size_row * bins + time_col]`.
    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn get(&self, size_row: usize, time_col: usize) -> f64 {
        self.cells[size_row * self.bins + time_col]
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn total(&self) -> f64 {
        self.cells.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.cells.iter().copied().fold(0.0, f64::max)
    }
}

/// Bins every packet of a windowed flow. Normalization is applied separately.
pub fn build_flowpic(f: &Flow, spec: &PicSpec) -> Result<FlowPic> {
    spec.validate()?;
    if f.packets().is_empty() {
        return Err(Error::InvalidFlow("flow has no packets".into()));
    }
    let mut pic = FlowPic::zeros(spec.bins, f.label(), f.origin());
    for p in f.packets() {
        let row = spec.size_bin(p.size);
        let col = spec.time_bin(p.time);
        pic.cells[row * spec.bins + col] += 1.0;
    }
    Ok(pic)
}

/// Builds and applies the spec's normalization.
pub fn build_input_pic(f: &Flow, spec: &PicSpec) -> Result<FlowPic> {
    let pic = build_flowpic(f, spec)?;
    Ok(match spec.normalize {
        Normalize::None => pic,
        Normalize::MaxOne => normalize_pic(&pic),
    })
}

/// Scales cells so the maximum is 1. A zero matrix comes back unchanged.
pub fn normalize_pic(p: &FlowPic) -> FlowPic {
    let max = p.max();
    let mut out = p.clone();
    if max > 0.0 {
        out.cells.iter_mut().for_each(|c| *c /= max);
    }
    out
}

pub const ARCHIVE_MAGIC: &[u8; 4] = b"FPIC";
pub const ARCHIVE_VERSION: u8 = 1;
/// Labels are stored NUL-padded in a fixed field.
pub const ARCHIVE_LABEL_BYTES: usize = 64;
const RECORD_BYTES: usize = ARCHIVE_LABEL_BYTES + 1 + MINI_BINS * MINI_BINS * 4;

/// Archive layout: `FPIC`, version byte, u32 LE record count, then fixed-size
/// records of (64-byte label, origin byte, 32x32 f32 LE cells row-major).
pub fn encode_archive(pics: &[FlowPic]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(9 + pics.len() * RECORD_BYTES);
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.push(ARCHIVE_VERSION);
    let count = u32::try_from(pics.len()).map_err(|_| Error::BadArchive("too many records".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for p in pics {
        if p.bins != MINI_BINS {
            return Err(Error::BadArchive(format!(
                "archive holds {MINI_BINS}x{MINI_BINS} pics, got {0}x{0}",
                p.bins
            )));
        }
        let label = p.label.as_bytes();
        if label.len() > ARCHIVE_LABEL_BYTES || label.contains(&0) {
            return Err(Error::BadArchive(format!("label {:?} does not fit", p.label)));
        }
        let mut field = [0u8; ARCHIVE_LABEL_BYTES];
        field[..label.len()].copy_from_slice(label);
        out.extend_from_slice(&field);
        out.push(p.origin.to_byte());
        for &c in &p.cells {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_archive(bytes: &[u8]) -> Result<Vec<FlowPic>> {
    if bytes.len() < 9 || &bytes[..4] != ARCHIVE_MAGIC {
        return Err(Error::BadArchive("missing FPIC magic".into()));
    }
    if bytes[4] != ARCHIVE_VERSION {
        return Err(Error::BadArchive(format!("unsupported version {}", bytes[4])));
    }
    let count = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let body = &bytes[9..];
    if body.len() != count * RECORD_BYTES {
        return Err(Error::BadArchive(format!(
            "expected {count} records ({} bytes), found {} bytes",
            count * RECORD_BYTES,
            body.len()
        )));
    }
    body.chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(i, rec)| {
            let (label, rest) = rec.split_at(ARCHIVE_LABEL_BYTES);
            let end = label.iter().position(|&b| b == 0).unwrap_or(label.len());
            let label = std::str::from_utf8(&label[..end])
                .map_err(|_| Error::BadArchive(format!("record {i}: label is not UTF-8")))?;
            let origin = Origin::from_byte(rest[0])
                .ok_or_else(|| Error::BadArchive(format!("record {i}: bad origin byte {}", rest[0])))?;
            let cells = rest[1..]
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
                .collect();
            FlowPic::from_cells(MINI_BINS, cells, label, origin)
                .map_err(|e| Error::BadArchive(format!("record {i}: {e}")))
        })
        .collect()
}

pub fn write_archive(pics: &[FlowPic], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_archive(pics)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<Vec<FlowPic>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode_archive(&bytes)
}
