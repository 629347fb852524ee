//! Flows, datasets and the JSONL flow-record format.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const MAX_PACKET_SIZE: u32 = 65_535;

/// Minimum number of flows a class needs before it can be split.
pub const MIN_FLOWS_PER_CLASS: usize = 5;

const SPLIT_STREAM: u64 = 0x5917;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    /// Seconds since flow start.
    pub time: f64,
    /// Bytes.
    pub size: u32,
}

impl Packet {
    pub fn new(time: f64, size: u32) -> Result<Self> {
        if !(time.is_finite() && time >= 0.0) {
            return Err(Error::InvalidPacket(format!("time {time} must be finite and >= 0")));
        }
        if !(1..=MAX_PACKET_SIZE).contains(&size) {
            return Err(Error::InvalidPacket(format!(
                "size {size} outside [1, {MAX_PACKET_SIZE}]"
            )));
        }
        Ok(Packet { time, size })
    }
}

/// Where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Original,
    Synthetic,
    AvgAugmented,
    MtuAugmented,
}

impl Origin {
    pub fn is_augmented(self) -> bool {
        matches!(self, Origin::AvgAugmented | Origin::MtuAugmented)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Original => "original",
            Origin::Synthetic => "synthetic",
            Origin::AvgAugmented => "avg_augmented",
            Origin::MtuAugmented => "mtu_augmented",
        }
    }

    pub(crate) fn to_byte(self) -> u8 {
        match self {
            Origin::Original => 0,
            Origin::Synthetic => 1,
            Origin::AvgAugmented => 2,
            Origin::MtuAugmented => 3,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => Origin::Original,
            1 => Origin::Synthetic,
            2 => Origin::AvgAugmented,
            3 => Origin::MtuAugmented,
            _ => return None,
        })
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "original" => Origin::Original,
            "synthetic" => Origin::Synthetic,
            "avg_augmented" => Origin::AvgAugmented,
            "mtu_augmented" => Origin::MtuAugmented,
            other => return Err(Error::InvalidFlow(format!("unknown origin {other:?}"))),
        })
    }
}

/// A labeled, time-sorted, nonempty packet sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    packets: Vec<Packet>,
    label: String,
    origin: Origin,
}

impl Flow {
    pub fn new(label: impl Into<String>, origin: Origin, packets: Vec<Packet>) -> Result<Self> {
        if packets.is_empty() {
            return Err(Error::InvalidFlow("flow has no packets".into()));
        }
        if origin == Origin::AvgAugmented {
            // Averaged samples only exist as FlowPics.
            return Err(Error::InvalidFlow(
                "avg_augmented samples cannot be stored as flows".into(),
            ));
        }
        if packets.windows(2).any(|w| w[1].time < w[0].time) {
            return Err(Error::InvalidFlow("packets are not time-sorted".into()));
        }
        Ok(Flow {
            packets,
            label: label.into(),
            origin,
        })
    }

    pub fn packets(&self) -> &[Packet] {
        &self.packets
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn with_origin(mut self, origin: Origin) -> Result<Self> {
        if origin == Origin::AvgAugmented {
            return Err(Error::InvalidFlow(
                "avg_augmented samples cannot be stored as flows".into(),
            ));
        }
        self.origin = origin;
        Ok(self)
    }

    pub fn first_time(&self) -> f64 {
        self.packets[0].time
    }

    pub fn last_time(&self) -> f64 {
        self.packets[self.packets.len() - 1].time
    }

    /// Last minus first arrival.
    pub fn duration(&self) -> f64 {
        self.last_time() - self.first_time()
    }

    pub fn max_size(&self) -> u32 {
        self.packets.iter().map(|p| p.size).max().unwrap_or(0)
    }

    pub fn total_bytes(&self) -> u64 {
        self.packets.iter().map(|p| u64::from(p.size)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    flows: Vec<Flow>,
    classes: Vec<String>,
}

impl Dataset {
    pub fn new(flows: Vec<Flow>) -> Self {
        let mut classes: Vec<String> = Vec::new();
        for f in &flows {
            if !classes.iter().any(|c| c == f.label()) {
                classes.push(f.label().to_string());
            }
        }
        Dataset { flows, classes }
    }

    pub fn flows(&self) -> &[Flow] {
        &self.flows
    }

    pub fn into_flows(self) -> Vec<Flow> {
        self.flows
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn class_count(&self, label: &str) -> usize {
        self.flows.iter().filter(|f| f.label() == label).count()
    }

    /// Indices of the flows of each class, in class order.
    pub fn indices_by_class(&self) -> Vec<(String, Vec<usize>)> {
        self.classes
            .iter()
            .map(|c| {
                let idx = self
                    .flows
                    .iter()
                    .enumerate()
                    .filter(|(_, f)| f.label() == c)
                    .map(|(i, _)| i)
                    .collect();
                (c.clone(), idx)
            })
            .collect()
    }

    fn select(&self, indices: &[usize]) -> Dataset {
        Dataset::new(indices.iter().map(|&i| self.flows[i].clone()).collect())
    }
}

impl FromIterator<Flow> for Dataset {
    fn from_iter<I: IntoIterator<Item = Flow>>(iter: I) -> Self {
        Dataset::new(iter.into_iter().collect())
    }
}

/// Stratified train/val/test partition of a dataset.
///
/// The index vectors refer to positions in the source dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub seed: u64,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Per-class sizes `(train, val, test)` for a class of `n` flows.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let test = n / 5;
    let val = (n - test) / 5;
    (n - test - val, val, test)
}

/// Stratified 64/16/20 split: 20% test, then 20% of the rest for validation.
pub fn split_dataset(ds: &Dataset, seed: u64) -> Result<DatasetSplit> {
    let mut train_indices = Vec::new();
    let mut val_indices = Vec::new();
    let mut test_indices = Vec::new();
    for (class_idx, (label, mut idx)) in ds.indices_by_class().into_iter().enumerate() {
        if idx.len() < MIN_FLOWS_PER_CLASS {
            return Err(Error::ClassTooSmall {
                label,
                count: idx.len(),
                required: MIN_FLOWS_PER_CLASS,
            });
        }
        idx.shuffle(&mut rng::stream(seed, &[SPLIT_STREAM, class_idx as u64]));
        let (_, val, test) = split_sizes(idx.len());
        test_indices.extend_from_slice(&idx[..test]);
        val_indices.extend_from_slice(&idx[test..test + val]);
        train_indices.extend_from_slice(&idx[test + val..]);
    }
    Ok(DatasetSplit {
        train: ds.select(&train_indices),
        val: ds.select(&val_indices),
        test: ds.select(&test_indices),
        seed,
        train_indices,
        val_indices,
        test_indices,
    })
}

#[derive(Serialize)]
struct RecordOut<'a> {
    label: &'a str,
    origin: Origin,
    packets: Vec<(f64, u32)>,
}

#[derive(Deserialize)]
struct RecordIn {
    label: String,
    #[serde(default)]
    origin: Option<String>,
    packets: Vec<(f64, i64)>,
}

/// Serializes one flow as a JSONL record (no trailing newline).
pub fn flow_to_json(f: &Flow) -> String {
    let rec = RecordOut {
        label: f.label(),
        origin: f.origin(),
        packets: f.packets().iter().map(|p| (p.time, p.size)).collect(),
    };
    serde_json::to_string(&rec).expect("flow records always serialize")
}

/// Parses one JSONL record; `line` is 1-based and only used for errors.
pub fn flow_from_json(text: &str, line: usize) -> Result<Flow> {
    let rec: RecordIn = serde_json::from_str(text).map_err(|e| Error::MalformedRecord {
        line,
        message: e.to_string(),
    })?;
    let origin = match rec.origin.as_deref() {
        None => Origin::Original,
        Some(s) => s.parse().map_err(|_| Error::MalformedRecord {
            line,
            message: format!("unknown origin {s:?}"),
        })?,
    };
    let mut packets = Vec::with_capacity(rec.packets.len());
    for &(time, size) in &rec.packets {
        if !(time.is_finite() && time >= 0.0) {
            return Err(Error::FieldOutOfRange { field: "time", line });
        }
        if !(1..=i64::from(MAX_PACKET_SIZE)).contains(&size) {
            return Err(Error::FieldOutOfRange { field: "size", line });
        }
        packets.push(Packet {
            time,
            size: size as u32,
        });
    }
    Flow::new(rec.label, origin, packets).map_err(|e| Error::MalformedRecord {
        line,
        message: e.to_string(),
    })
}

pub fn parse_flows(reader: impl BufRead) -> Result<Dataset> {
    let mut flows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::MalformedRecord {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        flows.push(flow_from_json(&line, i + 1)?);
    }
    Ok(Dataset::new(flows))
}

pub fn read_flows(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_flows(BufReader::new(file))
}

pub fn render_flows(ds: &Dataset, mut out: impl Write) -> std::io::Result<()> {
    for f in ds.flows() {
        out.write_all(flow_to_json(f).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_flows(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    render_flows(ds, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}
