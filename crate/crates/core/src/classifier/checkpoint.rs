//! Model checkpoints.
//!
//! Layout: magic `FFMD`, version byte, u32 LE header length, a JSON header
//! (network spec, class labels, seed, epoch counter, freeze mask, tensor
//! lengths), then every layer's weight and bias tensors as raw f32 LE.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{LayerParams, ModelState};
use super::spec::NetworkSpec;
use super::Scalar;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FFMD";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    classes: Vec<String>,
    seed: u64,
    epochs_trained: usize,
    frozen: Vec<bool>,
    /// (weights, biases) per layer
    tensors: Vec<(usize, usize)>,
}

pub fn encode_checkpoint<T: Scalar>(model: &ModelState<T>) -> Vec<u8> {
    let header = Header {
        spec: model.spec().clone(),
        classes: model.classes().to_vec(),
        seed: model.seed(),
        epochs_trained: model.epochs_trained(),
        frozen: model.frozen().to_vec(),
        tensors: model.params().iter().map(|p| (p.weight.len(), p.bias.len())).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(9 + json.len() + 4 * model.num_parameters());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        for v in p.weight.iter().chain(&p.bias) {
            let f = v.to_f32().expect("finite parameter");
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<ModelState<T>> {
    let bad = |m: &str| Error::BadArchive(format!("checkpoint: {m}"));
    if bytes.len() < 9 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("missing FFMD magic"));
    }
    if bytes[4] != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {}", bytes[4])));
    }
    let hlen = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let header_end = 9usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[9..header_end]).map_err(|e| bad(&e.to_string()))?;

    let mut rest = &bytes[header_end..];
    let mut take = |n: usize| -> Result<Vec<T>> {
        if rest.len() < n * 4 {
            return Err(bad("truncated tensor data"));
        }
        let (head, tail) = rest.split_at(n * 4);
        rest = tail;
        Ok(head
            .chunks_exact(4)
            .map(|b| T::of(f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes")))))
            .collect())
    };
    let mut params = Vec::with_capacity(header.tensors.len());
    for &(w, b) in &header.tensors {
        params.push(LayerParams {
            weight: take(w)?,
            bias: take(b)?,
        });
    }
    if !rest.is_empty() {
        return Err(bad("trailing bytes"));
    }
    let mut model = ModelState::from_parts(header.spec, header.classes, params, header.seed, header.epochs_trained)?;
    model.set_frozen(header.frozen)?;
    Ok(model)
}

pub fn save_checkpoint<T: Scalar>(model: &ModelState<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelState<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_round_trip_is_exact() {
        let classes = vec!["a".to_string(), "b".to_string()];
        let mut m = ModelState::<f32>::new(NetworkSpec::lenet5(2), classes, 4).unwrap();
        let mut mask = vec![false; m.spec().layers.len()];
        mask[0] = true;
        m.set_frozen(mask).unwrap();
        let bytes = encode_checkpoint(&m);
        assert_eq!(&bytes[..4], b"FFMD");
        let back: ModelState<f32> = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_truncation() {
        let m = ModelState::<f32>::new(NetworkSpec::lenet5(2), vec!["a".into(), "b".into()], 4).unwrap();
        let bytes = encode_checkpoint(&m);
        assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_checkpoint::<f32>(b"XXXX\x01\0\0\0\0").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint::<f32>(&extra).is_err());
    }
}
