//! Model checkpoint format.
//!
//! Layout: magic `GRSL`, format version (u32 LE), a length-prefixed JSON
//! architecture header, then all parameters as raw little-endian f32 in layer
//! order (weights, then biases). Round-trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layer::{Layer, LayerSpec};
use crate::nn::model::Model;

const MAGIC: &[u8; 4] = b"GRSL";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    input_shape: Vec<usize>,
    num_classes: usize,
    layers: Vec<LayerSpec>,
}

/// Serializes a model to the checkpoint byte format.
pub fn model_to_bytes(model: &Model) -> Result<Vec<u8>> {
    let header = Header {
        input_shape: model.input_shape().to_vec(),
        num_classes: model.num_classes(),
        layers: model.layers().iter().map(|l| l.spec.clone()).collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + header_json.len() + model.num_params() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for layer in model.layers() {
        for w in layer.weight.iter().chain(layer.bias.iter()) {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a model from checkpoint bytes, validating magic, version, header,
/// and that the parameter payload has exactly the declared length.
pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 12 {
        return Err(Error::Format(format!(
            "checkpoint too short: {} bytes, need at least 12",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?}, expected {:?}",
            &bytes[0..4],
            MAGIC
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let params_start = 12 + header_len;
    if bytes.len() < params_start {
        return Err(Error::Format(format!(
            "checkpoint header truncated: declared {header_len} bytes, {} available",
            bytes.len() - 12
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[12..params_start])
        .map_err(|e| Error::Format(format!("checkpoint header is not valid JSON: {e}")))?;

    let mut layers: Vec<Layer> = header.layers.into_iter().map(Layer::zeroed).collect();
    let expected_params: usize = layers.iter().map(|l| l.weight.len() + l.bias.len()).sum();
    let payload = &bytes[params_start..];
    if payload.len() != expected_params * 4 {
        return Err(Error::Format(format!(
            "checkpoint parameter payload is {} bytes, expected {} ({} f32 values)",
            payload.len(),
            expected_params * 4,
            expected_params
        )));
    }
    let mut offset = 0;
    for layer in &mut layers {
        for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
            *w = f32::from_le_bytes(payload[offset..offset + 4].try_into().expect("4 bytes"));
            offset += 4;
        }
    }
    Model::from_layers(&header.input_shape, header.num_classes, layers)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path)?;
    model_from_bytes(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}
