//! Binary model files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "NFMPPIFL"
//! version    u32
//! header_len u32
//! header     JSON, header_len bytes (dimension, layer shapes, metadata, parameter count)
//! params     f64 x param_count, in `FlowModel::params` order
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{AffineCoupling, ElementwiseAffine, FlowMetadata, FlowModel, Layer, LowerLinear, Mlp};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NFMPPIFL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerHeader {
    Coupling {
        parity: usize,
        hidden: usize,
    },
    Affine,
    Linear,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dim: usize,
    layers: Vec<LayerHeader>,
    param_count: usize,
    metadata: FlowMetadata,
}

pub fn to_bytes(model: &FlowModel) -> Vec<u8> {
    let header = Header {
        dim: model.dim(),
        layers: model
            .layers()
            .iter()
            .map(|l| match l {
                Layer::Coupling(c) => LayerHeader::Coupling {
                    parity: c.parity,
                    hidden: c.conditioner.hidden_dim(),
                },
                Layer::Affine(_) => LayerHeader::Affine,
                Layer::Linear(_) => LayerHeader::Linear,
            })
            .collect(),
        param_count: model.param_count(),
        metadata: model.metadata.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 8 * header.param_count);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for s in model.params() {
        for v in s {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::ModelFormat("truncated header".into()))
}

pub fn from_bytes(bytes: &[u8]) -> Result<FlowModel> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::ModelFormat("missing magic bytes".into()));
    }
    let version = read_u32(bytes, 8)?;
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!("unsupported format version {version}")));
    }
    let hlen = read_u32(bytes, 12)? as usize;
    let hbytes = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| Error::ModelFormat("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(hbytes).map_err(|e| Error::ModelFormat(format!("header: {e}")))?;
    let body = &bytes[16 + hlen..];
    if body.len() != 8 * header.param_count {
        return Err(Error::ModelFormat(format!(
            "expected {} parameters, found {} bytes",
            header.param_count,
            body.len()
        )));
    }
    let dim = header.dim;
    if dim < 2 {
        return Err(Error::ModelFormat(format!("invalid dimension {dim}")));
    }
    // build a zero-parameter skeleton, then fill it
    let layers = header
        .layers
        .iter()
        .map(|l| match *l {
            LayerHeader::Affine => Ok(Layer::Affine(ElementwiseAffine::identity(dim))),
            LayerHeader::Linear => Ok(Layer::Linear(LowerLinear::identity(dim))),
            LayerHeader::Coupling { parity, hidden } => {
                if parity > 1 || hidden == 0 {
                    return Err(Error::ModelFormat(format!(
                        "bad coupling layer (parity {parity}, hidden {hidden})"
                    )));
                }
                let passive = (0..dim).filter(|j| j % 2 == parity).count();
                let active = dim - passive;
                let mlp = Mlp {
                    w1: Array2::zeros((passive, hidden)),
                    b1: Array1::zeros(hidden),
                    w2: Array2::zeros((hidden, hidden)),
                    b2: Array1::zeros(hidden),
                    w3: Array2::zeros((hidden, 2 * active)),
                    b3: Array1::zeros(2 * active),
                };
                Ok(Layer::Coupling(AffineCoupling::from_parts(dim, parity, mlp)))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = FlowModel::from_layers(dim, layers)?;
    if model.param_count() != header.param_count {
        return Err(Error::ModelFormat(format!(
            "layer shapes imply {} parameters, header says {}",
            model.param_count(),
            header.param_count
        )));
    }
    let mut values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for s in model.params_mut() {
        for v in s.iter_mut() {
            *v = values.next().expect("count checked");
        }
    }
    model.metadata = header.metadata;
    Ok(model)
}

pub fn save(model: &FlowModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<FlowModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Loads a model and checks its dimension.
pub fn load_with_dim(path: &Path, dim: usize) -> Result<FlowModel> {
    let model = load(path)?;
    if model.dim() != dim {
        return Err(Error::ModelFormat(format!(
            "{} has dimension {}, expected {dim}",
            path.display(),
            model.dim()
        )));
    }
    Ok(model)
}
