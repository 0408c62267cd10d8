//! Versioned binary model checkpoints.
//!
//! Layout: 4-byte magic `MLAB`, format version (u32 LE), header length
//! (u32 LE), a JSON header describing the architecture and tensor order,
//! then each tensor's values as little-endian f32 in header order.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::layer::{Conv2d, Dense};
use super::model::CnnModel;
use crate::scalar::Scalar;

const MAGIC: [u8; 4] = *b"MLAB";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad magic {found:?}, expected {MAGIC:?}")]
    BadMagic { path: String, found: Vec<u8> },
    #[error("{path}: unsupported format version {0}", .found)]
    UnsupportedVersion { path: String, found: u32 },
    #[error("{path}: file truncated in {section}")]
    Truncated { path: String, section: String },
    #[error("{path}: header is not valid JSON: {source}")]
    HeaderJson {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: tensor {name} expects {expected} values, header says {found}")]
    TensorLen {
        path: String,
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("{path}: payload holds {found} values, header needs {expected}")]
    PayloadLen {
        path: String,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    input_side: usize,
    /// `(in_ch, out_ch)` per conv block.
    backbone: Vec<(usize, usize)>,
    /// `(in_dim, out_dim)` for the classifier and regressor heads.
    cls_head: (usize, usize),
    reg_head: (usize, usize),
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

fn io_err(path: &Path, source: io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes the model to `path`; values are stored as f32.
pub fn save_model<S: Scalar>(model: &CnnModel<S>, path: &Path) -> Result<(), CheckpointError> {
    let vecs = model.param_vecs();
    let header = Header {
        input_side: model.input_side,
        backbone: model.convs.iter().map(|c| (c.in_ch, c.out_ch)).collect(),
        cls_head: (model.cls_head.in_dim, model.cls_head.out_dim),
        reg_head: (model.reg_head.in_dim, model.reg_head.out_dim),
        tensors: vecs
            .iter()
            .map(|(name, v)| TensorEntry {
                name: name.clone(),
                len: v.len(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let payload_len: usize = vecs.iter().map(|(_, v)| v.len()).sum();
    let mut buf = Vec::with_capacity(12 + header_json.len() + 4 * payload_len);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for (_, v) in &vecs {
        for x in v.iter() {
            let f = x.to_f64().expect("weight fits f64") as f32;
            buf.extend_from_slice(&f.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Reads a checkpoint back; values are decoded from f32.
pub fn load_model<S: Scalar>(path: &Path) -> Result<CnnModel<S>, CheckpointError> {
    let data = fs::read(path).map_err(|e| io_err(path, e))?;
    let pstr = || path.display().to_string();
    let truncated = |section: &str| CheckpointError::Truncated {
        path: pstr(),
        section: section.to_string(),
    };

    if data.len() < 12 {
        return Err(truncated("fixed header"));
    }
    if data[..4] != MAGIC {
        return Err(CheckpointError::BadMagic {
            path: pstr(),
            found: data[..4].to_vec(),
        });
    }
    let version = u32::from_le_bytes(data[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            path: pstr(),
            found: version,
        });
    }
    let header_len = u32::from_le_bytes(data[8..12].try_into().expect("4 bytes")) as usize;
    let header_end = 12 + header_len;
    if data.len() < header_end {
        return Err(truncated("json header"));
    }
    let header: Header = serde_json::from_slice(&data[12..header_end]).map_err(|source| {
        CheckpointError::HeaderJson {
            path: pstr(),
            source,
        }
    })?;

    // Validate declared tensor lengths against the declared architecture.
    let mut expected: Vec<(String, usize)> = Vec::new();
    for (i, (in_ch, out_ch)) in header.backbone.iter().enumerate() {
        expected.push((format!("conv{i}.weight"), out_ch * in_ch * 9));
        expected.push((format!("conv{i}.bias"), *out_ch));
    }
    expected.push(("cls.weight".into(), header.cls_head.0 * header.cls_head.1));
    expected.push(("cls.bias".into(), header.cls_head.1));
    expected.push(("reg.weight".into(), header.reg_head.0 * header.reg_head.1));
    expected.push(("reg.bias".into(), header.reg_head.1));
    if header.tensors.len() != expected.len() {
        return Err(CheckpointError::TensorLen {
            path: pstr(),
            name: format!("(tensor count {})", header.tensors.len()),
            expected: expected.len(),
            found: header.tensors.len(),
        });
    }
    for (entry, (name, len)) in header.tensors.iter().zip(&expected) {
        if &entry.name != name || entry.len != *len {
            return Err(CheckpointError::TensorLen {
                path: pstr(),
                name: entry.name.clone(),
                expected: *len,
                found: entry.len,
            });
        }
    }

    let total: usize = expected.iter().map(|(_, len)| len).sum();
    let payload = &data[header_end..];
    if payload.len() != total * 4 {
        return Err(CheckpointError::PayloadLen {
            path: pstr(),
            expected: total,
            found: payload.len() / 4,
        });
    }

    let mut values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")));
    let mut take = |n: usize| -> Vec<S> {
        values
            .by_ref()
            .take(n)
            .map(|f| S::from_f64_lossy(f as f64))
            .collect()
    };

    let mut convs = Vec::with_capacity(header.backbone.len());
    for (in_ch, out_ch) in &header.backbone {
        let weight = take(out_ch * in_ch * 9);
        let bias = take(*out_ch);
        convs.push(Conv2d {
            in_ch: *in_ch,
            out_ch: *out_ch,
            weight,
            bias,
        });
    }
    let cls_head = Dense {
        in_dim: header.cls_head.0,
        out_dim: header.cls_head.1,
        weight: take(header.cls_head.0 * header.cls_head.1),
        bias: take(header.cls_head.1),
    };
    let reg_head = Dense {
        in_dim: header.reg_head.0,
        out_dim: header.reg_head.1,
        weight: take(header.reg_head.0 * header.reg_head.1),
        bias: take(header.reg_head.1),
    };

    Ok(CnnModel {
        input_side: header.input_side,
        convs,
        cls_head,
        reg_head,
    })
}
