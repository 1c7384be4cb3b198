//! `TPAM` model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"TPAM" | u32 version = 1 | u32 L | L bytes JSON layer list | f64 params...
//! ```
//!
//! The JSON is the ordered list of [`LayerSpec`]s. Parameters follow in
//! layer order; inside a layer every weight matrix (row-major) precedes every
//! bias vector, so a residual block stores `W₁, W₂, b₁, b₂`.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{LayerSpec, Model};

pub const MAGIC: &[u8; 4] = b"TPAM";
pub const VERSION: u32 = 1;

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let descriptor = serde_json::to_vec(&model.spec()).expect("layer specs always serialize");
    let mut out = Vec::with_capacity(12 + descriptor.len() + 8 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
    out.extend_from_slice(&descriptor);
    for layer in model.layers() {
        for block in layer.params() {
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format("checkpoint truncated in header".into()))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing TPAM magic".into()));
    }
    let version = read_u32(bytes, 4)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let len = read_u32(bytes, 8)? as usize;
    let descriptor = bytes
        .get(12..12 + len)
        .ok_or_else(|| Error::Format("checkpoint truncated in descriptor".into()))?;
    let spec: Vec<LayerSpec> = serde_json::from_slice(descriptor)
        .map_err(|e| Error::Format(format!("bad architecture descriptor: {e}")))?;
    let mut model = Model::zeroed(&spec).map_err(|e| Error::Format(e.to_string()))?;

    let body = &bytes[12 + len..];
    let expected = 8 * model.param_count();
    if body.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} parameter bytes, found {}",
            body.len()
        )));
    }
    let mut values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for layer in model.layers_mut() {
        for block in layer.params_mut() {
            for slot in block.iter_mut() {
                *slot = values.next().unwrap();
            }
        }
    }
    Model::from_layers(model.layers().to_vec()).map_err(|e| Error::Format(e.to_string()))
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    from_bytes(&std::fs::read(path)?)
}

/// Hex SHA-256 of arbitrary bytes; used to fingerprint inputs in reports.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{mlp_spec, Activation, Layer};

    #[test]
    fn header_layout_is_exact() {
        let model = Model::init(&[LayerSpec::linear(2, 2)], 3).unwrap();
        let bytes = to_bytes(&model);
        assert_eq!(&bytes[..4], b"TPAM");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let json = std::str::from_utf8(&bytes[12..12 + len]).unwrap();
        assert_eq!(json, r#"[{"kind":"linear","in_dim":2,"out_dim":2}]"#);
        assert_eq!(bytes.len(), 12 + len + 6 * 8);
        let Layer::Linear(d) = &model.layers()[0] else {
            unreachable!()
        };
        let first = f64::from_le_bytes(bytes[12 + len..20 + len].try_into().unwrap());
        assert_eq!(first, d.weight[0]);
        let last = f64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        assert_eq!(last, d.bias[1]);
    }

    #[test]
    fn round_trip_residual_model() {
        let model = Model::init(&mlp_spec(5, &[4, 3], 3, Activation::Relu, 2), 17).unwrap();
        let back = from_bytes(&to_bytes(&model)).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let model = Model::init(&[LayerSpec::linear(2, 2)], 3).unwrap();
        let mut bytes = to_bytes(&model);
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(Error::Format(_))));
    }
}
