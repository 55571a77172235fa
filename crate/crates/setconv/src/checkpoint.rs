//! Binary model checkpoints.
//!
//! ```text
//! magic        8 bytes   "SCNVCKPT"
//! version      u32 LE    1
//! header_len   u32 LE
//! header       JSON      model spec, tensor names and shapes, payload sha256
//! payload      f32 LE    every tensor in header order
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use setconv_core::model::{Model, ModelSpec};
use setconv_core::Tensor;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SCNVCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file")]
    Truncated,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("payload checksum mismatch")]
    Checksum,
    #[error("tensor layout does not match the model: {0}")]
    Layout(String),
    #[error("{0} unexpected bytes after the payload")]
    Trailing(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    tensors: Vec<TensorEntry>,
    payload_sha256: String,
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => CheckpointError::Truncated,
        _ => CheckpointError::Io(e),
    })
}

pub fn write_checkpoint(model: &Model<f32>, w: &mut impl Write) -> Result<(), CheckpointError> {
    let named = model.named_parameters();
    let mut payload = Vec::with_capacity(model.param_count() * 4);
    for (_, t) in &named {
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        spec: model.spec().clone(),
        tensors: named
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let header = serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let header_len = u32::try_from(header.len()).map_err(|_| CheckpointError::Header("header too large".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&header_len.to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Model<f32>, CheckpointError> {
    let mut magic = [0u8; 8];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut word = [0u8; 4];
    read_exact(r, &mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    read_exact(r, &mut word)?;
    let mut header = vec![0u8; u32::from_le_bytes(word) as usize];
    read_exact(r, &mut header)?;
    let header: Header = serde_json::from_slice(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;

    let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    let mut payload = vec![0u8; total * 4];
    read_exact(r, &mut payload)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(CheckpointError::Trailing(rest.len()));
    }
    if hex::encode(Sha256::digest(&payload)) != header.payload_sha256 {
        return Err(CheckpointError::Checksum);
    }

    let expected = Model::<f32>::build(&header.spec, 0).map_err(|e| CheckpointError::Layout(e.to_string()))?;
    let expected_names = expected.named_parameters();
    if expected_names.len() != header.tensors.len() {
        return Err(CheckpointError::Layout(format!(
            "{} tensors stored, model has {}",
            header.tensors.len(),
            expected_names.len()
        )));
    }
    let mut values = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for (entry, (name, t)) in header.tensors.iter().zip(&expected_names) {
        if &entry.name != name || entry.shape != t.shape() {
            return Err(CheckpointError::Layout(format!(
                "stored {} {:?}, model expects {} {:?}",
                entry.name,
                entry.shape,
                name,
                t.shape()
            )));
        }
        let n = entry.shape.iter().product();
        let data: Vec<f32> = values.by_ref().take(n).collect();
        tensors.push(Tensor::new(&entry.shape, data).map_err(|e| CheckpointError::Layout(e.to_string()))?);
    }
    Model::from_parameters(&header.spec, tensors).map_err(|e| CheckpointError::Layout(e.to_string()))
}

pub fn save(model: &Model<f32>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf).map_err(|source| Error::Checkpoint {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut bytes.as_slice()).map_err(|source| Error::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use setconv_core::model::{preset, PresetOptions};

    fn model() -> Model<f32> {
        let opts = PresetOptions {
            divisor: 16,
            ..PresetOptions::default()
        };
        Model::build(&preset("cifar-cst", &opts).unwrap(), 3).unwrap()
    }

    fn bytes() -> Vec<u8> {
        let mut buf = Vec::new();
        write_checkpoint(&model(), &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_exact() {
        let loaded = read_checkpoint(&mut bytes().as_slice()).unwrap();
        assert_eq!(loaded, model());
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut b = bytes();
        b[0] = b'X';
        assert!(matches!(read_checkpoint(&mut b.as_slice()), Err(CheckpointError::BadMagic)));
        let mut b = bytes();
        b[8] = 9;
        assert!(matches!(
            read_checkpoint(&mut b.as_slice()),
            Err(CheckpointError::UnsupportedVersion(9))
        ));
    }

    #[test]
    fn rejects_truncation_corruption_and_trailing_bytes() {
        let b = bytes();
        for cut in [4, 14, b.len() / 2, b.len() - 1] {
            assert!(
                matches!(read_checkpoint(&mut &b[..cut]), Err(CheckpointError::Truncated)),
                "cut at {cut}"
            );
        }
        let mut flipped = b.clone();
        *flipped.last_mut().unwrap() ^= 1;
        assert!(matches!(read_checkpoint(&mut flipped.as_slice()), Err(CheckpointError::Checksum)));
        let mut longer = b.clone();
        longer.push(0);
        assert!(matches!(read_checkpoint(&mut longer.as_slice()), Err(CheckpointError::Trailing(1))));
    }

    #[test]
    fn rejects_header_that_disagrees_with_spec() {
        let b = bytes();
        let len = u32::from_le_bytes([b[12], b[13], b[14], b[15]]) as usize;
        let header = std::str::from_utf8(&b[16..16 + len]).unwrap();
        let edited = header.replacen("layers.0.conv.kernel", "layers.0.conv.kernal", 1);
        let mut out = b[..12].to_vec();
        out.extend_from_slice(&(edited.len() as u32).to_le_bytes());
        out.extend_from_slice(edited.as_bytes());
        out.extend_from_slice(&b[16 + len..]);
        assert!(matches!(read_checkpoint(&mut out.as_slice()), Err(CheckpointError::Layout(_))));
    }
}
