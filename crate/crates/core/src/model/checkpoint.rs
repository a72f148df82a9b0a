//! Binary checkpoints.
//!
//! ```text
//! "MMT1" | u32 version | u32 len | header JSON | u32 n_params
//! per parameter: u16 len | name | u8 ndim | u32 dims... | f64 LE values
//! ```
//!
//! The header JSON holds the model config and the trained modality mask.
//! All integers are little-endian. Values are stored as raw `f64` bits, so
//! a round trip is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MmmtModel, ModelConfig};
use crate::data::ModalitySet;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Parameterized;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MMT1";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    modalities: ModalitySet,
}

pub fn encode_checkpoint(model: &MmmtModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = serde_json::to_vec(&Header {
        model: model.config().clone(),
        modalities: model.modalities(),
    })?;
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    let params = model.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        let name = p.name.as_bytes();
        let name_len =
            u16::try_from(name.len()).map_err(|_| Error::config(format!("parameter name `{}` is too long", p.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        let shape = p.value.shape();
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("checkpoint truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn error(&self, message: String) -> Error {
        Error::Format {
            offset: self.pos as u64,
            message,
        }
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<MmmtModel> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "not a checkpoint (bad magic)".into(),
        });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(c.error(format!("unsupported checkpoint version {version}")));
    }
    let len = c.u32("header length")? as usize;
    let header: Header =
        serde_json::from_slice(c.take(len, "header")?).map_err(|e| c.error(format!("bad header: {e}")))?;
    if header.modalities.is_empty() {
        return Err(c.error("header has an empty modality mask".into()));
    }
    let mut model = MmmtModel::new(header.model, &mut SplitMix64::new(0))?;
    model.set_modalities(header.modalities);
    let count = c.u32("parameter count")? as usize;
    let mut params = model.params_mut();
    if count != params.len() {
        return Err(c.error(format!(
            "checkpoint has {count} tensors, config implies {}",
            params.len()
        )));
    }
    for p in params.iter_mut() {
        let name_len = c.u16("name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|_| c.error("parameter name is not UTF-8".into()))?;
        if name != p.name {
            return Err(c.error(format!("expected tensor `{}`, found `{name}`", p.name)));
        }
        let ndim = c.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u32("dimension")? as usize);
        }
        if shape != p.value.shape() {
            return Err(c.error(format!(
                "tensor `{name}` has shape {shape:?}, config implies {:?}",
                p.value.shape()
            )));
        }
        let raw = c.take(p.value.len() * 8, "values")?;
        for (dst, chunk) in p.value.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    drop(params);
    if c.pos != bytes.len() {
        return Err(c.error(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &MmmtModel, path: &Path) -> Result<()> {
    crate::cli::atomic_write(path, &encode_checkpoint(model)?)
}

pub fn load_checkpoint(path: &Path) -> Result<MmmtModel> {
    let bytes = std::fs::read(path)?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            d_image: 3,
            d_clip: 2,
            d_text: 4,
            d_common: 8,
            d_model: 16,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut model = MmmtModel::new(small(), &mut SplitMix64::new(3)).unwrap();
        model.set_modalities(ModalitySet::of(&[crate::data::Modality::Text]));
        model.params_mut()[0].value.data_mut()[0] = f64::MIN_POSITIVE / 3.0;
        let bytes = encode_checkpoint(&model).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = MmmtModel::new(small(), &mut SplitMix64::new(4)).unwrap();
        save_checkpoint(&model, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), model);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let model = MmmtModel::new(small(), &mut SplitMix64::new(5)).unwrap();
        let bytes = encode_checkpoint(&model).unwrap();
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 3]),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 0, .. })));
        let mut long = bytes;
        long.push(0);
        assert!(decode_checkpoint(&long).is_err());
    }
}
