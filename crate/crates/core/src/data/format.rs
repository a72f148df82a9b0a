//! The `MMF1` feature file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes  "MMF1"
//! version      u32      1
//! dims         3 x u32  image, clip, text
//! count        u64
//! per record:
//!   id_len     u16
//!   id         id_len bytes UTF-8
//!   presence   u8       bit0 image, bit1 clip, bit2 text
//!   vectors    f32 x dim for each present modality, in image/clip/text order
//!   labels     5 x i8   sentiment, humour, sarcasm, offensive, motivation; -1 = absent
//! ```

use std::fs;
use std::path::Path;

use super::{FeatureDims, FeatureRecord, Head, LabelSet, Modality};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MMF1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub dims: FeatureDims,
    pub records: Vec<FeatureRecord>,
}

pub fn encode_features(records: &[FeatureRecord], dims: &FeatureDims) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for m in Modality::ALL {
        let d =
            u32::try_from(dims.get(m)).map_err(|_| Error::data(format!("{m} dimension {} too large", dims.get(m))))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());

    for rec in records {
        rec.validate(dims)?;
        let id = rec.id.as_bytes();
        let id_len =
            u16::try_from(id.len()).map_err(|_| Error::data(format!("record id of {} bytes is too long", id.len())))?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        out.push(rec.present().bits());
        for m in Modality::ALL {
            if let Some(v) = rec.vector(m) {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        for head in Head::ALL {
            let v = rec.labels.get(head).map_or(-1i8, |v| v as i8);
            out.push(v as u8);
        }
    }
    Ok(out)
}

/// Writes via a temporary sibling and a rename so readers never observe a
/// partial file.
pub fn write_feature_file(records: &[FeatureRecord], dims: &FeatureDims, path: &Path) -> Result<()> {
    let bytes = encode_features(records, dims)?;
    crate::cli::atomic_write(path, &bytes)
}

pub fn read_feature_file(path: &Path) -> Result<FeatureFile> {
    let bytes = fs::read(path)?;
    decode_features(&bytes)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated {what}: need {n} bytes, {} remain", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
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

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn error(&self, offset: usize, message: String) -> Error {
        Error::Format {
            offset: offset as u64,
            message,
        }
    }
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureFile> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(r.error(0, format!("bad magic {magic:?}, expected \"MMF1\"")));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(r.error(4, format!("unsupported version {version}")));
    }
    let dims = FeatureDims::new(
        r.u32("image dim")? as usize,
        r.u32("clip dim")? as usize,
        r.u32("text dim")? as usize,
    );
    let count = r.u64("record count")?;

    // no up-front allocation from an untrusted count
    let mut records = Vec::new();
    for _ in 0..count {
        let id_len = r.u16("id length")? as usize;
        let id_at = r.pos;
        let id = std::str::from_utf8(r.take(id_len, "id")?)
            .map_err(|e| r.error(id_at, format!("id is not UTF-8: {e}")))?
            .to_string();
        let mask_at = r.pos;
        let mask = r.u8("presence mask")?;
        if mask & !0b111 != 0 {
            return Err(r.error(mask_at, format!("record `{id}`: invalid presence mask {mask:#04b}")));
        }
        let mut rec = FeatureRecord {
            id,
            ..Default::default()
        };
        for m in Modality::ALL {
            if mask & (1 << m.index()) != 0 {
                let d = dims.get(m);
                let raw = r.take(d * 4, "feature vector")?;
                let v = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                *rec.vector_mut(m) = Some(v);
            }
        }
        let labels_at = r.pos;
        let raw = r.take(5, "labels")?;
        let mut labels = LabelSet::default();
        for (head, &b) in Head::ALL.iter().zip(raw) {
            let v = b as i8;
            labels.set(
                *head,
                match v {
                    -1 => None,
                    v if v >= 0 => Some(v as u8),
                    v => return Err(r.error(labels_at, format!("record `{}`: label byte {v}", rec.id))),
                },
            );
        }
        labels.validate(&rec.id)?;
        rec.labels = labels;
        records.push(rec);
    }
    if r.pos != bytes.len() {
        return Err(r.error(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(FeatureFile { dims, records })
}
